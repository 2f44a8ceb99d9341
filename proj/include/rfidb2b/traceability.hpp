#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfidb2b/error.hpp"
#include "rfidb2b/tag_codec.hpp"

namespace rfidb2b::trace {

using TagId = std::int64_t;

/// TAG_TYPE convention.
namespace tag_type {
inline constexpr std::int32_t kMaterial = 0;
inline constexpr std::int32_t kAssembly = 1;
inline constexpr std::int32_t kFiniteProduct = 2;
}  // namespace tag_type

struct TraceRecord {
  TagId tag_id = 0;
  std::int32_t tag_type = tag_type::kMaterial;
  std::vector<TagId> component_ids;
  std::string enterprise_id;
  std::int64_t registered_at = 0;  // sim ms

  /// Same provenance data; registration time is not part of the payload.
  bool same_payload(const TraceRecord& other) const;
  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

/// Builds a trace record from a decoded tag: TAG_ID, TAG_TYPE and the first
/// COMPONENTS_NUMBER of the ID_BD_<n> slots. Throws InvalidRecord.
TraceRecord record_from_tag(const tag::TagRecord& rec, std::string enterprise_id, std::int64_t registered_at);

struct TraceTree;

/// Component registry shared by all enterprises. Readers run concurrently;
/// writers are exclusive.
class Registry {
 public:
  Registry() = default;
  Registry(const Registry& other);
  Registry& operator=(const Registry& other);

  /// Idempotent for an identical payload; throws DuplicateTagId on conflict
  /// and InvalidRecord for zero or duplicate ids.
  void register_record(const TraceRecord& r);

  std::optional<TraceRecord> find(TagId id) const;
  std::size_t size() const;
  std::map<TagId, TraceRecord> snapshot() const;

 private:
  friend TraceTree trace(const Registry& registry, TagId root, std::size_t max_depth);

  mutable std::shared_mutex mutex_;
  std::map<TagId, TraceRecord> records_;
};

enum class Unresolved { None, UnknownId, DepthLimit };

struct TraceNode {
  TagId tag_id = 0;
  std::optional<TraceRecord> record;  // empty for unresolved markers
  Unresolved unresolved = Unresolved::None;
  std::vector<TraceNode> children;

  bool is_leaf() const noexcept { return children.empty(); }
};

struct TraceTree {
  TraceNode root;
  std::size_t depth = 0;  // deepest node, root = 0
  std::size_t leaf_count = 0;
  std::size_t unresolved_count = 0;
};

inline constexpr std::size_t kDefaultMaxDepth = 32;

class CycleError : public Error {
 public:
  explicit CycleError(std::vector<TagId> path);
  const std::vector<TagId>& path() const noexcept { return path_; }

 private:
  std::vector<TagId> path_;
};

/// Depth-first expansion of component links. Unknown components and nodes
/// beyond max_depth become unresolved leaves. Throws UnknownTagId for the
/// root or CycleError when a tag repeats on one path.
TraceTree trace(const Registry& registry, TagId root, std::size_t max_depth = kDefaultMaxDepth);
TraceTree trace(const std::map<TagId, TraceRecord>& records, TagId root, std::size_t max_depth = kDefaultMaxDepth);

struct Origin {
  TagId tag_id = 0;
  std::string enterprise_id;
  std::size_t path_length = 0;

  friend bool operator==(const Origin&, const Origin&) = default;
};

struct OriginReport {
  std::vector<Origin> origins;  // ordered by tag_id, then path length
  std::size_t unresolved = 0;
};

OriginReport origin_report(const TraceTree& tree);
OriginReport origin_report(const Registry& registry, TagId root, std::size_t max_depth = kDefaultMaxDepth);

nlohmann::ordered_json tree_to_json(const TraceTree& tree);
std::string tree_to_text(const TraceTree& tree);

nlohmann::json record_to_json(const TraceRecord& r);
TraceRecord record_from_json(const nlohmann::json& j);

}  // namespace rfidb2b::trace

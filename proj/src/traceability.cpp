#include "rfidb2b/traceability.hpp"

#include <algorithm>
#include <mutex>
#include <set>

namespace rfidb2b::trace {

bool TraceRecord::same_payload(const TraceRecord& other) const {
  return tag_id == other.tag_id && tag_type == other.tag_type && component_ids == other.component_ids &&
         enterprise_id == other.enterprise_id;
}

namespace {

std::int32_t int_field(const tag::TagRecord& rec, const std::string& name) {
  auto it = rec.find(name);
  if (it == rec.end()) throw Error(Errc::InvalidRecord, "tag has no " + name + " field");
  const auto* v = std::get_if<std::int32_t>(&it->second);
  if (!v) throw Error(Errc::InvalidRecord, name + " is not an integer field");
  return *v;
}

void check_ids(const TraceRecord& r) {
  if (r.tag_id == 0) throw Error(Errc::InvalidRecord, "tag_id 0 is reserved");
  std::set<TagId> seen;
  for (TagId c : r.component_ids) {
    if (c == 0) throw Error(Errc::InvalidRecord, "tag " + std::to_string(r.tag_id) + " lists component id 0");
    if (!seen.insert(c).second)
      throw Error(Errc::InvalidRecord, "tag " + std::to_string(r.tag_id) + " lists component " +
                                           std::to_string(c) + " twice");
  }
}

std::string path_text(const std::vector<TagId>& path) {
  std::string s;
  for (TagId id : path) s += (s.empty() ? "" : " -> ") + std::to_string(id);
  return s;
}

struct Expander {
  const std::map<TagId, TraceRecord>& records;
  std::size_t max_depth;
  TraceTree& tree;
  std::vector<TagId> path;

  void expand(TraceNode& node, std::size_t depth) {
    tree.depth = std::max(tree.depth, depth);
    for (TagId comp : node.record->component_ids) {
      if (std::find(path.begin(), path.end(), comp) != path.end()) {
        auto cycle = path;
        cycle.push_back(comp);
        throw CycleError(std::move(cycle));
      }
      TraceNode child;
      child.tag_id = comp;
      auto it = records.find(comp);
      if (depth >= max_depth) {
        child.unresolved = Unresolved::DepthLimit;
      } else if (it == records.end()) {
        child.unresolved = Unresolved::UnknownId;
      } else {
        child.record = it->second;
        path.push_back(comp);
        expand(child, depth + 1);
        path.pop_back();
      }
      if (child.unresolved != Unresolved::None) {
        tree.depth = std::max(tree.depth, depth + 1);
        ++tree.unresolved_count;
        ++tree.leaf_count;
      }
      node.children.push_back(std::move(child));
    }
    if (node.children.empty() && node.unresolved == Unresolved::None) ++tree.leaf_count;
  }
};

void collect_origins(const TraceNode& node, std::size_t depth, OriginReport& out) {
  if (node.children.empty()) {
    if (node.record && node.record->component_ids.empty())
      out.origins.push_back({node.tag_id, node.record->enterprise_id, depth});
    else
      ++out.unresolved;
    return;
  }
  for (const auto& c : node.children) collect_origins(c, depth + 1, out);
}

const char* unresolved_name(Unresolved u) {
  switch (u) {
    case Unresolved::UnknownId: return "unknown";
    case Unresolved::DepthLimit: return "depth_limit";
    default: return "none";
  }
}

const char* type_name(std::int32_t t) {
  switch (t) {
    case tag_type::kMaterial: return "material";
    case tag_type::kAssembly: return "assembly";
    case tag_type::kFiniteProduct: return "finite product";
    default: return "type?";
  }
}

nlohmann::ordered_json node_to_json(const TraceNode& n) {
  nlohmann::ordered_json j;
  j["tag_id"] = n.tag_id;
  if (n.record) {
    j["enterprise"] = n.record->enterprise_id;
  } else {
    j["enterprise"] = nullptr;
    j["unresolved"] = unresolved_name(n.unresolved);
  }
  j["children"] = nlohmann::ordered_json::array();
  for (const auto& c : n.children) j["children"].push_back(node_to_json(c));
  return j;
}

void node_to_text(const TraceNode& n, std::size_t indent, std::string& out) {
  out.append(indent * 2, ' ');
  out += std::to_string(n.tag_id);
  if (n.record) {
    out += " [" + n.record->enterprise_id + "] " + type_name(n.record->tag_type);
  } else {
    out += std::string(" (unresolved: ") + unresolved_name(n.unresolved) + ")";
  }
  out += '\n';
  for (const auto& c : n.children) node_to_text(c, indent + 1, out);
}

}  // namespace

TraceRecord record_from_tag(const tag::TagRecord& rec, std::string enterprise_id, std::int64_t registered_at) {
  TraceRecord r;
  r.tag_id = int_field(rec, "TAG_ID");
  r.tag_type = int_field(rec, "TAG_TYPE");
  const std::int32_t count = int_field(rec, "COMPONENTS_NUMBER");
  if (count < 0) throw Error(Errc::InvalidRecord, "negative COMPONENTS_NUMBER");
  for (std::int32_t i = 0; i < count; ++i) {
    const std::string name = "ID_BD_" + std::to_string(i);
    if (!rec.count(name))
      throw Error(Errc::InvalidRecord, "COMPONENTS_NUMBER " + std::to_string(count) + " exceeds the " +
                                           "template's component slots");
    r.component_ids.push_back(int_field(rec, name));
  }
  r.enterprise_id = std::move(enterprise_id);
  r.registered_at = registered_at;
  check_ids(r);
  return r;
}

Registry::Registry(const Registry& other) : records_(other.snapshot()) {}

Registry& Registry::operator=(const Registry& other) {
  if (this != &other) {
    auto copy = other.snapshot();
    std::unique_lock lock(mutex_);
    records_ = std::move(copy);
  }
  return *this;
}

void Registry::register_record(const TraceRecord& r) {
  check_ids(r);
  std::unique_lock lock(mutex_);
  auto [it, inserted] = records_.emplace(r.tag_id, r);
  if (!inserted && !it->second.same_payload(r))
    throw Error(Errc::DuplicateTagId, "tag_id " + std::to_string(r.tag_id) + " already registered with different data");
}

std::optional<TraceRecord> Registry::find(TagId id) const {
  std::shared_lock lock(mutex_);
  auto it = records_.find(id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

std::size_t Registry::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

std::map<TagId, TraceRecord> Registry::snapshot() const {
  std::shared_lock lock(mutex_);
  return records_;
}

CycleError::CycleError(std::vector<TagId> path)
    : Error(Errc::CycleDetected, "component cycle: " + path_text(path)), path_(std::move(path)) {}

TraceTree trace(const std::map<TagId, TraceRecord>& records, TagId root, std::size_t max_depth) {
  auto it = records.find(root);
  if (it == records.end()) throw Error(Errc::UnknownTagId, "tag_id " + std::to_string(root) + " is not registered");
  TraceTree tree;
  tree.root.tag_id = root;
  tree.root.record = it->second;
  Expander ex{records, max_depth, tree, {root}};
  ex.expand(tree.root, 0);
  return tree;
}

TraceTree trace(const Registry& registry, TagId root, std::size_t max_depth) {
  std::shared_lock lock(registry.mutex_);
  return trace(registry.records_, root, max_depth);
}

OriginReport origin_report(const TraceTree& tree) {
  OriginReport out;
  collect_origins(tree.root, 0, out);
  std::sort(out.origins.begin(), out.origins.end(), [](const Origin& a, const Origin& b) {
    return std::tie(a.tag_id, a.path_length, a.enterprise_id) < std::tie(b.tag_id, b.path_length, b.enterprise_id);
  });
  return out;
}

OriginReport origin_report(const Registry& registry, TagId root, std::size_t max_depth) {
  return origin_report(trace(registry, root, max_depth));
}

nlohmann::ordered_json tree_to_json(const TraceTree& tree) {
  nlohmann::ordered_json j;
  j["root"] = node_to_json(tree.root);
  j["depth"] = tree.depth;
  j["leaves"] = tree.leaf_count;
  j["unresolved"] = tree.unresolved_count;
  return j;
}

std::string tree_to_text(const TraceTree& tree) {
  std::string out;
  node_to_text(tree.root, 0, out);
  return out;
}

nlohmann::json record_to_json(const TraceRecord& r) {
  return {{"tag_id", r.tag_id},
          {"tag_type", r.tag_type},
          {"components", r.component_ids},
          {"enterprise", r.enterprise_id},
          {"registered_at", r.registered_at}};
}

TraceRecord record_from_json(const nlohmann::json& j) {
  try {
    TraceRecord r;
    r.tag_id = j.at("tag_id").get<TagId>();
    r.tag_type = j.value("tag_type", tag_type::kMaterial);
    r.component_ids = j.value("components", std::vector<TagId>{});
    r.enterprise_id = j.value("enterprise", std::string{});
    r.registered_at = j.value("registered_at", std::int64_t{0});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SyntaxError, std::string("trace record: ") + e.what());
  }
}

}  // namespace rfidb2b::trace

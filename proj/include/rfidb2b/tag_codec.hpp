#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rfidb2b/bytes.hpp"

namespace rfidb2b::tag {

inline constexpr std::uint8_t kMagic = 0xB2;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::size_t kDefaultBlockCount = 64;
inline constexpr std::size_t kDefaultBlockSize = 4;
inline constexpr std::size_t kDefaultCapacity = kDefaultBlockCount * kDefaultBlockSize;
inline constexpr std::size_t kMaxNameLength = 24;
inline constexpr std::size_t kMaxStringLength = 64;
/// History records have room for six 16-bit words of field data.
inline constexpr std::size_t kMaxSnapshotWords = 6;

enum class FieldKind : std::uint8_t { Character, String, Integer, Real, Date };

struct FieldType {
  FieldKind kind = FieldKind::Integer;
  std::uint8_t max_len = 0;  // strings only

  static constexpr FieldType character() { return {FieldKind::Character, 0}; }
  static constexpr FieldType string(std::uint8_t max_len) { return {FieldKind::String, max_len}; }
  static constexpr FieldType integer() { return {FieldKind::Integer, 0}; }
  static constexpr FieldType real() { return {FieldKind::Real, 0}; }
  static constexpr FieldType date() { return {FieldKind::Date, 0}; }

  friend bool operator==(const FieldType&, const FieldType&) = default;
};

/// Bytes a field occupies on the tag. Strings carry a length byte plus max_len bytes.
std::size_t slot_size(FieldType type) noexcept;

/// 16-bit words the field contributes to a history snapshot, 0 if it cannot be snapshotted.
std::size_t snapshot_words(FieldType type) noexcept;

std::string kind_name(FieldKind kind);

struct FieldDef {
  std::string name;
  FieldType type;
  std::uint8_t group_id = 0;
  bool snapshot = false;

  friend bool operator==(const FieldDef&, const FieldDef&) = default;
};

struct VisualGroup {
  std::uint8_t id = 0;
  std::string title;

  friend bool operator==(const VisualGroup&, const VisualGroup&) = default;
};

struct TagTemplate {
  std::uint16_t template_id = 0;
  std::uint8_t version = 0;
  std::string name;
  std::vector<FieldDef> fields;  // on-tag layout order
  std::vector<VisualGroup> groups;  // display order

  const FieldDef* find(std::string_view field_name) const;
  std::optional<std::size_t> index_of(std::string_view field_name) const;
  /// Names of the fields of one group, in template order.
  std::vector<std::string> members(std::uint8_t group_id) const;

  friend bool operator==(const TagTemplate&, const TagTemplate&) = default;
};

struct Character {
  std::uint8_t code = 0;
  friend bool operator==(const Character&, const Character&) = default;
};

struct Date {
  std::uint32_t epoch_seconds = 0;
  friend bool operator==(const Date&, const Date&) = default;
};

using FieldValue = std::variant<Character, std::string, std::int32_t, double, Date>;
using TagRecord = std::map<std::string, FieldValue>;

/// Value equality with reals compared by bit pattern.
bool identical(const FieldValue& a, const FieldValue& b);
bool identical(const TagRecord& a, const TagRecord& b);

/// Whether a value's alternative matches the declared type (ignores range).
bool value_matches(FieldType type, const FieldValue& value);

struct TagImage {
  std::uint64_t uid = 0;
  std::size_t block_size = kDefaultBlockSize;
  Bytes data;  // block_count * block_size bytes of user memory

  std::size_t block_count() const noexcept { return block_size ? data.size() / block_size : 0; }
  std::size_t capacity() const noexcept { return data.size(); }

  static TagImage blank(std::uint64_t uid, std::size_t capacity = kDefaultCapacity,
                        std::size_t block_size = kDefaultBlockSize);

  friend bool operator==(const TagImage&, const TagImage&) = default;
};

struct TagHeader {
  std::uint8_t magic = kMagic;
  std::uint16_t template_id = 0;
  std::uint8_t version = 0;
  std::uint16_t payload_length = 0;

  friend bool operator==(const TagHeader&, const TagHeader&) = default;
};

std::array<std::uint8_t, kHeaderSize> encode_header(const TagHeader& header);
/// Parses the eight header bytes; nullopt when fewer than eight bytes are given.
std::optional<TagHeader> parse_header(ByteView bytes);

struct FieldSlot {
  std::size_t offset = 0;  // from the start of user memory, header included
  std::size_t size = 0;
};

/// Fixed slot table of a template. Depends only on the template.
struct Layout {
  std::vector<FieldSlot> slots;
  std::size_t payload_size = 0;

  std::size_t total_size() const noexcept { return kHeaderSize + payload_size; }
};

Layout compute_layout(const TagTemplate& t);

enum class ViolationKind {
  ZeroTemplateId,
  BadFieldName,
  DuplicateField,
  BadStringLength,
  UnknownGroup,
  DuplicateGroup,
  SnapshotIneligible,
  SnapshotOverflow,
  Overflow,
  NoFields,
};

struct Violation {
  ViolationKind kind;
  std::string subject;  // offending field or group
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  bool has(ViolationKind kind) const;
};

ValidationReport validate_template(const TagTemplate& t, std::size_t capacity = kDefaultCapacity);

/// Throws Error(RecordMismatch) unless the record's key set and value types
/// exactly match the template.
void check_record(const TagTemplate& t, const TagRecord& r);

TagImage encode_record(const TagTemplate& t, const TagRecord& r, std::uint64_t uid,
                       std::size_t capacity = kDefaultCapacity,
                       std::size_t block_size = kDefaultBlockSize);

TagRecord decode_record(const TagTemplate& t, const TagImage& img);

/// Single-slot codec used for in-place field patches.
void encode_field(FieldType type, const FieldValue& value, std::uint8_t* slot);
FieldValue decode_field(FieldType type, const std::uint8_t* slot);

/// Snapshot words for a history record: the template's snapshot fields in
/// order, two words (high, low) per integer/date and one per character.
std::array<std::uint16_t, kMaxSnapshotWords> snapshot_of(const TagTemplate& t, const TagRecord& r);
/// Inverse of snapshot_of for the snapshot fields only.
TagRecord values_from_snapshot(const TagTemplate& t,
                               const std::array<std::uint16_t, kMaxSnapshotWords>& words);

struct DisplaySection {
  std::string title;
  std::vector<std::pair<std::string, std::string>> rows;  // field name, rendered value
};

using DisplayModel = std::vector<DisplaySection>;

DisplayModel layout_groups(const TagTemplate& t, const TagRecord& r);

std::string render_value(const FieldValue& value);
/// `M/D/YYYY H:MM` in UTC.
std::string render_date(std::uint32_t epoch_seconds);

// Template transfer file (JSON).
TagTemplate parse_template_file(std::string_view text, std::size_t capacity = kDefaultCapacity);
std::string emit_template_file(const TagTemplate& t);

/// The 15-field product template used across the demo, tests and docs.
TagTemplate product_v1();
/// Product 298 assembled from components 202, 305 and 423.
TagRecord sample_product_record();

}  // namespace rfidb2b::tag

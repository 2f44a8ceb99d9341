#include "rfidb2b/tag_codec.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <set>

#include "rfidb2b/error.hpp"

namespace rfidb2b::tag {

std::size_t slot_size(FieldType type) noexcept {
  switch (type.kind) {
    case FieldKind::Character: return 1;
    case FieldKind::String: return static_cast<std::size_t>(type.max_len) + 1;
    case FieldKind::Integer: return 4;
    case FieldKind::Real: return 8;
    case FieldKind::Date: return 4;
  }
  return 0;
}

std::size_t snapshot_words(FieldType type) noexcept {
  switch (type.kind) {
    case FieldKind::Character: return 1;
    case FieldKind::Integer:
    case FieldKind::Date: return 2;
    default: return 0;
  }
}

std::string kind_name(FieldKind kind) {
  switch (kind) {
    case FieldKind::Character: return "character";
    case FieldKind::String: return "string";
    case FieldKind::Integer: return "integer";
    case FieldKind::Real: return "real";
    case FieldKind::Date: return "date";
  }
  return "?";
}

const FieldDef* TagTemplate::find(std::string_view field_name) const {
  for (const auto& f : fields)
    if (f.name == field_name) return &f;
  return nullptr;
}

std::optional<std::size_t> TagTemplate::index_of(std::string_view field_name) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].name == field_name) return i;
  return std::nullopt;
}

std::vector<std::string> TagTemplate::members(std::uint8_t group_id) const {
  std::vector<std::string> out;
  for (const auto& f : fields)
    if (f.group_id == group_id) out.push_back(f.name);
  return out;
}

bool identical(const FieldValue& a, const FieldValue& b) {
  if (a.index() != b.index()) return false;
  if (const auto* da = std::get_if<double>(&a))
    return std::bit_cast<std::uint64_t>(*da) == std::bit_cast<std::uint64_t>(std::get<double>(b));
  return a == b;
}

bool identical(const TagRecord& a, const TagRecord& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !identical(ia->second, ib->second)) return false;
  }
  return true;
}

bool value_matches(FieldType type, const FieldValue& value) {
  switch (type.kind) {
    case FieldKind::Character: return std::holds_alternative<Character>(value);
    case FieldKind::String: return std::holds_alternative<std::string>(value);
    case FieldKind::Integer: return std::holds_alternative<std::int32_t>(value);
    case FieldKind::Real: return std::holds_alternative<double>(value);
    case FieldKind::Date: return std::holds_alternative<Date>(value);
  }
  return false;
}

TagImage TagImage::blank(std::uint64_t uid, std::size_t capacity, std::size_t block_size) {
  if (block_size == 0 || capacity % block_size != 0)
    throw Error(Errc::RangeError, "capacity must be a whole number of blocks");
  TagImage img;
  img.uid = uid;
  img.block_size = block_size;
  img.data.assign(capacity, 0);
  return img;
}

std::array<std::uint8_t, kHeaderSize> encode_header(const TagHeader& header) {
  std::array<std::uint8_t, kHeaderSize> out{};
  out[0] = header.magic;
  put_be16(&out[1], header.template_id);
  out[3] = header.version;
  put_be16(&out[4], header.payload_length);
  return out;
}

std::optional<TagHeader> parse_header(ByteView bytes) {
  if (bytes.size() < kHeaderSize) return std::nullopt;
  TagHeader h;
  h.magic = bytes[0];
  h.template_id = get_be16(&bytes[1]);
  h.version = bytes[3];
  h.payload_length = get_be16(&bytes[4]);
  return h;
}

Layout compute_layout(const TagTemplate& t) {
  Layout layout;
  layout.slots.reserve(t.fields.size());
  std::size_t offset = kHeaderSize;
  for (const auto& f : t.fields) {
    const std::size_t size = slot_size(f.type);
    layout.slots.push_back({offset, size});
    offset += size;
  }
  layout.payload_size = offset - kHeaderSize;
  return layout;
}

bool ValidationReport::has(ViolationKind kind) const {
  return std::any_of(violations.begin(), violations.end(),
                     [kind](const Violation& v) { return v.kind == kind; });
}

namespace {

bool valid_name(std::string_view name) {
  if (name.empty() || name.size() > kMaxNameLength) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
  });
}

}  // namespace

ValidationReport validate_template(const TagTemplate& t, std::size_t capacity) {
  ValidationReport report;
  auto add = [&](ViolationKind kind, std::string subject, std::string message) {
    report.violations.push_back({kind, std::move(subject), std::move(message)});
  };

  if (t.template_id == 0) add(ViolationKind::ZeroTemplateId, t.name, "template_id 0 is reserved");
  if (t.fields.empty()) add(ViolationKind::NoFields, t.name, "template declares no fields");

  std::set<std::uint8_t> group_ids;
  for (const auto& g : t.groups) {
    if (!group_ids.insert(g.id).second)
      add(ViolationKind::DuplicateGroup, std::to_string(g.id),
          "duplicate group id " + std::to_string(g.id));
  }

  std::set<std::string> names;
  std::size_t snapshot_total = 0;
  for (const auto& f : t.fields) {
    if (!valid_name(f.name))
      add(ViolationKind::BadFieldName, f.name,
          "field name '" + f.name + "' must be 1-24 chars of [A-Z0-9_]");
    if (!names.insert(f.name).second)
      add(ViolationKind::DuplicateField, f.name, "duplicate field '" + f.name + "'");
    if (f.type.kind == FieldKind::String &&
        (f.type.max_len < 1 || f.type.max_len > kMaxStringLength))
      add(ViolationKind::BadStringLength, f.name,
          "string maxlen of '" + f.name + "' must be in 1..64");
    if (!group_ids.count(f.group_id))
      add(ViolationKind::UnknownGroup, f.name,
          "field '" + f.name + "' references undeclared group " + std::to_string(f.group_id));
    if (f.snapshot) {
      const std::size_t words = snapshot_words(f.type);
      if (words == 0)
        add(ViolationKind::SnapshotIneligible, f.name,
            "field '" + f.name + "' of type " + kind_name(f.type.kind) + " cannot be snapshotted");
      snapshot_total += words;
    }
  }
  if (snapshot_total > kMaxSnapshotWords)
    add(ViolationKind::SnapshotOverflow, t.name,
        "snapshot fields need " + std::to_string(snapshot_total) + " words, at most " +
            std::to_string(kMaxSnapshotWords) + " fit in a history record");

  const Layout layout = compute_layout(t);
  if (layout.total_size() > capacity || layout.payload_size > 0xFFFF)
    add(ViolationKind::Overflow, t.name,
        "overflow: layout needs " + std::to_string(layout.total_size()) + " bytes, tag holds " +
            std::to_string(capacity));
  return report;
}

void check_record(const TagTemplate& t, const TagRecord& r) {
  for (const auto& f : t.fields) {
    auto it = r.find(f.name);
    if (it == r.end()) throw Error(Errc::RecordMismatch, "missing field '" + f.name + "'");
    if (!value_matches(f.type, it->second))
      throw Error(Errc::RecordMismatch,
                  "field '" + f.name + "' expects a " + kind_name(f.type.kind) + " value");
    if (f.type.kind == FieldKind::String && std::get<std::string>(it->second).size() > f.type.max_len)
      throw Error(Errc::RecordMismatch, "string for '" + f.name + "' exceeds maxlen " +
                                            std::to_string(f.type.max_len));
  }
  for (const auto& [name, value] : r) {
    if (!t.find(name)) throw Error(Errc::RecordMismatch, "extra field '" + name + "'");
  }
}

void encode_field(FieldType type, const FieldValue& value, std::uint8_t* slot) {
  if (!value_matches(type, value))
    throw Error(Errc::RecordMismatch, "value does not match " + kind_name(type.kind));
  switch (type.kind) {
    case FieldKind::Character:
      slot[0] = std::get<Character>(value).code;
      break;
    case FieldKind::String: {
      const auto& s = std::get<std::string>(value);
      if (s.size() > type.max_len) throw Error(Errc::RecordMismatch, "string exceeds maxlen");
      slot[0] = static_cast<std::uint8_t>(s.size());
      std::memset(slot + 1, 0, type.max_len);
      std::memcpy(slot + 1, s.data(), s.size());
      break;
    }
    case FieldKind::Integer:
      put_be32(slot, static_cast<std::uint32_t>(std::get<std::int32_t>(value)));
      break;
    case FieldKind::Real:
      put_be64(slot, std::bit_cast<std::uint64_t>(std::get<double>(value)));
      break;
    case FieldKind::Date:
      put_be32(slot, std::get<Date>(value).epoch_seconds);
      break;
  }
}

FieldValue decode_field(FieldType type, const std::uint8_t* slot) {
  switch (type.kind) {
    case FieldKind::Character: return Character{slot[0]};
    case FieldKind::String: {
      const std::size_t len = slot[0];
      if (len > type.max_len) throw Error(Errc::RecordMismatch, "string slot length exceeds maxlen");
      return std::string(reinterpret_cast<const char*>(slot + 1), len);
    }
    case FieldKind::Integer: return static_cast<std::int32_t>(get_be32(slot));
    case FieldKind::Real: return std::bit_cast<double>(get_be64(slot));
    case FieldKind::Date: return Date{get_be32(slot)};
  }
  throw Error(Errc::RecordMismatch, "unknown field kind");
}

TagImage encode_record(const TagTemplate& t, const TagRecord& r, std::uint64_t uid,
                       std::size_t capacity, std::size_t block_size) {
  if (const auto report = validate_template(t, capacity); !report.ok())
    throw Error(Errc::SemanticError, "template '" + t.name + "' invalid: " + report.violations[0].message);
  check_record(t, r);

  const Layout layout = compute_layout(t);
  TagImage img = TagImage::blank(uid, capacity, block_size);
  const auto header = encode_header(
      {kMagic, t.template_id, t.version, static_cast<std::uint16_t>(layout.payload_size)});
  std::copy(header.begin(), header.end(), img.data.begin());
  for (std::size_t i = 0; i < t.fields.size(); ++i) {
    encode_field(t.fields[i].type, r.at(t.fields[i].name), img.data.data() + layout.slots[i].offset);
  }
  return img;
}

TagRecord decode_record(const TagTemplate& t, const TagImage& img) {
  const auto header = parse_header(img.data);
  if (!header) throw Error(Errc::TruncatedImage, "image shorter than the tag header");
  if (header->magic != kMagic) throw Error(Errc::HeaderMismatch, "bad magic byte");
  if (header->template_id != t.template_id)
    throw Error(Errc::HeaderMismatch, "image carries template_id " +
                                          std::to_string(header->template_id) + ", expected " +
                                          std::to_string(t.template_id));
  if (header->version != t.version)
    throw Error(Errc::HeaderMismatch, "image carries template version " +
                                          std::to_string(header->version) + ", expected " +
                                          std::to_string(t.version));
  const Layout layout = compute_layout(t);
  if (header->payload_length != layout.payload_size)
    throw Error(Errc::HeaderMismatch, "payload length does not match the template layout");
  if (img.data.size() < layout.total_size())
    throw Error(Errc::TruncatedImage, "image ends before the last field slot");

  TagRecord r;
  for (std::size_t i = 0; i < t.fields.size(); ++i) {
    r.emplace(t.fields[i].name, decode_field(t.fields[i].type, img.data.data() + layout.slots[i].offset));
  }
  return r;
}

std::array<std::uint16_t, kMaxSnapshotWords> snapshot_of(const TagTemplate& t, const TagRecord& r) {
  std::array<std::uint16_t, kMaxSnapshotWords> words{};
  std::size_t w = 0;
  for (const auto& f : t.fields) {
    if (!f.snapshot) continue;
    const std::size_t need = snapshot_words(f.type);
    if (need == 0 || w + need > kMaxSnapshotWords) break;
    auto it = r.find(f.name);
    if (it == r.end()) throw Error(Errc::RecordMismatch, "missing field '" + f.name + "'");
    std::uint8_t slot[4] = {};
    encode_field(f.type, it->second, slot);
    if (need == 1) {
      words[w++] = slot[0];
    } else {
      words[w++] = get_be16(slot);
      words[w++] = get_be16(slot + 2);
    }
  }
  return words;
}

TagRecord values_from_snapshot(const TagTemplate& t,
                               const std::array<std::uint16_t, kMaxSnapshotWords>& words) {
  TagRecord r;
  std::size_t w = 0;
  for (const auto& f : t.fields) {
    if (!f.snapshot) continue;
    const std::size_t need = snapshot_words(f.type);
    if (need == 0 || w + need > kMaxSnapshotWords) break;
    std::uint8_t slot[4] = {};
    if (need == 1) {
      slot[0] = static_cast<std::uint8_t>(words[w++]);
    } else {
      put_be16(slot, words[w++]);
      put_be16(slot + 2, words[w++]);
    }
    r.emplace(f.name, decode_field(f.type, slot));
  }
  return r;
}

std::string render_date(std::uint32_t epoch_seconds) {
  // days-to-civil conversion for the proleptic Gregorian calendar
  const std::int64_t days = epoch_seconds / 86400;
  const std::uint32_t secs = epoch_seconds % 86400;
  const std::int64_t z = days + 719468;
  const std::int64_t era = z / 146097;
  const std::int64_t doe = z - era * 146097;
  const std::int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const std::int64_t mp = (5 * doy + 2) / 153;
  const std::int64_t day = doy - (153 * mp + 2) / 5 + 1;
  const std::int64_t month = mp < 10 ? mp + 3 : mp - 9;
  const std::int64_t year = yoe + era * 400 + (month <= 2 ? 1 : 0);

  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld/%lld/%lld %u:%02u", static_cast<long long>(month),
                static_cast<long long>(day), static_cast<long long>(year), secs / 3600,
                (secs % 3600) / 60);
  return buf;
}

std::string render_value(const FieldValue& value) {
  struct Visitor {
    std::string operator()(Character c) const {
      if (c.code >= 0x20 && c.code < 0x7F) return std::string(1, static_cast<char>(c.code));
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02X", c.code);
      return buf;
    }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(std::int32_t v) const { return std::to_string(v); }
    std::string operator()(double v) const {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      return std::string(buf, res.ptr);
    }
    std::string operator()(Date d) const { return render_date(d.epoch_seconds); }
  };
  return std::visit(Visitor{}, value);
}

DisplayModel layout_groups(const TagTemplate& t, const TagRecord& r) {
  check_record(t, r);
  DisplayModel model;
  for (const auto& g : t.groups) {
    DisplaySection section{g.title, {}};
    for (const auto& f : t.fields) {
      if (f.group_id == g.id) section.rows.emplace_back(f.name, render_value(r.at(f.name)));
    }
    model.push_back(std::move(section));
  }
  return model;
}

TagTemplate product_v1() {
  TagTemplate t;
  t.template_id = 1;
  t.version = 1;
  t.name = "PRODUCT_V1";
  t.groups = {{1, "General information"}, {2, "Specific information"}};
  const auto i = FieldType::integer();
  const auto d = FieldType::date();
  t.fields = {
      {"TAG_ID", i, 1, true},
      {"TAG_TYPE", i, 1, false},
      {"COMPONENTS_NUMBER", i, 1, false},
      {"ID_BD_0", i, 1, false},
      {"ID_BD_1", i, 1, false},
      {"ID_BD_2", i, 1, false},
      {"DISTRIBUTOR", i, 2, false},
      {"SHIPMENT_CO_ID", i, 2, false},
      {"TAG_DATE", d, 2, false},
      {"EXPIRATION_DATE", d, 2, false},
      {"INCOMING_DAY", d, 2, false},
      {"RECEPTIONIST_ID", i, 2, false},
      {"PRODUCT_ACCEPTED", i, 2, false},
      {"PRODUCT_PRICE", i, 2, true},
      {"PRODUCT_QUANTITY", i, 2, true},
  };
  return t;
}

TagRecord sample_product_record() {
  return {
      {"TAG_ID", std::int32_t{298}},
      {"TAG_TYPE", std::int32_t{1}},
      {"COMPONENTS_NUMBER", std::int32_t{3}},
      {"ID_BD_0", std::int32_t{202}},
      {"ID_BD_1", std::int32_t{305}},
      {"ID_BD_2", std::int32_t{423}},
      {"DISTRIBUTOR", std::int32_t{81}},
      {"SHIPMENT_CO_ID", std::int32_t{60}},
      {"TAG_DATE", Date{1173949260}},        // 2007-03-15 09:01 UTC
      {"EXPIRATION_DATE", Date{946684800}},  // 2000-01-01 00:00 UTC
      {"INCOMING_DAY", Date{946684800}},
      {"RECEPTIONIST_ID", std::int32_t{24}},
      {"PRODUCT_ACCEPTED", std::int32_t{1}},
      {"PRODUCT_PRICE", std::int32_t{25000}},
      {"PRODUCT_QUANTITY", std::int32_t{1}},
  };
}

}  // namespace rfidb2b::tag

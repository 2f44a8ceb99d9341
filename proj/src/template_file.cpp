#include <limits>

#include "rfidb2b/error.hpp"
#include "rfidb2b/tag_json.hpp"

namespace rfidb2b::tag {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

/// Structural problem found after JSON parsing; `needle` is a token whose
/// first occurrence in the source marks the reported position.
struct SchemaProblem {
  std::string message;
  std::string needle;
};

[[noreturn]] void problem(std::string message, std::string needle) {
  throw SchemaProblem{std::move(message), std::move(needle)};
}

std::pair<int, int> position_of(std::string_view text, std::size_t offset) {
  int line = 1;
  int column = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

template <typename Int>
Int integer_member(const json& obj, const char* key, std::int64_t lo, std::int64_t hi) {
  auto it = obj.find(key);
  if (it == obj.end()) problem(std::string("missing key \"") + key + "\"", "{");
  if (!it->is_number_integer()) problem(std::string("\"") + key + "\" must be an integer", key);
  const auto v = it->get<std::int64_t>();
  if (v < lo || v > hi)
    problem(std::string("\"") + key + "\" out of range " + std::to_string(lo) + ".." +
                std::to_string(hi),
            key);
  return static_cast<Int>(v);
}

std::string string_member(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) problem(std::string("missing key \"") + key + "\"", "{");
  if (!it->is_string()) problem(std::string("\"") + key + "\" must be a string", key);
  return it->get<std::string>();
}

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (auto k : allowed) known = known || it.key() == k;
    if (!known) problem("unknown key \"" + it.key() + "\"", "\"" + it.key() + "\"");
  }
}

FieldType type_from_json(const json& j) {
  if (j.is_string()) {
    const auto token = j.get<std::string>();
    if (token == "integer") return FieldType::integer();
    if (token == "real") return FieldType::real();
    if (token == "character") return FieldType::character();
    if (token == "date") return FieldType::date();
    problem("unknown type token \"" + token + "\"", "\"" + token + "\"");
  }
  if (j.is_object() && j.size() == 1 && j.contains("string")) {
    const auto& n = j["string"];
    if (!n.is_number_integer()) problem("string maxlen must be an integer", "\"string\"");
    const auto len = n.get<std::int64_t>();
    if (len < 0 || len > 255) problem("string maxlen out of range", "\"string\"");
    return FieldType::string(static_cast<std::uint8_t>(len));
  }
  problem("field type must be a type token or {\"string\": maxlen}", "\"type\"");
}

}  // namespace

ordered_json template_to_json(const TagTemplate& t) {
  ordered_json j;
  j["template_id"] = t.template_id;
  j["version"] = t.version;
  j["name"] = t.name;
  j["groups"] = ordered_json::array();
  for (const auto& g : t.groups) {
    ordered_json gj;
    gj["id"] = g.id;
    gj["title"] = g.title;
    j["groups"].push_back(std::move(gj));
  }
  j["fields"] = ordered_json::array();
  for (const auto& f : t.fields) {
    ordered_json fj;
    fj["name"] = f.name;
    if (f.type.kind == FieldKind::String) {
      fj["type"] = ordered_json{{"string", f.type.max_len}};
    } else {
      fj["type"] = kind_name(f.type.kind);
    }
    fj["group"] = f.group_id;
    if (f.snapshot) fj["snapshot"] = true;
    j["fields"].push_back(std::move(fj));
  }
  return j;
}

namespace {

TagTemplate template_from_object(const json& j) {
  if (!j.is_object()) problem("template must be a JSON object", "");
  reject_unknown_keys(j, {"template_id", "version", "name", "groups", "fields"});
  TagTemplate t;
  t.template_id = integer_member<std::uint16_t>(j, "template_id", 0, 0xFFFF);
  t.version = integer_member<std::uint8_t>(j, "version", 0, 0xFF);
  t.name = string_member(j, "name");

  if (!j.contains("groups") || !j["groups"].is_array()) problem("\"groups\" must be an array", "\"groups\"");
  for (const auto& gj : j["groups"]) {
    if (!gj.is_object()) problem("group entries must be objects", "\"groups\"");
    reject_unknown_keys(gj, {"id", "title"});
    t.groups.push_back({integer_member<std::uint8_t>(gj, "id", 0, 0xFF), string_member(gj, "title")});
  }

  if (!j.contains("fields") || !j["fields"].is_array()) problem("\"fields\" must be an array", "\"fields\"");
  for (const auto& fj : j["fields"]) {
    if (!fj.is_object()) problem("field entries must be objects", "\"fields\"");
    reject_unknown_keys(fj, {"name", "type", "group", "snapshot"});
    FieldDef f;
    f.name = string_member(fj, "name");
    if (!fj.contains("type")) problem("field '" + f.name + "' has no type", "\"" + f.name + "\"");
    f.type = type_from_json(fj["type"]);
    f.group_id = integer_member<std::uint8_t>(fj, "group", 0, 0xFF);
    if (auto it = fj.find("snapshot"); it != fj.end()) {
      if (!it->is_boolean()) problem("\"snapshot\" must be a boolean", "\"snapshot\"");
      f.snapshot = it->get<bool>();
    }
    t.fields.push_back(std::move(f));
  }
  return t;
}

}  // namespace

TagTemplate template_from_json(const json& j) {
  try {
    return template_from_object(j);
  } catch (const SchemaProblem& p) {
    throw Error(Errc::SyntaxError, "template: " + p.message);
  }
}

TagTemplate parse_template_file(std::string_view text, std::size_t capacity) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto offset = e.byte == 0 ? 0 : e.byte - 1;
    const auto [line, column] = position_of(text, offset);
    throw ParseError(Errc::SyntaxError, line, column, "malformed JSON");
  }
  TagTemplate t;
  try {
    t = template_from_object(j);
  } catch (const SchemaProblem& p) {
    const auto at = p.needle.empty() ? std::string_view::npos : text.find(p.needle);
    const auto [line, column] = position_of(text, at == std::string_view::npos ? 0 : at);
    throw ParseError(Errc::SyntaxError, line, column, p.message);
  }
  const auto report = validate_template(t, capacity);
  if (!report.ok()) {
    std::string msg;
    for (const auto& v : report.violations) msg += (msg.empty() ? "" : "; ") + v.message;
    throw Error(Errc::SemanticError, msg);
  }
  return t;
}

std::string emit_template_file(const TagTemplate& t) { return template_to_json(t).dump(2) + "\n"; }

json value_to_json(const FieldValue& v) {
  struct Visitor {
    json operator()(Character c) const {
      if (c.code >= 0x20 && c.code < 0x7F) return std::string(1, static_cast<char>(c.code));
      return c.code;
    }
    json operator()(const std::string& s) const { return s; }
    json operator()(std::int32_t i) const { return i; }
    json operator()(double d) const { return d; }
    json operator()(Date d) const { return d.epoch_seconds; }
  };
  return std::visit(Visitor{}, v);
}

FieldValue value_from_json(FieldType type, const json& j) {
  auto bad = [&](const char* what) -> FieldValue {
    throw Error(Errc::RecordMismatch, std::string("expected ") + what + ", got " + j.dump());
  };
  switch (type.kind) {
    case FieldKind::Character:
      if (j.is_string() && j.get<std::string>().size() == 1)
        return Character{static_cast<std::uint8_t>(j.get<std::string>()[0])};
      if (j.is_number_integer() && j.get<std::int64_t>() >= 0 && j.get<std::int64_t>() <= 255)
        return Character{static_cast<std::uint8_t>(j.get<std::int64_t>())};
      return bad("a single character");
    case FieldKind::String:
      if (j.is_string()) return j.get<std::string>();
      return bad("a string");
    case FieldKind::Integer:
      if (j.is_number_integer()) {
        const auto v = j.get<std::int64_t>();
        if (v >= std::numeric_limits<std::int32_t>::min() && v <= std::numeric_limits<std::int32_t>::max())
          return static_cast<std::int32_t>(v);
      }
      return bad("a 32-bit signed integer");
    case FieldKind::Real:
      if (j.is_number()) return j.get<double>();
      return bad("a number");
    case FieldKind::Date:
      if (j.is_number_integer()) {
        const auto v = j.get<std::int64_t>();
        if (v >= 0 && v <= 0xFFFFFFFFLL) return Date{static_cast<std::uint32_t>(v)};
      }
      return bad("epoch seconds");
  }
  return bad("a known type");
}

json record_to_json(const TagTemplate& t, const TagRecord& r) {
  json j = json::object();
  for (const auto& f : t.fields) {
    if (auto it = r.find(f.name); it != r.end()) j[f.name] = value_to_json(it->second);
  }
  return j;
}

TagRecord record_from_json(const TagTemplate& t, const json& j) {
  if (!j.is_object()) throw Error(Errc::RecordMismatch, "record must be a JSON object");
  TagRecord r;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const FieldDef* f = t.find(it.key());
    if (!f) throw Error(Errc::RecordMismatch, "extra field '" + it.key() + "'");
    try {
      r.emplace(it.key(), value_from_json(f->type, it.value()));
    } catch (const Error& e) {
      throw Error(Errc::RecordMismatch, "field '" + it.key() + "': " + e.what());
    }
  }
  check_record(t, r);
  return r;
}

json image_to_json(const TagImage& img) {
  return json{{"uid", img.uid}, {"block_size", img.block_size}, {"data", to_hex(img.data, '\0')}};
}

TagImage image_from_json(const json& j) {
  try {
    TagImage img;
    img.uid = j.at("uid").get<std::uint64_t>();
    img.block_size = j.value("block_size", kDefaultBlockSize);
    img.data = from_hex(j.at("data").get<std::string>());
    if (img.block_size == 0 || img.data.size() % img.block_size != 0)
      throw Error(Errc::TruncatedImage, "image data is not a whole number of blocks");
    return img;
  } catch (const json::exception& e) {
    throw Error(Errc::SyntaxError, std::string("tag image: ") + e.what());
  }
}

}  // namespace rfidb2b::tag

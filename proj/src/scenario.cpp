#include "rfidb2b/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "rfidb2b/gate_script.hpp"
#include "rfidb2b/tag_json.hpp"

namespace rfidb2b::scenario {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::pair<std::string_view, StepKind> kStepNames[] = {
    {"advance_clock", StepKind::AdvanceClock},   {"commission_tag", StepKind::CommissionTag},
    {"tag_enters_field", StepKind::TagEntersField}, {"tag_leaves_field", StepKind::TagLeavesField},
    {"pc_command", StepKind::PcCommand},         {"clear_alarms", StepKind::ClearAlarms},
    {"place_order", StepKind::PlaceOrder},       {"confirm_order", StepKind::ConfirmOrder},
    {"transition", StepKind::Transition},        {"server_write", StepKind::ServerWrite},
    {"handheld_open", StepKind::HandheldOpen},   {"handheld_read", StepKind::HandheldRead},
    {"handheld_write", StepKind::HandheldWrite}, {"handheld_sync", StepKind::HandheldSync},
    {"ingest", StepKind::Ingest},                {"io", StepKind::Io},
    {"trace", StepKind::Trace},                  {"query", StepKind::Query},
    {"report", StepKind::Report},                {"random_reads", StepKind::RandomReads},
};

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

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string join_path(const std::string& base, const std::string& rel) {
  if (rel.empty() || rel.front() == '/' || base.empty()) return rel;
  return base.back() == '/' ? base + rel : base + "/" + rel;
}

[[noreturn]] void syntax(const std::string& what) { throw Error(Errc::SyntaxError, "scenario: " + what); }

const json& member(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) syntax(where + ": missing \"" + key + "\"");
  return obj.at(key);
}

std::string str_member(const json& obj, const char* key, const std::string& where) {
  const json& v = member(obj, key, where);
  if (!v.is_string()) syntax(where + ": \"" + key + "\" must be a string");
  return v.get<std::string>();
}

std::int64_t int_member(const json& obj, const char* key, const std::string& where) {
  const json& v = member(obj, key, where);
  if (!v.is_number_integer()) syntax(where + ": \"" + key + "\" must be an integer");
  return v.get<std::int64_t>();
}

std::uint64_t parse_uid(const json& v, const std::string& where) {
  if (v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() > 0)) return v.get<std::uint64_t>();
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    int base = 10;
    if (s.rfind("0x", 0) == 0 || s.rfind("0X", 0) == 0) {
      s = s.substr(2);
      base = 16;
    }
    try {
      std::size_t used = 0;
      const auto uid = std::stoull(s, &used, base);
      if (used == s.size() && uid != 0) return uid;
    } catch (const std::exception&) {
    }
  }
  syntax(where + ": uid must be a non-zero integer or hex string");
}

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

const tag::TagTemplate* find_template(const std::vector<tag::TagTemplate>& ts, const json& ref) {
  const tag::TagTemplate* best = nullptr;
  for (const auto& t : ts) {
    const bool match = ref.is_string() ? t.name == ref.get<std::string>()
                                       : ref.is_number_integer() && t.template_id == ref.get<std::int64_t>();
    if (match && (!best || t.version > best->version)) best = &t;
  }
  return best;
}

Errc status_cause(std::uint16_t status) {
  switch (status) {
    case gate::mailbox_status::kTagAbsent: return Errc::TagNotInField;
    case gate::mailbox_status::kBadField: return Errc::RangeError;
    case gate::mailbox_status::kWriteProtected: return Errc::WriteProtected;
    case gate::mailbox_status::kCapabilityDenied: return Errc::CapabilityDenied;
    case gate::mailbox_status::kUnknownTemplate: return Errc::DecodeFailure;
    case gate::mailbox_status::kBadValue: return Errc::RangeError;
    default: return Errc::DeviceException;
  }
}

json effect_to_json(const gate::Effect& e) {
  switch (e.kind) {
    case gate::Effect::Kind::Recorded: return {{"seq", e.seq}, {"event", gate::event_name(e.event)}};
    case gate::Effect::Kind::Alarm: return {{"code", e.alarm_code}};
    case gate::Effect::Kind::TagWrite: return {{"uid", e.uid}, {"field", e.field}};
    case gate::Effect::Kind::Relay: return {{"relay", e.relay}, {"on", e.on}};
    case gate::Effect::Kind::Suppressed: return {{"uid", e.uid}};
  }
  return json::object();
}

const char* effect_kind(const gate::Effect& e) {
  switch (e.kind) {
    case gate::Effect::Kind::Recorded: return "history_record";
    case gate::Effect::Kind::Alarm: return "gate_alarm";
    case gate::Effect::Kind::TagWrite: return "tag_write";
    case gate::Effect::Kind::Relay: return "relay";
    case gate::Effect::Kind::Suppressed: return "duplicate_suppressed";
  }
  return "effect";
}

json entry_to_json(const enterprise::InventoryEntry& e) {
  return {{"tag_id", e.tag_id},   {"uid", e.uid},           {"enterprise", e.enterprise},
          {"state", enterprise::state_name(e.state)}, {"quantity", e.quantity}, {"price", e.price},
          {"location", e.location}, {"last_update", e.last_update}};
}

json rows_to_json(const std::vector<enterprise::ReportRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"enterprise", r.enterprise}, {"state", r.state}, {"count", r.count}});
  return out;
}

/// Referential checks for the timeline, run in order so that sessions and
/// orders must be created before use.
class Validator {
 public:
  explicit Validator(const Scenario& s) : s_(s) {
    for (const auto& e : s.enterprises) enterprises_.insert(e.id);
    for (const auto& g : s.gates) gates_[g.id] = &g;
    for (const auto& t : s.tags) tags_.insert(t.id);
  }

  void check(std::size_t index, const Step& step) {
    index_ = index;
    const json& a = step.args;
    switch (step.kind) {
      case StepKind::AdvanceClock:
        if (int_member(a, "ms", where()) < 0) syntax(where() + ": \"ms\" must not be negative");
        break;
      case StepKind::CommissionTag: tag(a); break;
      case StepKind::TagEntersField:
      case StepKind::TagLeavesField:
        tag(a);
        port(a, gate(a));
        break;
      case StepKind::PcCommand:
        gate(a);
        tag(a);
        str_member(a, "field", where());
        int_member(a, "value", where());
        break;
      case StepKind::ClearAlarms: gate(a); break;
      case StepKind::PlaceOrder:
        ent(a, "client");
        ent(a, "supplier");
        int_member(a, "quantity", where());
        orders_.insert(a.contains("ref") ? a.at("ref").get<std::string>() : std::to_string(++order_count_));
        if (a.contains("ref")) ++order_count_;
        break;
      case StepKind::ConfirmOrder: {
        ent(a, "supplier");
        const json& o = member(a, "order", where());
        const std::string ref = o.is_string() ? o.get<std::string>() : o.dump();
        if (!orders_.count(ref)) refer("order '" + ref + "' was not placed earlier");
        if (!find_template(s_.templates, member(a, "template", where())))
          refer("undeclared template " + a.at("template").dump());
        break;
      }
      case StepKind::Transition:
        ent(a, "enterprise");
        tag_or_id(a);
        if (!enterprise::parse_state(str_member(a, "state", where())))
          syntax(where() + ": unknown state '" + a.at("state").get<std::string>() + "'");
        break;
      case StepKind::ServerWrite:
        ent(a, "enterprise");
        tag_or_id(a);
        str_member(a, "field", where());
        member(a, "value", where());
        break;
      case StepKind::HandheldOpen:
        ent(a, "enterprise");
        str_member(a, "department", where());
        sessions_.insert(str_member(a, "session", where()));
        break;
      case StepKind::HandheldRead:
        session(a);
        tag(a);
        break;
      case StepKind::HandheldWrite:
        session(a);
        tag_or_id(a);
        str_member(a, "field", where());
        member(a, "value", where());
        break;
      case StepKind::HandheldSync: session(a); break;
      case StepKind::Ingest:
        if (a.contains("gate"))
          gate(a);
        else
          ent(a, "enterprise");
        break;
      case StepKind::Io: {
        const GateDecl& g = gate(a);
        const auto input = int_member(a, "input", where());
        if (input < 0 || input >= gate::capabilities(g.tier).inputs) refer("gate " + g.id + " has no input " + std::to_string(input));
        if (!member(a, "level", where()).is_boolean()) syntax(where() + ": \"level\" must be a boolean");
        break;
      }
      case StepKind::Trace: tag_or_id(a); break;
      case StepKind::Query: ent(a, "enterprise"); break;
      case StepKind::Report: break;
      case StepKind::RandomReads: {
        port(a, gate(a));
        if (int_member(a, "count", where()) < 0) syntax(where() + ": \"count\" must not be negative");
        if (a.contains("tags")) {
          if (!a.at("tags").is_array() || a.at("tags").empty()) syntax(where() + ": \"tags\" must be a non-empty array");
          for (const auto& t : a.at("tags"))
            if (!t.is_string() || !tags_.count(t.get<std::string>())) refer("undeclared tag " + t.dump());
        } else if (s_.tags.empty()) {
          refer("random_reads needs declared tags");
        }
        break;
      }
    }
  }

 private:
  std::string where() const { return "step " + std::to_string(index_); }
  [[noreturn]] void refer(const std::string& what) const { throw StepError(Errc::ReferenceError, index_, what); }

  const GateDecl& gate(const json& a) {
    const std::string id = str_member(a, "gate", where());
    auto it = gates_.find(id);
    if (it == gates_.end()) refer("undeclared gate '" + id + "'");
    return *it->second;
  }
  void port(const json& a, const GateDecl& g) {
    if (!a.contains("port")) return;
    const auto p = int_member(a, "port", where());
    if (p < 0 || static_cast<std::size_t>(p) >= g.ports) refer("gate " + g.id + " has no port " + std::to_string(p));
  }
  void tag(const json& a) {
    const std::string id = str_member(a, "tag", where());
    if (!tags_.count(id)) refer("undeclared tag '" + id + "'");
  }
  void tag_or_id(const json& a) {
    if (a.contains("tag"))
      tag(a);
    else
      int_member(a, "tag_id", where());
  }
  void ent(const json& a, const char* key) {
    const std::string id = str_member(a, key, where());
    if (!enterprises_.count(id)) refer("undeclared enterprise '" + id + "'");
  }
  void session(const json& a) {
    const std::string id = str_member(a, "session", where());
    if (!sessions_.count(id)) refer("handheld session '" + id + "' is not open");
  }

  const Scenario& s_;
  std::size_t index_ = 0;
  std::set<std::string> enterprises_;
  std::map<std::string, const GateDecl*> gates_;
  std::set<std::string> tags_;
  std::set<std::string> sessions_;
  std::set<std::string> orders_;
  std::int64_t order_count_ = 0;
};

Scenario parse_document(const json& doc, const std::string& base_dir) {
  if (!doc.is_object()) syntax("document must be a JSON object");
  static const std::set<std::string> allowed = {"seed",  "start_time", "templates", "enterprises", "gates",
                                                "tags",  "alarm_rules", "timeline", "description"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!allowed.count(it.key())) syntax("unknown key \"" + it.key() + "\"");

  Scenario s;
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_integer()) syntax("\"seed\" must be an integer");
    s.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("start_time")) s.start_ms = parse_time(doc["start_time"]);

  for (const auto& tj : doc.value("templates", json::array())) {
    tag::TagTemplate t;
    if (tj.is_object() && tj.contains("file")) {
      t = tag::parse_template_file(read_file(join_path(base_dir, tj["file"].get<std::string>())));
    } else {
      t = tag::template_from_json(tj);
      const auto report = tag::validate_template(t);
      if (!report.ok()) throw Error(Errc::SemanticError, "template " + t.name + ": " + report.violations.front().message);
    }
    for (const auto& other : s.templates)
      if (other.template_id == t.template_id && other.version == t.version)
        throw Error(Errc::SemanticError, "template " + std::to_string(t.template_id) + " v" +
                                             std::to_string(t.version) + " declared twice");
    s.templates.push_back(std::move(t));
  }

  std::set<std::string> ent_ids;
  for (const auto& ej : doc.value("enterprises", json::array())) {
    EnterpriseDecl e{str_member(ej, "id", "enterprise"), ej.value("name", std::string{})};
    if (e.name.empty()) e.name = e.id;
    if (!ent_ids.insert(e.id).second) throw Error(Errc::SemanticError, "enterprise '" + e.id + "' declared twice");
    s.enterprises.push_back(std::move(e));
  }

  std::set<std::string> gate_ids;
  std::set<std::pair<std::string, int>> addresses;
  for (const auto& gj : doc.value("gates", json::array())) {
    GateDecl g;
    g.id = str_member(gj, "id", "gate");
    const std::string where = "gate " + g.id;
    g.enterprise = str_member(gj, "enterprise", where);
    if (!ent_ids.count(g.enterprise)) throw Error(Errc::ReferenceError, where + ": undeclared enterprise '" + g.enterprise + "'");
    auto tier = gate::parse_tier(str_member(gj, "tier", where));
    if (!tier) syntax(where + ": tier must be LCCG, MCCG or HCCG");
    g.tier = *tier;
    const auto address = int_member(gj, "address", where);
    if (address < 1 || address > modbus::kMaxSlaveAddress) throw Error(Errc::BadAddress, where + ": address must be 1..247");
    g.address = static_cast<std::uint8_t>(address);
    if (!addresses.insert({g.enterprise, static_cast<int>(address)}).second)
      throw Error(Errc::SemanticError, where + ": address " + std::to_string(address) + " already used on this bus");
    g.department = gj.value("department", g.id);
    g.direction = gj.value("direction", std::string("IN")) == "OUT" ? enterprise::Direction::Out : enterprise::Direction::In;
    if (gj.contains("direction") && gj["direction"] != "IN" && gj["direction"] != "OUT")
      syntax(where + ": direction must be IN or OUT");
    g.receiving = gj.value("receiving", false);
    if (gj.contains("script_file"))
      g.script = read_file(join_path(base_dir, gj["script_file"].get<std::string>()));
    else
      g.script = gj.value("script", std::string{});
    g.ports = static_cast<std::size_t>(gj.value("ports", 1));
    if (g.ports < 1 || static_cast<int>(g.ports) > gate::capabilities(g.tier).reader_ports)
      throw Error(Errc::CapabilityDenied, where + ": " + gate::tier_name(g.tier) + " supports " +
                                              std::to_string(gate::capabilities(g.tier).reader_ports) + " port(s)");
    if (!g.script.empty()) gate::parse_script(g.script, g.tier, s.templates);
    if (!gate_ids.insert(g.id).second) throw Error(Errc::SemanticError, where + " declared twice");
    s.gates.push_back(std::move(g));
  }

  std::set<std::string> tag_ids;
  std::set<std::uint64_t> uids;
  for (const auto& tj : doc.value("tags", json::array())) {
    TagDecl t;
    t.id = str_member(tj, "id", "tag");
    const std::string where = "tag " + t.id;
    t.uid = parse_uid(member(tj, "uid", where), where);
    t.enterprise = str_member(tj, "enterprise", where);
    if (!ent_ids.count(t.enterprise)) throw Error(Errc::ReferenceError, where + ": undeclared enterprise '" + t.enterprise + "'");
    const tag::TagTemplate* tpl = find_template(s.templates, member(tj, "template", where));
    if (!tpl) throw Error(Errc::ReferenceError, where + ": undeclared template " + tj["template"].dump());
    t.template_id = tpl->template_id;
    t.template_version = tpl->version;
    t.record = tag::record_from_json(*tpl, member(tj, "record", where));
    t.capacity = tj.value("capacity", tag::kDefaultCapacity);
    t.commissioned = tj.value("commissioned", false);
    if (!tag_ids.insert(t.id).second) throw Error(Errc::SemanticError, where + " declared twice");
    if (!uids.insert(t.uid).second) throw Error(Errc::DuplicateUid, where + ": uid already used");
    s.tags.push_back(std::move(t));
  }

  for (const auto& rj : doc.value("alarm_rules", json::array())) {
    const std::string name = str_member(rj, "name", "alarm rule");
    s.alarm_rules.push_back(enterprise::AlarmRule::parse(name, str_member(rj, "when", "alarm rule " + name),
                                                         rj.value("severity", std::string("warning")),
                                                         rj.value("message", name), rj.value("kind", std::string{})));
  }

  std::optional<std::int64_t> last_at;
  for (const auto& sj : doc.value("timeline", json::array())) {
    const std::size_t index = s.timeline.size();
    const std::string where = "step " + std::to_string(index);
    const std::string name = str_member(sj, "step", where);
    Step step;
    auto it = std::find_if(std::begin(kStepNames), std::end(kStepNames), [&](const auto& p) { return p.first == name; });
    if (it == std::end(kStepNames)) syntax(where + ": unknown step '" + name + "'");
    step.kind = it->second;
    if (sj.contains("at")) {
      step.at_ms = int_member(sj, "at", where);
      if (last_at && *step.at_ms < *last_at) syntax(where + ": timeline times must not decrease");
      last_at = step.at_ms;
    }
    step.args = sj;
    s.timeline.push_back(std::move(step));
  }

  Validator v(s);
  for (std::size_t i = 0; i < s.timeline.size(); ++i) v.check(i, s.timeline[i]);
  return s;
}

}  // namespace

std::string step_name(StepKind kind) {
  for (const auto& [name, k] : kStepNames)
    if (k == kind) return std::string(name);
  return "?";
}

std::int64_t parse_time(const json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (!j.is_string()) syntax("time must be integer ms or an ISO date string");
  const std::string s = j.get<std::string>();
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char tail = 0;
  const int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &sec, &tail);
  const bool date_only = n == 3 && s.size() == 10;
  if (!(date_only || n == 6 || (n == 7 && tail == 'Z')) || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 ||
      mi > 59 || sec > 59)
    syntax("bad time '" + s + "', expected YYYY-MM-DD or YYYY-MM-DDTHH:MM:SSZ");
  const std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  return ((days * 24 + h) * 60 + mi) * 60000LL + sec * 1000LL;
}

Scenario parse_scenario(std::string_view text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, column] = position_of(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError(Errc::SyntaxError, line, column, "malformed JSON");
  }
  try {
    return parse_document(doc, base_dir);
  } catch (const json::exception& e) {
    throw Error(Errc::SyntaxError, std::string("scenario: ") + e.what());
  }
}

Scenario load_scenario(const std::string& path) {
  const auto slash = path.find_last_of('/');
  return parse_scenario(read_file(path), slash == std::string::npos ? "." : path.substr(0, slash));
}

std::string EventLog::to_jsonl() const {
  std::string out;
  for (const auto& e : entries) {
    ordered_json line;
    line["ts"] = e.ts;
    line["source"] = e.source;
    line["kind"] = e.kind;
    line["payload"] = e.payload;
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_below(0)");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

struct World::GateRig {
  const GateDecl* decl = nullptr;
  std::vector<std::unique_ptr<rfid::ReaderField>> fields;
  std::vector<std::unique_ptr<rfid::reader::ReaderDevice>> devices;
  std::unique_ptr<gate::ControlGate> gate;
  std::uint32_t cursor = 1;  // next history seq the PC has not fetched
};

struct World::EnterpriseRig {
  modbus::RtuBus bus;
  std::unique_ptr<modbus::Master> master;
};

World::World(const Scenario& s, std::uint64_t seed) : scenario_(&s), clock_(s.start_ms), rng_(seed), corp_("CORP") {
  const std::int64_t t0 = clock_.now_ms();
  for (const auto& e : s.enterprises) {
    corp_.add_enterprise(e.id, e.name, t0);
    auto rig = std::make_unique<EnterpriseRig>();
    rig->master = std::make_unique<modbus::Master>(rig->bus, clock_);
    enterprise_rigs_[e.id] = std::move(rig);
  }
  for (const auto& g : s.gates) {
    auto rig = std::make_unique<GateRig>();
    rig->decl = &g;
    std::vector<rfid::reader::ReaderDevice*> devices;
    for (std::size_t p = 0; p < g.ports; ++p) {
      rig->fields.push_back(std::make_unique<rfid::ReaderField>(tag_world_, g.id + "/" + std::to_string(p)));
      rig->devices.push_back(std::make_unique<rfid::reader::ReaderDevice>(*rig->fields.back()));
      devices.push_back(rig->devices.back().get());
    }
    gate::GateConfig cfg;
    cfg.gate_id = g.id;
    cfg.tier = g.tier;
    cfg.slave_address = g.address;
    cfg.templates = s.templates;
    rig->gate = std::make_unique<gate::ControlGate>(cfg, clock_, devices);
    if (!g.script.empty()) rig->gate->load_script(g.script);
    rig->gate->connect(enterprise_rigs_.at(g.enterprise)->bus);
    corp_.bind_gate({g.id, g.enterprise, g.department, g.direction, g.receiving}, t0);
    gate_rigs_[g.id] = std::move(rig);
  }
  for (const auto& r : s.alarm_rules) corp_.add_alarm_rule(r, t0);
  flush_corporation();
  for (const auto& t : s.tags) {
    tag_world_.create_tag(t.uid, t.capacity);
    if (t.commissioned) commission(t);
  }
  emit("runner", "world_ready",
       {{"seed", seed},
        {"enterprises", s.enterprises.size()},
        {"gates", s.gates.size()},
        {"tags", s.tags.size()},
        {"templates", s.templates.size()}});
}

World::~World() = default;

gate::ControlGate& World::gate(const std::string& id) {
  auto it = gate_rigs_.find(id);
  if (it == gate_rigs_.end()) throw Error(Errc::ReferenceError, "no gate '" + id + "'");
  return *it->second->gate;
}

modbus::RtuBus& World::bus(const std::string& enterprise_id) {
  auto it = enterprise_rigs_.find(enterprise_id);
  if (it == enterprise_rigs_.end()) throw Error(Errc::UnknownEnterprise, "no enterprise '" + enterprise_id + "'");
  return it->second->bus;
}

void World::emit(std::string source, std::string kind, json payload) {
  log_.entries.push_back({clock_.now_ms(), std::move(source), std::move(kind), std::move(payload)});
}

void World::flush_corporation() {
  const auto& events = corp_.log();
  for (; corp_seen_ < events.size(); ++corp_seen_) {
    const auto& e = events[corp_seen_];
    log_.entries.push_back({e.ts, "corp", e.kind, e.payload});
  }
  const auto& alarms = corp_.alarms();
  for (; corp_alarms_seen_ < alarms.size(); ++corp_alarms_seen_) {
    const auto& a = alarms[corp_alarms_seen_];
    log_.entries.push_back({a.ts, "corp", "corp_alarm",
                            {{"rule", a.rule}, {"severity", a.severity}, {"message", a.message},
                             {"enterprise", a.enterprise}, {"event_index", a.event_index}}});
    ++summary_.alarms;
  }
}

void World::record_effects(const std::string& gate_id, const std::vector<gate::Effect>& effects) {
  for (const auto& e : effects) {
    if (e.kind == gate::Effect::Kind::Alarm) ++summary_.alarms;
    emit(gate_id, effect_kind(e), effect_to_json(e));
  }
}

void World::commission(const TagDecl& t) {
  const tag::TagTemplate* tpl = nullptr;
  for (const auto& c : scenario_->templates)
    if (c.template_id == t.template_id && c.version == t.template_version) tpl = &c;
  tag_world_.commission(tag::encode_record(*tpl, t.record, t.uid, t.capacity));
  json payload = {{"tag", t.id}, {"uid", t.uid}, {"template", tpl->name}};
  try {
    const auto rec = trace::record_from_tag(t.record, t.enterprise, clock_.now_ms());
    registry_.register_record(rec);
    payload["tag_id"] = rec.tag_id;
  } catch (const Error& e) {
    if (e.code() != Errc::InvalidRecord) throw;
    payload["trace"] = std::string("not registered: ") + e.what();
  }
  emit("runner", "tag_commissioned", payload);
}

void World::emit_failure(const StepError& e) {
  emit("runner", "step_failed", {{"step", e.step()}, {"cause", std::string(errc_name(e.code()))}, {"message", e.what()}});
}

const TagDecl& World::tag_decl(const std::string& id) const {
  for (const auto& t : scenario_->tags)
    if (t.id == id) return t;
  throw Error(Errc::ReferenceError, "no tag '" + id + "'");
}

std::vector<gate::HistoryRecord> World::poll_history(GateRig& rig) {
  auto& master = *enterprise_rigs_.at(rig.decl->enterprise)->master;
  const std::uint8_t addr = rig.decl->address;
  const auto head = master.read_holding(addr, gate::reg::kHistoryCount, 2);
  const std::uint32_t last = (std::uint32_t{head[0]} << 16) | head[1];
  std::vector<gate::HistoryRecord> out;
  while (rig.cursor <= last) {
    const std::uint16_t from[2] = {static_cast<std::uint16_t>(rig.cursor >> 16),
                                   static_cast<std::uint16_t>(rig.cursor & 0xFFFF)};
    master.write_multiple(addr, gate::reg::kHistoryFrom, from);
    const auto n = master.read_holding(addr, gate::reg::kWindowCount, 1).at(0);
    if (n == 0) break;
    const auto words = master.read_holding(addr, gate::reg::kWindow,
                                           static_cast<std::uint16_t>(n * gate::reg::kRegistersPerRecord));
    for (std::size_t i = 0; i < n; ++i) {
      Bytes raw;
      for (std::size_t w = 0; w < gate::reg::kRegistersPerRecord; ++w) {
        const auto v = words[i * gate::reg::kRegistersPerRecord + w];
        raw.push_back(static_cast<std::uint8_t>(v >> 8));
        raw.push_back(static_cast<std::uint8_t>(v & 0xFF));
      }
      auto rec = gate::HistoryRecord::decode(raw);
      rig.cursor = rec.seq + 1;
      out.push_back(rec);
    }
  }
  return out;
}

namespace {

enterprise::TagId tag_id_arg(const json& a, const Scenario& s) {
  if (!a.contains("tag")) return a.at("tag_id").get<enterprise::TagId>();
  for (const auto& t : s.tags) {
    if (t.id != a.at("tag").get<std::string>()) continue;
    auto it = t.record.find("TAG_ID");
    if (it != t.record.end())
      if (const auto* v = std::get_if<std::int32_t>(&it->second)) return *v;
    throw Error(Errc::InvalidRecord, "tag " + t.id + " has no integer TAG_ID");
  }
  throw Error(Errc::ReferenceError, "no tag " + a.at("tag").dump());
}

bool is_pc_step(StepKind k) {
  return k == StepKind::PcCommand || k == StepKind::ClearAlarms || k == StepKind::Ingest;
}

}  // namespace

void World::run_step(std::size_t index, const Step& step) {
  std::uint64_t slave_before = 0;
  for (const auto& [id, rig] : enterprise_rigs_) slave_before += rig->bus.slave_bytes();
  try {
    if (step.at_ms) clock_.set(scenario_->start_ms + *step.at_ms);
    execute(step);
  } catch (const StepError&) {
    throw;
  } catch (const Error& e) {
    flush_corporation();
    throw StepError(e.code(), index, step_name(step.kind) + ": " + e.what());
  } catch (const std::exception& e) {
    flush_corporation();
    throw StepError(Errc::StepFailure, index, step_name(step.kind) + ": " + e.what());
  }
  flush_corporation();
  ++summary_.steps;
  if (!is_pc_step(step.kind)) {
    std::uint64_t slave_after = 0;
    for (const auto& [id, rig] : enterprise_rigs_) slave_after += rig->bus.slave_bytes();
    summary_.unsolicited_bus_bytes += slave_after - slave_before;
  }
}

void World::execute(const Step& step) {
  const json& a = step.args;
  const Scenario& s = *scenario_;
  switch (step.kind) {
    case StepKind::AdvanceClock:
      clock_.advance(a.at("ms").get<std::int64_t>());
      emit("runner", "clock", {{"now", clock_.now_ms()}});
      break;
    case StepKind::CommissionTag: commission(tag_decl(a.at("tag"))); break;
    case StepKind::TagEntersField: {
      const TagDecl& t = tag_decl(a.at("tag"));
      auto& rig = *gate_rigs_.at(a.at("gate"));
      const std::size_t port = a.value("port", 0);
      rig.fields.at(port)->enter(t.uid);
      emit(rig.decl->id, "tag_detected", {{"tag", t.id}, {"uid", t.uid}, {"port", port}});
      record_effects(rig.decl->id, rig.gate->on_tag_event(t.uid, port));
      break;
    }
    case StepKind::TagLeavesField: {
      const TagDecl& t = tag_decl(a.at("tag"));
      auto& rig = *gate_rigs_.at(a.at("gate"));
      const std::size_t port = a.value("port", 0);
      rig.fields.at(port)->leave(t.uid);
      emit(rig.decl->id, "tag_left", {{"tag", t.id}, {"uid", t.uid}, {"port", port}});
      break;
    }
    case StepKind::PcCommand: {
      const TagDecl& t = tag_decl(a.at("tag"));
      auto& rig = *gate_rigs_.at(a.at("gate"));
      const tag::TagTemplate* tpl = nullptr;
      for (const auto& c : s.templates)
        if (c.template_id == t.template_id && c.version == t.template_version) tpl = &c;
      const std::string field = a.at("field");
      auto index = tpl->index_of(field);
      if (!index) throw Error(Errc::SemanticError, "template " + tpl->name + " has no field " + field);
      const auto value = static_cast<std::uint32_t>(a.at("value").get<std::int64_t>());
      const std::uint16_t words[7] = {static_cast<std::uint16_t>(t.uid >> 48), static_cast<std::uint16_t>(t.uid >> 32),
                                      static_cast<std::uint16_t>(t.uid >> 16), static_cast<std::uint16_t>(t.uid),
                                      static_cast<std::uint16_t>(*index),     static_cast<std::uint16_t>(value >> 16),
                                      static_cast<std::uint16_t>(value)};
      auto& master = *enterprise_rigs_.at(rig.decl->enterprise)->master;
      master.write_multiple(rig.decl->address, gate::reg::kMailboxUid, words);
      master.write_single(rig.decl->address, gate::reg::kMailboxCommand, 1);
      const auto status = master.read_holding(rig.decl->address, gate::reg::kMailboxStatus, 1).at(0);
      emit("pc", "pc_command", {{"gate", rig.decl->id}, {"tag", t.id}, {"field", field}, {"value", value}, {"status", status}});
      if (status != gate::mailbox_status::kDone)
        throw Error(status_cause(status), "gate " + rig.decl->id + " answered mailbox status " + std::to_string(status));
      break;
    }
    case StepKind::ClearAlarms: {
      auto& rig = *gate_rigs_.at(a.at("gate"));
      enterprise_rigs_.at(rig.decl->enterprise)->master->write_single(rig.decl->address, gate::reg::kAlarmFlags, 0);
      emit("pc", "alarms_cleared", {{"gate", rig.decl->id}});
      break;
    }
    case StepKind::PlaceOrder: {
      const auto order = corp_.place_order(a.at("client"), a.at("supplier"), a.value("item", std::string{}),
                                           a.at("quantity").get<std::int64_t>(), clock_.now_ms());
      order_by_ref_[a.contains("ref") ? a.at("ref").get<std::string>() : std::to_string(order.order_id)] = order.order_id;
      break;
    }
    case StepKind::ConfirmOrder: {
      const json& o = a.at("order");
      const std::string ref = o.is_string() ? o.get<std::string>() : o.dump();
      corp_.confirm_order(a.at("supplier"), order_by_ref_.at(ref), *find_template(s.templates, a.at("template")),
                          clock_.now_ms(), a.value("accepted", true));
      break;
    }
    case StepKind::Transition:
      corp_.transition_entity(a.at("enterprise"), tag_id_arg(a, s), *enterprise::parse_state(a.at("state").get<std::string>()),
                              clock_.now_ms());
      break;
    case StepKind::ServerWrite:
      corp_.write_tag_field(a.at("enterprise"), tag_id_arg(a, s), a.at("field"), a.at("value"), clock_.now_ms());
      break;
    case StepKind::HandheldOpen: {
      const std::string id = a.at("session");
      sessions_[id] = corp_.open_handheld(a.at("enterprise"), id, a.at("department"));
      emit("handheld:" + id, "session_opened", {{"enterprise", a.at("enterprise")}, {"watermark", sessions_[id].watermark}});
      break;
    }
    case StepKind::HandheldRead: {
      const std::string id = a.at("session");
      const TagDecl& t = tag_decl(a.at("tag"));
      sessions_.at(id).capture_read(tag_world_.tag(t.uid).image, clock_.now_ms());
      emit("handheld:" + id, "offline_read", {{"tag", t.id}, {"uid", t.uid}});
      break;
    }
    case StepKind::HandheldWrite: {
      const std::string id = a.at("session");
      const auto tag_id = tag_id_arg(a, s);
      sessions_.at(id).queue_write(tag_id, a.at("field"), a.at("value"), clock_.now_ms());
      emit("handheld:" + id, "offline_write", {{"tag_id", tag_id}, {"field", a.at("field")}, {"value", a.at("value")}});
      break;
    }
    case StepKind::HandheldSync: {
      const std::string id = a.at("session");
      const auto report = corp_.handheld_sync(sessions_.at(id), clock_.now_ms());
      summary_.conflicts += report.conflicts.size();
      flush_corporation();
      json conflicts = json::array();
      for (const auto& c : report.conflicts)
        conflicts.push_back({{"op", c.op_index}, {"tag_id", c.tag_id}, {"field", c.field}, {"reason", c.reason}});
      emit("handheld:" + id, "sync",
           {{"reads_ingested", report.reads_ingested},
            {"reads_rejected", report.reads_rejected},
            {"writes_applied", report.writes_applied},
            {"already_synced", report.already_synced},
            {"conflicts", conflicts},
            {"watermark", report.watermark}});
      break;
    }
    case StepKind::Ingest: {
      std::vector<GateRig*> rigs;
      std::string ent;
      if (a.contains("gate")) {
        rigs.push_back(gate_rigs_.at(a.at("gate")).get());
        ent = rigs.front()->decl->enterprise;
      } else {
        ent = a.at("enterprise");
        for (auto& [id, rig] : gate_rigs_)
          if (rig->decl->enterprise == ent) rigs.push_back(rig.get());
      }
      std::vector<enterprise::GateRecord> records;
      for (auto* rig : rigs)
        for (auto& r : poll_history(*rig)) records.push_back({rig->decl->id, r});
      const auto result = corp_.ingest_history(ent, records, clock_.now_ms());
      flush_corporation();
      emit("pc", "ingest",
           {{"enterprise", ent},
            {"records", records.size()},
            {"movements", result.movements.size()},
            {"created", result.created},
            {"duplicates_filtered", result.duplicates_filtered},
            {"ignored", result.ignored},
            {"malformed", result.malformed},
            {"already_consumed", result.already_consumed}});
      break;
    }
    case StepKind::Io: {
      auto& rig = *gate_rigs_.at(a.at("gate"));
      const auto input = a.at("input").get<std::size_t>();
      const bool level = a.at("level").get<bool>();
      emit(rig.decl->id, "input", {{"input", input}, {"level", level}});
      record_effects(rig.decl->id, rig.gate->io_update(input, level));
      break;
    }
    case StepKind::Trace: {
      const auto root = tag_id_arg(a, s);
      const auto tree = trace::trace(registry_, root, a.value("max_depth", trace::kDefaultMaxDepth));
      const auto origins = trace::origin_report(tree);
      json o = json::array();
      for (const auto& org : origins.origins)
        o.push_back({{"tag_id", org.tag_id}, {"enterprise", org.enterprise_id}, {"path_length", org.path_length}});
      emit("corp", "trace", {{"tree", tree_to_json(tree)}, {"origins", o}, {"unresolved", origins.unresolved}});
      break;
    }
    case StepKind::Query: {
      const auto& st = corp_.enterprise(a.at("enterprise"));
      json entries = json::array();
      if (a.contains("tag") || a.contains("tag_id")) {
        const auto id = tag_id_arg(a, s);
        auto it = st.inventory.find(id);
        if (it == st.inventory.end()) throw Error(Errc::UnknownEntity, "no entity " + std::to_string(id) + " at " + st.id);
        entries.push_back(entry_to_json(it->second));
      } else {
        for (const auto& [id, e] : st.inventory) entries.push_back(entry_to_json(e));
      }
      emit(st.id, "inventory", {{"entries", entries}});
      break;
    }
    case StepKind::Report: {
      enterprise::Period p{a.contains("start") ? parse_time(a.at("start")) : s.start_ms,
                           a.contains("end") ? parse_time(a.at("end")) : clock_.now_ms() + 1};
      emit("corp", "report", {{"start", p.start}, {"end", p.end}, {"rows", rows_to_json(corp_.corporate_report(p))}});
      break;
    }
    case StepKind::RandomReads: fire_random_reads(a); break;
  }
}

void World::fire_random_reads(const json& a) {
  auto& rig = *gate_rigs_.at(a.at("gate"));
  std::vector<const TagDecl*> pool;
  if (a.contains("tags")) {
    for (const auto& t : a.at("tags")) pool.push_back(&tag_decl(t.get<std::string>()));
  } else {
    for (const auto& t : scenario_->tags) pool.push_back(&t);
  }
  const auto count = a.at("count").get<std::int64_t>();
  const auto interval = a.value("interval_ms", std::int64_t{1000});
  const std::size_t port = a.value("port", 0);
  for (std::int64_t i = 0; i < count; ++i) {
    const TagDecl& t = *pool[uniform_below(rng_, pool.size())];
    rig.fields.at(port)->enter(t.uid);
    emit(rig.decl->id, "tag_detected", {{"tag", t.id}, {"uid", t.uid}, {"port", port}});
    record_effects(rig.decl->id, rig.gate->on_tag_event(t.uid, port));
    rig.fields.at(port)->leave(t.uid);
    clock_.advance(interval);
  }
}

RunResult run_scenario(const Scenario& s, std::optional<std::uint64_t> seed_override) {
  const std::uint64_t seed = seed_override.value_or(s.seed);
  World world(s, seed);
  RunResult result;
  for (std::size_t i = 0; i < s.timeline.size(); ++i) {
    try {
      world.run_step(i, s.timeline[i]);
    } catch (const StepError& e) {
      result.failure = Failure{e.step(), e.code(), e.what()};
      world.emit_failure(e);
      break;
    }
  }
  result.summary = world.summary();
  result.summary.errors = result.failure ? 1 : 0;
  result.summary.events = world.log().entries.size();
  result.log = std::move(world.log());
  result.corporation_log = world.corporation().export_log();
  result.final_report = world.corporation().corporate_report({s.start_ms, world.clock().now_ms() + 1});
  for (const auto& id : world.corporation().enterprise_ids()) {
    auto& entries = result.inventory[id];
    for (const auto& [tag_id, e] : world.corporation().enterprise(id).inventory) entries.push_back(e);
  }
  return result;
}

}  // namespace rfidb2b::scenario

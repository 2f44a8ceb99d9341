#include "rfidb2b/enterprise.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <tuple>

#include "rfidb2b/error.hpp"
#include "rfidb2b/tag_json.hpp"

namespace rfidb2b::enterprise {

using nlohmann::json;

namespace {

// Event kinds of the corporation log.
constexpr const char* kEnterpriseAdded = "enterprise_added";
constexpr const char* kGateBound = "gate_bound";
constexpr const char* kAlarmRuleAdded = "alarm_rule_added";
constexpr const char* kOrderPlaced = "order_placed";
constexpr const char* kOrderConfirmed = "order_confirmed";
constexpr const char* kEntityReceived = "entity_received";
constexpr const char* kMovement = "movement";
constexpr const char* kEntityTransitioned = "entity_transitioned";
constexpr const char* kTagFieldWritten = "tag_field_written";
constexpr const char* kHandheldConflict = "handheld_conflict";

const char* op_token(gate::CompareOp op) {
  switch (op) {
    case gate::CompareOp::Eq: return "==";
    case gate::CompareOp::Ne: return "!=";
    case gate::CompareOp::Lt: return "<";
    case gate::CompareOp::Gt: return ">";
    case gate::CompareOp::Le: return "<=";
    case gate::CompareOp::Ge: return ">=";
  }
  return "==";
}

std::optional<gate::CompareOp> parse_op(std::string_view s) {
  static const std::pair<std::string_view, gate::CompareOp> ops[] = {
      {"==", gate::CompareOp::Eq}, {"!=", gate::CompareOp::Ne}, {"<=", gate::CompareOp::Le},
      {">=", gate::CompareOp::Ge}, {"<", gate::CompareOp::Lt},  {">", gate::CompareOp::Gt}};
  for (const auto& [tok, op] : ops)
    if (s == tok) return op;
  return std::nullopt;
}

template <typename T>
bool compare(const T& a, gate::CompareOp op, const T& b) {
  switch (op) {
    case gate::CompareOp::Eq: return a == b;
    case gate::CompareOp::Ne: return !(a == b);
    case gate::CompareOp::Lt: return a < b;
    case gate::CompareOp::Gt: return b < a;
    case gate::CompareOp::Le: return !(b < a);
    case gate::CompareOp::Ge: return !(a < b);
  }
  return false;
}

std::string direction_name(Direction d) { return d == Direction::In ? "IN" : "OUT"; }

Direction parse_direction(const std::string& s) {
  if (s == "IN") return Direction::In;
  if (s == "OUT") return Direction::Out;
  throw Error(Errc::SyntaxError, "direction must be IN or OUT, got '" + s + "'");
}

std::optional<MovementEvent::Kind> parse_movement_kind(const std::string& s) {
  if (s == "arrival") return MovementEvent::Kind::Arrival;
  if (s == "departure") return MovementEvent::Kind::Departure;
  if (s == "transfer") return MovementEvent::Kind::Transfer;
  return std::nullopt;
}

json movement_to_json(const std::string& enterprise, const MovementEvent& m) {
  json sources = json::array();
  for (const auto& s : m.sources) sources.push_back({{"gate", s.gate_id}, {"seq", s.seq}});
  return {{"enterprise", enterprise},
          {"movement", movement_kind_name(m.kind)},
          {"tag_id", m.tag_id},
          {"uid", m.uid},
          {"gate", m.gate_id},
          {"direction", direction_name(m.direction)},
          {"from", m.from_department},
          {"to", m.to_department},
          {"at", m.timestamp},
          {"sources", sources}};
}

MovementEvent movement_from_json(const json& p) {
  MovementEvent m;
  auto kind = parse_movement_kind(p.at("movement").get<std::string>());
  if (!kind) throw Error(Errc::SyntaxError, "unknown movement kind");
  m.kind = *kind;
  m.tag_id = p.at("tag_id").get<TagId>();
  m.uid = p.at("uid").get<std::uint64_t>();
  m.gate_id = p.at("gate").get<std::string>();
  m.direction = parse_direction(p.at("direction").get<std::string>());
  m.from_department = p.at("from").get<std::string>();
  m.to_department = p.at("to").get<std::string>();
  m.timestamp = p.at("at").get<std::int64_t>();
  for (const auto& s : p.at("sources")) m.sources.push_back({s.at("gate").get<std::string>(), s.at("seq").get<std::uint32_t>()});
  return m;
}

std::string render_json(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string expand_message(const std::string& tmpl, const LogEvent& e) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string::npos) {
        const std::string key = tmpl.substr(i + 1, close - i - 1);
        if (key == "kind") {
          out += e.kind;
          i = close + 1;
          continue;
        }
        if (e.payload.is_object() && e.payload.contains(key)) {
          out += render_json(e.payload.at(key));
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

std::int64_t int_value(const tag::TagRecord& values, const char* name, std::int64_t fallback) {
  auto it = values.find(name);
  if (it == values.end()) return fallback;
  if (const auto* v = std::get_if<std::int32_t>(&it->second)) return *v;
  return fallback;
}

}  // namespace

std::string state_name(EntityState s) {
  switch (s) {
    case EntityState::Received: return "received";
    case EntityState::Sent: return "sent";
    case EntityState::Defective: return "defective";
    case EntityState::Repaired: return "repaired";
    case EntityState::Returned: return "returned";
  }
  return "?";
}

std::optional<EntityState> parse_state(std::string_view name) {
  for (EntityState s : kAllStates)
    if (state_name(s) == name) return s;
  return std::nullopt;
}

bool transition_allowed(EntityState from, EntityState to) noexcept {
  switch (from) {
    case EntityState::Received: return to == EntityState::Sent || to == EntityState::Defective;
    case EntityState::Defective: return to == EntityState::Repaired || to == EntityState::Returned;
    case EntityState::Repaired: return to == EntityState::Sent;
    case EntityState::Sent:
    case EntityState::Returned: return false;
  }
  return false;
}

std::string movement_kind_name(MovementEvent::Kind k) {
  switch (k) {
    case MovementEvent::Kind::Arrival: return "arrival";
    case MovementEvent::Kind::Departure: return "departure";
    case MovementEvent::Kind::Transfer: return "transfer";
  }
  return "?";
}

void HandheldSession::capture_read(const tag::TagImage& image, std::int64_t now_ms) {
  HandheldOp op;
  op.kind = HandheldOp::Kind::Read;
  op.captured_at = now_ms;
  op.image = image;
  queued.push_back(std::move(op));
}

void HandheldSession::queue_write(TagId tag_id, std::string field, json value, std::int64_t now_ms) {
  HandheldOp op;
  op.kind = HandheldOp::Kind::Write;
  op.captured_at = now_ms;
  op.tag_id = tag_id;
  op.field = std::move(field);
  op.value = std::move(value);
  queued.push_back(std::move(op));
}

tag::TagRecord HandheldSession::decode(const tag::TagImage& image) const {
  auto header = tag::parse_header(image.data);
  if (!header || header->magic != tag::kMagic) throw Error(Errc::DecodeFailure, "no tag header");
  for (const auto& t : templates)
    if (t.template_id == header->template_id && t.version == header->version) return tag::decode_record(t, image);
  throw Error(Errc::DecodeFailure, "template " + std::to_string(header->template_id) + " v" +
                                       std::to_string(header->version) + " is not in the handheld cache");
}

AlarmRule AlarmRule::parse(std::string name, std::string_view when, std::string severity, std::string message,
                           std::string event_kind) {
  std::istringstream in{std::string(when)};
  std::string attr, op, literal;
  in >> attr >> op;
  std::getline(in >> std::ws, literal);
  auto parsed = parse_op(op);
  if (attr.empty() || !parsed || literal.empty())
    throw Error(Errc::SyntaxError, "alarm rule '" + name + "': expected 'attribute op value', got '" +
                                       std::string(when) + "'");
  AlarmRule r;
  r.name = std::move(name);
  r.event_kind = std::move(event_kind);
  r.attribute = attr;
  r.op = *parsed;
  r.severity = std::move(severity);
  r.message = std::move(message);
  if (literal.size() >= 2 && literal.front() == '"' && literal.back() == '"') {
    r.value = literal.substr(1, literal.size() - 2);
  } else {
    try {
      std::size_t used = 0;
      long long v = std::stoll(literal, &used);
      if (used == literal.size()) {
        r.value = v;
        return r;
      }
    } catch (const std::exception&) {
    }
    r.value = literal;
  }
  return r;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "enterprise,state,count,period_start,period_end\n";
  for (const auto& r : rows)
    out += r.enterprise + "," + r.state + "," + std::to_string(r.count) + "," + std::to_string(r.period_start) + "," +
           std::to_string(r.period_end) + "\n";
  return out;
}

const tag::TagTemplate* EnterpriseStore::latest_template(std::uint16_t template_id) const {
  const tag::TagTemplate* best = nullptr;
  for (const auto& [key, t] : templates)
    if (key.first == template_id) best = &t;  // map order: highest version last
  return best;
}

std::map<EntityState, std::size_t> EnterpriseStore::state_counts() const {
  std::map<EntityState, std::size_t> counts;
  for (EntityState s : kAllStates) counts[s] = 0;
  for (const auto& [id, e] : inventory) ++counts[e.state];
  return counts;
}

Corporation::Corporation(std::string id) : id_(std::move(id)) {}

EnterpriseStore& Corporation::store(const std::string& enterprise_id) {
  auto it = stores_.find(enterprise_id);
  if (it == stores_.end()) throw Error(Errc::UnknownEnterprise, "unknown enterprise '" + enterprise_id + "'");
  return it->second;
}

const EnterpriseStore& Corporation::store(const std::string& enterprise_id) const {
  auto it = stores_.find(enterprise_id);
  if (it == stores_.end()) throw Error(Errc::UnknownEnterprise, "unknown enterprise '" + enterprise_id + "'");
  return it->second;
}

const EnterpriseStore& Corporation::enterprise(const std::string& enterprise_id) const { return store(enterprise_id); }

std::vector<std::string> Corporation::enterprise_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, s] : stores_) ids.push_back(id);
  return ids;
}

void Corporation::append(std::int64_t ts, std::string kind, json payload) {
  LogEvent e{ts, std::move(kind), std::move(payload)};
  const std::uint64_t index = log_.size();
  log_.push_back(e);
  apply(log_.back(), index);
}

void Corporation::apply(const LogEvent& e, std::uint64_t index) {
  const json& p = e.payload;
  if (e.kind == kEnterpriseAdded) {
    EnterpriseStore s;
    s.id = p.at("enterprise").get<std::string>();
    s.name = p.at("name").get<std::string>();
    stores_.emplace(s.id, std::move(s));
  } else if (e.kind == kGateBound) {
    GateBinding b;
    b.gate_id = p.at("gate").get<std::string>();
    b.enterprise = p.at("enterprise").get<std::string>();
    b.department = p.at("department").get<std::string>();
    b.direction = parse_direction(p.at("direction").get<std::string>());
    b.receiving = p.at("receiving").get<bool>();
    bindings_[b.gate_id] = b;
  } else if (e.kind == kAlarmRuleAdded) {
    AlarmRule r;
    r.name = p.at("name").get<std::string>();
    r.event_kind = p.at("event_kind").get<std::string>();
    r.attribute = p.at("attribute").get<std::string>();
    auto op = parse_op(p.at("op").get<std::string>());
    if (!op) throw Error(Errc::SyntaxError, "bad alarm rule operator");
    r.op = *op;
    r.value = p.at("value");
    r.severity = p.at("severity").get<std::string>();
    r.message = p.at("message").get<std::string>();
    rules_.push_back(std::move(r));
  } else if (e.kind == kOrderPlaced) {
    Order o;
    o.order_id = p.at("order_id").get<std::int64_t>();
    o.client_id = p.at("client").get<std::string>();
    o.supplier_id = p.at("supplier").get<std::string>();
    o.item = p.at("item").get<std::string>();
    o.quantity = p.at("quantity").get<std::int64_t>();
    o.placed_at = e.ts;
    orders_[o.order_id] = o;
  } else if (e.kind == kOrderConfirmed) {
    Confirmation c;
    c.order_id = p.at("order_id").get<std::int64_t>();
    c.accepted = p.at("accepted").get<bool>();
    c.tmpl = tag::template_from_json(p.at("template"));
    c.confirmed_at = e.ts;
    Order& o = orders_.at(c.order_id);
    o.confirmed = true;
    if (c.accepted) store(o.client_id).templates[{c.tmpl.template_id, c.tmpl.version}] = c.tmpl;
    confirmations_[c.order_id] = std::move(c);
  } else if (e.kind == kEntityReceived) {
    EnterpriseStore& s = store(p.at("enterprise").get<std::string>());
    InventoryEntry entry;
    entry.tag_id = p.at("tag_id").get<TagId>();
    entry.uid = p.at("uid").get<std::uint64_t>();
    entry.enterprise = s.id;
    entry.state = EntityState::Received;
    entry.quantity = p.at("quantity").get<std::int64_t>();
    entry.price = p.at("price").get<std::int64_t>();
    entry.location = p.at("location").get<std::string>();
    entry.last_update = e.ts;
    s.inventory[entry.tag_id] = entry;
    s.tag_of_uid[entry.uid] = entry.tag_id;
    s.last_touch[entry.tag_id] = index;
    ++s.created;
  } else if (e.kind == kMovement) {
    EnterpriseStore& s = store(p.at("enterprise").get<std::string>());
    MovementEvent m = movement_from_json(p);
    for (const auto& src : m.sources) consumed_.emplace(src.gate_id, src.seq);
    auto it = s.inventory.find(m.tag_id);
    if (it != s.inventory.end()) {
      if (m.kind != MovementEvent::Kind::Departure) it->second.location = m.to_department;
      it->second.last_update = e.ts;
      s.last_touch[m.tag_id] = index;
    }
    s.movements.push_back(std::move(m));
  } else if (e.kind == kEntityTransitioned) {
    EnterpriseStore& s = store(p.at("enterprise").get<std::string>());
    auto& entry = s.inventory.at(p.at("tag_id").get<TagId>());
    auto to = parse_state(p.at("state").get<std::string>());
    if (!to) throw Error(Errc::SyntaxError, "unknown state in log");
    entry.state = *to;
    entry.last_update = e.ts;
    s.last_touch[entry.tag_id] = index;
  } else if (e.kind == kTagFieldWritten) {
    EnterpriseStore& s = store(p.at("enterprise").get<std::string>());
    const TagId id = p.at("tag_id").get<TagId>();
    const std::string field = p.at("field").get<std::string>();
    const json& value = p.at("value");
    s.tag_fields[id][field] = value;
    auto& entry = s.inventory.at(id);
    if (field == "PRODUCT_PRICE" && value.is_number_integer()) entry.price = value.get<std::int64_t>();
    if (field == "PRODUCT_QUANTITY" && value.is_number_integer()) entry.quantity = value.get<std::int64_t>();
    entry.last_update = e.ts;
    s.last_touch[id] = index;
    if (p.contains("op")) consumed_.emplace(p.at("op").get<std::string>(), p.at("seq").get<std::uint32_t>());
  } else if (e.kind == kHandheldConflict) {
    consumed_.emplace(p.at("op").get<std::string>(), p.at("seq").get<std::uint32_t>());
  } else {
    throw Error(Errc::SyntaxError, "unknown event kind '" + e.kind + "'");
  }
  for (auto& a : evaluate_alarm_rules(e, index)) alarms_.push_back(std::move(a));
}

void Corporation::add_enterprise(const std::string& enterprise_id, const std::string& name, std::int64_t now_ms) {
  if (enterprise_id.empty()) throw Error(Errc::SemanticError, "enterprise id must not be empty");
  if (stores_.count(enterprise_id)) throw Error(Errc::SemanticError, "enterprise '" + enterprise_id + "' exists");
  append(now_ms, kEnterpriseAdded, {{"enterprise", enterprise_id}, {"name", name}});
}

void Corporation::bind_gate(const GateBinding& b, std::int64_t now_ms) {
  store(b.enterprise);
  if (b.gate_id.empty()) throw Error(Errc::SemanticError, "gate id must not be empty");
  append(now_ms, kGateBound,
         {{"gate", b.gate_id},
          {"enterprise", b.enterprise},
          {"department", b.department},
          {"direction", direction_name(b.direction)},
          {"receiving", b.receiving}});
}

void Corporation::add_alarm_rule(const AlarmRule& r, std::int64_t now_ms) {
  append(now_ms, kAlarmRuleAdded,
         {{"name", r.name},
          {"event_kind", r.event_kind},
          {"attribute", r.attribute},
          {"op", op_token(r.op)},
          {"value", r.value},
          {"severity", r.severity},
          {"message", r.message}});
}

Order Corporation::place_order(const std::string& client, const std::string& supplier, const std::string& item,
                               std::int64_t quantity, std::int64_t now_ms) {
  if (quantity <= 0) throw Error(Errc::BadQuantity, "order quantity must be positive, got " + std::to_string(quantity));
  store(client);
  store(supplier);
  const std::int64_t id = static_cast<std::int64_t>(orders_.size()) + 1;
  append(now_ms, kOrderPlaced,
         {{"order_id", id}, {"client", client}, {"supplier", supplier}, {"item", item}, {"quantity", quantity}});
  return orders_.at(id);
}

Confirmation Corporation::confirm_order(const std::string& supplier, std::int64_t order_id,
                                        const tag::TagTemplate& tmpl, std::int64_t now_ms, bool accepted) {
  auto it = orders_.find(order_id);
  if (it == orders_.end()) throw Error(Errc::UnknownOrder, "no order " + std::to_string(order_id));
  if (it->second.supplier_id != supplier)
    throw Error(Errc::UnknownOrder, "order " + std::to_string(order_id) + " is not addressed to '" + supplier + "'");
  if (it->second.confirmed) throw Error(Errc::AlreadyConfirmed, "order " + std::to_string(order_id) + " already confirmed");
  auto report = tag::validate_template(tmpl);
  if (!report.ok()) throw Error(Errc::SemanticError, "confirmation template: " + report.violations.front().message);
  append(now_ms, kOrderConfirmed, {{"order_id", order_id}, {"accepted", accepted}, {"template", tag::template_to_json(tmpl)}});
  return confirmations_.at(order_id);
}

IngestResult Corporation::ingest_history(const std::string& enterprise, std::span<const GateRecord> records,
                                         std::int64_t now_ms) {
  const EnterpriseStore& s = store(enterprise);
  IngestResult result;

  struct Read {
    const GateRecord* src;
    const GateBinding* binding;
    TagId tag_id;
    tag::TagRecord values;
  };
  std::vector<Read> reads;
  std::set<std::pair<std::string, std::uint32_t>> seen;
  for (const auto& gr : records) {
    const auto key = std::make_pair(gr.gate_id, gr.record.seq);
    if (consumed_.count(key) || !seen.insert(key).second) {
      ++result.already_consumed;
      continue;
    }
    if (gr.record.event != gate::EventKind::Read) {
      ++result.ignored;
      continue;
    }
    auto b = bindings_.find(gr.gate_id);
    const tag::TagTemplate* t = s.latest_template(gr.record.template_id);
    if (b == bindings_.end() || b->second.enterprise != enterprise || !t || gr.record.uid == 0) {
      ++result.malformed;
      continue;
    }
    tag::TagRecord values;
    try {
      values = tag::values_from_snapshot(*t, gr.record.snapshot);
    } catch (const Error&) {
      ++result.malformed;
      continue;
    }
    const std::int64_t tag_id = int_value(values, "TAG_ID", 0);
    if (tag_id == 0 || int_value(values, "PRODUCT_QUANTITY", 0) < 0) {
      ++result.malformed;
      continue;
    }
    reads.push_back({&gr, &b->second, tag_id, std::move(values)});
  }
  std::stable_sort(reads.begin(), reads.end(), [](const Read& a, const Read& b) {
    return std::tie(a.src->record.timestamp, a.src->gate_id, a.src->record.seq) <
           std::tie(b.src->record.timestamp, b.src->gate_id, b.src->record.seq);
  });

  // Filtering: reads of one uid at one gate closer than the window merge.
  struct Sighting {
    const Read* first;
    std::int64_t last_ms;
    std::vector<SourceRef> sources;
  };
  std::vector<Sighting> sightings;
  std::map<std::pair<std::uint64_t, std::string>, std::size_t> open;
  for (const auto& r : reads) {
    const std::int64_t ms = static_cast<std::int64_t>(r.src->record.timestamp) * 1000;
    const auto key = std::make_pair(r.src->record.uid, r.src->gate_id);
    auto it = open.find(key);
    if (it != open.end() && ms - sightings[it->second].last_ms < filter_window_ms) {
      auto& sg = sightings[it->second];
      sg.last_ms = ms;
      sg.sources.push_back({r.src->gate_id, r.src->record.seq});
      ++result.duplicates_filtered;
      continue;
    }
    open[key] = sightings.size();
    sightings.push_back({&r, ms, {{r.src->gate_id, r.src->record.seq}}});
  }

  // Correlation: an IN sighting followed by an OUT sighting at another gate
  // is one transfer; everything else stands alone.
  struct Built {
    std::size_t order;
    MovementEvent event;
    const Read* read;
  };
  std::vector<Built> built;
  std::map<std::uint64_t, std::size_t> pending_in;
  auto single = [&](std::size_t i) {
    const Sighting& sg = sightings[i];
    MovementEvent m;
    const GateBinding& b = *sg.first->binding;
    m.kind = b.direction == Direction::In ? MovementEvent::Kind::Arrival : MovementEvent::Kind::Departure;
    m.tag_id = sg.first->tag_id;
    m.uid = sg.first->src->record.uid;
    m.gate_id = b.gate_id;
    m.direction = b.direction;
    (b.direction == Direction::In ? m.to_department : m.from_department) = b.department;
    m.timestamp = sg.last_ms;
    m.sources = sg.sources;
    built.push_back({i, std::move(m), sg.first});
  };
  for (std::size_t i = 0; i < sightings.size(); ++i) {
    const Sighting& sg = sightings[i];
    const std::uint64_t uid = sg.first->src->record.uid;
    if (sg.first->binding->direction == Direction::In) {
      auto it = pending_in.find(uid);
      if (it != pending_in.end()) single(it->second);
      pending_in[uid] = i;
      continue;
    }
    auto it = pending_in.find(uid);
    if (it != pending_in.end() && sightings[it->second].first->binding->gate_id != sg.first->binding->gate_id) {
      const Sighting& in = sightings[it->second];
      MovementEvent m;
      m.kind = MovementEvent::Kind::Transfer;
      m.tag_id = sg.first->tag_id;
      m.uid = uid;
      m.gate_id = sg.first->binding->gate_id;
      m.direction = Direction::Out;
      m.from_department = in.first->binding->department;
      m.to_department = sg.first->binding->department;
      m.timestamp = sg.last_ms;
      m.sources = in.sources;
      m.sources.insert(m.sources.end(), sg.sources.begin(), sg.sources.end());
      built.push_back({it->second, std::move(m), in.first});
      pending_in.erase(it);
    } else {
      single(i);
    }
  }
  std::vector<std::size_t> leftover;
  for (const auto& [uid, i] : pending_in) leftover.push_back(i);
  std::sort(leftover.begin(), leftover.end());
  for (std::size_t i : leftover) single(i);
  std::stable_sort(built.begin(), built.end(), [](const Built& a, const Built& b) { return a.order < b.order; });

  // Database update.
  for (auto& b : built) {
    const EnterpriseStore& st = store(enterprise);
    if (b.event.kind == MovementEvent::Kind::Arrival && b.read->binding->receiving &&
        !st.inventory.count(b.event.tag_id)) {
      append(now_ms, kEntityReceived,
             {{"enterprise", enterprise},
              {"tag_id", b.event.tag_id},
              {"uid", b.event.uid},
              {"quantity", int_value(b.read->values, "PRODUCT_QUANTITY", 1)},
              {"price", int_value(b.read->values, "PRODUCT_PRICE", 0)},
              {"location", b.event.to_department},
              {"state", state_name(EntityState::Received)}});
      result.created.push_back(b.event.tag_id);
    }
    append(now_ms, kMovement, movement_to_json(enterprise, b.event));
    result.movements.push_back(std::move(b.event));
  }
  return result;
}

InventoryEntry Corporation::transition_entity(const std::string& enterprise, TagId tag_id, EntityState to,
                                              std::int64_t now_ms) {
  const EnterpriseStore& s = store(enterprise);
  auto it = s.inventory.find(tag_id);
  if (it == s.inventory.end())
    throw Error(Errc::UnknownEntity, "no entity " + std::to_string(tag_id) + " at '" + enterprise + "'");
  const EntityState from = it->second.state;
  if (!transition_allowed(from, to))
    throw Error(Errc::IllegalTransition, "entity " + std::to_string(tag_id) + ": " + state_name(from) + " -> " +
                                             state_name(to) + " is not allowed");
  append(now_ms, kEntityTransitioned,
         {{"enterprise", enterprise}, {"tag_id", tag_id}, {"from", state_name(from)}, {"state", state_name(to)}});
  return store(enterprise).inventory.at(tag_id);
}

void Corporation::write_tag_field(const std::string& enterprise, TagId tag_id, const std::string& field,
                                  const json& value, std::int64_t now_ms) {
  const EnterpriseStore& s = store(enterprise);
  if (!s.inventory.count(tag_id))
    throw Error(Errc::UnknownEntity, "no entity " + std::to_string(tag_id) + " at '" + enterprise + "'");
  if (field.empty()) throw Error(Errc::SemanticError, "field name must not be empty");
  if (field == "PRODUCT_QUANTITY" && value.is_number_integer() && value.get<std::int64_t>() < 0)
    throw Error(Errc::BadQuantity, "quantity must not be negative");
  append(now_ms, kTagFieldWritten,
         {{"enterprise", enterprise}, {"tag_id", tag_id}, {"field", field}, {"value", value}, {"source", "server"}});
}

HandheldSession Corporation::open_handheld(const std::string& enterprise, const std::string& session_id,
                                           const std::string& department) const {
  const EnterpriseStore& s = store(enterprise);
  HandheldSession session;
  session.session_id = session_id;
  session.enterprise = enterprise;
  session.department = department;
  for (const auto& [key, t] : s.templates) session.templates.push_back(t);
  session.watermark = log_.size();
  return session;
}

MergeReport Corporation::handheld_sync(HandheldSession& session, std::int64_t now_ms) {
  store(session.enterprise);
  MergeReport report;
  const std::string gate_id = "HH-" + session.session_id;
  const std::string write_key = gate_id + "/w";
  const std::uint64_t sync_start = log_.size();

  auto binding = bindings_.find(gate_id);
  if (binding == bindings_.end() || binding->second.department != session.department) {
    bind_gate({gate_id, session.enterprise, session.department, Direction::In, true}, now_ms);
  }

  // Reads go through the regular ingest path as records of a pseudo gate.
  std::vector<GateRecord> records;
  for (std::size_t i = 0; i < session.queued.size(); ++i) {
    const HandheldOp& op = session.queued[i];
    if (op.kind != HandheldOp::Kind::Read) continue;
    const auto seq = static_cast<std::uint32_t>(i + 1);
    if (consumed_.count({gate_id, seq})) {
      ++report.already_synced;
      continue;
    }
    try {
      tag::TagRecord rec = session.decode(op.image);
      auto header = tag::parse_header(op.image.data);
      const tag::TagTemplate* t = nullptr;
      for (const auto& c : session.templates)
        if (c.template_id == header->template_id && c.version == header->version) t = &c;
      gate::HistoryRecord hr;
      hr.seq = seq;
      hr.timestamp = static_cast<std::uint32_t>(op.captured_at / 1000);
      hr.uid = op.image.uid;
      hr.template_id = t->template_id;
      hr.event = gate::EventKind::Read;
      hr.snapshot = tag::snapshot_of(*t, rec);
      records.push_back({gate_id, hr});
    } catch (const Error&) {
      ++report.reads_rejected;
    }
  }
  if (!records.empty()) {
    IngestResult ing = ingest_history(session.enterprise, records, now_ms);
    report.reads_ingested = records.size() - ing.malformed - ing.already_consumed;
    report.reads_rejected += ing.malformed;
    report.movements = std::move(ing.movements);
  }

  for (std::size_t i = 0; i < session.queued.size(); ++i) {
    const HandheldOp& op = session.queued[i];
    if (op.kind != HandheldOp::Kind::Write) continue;
    const auto seq = static_cast<std::uint32_t>(i + 1);
    if (consumed_.count({write_key, seq})) {
      ++report.already_synced;
      continue;
    }
    const EnterpriseStore& s = store(session.enterprise);
    std::string reason;
    if (!s.inventory.count(op.tag_id)) {
      reason = "unknown entity";
    } else {
      auto touch = s.last_touch.find(op.tag_id);
      if (touch != s.last_touch.end() && touch->second >= session.watermark && touch->second < sync_start)
        reason = "server state changed since the session watermark";
    }
    if (!reason.empty()) {
      append(now_ms, kHandheldConflict,
             {{"enterprise", session.enterprise},
              {"tag_id", op.tag_id},
              {"field", op.field},
              {"reason", reason},
              {"op", write_key},
              {"seq", seq}});
      report.conflicts.push_back({i, op.tag_id, op.field, reason});
      continue;
    }
    append(now_ms, kTagFieldWritten,
           {{"enterprise", session.enterprise},
            {"tag_id", op.tag_id},
            {"field", op.field},
            {"value", op.value},
            {"source", gate_id},
            {"op", write_key},
            {"seq", seq}});
    ++report.writes_applied;
  }

  session.watermark = log_.size();
  report.watermark = session.watermark;
  return report;
}

std::vector<FiredAlarm> Corporation::evaluate_alarm_rules(const LogEvent& event, std::uint64_t event_index) const {
  std::vector<FiredAlarm> fired;
  for (const auto& rule : rules_) {
    if (!rule.event_kind.empty() && rule.event_kind != event.kind) continue;
    json actual;
    if (rule.attribute == "kind") {
      actual = event.kind;
    } else if (event.payload.is_object() && event.payload.contains(rule.attribute)) {
      actual = event.payload.at(rule.attribute);
    } else {
      continue;
    }
    bool match = false;
    if (actual.is_number() && rule.value.is_number()) {
      if (actual.is_number_integer() && rule.value.is_number_integer())
        match = compare(actual.get<std::int64_t>(), rule.op, rule.value.get<std::int64_t>());
      else
        match = compare(actual.get<double>(), rule.op, rule.value.get<double>());
    } else if (actual.is_string() && rule.value.is_string()) {
      match = compare(actual.get<std::string>(), rule.op, rule.value.get<std::string>());
    } else if (actual.is_boolean() && rule.value.is_boolean()) {
      match = compare(actual.get<bool>(), rule.op, rule.value.get<bool>());
    }
    if (!match) continue;
    FiredAlarm a;
    a.rule = rule.name;
    a.severity = rule.severity;
    a.message = expand_message(rule.message, event);
    if (event.payload.is_object() && event.payload.contains("enterprise") && event.payload.at("enterprise").is_string())
      a.enterprise = event.payload.at("enterprise").get<std::string>();
    a.ts = event.ts;
    a.event_index = event_index;
    fired.push_back(std::move(a));
  }
  return fired;
}

std::vector<ReportRow> Corporation::corporate_report(const Period& period) const {
  std::map<std::string, std::map<std::string, std::int64_t>> counts;
  for (const auto& [id, s] : stores_) {
    for (EntityState st : kAllStates) counts[id][state_name(st)] = 0;
    counts[id]["movements"] = 0;
  }
  for (const auto& e : log_) {
    if (e.ts < period.start || e.ts >= period.end) continue;
    if (e.kind == kEntityReceived || e.kind == kEntityTransitioned)
      ++counts[e.payload.at("enterprise").get<std::string>()][e.payload.at("state").get<std::string>()];
    else if (e.kind == kMovement)
      ++counts[e.payload.at("enterprise").get<std::string>()]["movements"];
  }
  std::vector<ReportRow> rows;
  for (const auto& [id, by_state] : counts) {
    for (EntityState st : kAllStates)
      rows.push_back({id, state_name(st), by_state.at(state_name(st)), period.start, period.end});
    rows.push_back({id, "movements", by_state.at("movements"), period.start, period.end});
  }
  return rows;
}

std::string Corporation::export_log() const {
  std::string out;
  for (const auto& e : log_) {
    json line = {{"ts", e.ts}, {"kind", e.kind}, {"payload", e.payload}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

Corporation Corporation::replay(std::string_view jsonl, std::string id) {
  Corporation corp(std::move(id));
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    std::string_view line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    LogEvent e;
    try {
      json j = json::parse(line);
      e.ts = j.at("ts").get<std::int64_t>();
      e.kind = j.at("kind").get<std::string>();
      e.payload = j.at("payload");
    } catch (const json::exception& ex) {
      throw ParseError(Errc::SyntaxError, static_cast<int>(line_no), 1, std::string("event log: ") + ex.what());
    }
    const std::uint64_t index = corp.log_.size();
    corp.log_.push_back(e);
    try {
      corp.apply(corp.log_.back(), index);
    } catch (const json::exception& ex) {
      throw ParseError(Errc::SyntaxError, static_cast<int>(line_no), 1, std::string("event log: ") + ex.what());
    } catch (const std::out_of_range& ex) {
      throw ParseError(Errc::SyntaxError, static_cast<int>(line_no), 1,
                       "event log: event refers to unknown data: " + std::string(ex.what()));
    }
  }
  return corp;
}

void Corporation::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  out << export_log();
  if (!out) throw Error(Errc::IoError, "write to " + path + " failed");
}

Corporation Corporation::load(const std::string& path, std::string id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return replay(ss.str(), std::move(id));
}

}  // namespace rfidb2b::enterprise

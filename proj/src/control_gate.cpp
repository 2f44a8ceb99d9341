#include "rfidb2b/control_gate.hpp"

#include <algorithm>
#include <cstring>

#include "rfidb2b/error.hpp"

namespace rfidb2b::gate {

std::string describe(const Effect& e) {
  switch (e.kind) {
    case Effect::Kind::Recorded: return event_name(e.event) + " #" + std::to_string(e.seq);
    case Effect::Kind::Alarm: return "ALARM code " + std::to_string(e.alarm_code);
    case Effect::Kind::TagWrite: return "WRITE " + std::to_string(e.uid) + "." + e.field;
    case Effect::Kind::Relay: return "RELAY " + std::to_string(e.relay) + (e.on ? " ON" : " OFF");
    case Effect::Kind::Suppressed: return "DUPLICATE " + std::to_string(e.uid);
  }
  return "?";
}

ControlGate::ControlGate(GateConfig config, SimClock& clock, std::vector<rfid::reader::ReaderDevice*> readers)
    : config_(std::move(config)),
      caps_(capabilities(config_.tier)),
      clock_(&clock),
      history_(caps_.history_capacity) {
  if (readers.empty()) throw Error(Errc::CapabilityDenied, config_.gate_id + ": a gate needs a reader");
  if (static_cast<int>(readers.size()) > caps_.reader_ports)
    throw Error(Errc::CapabilityDenied, config_.gate_id + ": " + tier_name(config_.tier) + " supports " +
                                            std::to_string(caps_.reader_ports) + " reader port(s)");
  if (config_.slave_address < 1 || config_.slave_address > modbus::kMaxSlaveAddress)
    throw Error(Errc::BadAddress, config_.gate_id + ": slave address must be 1..247");
  for (auto* r : readers) readers_.emplace_back(*r);

  using modbus::Access;
  regs_.declare(reg::kStatus, 1, Access::ReadOnly);
  regs_.declare(reg::kAlarmFlags, 1, Access::ReadWrite);
  regs_.declare(reg::kHistoryCount, 2, Access::ReadOnly);
  regs_.declare(reg::kRelays, 1, Access::ReadWrite);
  regs_.declare(reg::kInputs, 1, Access::ReadOnly);
  regs_.declare(reg::kMailbox, reg::kMailboxSize, Access::ReadWrite);
  regs_.declare(reg::kHistoryFrom, 2, Access::ReadWrite);
  regs_.declare(reg::kWindowCount, 1, Access::ReadOnly);
  regs_.declare(reg::kWindow, reg::kWindowRecords * reg::kRegistersPerRecord, Access::ReadOnly);
  regs_.on_write([this](std::uint16_t first, std::uint16_t count) { after_master_write(first, count); });
  sync_registers();
}

void ControlGate::load_script(std::string_view text) { rules_ = parse_script(text, config_.tier, config_.templates); }

const tag::TagTemplate* ControlGate::find_template(std::uint16_t id, std::uint8_t version) const {
  for (const auto& t : config_.templates)
    if (t.template_id == id && t.version == version) return &t;
  return nullptr;
}

Effect ControlGate::record(EventKind event, std::uint64_t uid, std::uint16_t template_id, std::uint8_t port,
                           const std::array<std::uint16_t, tag::kMaxSnapshotWords>& snapshot) {
  HistoryRecord r;
  r.timestamp = clock_->now_seconds();
  r.reader_port = port;
  r.uid = uid;
  r.template_id = template_id;
  r.event = event;
  r.snapshot = snapshot;
  const auto& stored = history_.append(r);
  Effect e;
  e.kind = Effect::Kind::Recorded;
  e.seq = stored.seq;
  e.event = event;
  e.uid = uid;
  return e;
}

void ControlGate::raise_alarm(std::uint8_t code, std::uint64_t uid, std::uint16_t template_id, std::uint8_t port,
                              std::vector<Effect>& effects) {
  alarm_flags_ |= static_cast<std::uint16_t>(1u << (code - 1));
  std::array<std::uint16_t, tag::kMaxSnapshotWords> snap{};
  snap[0] = code;
  effects.push_back(record(EventKind::Alarm, uid, template_id, port, snap));
  Effect e;
  e.kind = Effect::Kind::Alarm;
  e.alarm_code = code;
  e.uid = uid;
  effects.push_back(e);
}

void ControlGate::set_relay(int relay, bool on, std::vector<Effect>& effects) {
  const auto bit = static_cast<std::uint16_t>(1u << relay);
  relays_ = on ? (relays_ | bit) : (relays_ & ~bit);
  Effect e;
  e.kind = Effect::Kind::Relay;
  e.relay = relay;
  e.on = on;
  effects.push_back(e);
}

void ControlGate::write_slot(rfid::reader::ReaderClient& reader, std::uint64_t uid, const tag::FieldSlot& slot,
                             const std::uint8_t* bytes) {
  const std::size_t bs = config_.block_size;
  const std::size_t first = slot.offset / bs;
  const std::size_t last = (slot.offset + slot.size - 1) / bs;
  Bytes blocks = reader.read_blocks(uid, first, last - first + 1, bs);
  std::memcpy(blocks.data() + (slot.offset - first * bs), bytes, slot.size);
  reader.write_blocks(uid, first, blocks, bs);
}

namespace {

std::array<std::uint16_t, tag::kMaxSnapshotWords> write_snapshot(std::size_t field_index, const std::uint8_t* slot,
                                                                  std::size_t size) {
  std::uint8_t head[4] = {};
  std::memcpy(head, slot, std::min<std::size_t>(size, 4));
  std::array<std::uint16_t, tag::kMaxSnapshotWords> snap{};
  snap[0] = static_cast<std::uint16_t>(field_index);
  snap[1] = get_be16(head);
  snap[2] = get_be16(head + 2);
  return snap;
}

}  // namespace

std::vector<Effect> ControlGate::on_tag_event(std::uint64_t uid, std::size_t port) {
  if (port >= readers_.size()) throw Error(Errc::RangeError, config_.gate_id + ": no reader port " + std::to_string(port));
  std::vector<Effect> effects;
  const auto now = clock_->now_ms();

  if (caps_.dedup) {
    auto it = last_read_ms_.find(uid);
    if (it != last_read_ms_.end() && now - it->second < config_.dedup_window_ms) {
      Effect e;
      e.kind = Effect::Kind::Suppressed;
      e.uid = uid;
      effects.push_back(e);
      return effects;
    }
    last_read_ms_[uid] = now;
  }

  auto& reader = readers_[port];
  const auto p8 = static_cast<std::uint8_t>(port);
  const std::size_t bs = config_.block_size;
  const Bytes head = reader.read_blocks(uid, 0, (tag::kHeaderSize + bs - 1) / bs, bs);
  const auto header = tag::parse_header(head);
  const tag::TagTemplate* tpl = nullptr;
  if (header && header->magic == tag::kMagic) tpl = find_template(header->template_id, header->version);
  const std::uint16_t template_id = header && header->magic == tag::kMagic ? header->template_id : 0;
  if (!tpl) {
    raise_alarm(alarm_code::kUnknownTemplate, uid, template_id, p8, effects);
    return effects;
  }

  const tag::Layout layout = tag::compute_layout(*tpl);
  tag::TagImage img;
  img.uid = uid;
  img.block_size = bs;
  tag::TagRecord rec;
  try {
    img.data = reader.read_blocks(uid, 0, (layout.total_size() + bs - 1) / bs, bs);
    rec = tag::decode_record(*tpl, img);
  } catch (const Error& e) {
    if (e.code() == Errc::TagNotInField) throw;
    raise_alarm(alarm_code::kUnknownTemplate, uid, template_id, p8, effects);
    return effects;
  }

  effects.push_back(record(EventKind::Read, uid, tpl->template_id, p8, tag::snapshot_of(*tpl, rec)));

  for (const Rule& rule : rules_) {
    if (rule.trigger != Trigger::Read) continue;
    if (!evaluate(rule.when, EvalContext{&rec, inputs_})) continue;
    for (const Action& a : rule.actions) {
      switch (a.kind) {
        case ActionKind::Log:
          break;  // the READ record above already logs this event
        case ActionKind::Alarm:
          raise_alarm(a.alarm_code, uid, tpl->template_id, p8, effects);
          break;
        case ActionKind::Relay:
          set_relay(a.relay, a.on, effects);
          break;
        case ActionKind::Set: {
          const auto idx = tpl->index_of(a.field);
          if (!idx || !tag::value_matches(tpl->fields[*idx].type, a.value)) break;
          const auto& slot = layout.slots[*idx];
          Bytes bytes(slot.size);
          tag::encode_field(tpl->fields[*idx].type, a.value, bytes.data());
          try {
            write_slot(reader, uid, slot, bytes.data());
          } catch (const Error&) {
            raise_alarm(alarm_code::kWriteFailed, uid, tpl->template_id, p8, effects);
            break;
          }
          rec[a.field] = a.value;
          Effect w;
          w.kind = Effect::Kind::TagWrite;
          w.uid = uid;
          w.field = a.field;
          effects.push_back(w);
          effects.push_back(record(EventKind::Write, uid, tpl->template_id, p8,
                                   write_snapshot(*idx, bytes.data(), bytes.size())));
          break;
        }
      }
    }
  }
  return effects;
}

CommandResult ControlGate::apply_pc_command(const MailboxCommand& cmd) {
  CommandResult result;
  if (!caps_.field_writes) {
    result.status = mailbox_status::kCapabilityDenied;
    return result;
  }
  rfid::reader::ReaderClient* reader = nullptr;
  std::size_t port = 0;
  for (std::size_t i = 0; i < readers_.size() && !reader; ++i) {
    const auto uids = readers_[i].inventory();
    if (std::find(uids.begin(), uids.end(), cmd.uid) != uids.end()) {
      reader = &readers_[i];
      port = i;
    }
  }
  if (!reader) {
    result.status = mailbox_status::kTagAbsent;
    return result;
  }

  const std::size_t bs = config_.block_size;
  const Bytes head = reader->read_blocks(cmd.uid, 0, (tag::kHeaderSize + bs - 1) / bs, bs);
  const auto header = tag::parse_header(head);
  const tag::TagTemplate* tpl =
      header && header->magic == tag::kMagic ? find_template(header->template_id, header->version) : nullptr;
  if (!tpl) {
    result.status = mailbox_status::kUnknownTemplate;
    return result;
  }
  if (cmd.field_index >= tpl->fields.size()) {
    result.status = mailbox_status::kBadField;
    return result;
  }
  const tag::FieldDef& field = tpl->fields[cmd.field_index];
  tag::FieldValue value;
  switch (field.type.kind) {
    case tag::FieldKind::Integer: value = static_cast<std::int32_t>(cmd.value); break;
    case tag::FieldKind::Date: value = tag::Date{cmd.value}; break;
    case tag::FieldKind::Character:
      if (cmd.value > 0xFF) {
        result.status = mailbox_status::kBadValue;
        return result;
      }
      value = tag::Character{static_cast<std::uint8_t>(cmd.value)};
      break;
    default:
      result.status = mailbox_status::kBadField;
      return result;
  }

  const auto slot = tag::compute_layout(*tpl).slots[cmd.field_index];
  Bytes bytes(slot.size);
  tag::encode_field(field.type, value, bytes.data());
  try {
    write_slot(*reader, cmd.uid, slot, bytes.data());
  } catch (const Error& e) {
    result.status = e.code() == Errc::WriteProtected ? mailbox_status::kWriteProtected : mailbox_status::kTagAbsent;
    return result;
  }
  Effect w;
  w.kind = Effect::Kind::TagWrite;
  w.uid = cmd.uid;
  w.field = field.name;
  result.effects.push_back(w);
  result.effects.push_back(record(EventKind::Write, cmd.uid, tpl->template_id, static_cast<std::uint8_t>(port),
                                  write_snapshot(cmd.field_index, bytes.data(), bytes.size())));
  result.status = mailbox_status::kDone;
  return result;
}

std::vector<Effect> ControlGate::io_update(std::size_t input, bool level) {
  if (static_cast<int>(input) >= caps_.inputs)
    throw Error(Errc::RangeError, config_.gate_id + ": " + tier_name(config_.tier) + " has " +
                                      std::to_string(caps_.inputs) + " inputs");
  std::vector<Effect> effects;
  const auto bit = static_cast<std::uint16_t>(1u << input);
  const bool current = (inputs_ & bit) != 0;
  if (current == level) return effects;
  inputs_ = level ? (inputs_ | bit) : (inputs_ & ~bit);

  bool logged = false;
  for (const Rule& rule : rules_) {
    if (rule.trigger != Trigger::Input || rule.input != static_cast<int>(input)) continue;
    if (!evaluate(rule.when, EvalContext{nullptr, inputs_})) continue;
    for (const Action& a : rule.actions) {
      switch (a.kind) {
        case ActionKind::Log:
          if (!logged) {
            std::array<std::uint16_t, tag::kMaxSnapshotWords> snap{};
            snap[0] = static_cast<std::uint16_t>(input);
            snap[1] = level ? 1 : 0;
            effects.push_back(record(EventKind::Input, 0, 0, 0, snap));
            logged = true;
          }
          break;
        case ActionKind::Alarm:
          raise_alarm(a.alarm_code, 0, 0, 0, effects);
          break;
        case ActionKind::Relay:
          set_relay(a.relay, a.on, effects);
          break;
        case ActionKind::Set:
          break;  // rejected at parse time for INPUT rules
      }
    }
  }
  return effects;
}

void ControlGate::sync_registers() {
  std::uint16_t status = 0x0001;
  if (alarm_flags_) status |= 0x0002;
  status |= static_cast<std::uint16_t>(static_cast<int>(config_.tier) << 8);
  regs_.set(reg::kStatus, status);
  regs_.set(reg::kAlarmFlags, alarm_flags_);
  regs_.set(reg::kHistoryCount, static_cast<std::uint16_t>(history_.last_seq() >> 16));
  regs_.set(reg::kHistoryCount + 1, static_cast<std::uint16_t>(history_.last_seq()));
  regs_.set(reg::kRelays, relays_);
  regs_.set(reg::kInputs, inputs_);
  regs_.set(reg::kHistoryFrom, static_cast<std::uint16_t>(window_from_ >> 16));
  regs_.set(reg::kHistoryFrom + 1, static_cast<std::uint16_t>(window_from_));

  const auto window = history_.query(window_from_, reg::kWindowRecords);
  regs_.set(reg::kWindowCount, static_cast<std::uint16_t>(window.size()));
  for (std::uint16_t i = 0; i < reg::kWindowRecords; ++i) {
    std::array<std::uint8_t, HistoryRecord::kEncodedSize> bytes{};
    if (i < window.size()) bytes = window[i].encode();
    for (std::uint16_t w = 0; w < reg::kRegistersPerRecord; ++w)
      regs_.set(static_cast<std::uint16_t>(reg::kWindow + i * reg::kRegistersPerRecord + w), get_be16(&bytes[2 * w]));
  }
}

const modbus::RegisterFile& ControlGate::registers() {
  sync_registers();
  return regs_;
}

void ControlGate::after_master_write(std::uint16_t first, std::uint16_t count) {
  const auto covers = [&](std::uint16_t a) { return a >= first && a < first + count; };
  if (covers(reg::kAlarmFlags)) alarm_flags_ &= regs_.get(reg::kAlarmFlags);
  if (covers(reg::kRelays)) relays_ = regs_.get(reg::kRelays) & static_cast<std::uint16_t>((1u << caps_.relays) - 1);
  if (covers(reg::kHistoryFrom) || covers(reg::kHistoryFrom + 1))
    window_from_ = (std::uint32_t{regs_.get(reg::kHistoryFrom)} << 16) | regs_.get(reg::kHistoryFrom + 1);
  if (covers(reg::kMailboxCommand) && regs_.get(reg::kMailboxCommand) == 1) {
    MailboxCommand cmd;
    for (int i = 0; i < 4; ++i) cmd.uid = (cmd.uid << 16) | regs_.get(static_cast<std::uint16_t>(reg::kMailboxUid + i));
    cmd.field_index = regs_.get(reg::kMailboxField);
    cmd.value = (std::uint32_t{regs_.get(reg::kMailboxValue)} << 16) | regs_.get(reg::kMailboxValue + 1);
    std::uint16_t status;
    try {
      status = apply_pc_command(cmd).status;
    } catch (const Error&) {
      status = mailbox_status::kTagAbsent;
    }
    regs_.set(reg::kMailboxStatus, status);
    regs_.set(reg::kMailboxCommand, 0);
  }
  sync_registers();
}

void ControlGate::connect(modbus::RtuBus& bus) {
  bus_ = &bus;
  bus.attach(*this);
}

void ControlGate::on_bus_frame(ByteView wire) {
  modbus::Frame req;
  try {
    req = modbus::decode_frame(wire);
  } catch (const Error&) {
    return;  // corrupted frames are ignored, as on a real line
  }
  sync_registers();
  auto reply = modbus::slave_dispatch(regs_, config_.slave_address, req);
  if (reply && bus_) bus_->slave_send(modbus::encode_frame(*reply));
}

}  // namespace rfidb2b::gate

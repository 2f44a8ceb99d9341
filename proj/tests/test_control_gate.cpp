#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <random>

#include "rfidb2b/control_gate.hpp"
#include "rfidb2b/error.hpp"

using namespace rfidb2b;
using namespace rfidb2b::gate;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::StepFailure;
}

/// A gate with `ports` readers, each with its own field over one tag world.
struct Rig {
  explicit Rig(GateTier tier, std::size_t ports = 1, std::uint8_t address = 1) : clock(1173949200000) {
    for (std::size_t i = 0; i < ports; ++i) {
      fields.push_back(std::make_unique<rfid::ReaderField>(world, "R" + std::to_string(i)));
      devices.push_back(std::make_unique<rfid::reader::ReaderDevice>(*fields.back()));
    }
    std::vector<rfid::reader::ReaderDevice*> raw;
    for (auto& d : devices) raw.push_back(d.get());
    GateConfig cfg;
    cfg.gate_id = "G";
    cfg.tier = tier;
    cfg.slave_address = address;
    cfg.templates = {tag::product_v1()};
    gate = std::make_unique<ControlGate>(cfg, clock, raw);
  }

  std::uint64_t add_tag(std::int32_t tag_id, std::int32_t accepted = 1) {
    auto rec = tag::sample_product_record();
    rec["TAG_ID"] = tag_id;
    rec["PRODUCT_ACCEPTED"] = accepted;
    const std::uint64_t uid = 0xE000000000000000ULL + static_cast<std::uint64_t>(tag_id);
    world.create_tag(uid);
    world.commission(tag::encode_record(tag::product_v1(), rec, uid));
    return uid;
  }

  std::vector<Effect> read(std::uint64_t uid, std::size_t port = 0) {
    fields[port]->enter(uid);
    auto e = gate->on_tag_event(uid, port);
    fields[port]->leave(uid);
    return e;
  }

  SimClock clock;
  rfid::TagWorld world;
  std::vector<std::unique_ptr<rfid::ReaderField>> fields;
  std::vector<std::unique_ptr<rfid::reader::ReaderDevice>> devices;
  std::unique_ptr<ControlGate> gate;
};

}  // namespace

TEST_CASE("history record is 32 bytes big-endian") {
  HistoryRecord r;
  r.seq = 0x01020304;
  r.timestamp = 0x0A0B0C0D;
  r.uid = 0xE004010000000298ULL;
  r.template_id = 1;
  r.event = EventKind::Write;
  r.reader_port = 3;
  r.snapshot = {1, 2, 3, 4, 5, 0xFFFF};
  const auto b = r.encode();
  CHECK(b[0] == 0x01);
  CHECK(b[3] == 0x04);
  CHECK(b[8] == 0xE0);
  CHECK(b[15] == 0x98);
  CHECK(b[18] == 2);
  CHECK(b[19] == 3);
  CHECK(b[30] == 0xFF);
  CHECK(HistoryRecord::decode(b) == r);
  auto bad = b;
  bad[18] = 9;
  CHECK(code_of([&] { HistoryRecord::decode(bad); }) == Errc::DecodeFailure);
}

TEST_CASE("property: history keeps the newest capacity records") {
  std::mt19937_64 rng(21);
  for (int round = 0; round < 200; ++round) {
    const std::size_t cap = 1 + rng() % 40;
    const std::size_t n = rng() % 130;
    HistoryStore h(cap);
    for (std::size_t i = 0; i < n; ++i) {
      HistoryRecord r;
      r.uid = i;
      REQUIRE(h.append(r).seq == i + 1);
    }
    const std::size_t kept = std::min(cap, n);
    const auto all = h.query(0, 1000);
    REQUIRE(all.size() == kept);
    for (std::size_t k = 0; k < kept; ++k) {
      REQUIRE(all[k].seq == n - kept + 1 + k);
      REQUIRE(all[k].uid == all[k].seq - 1);
    }
    const auto from = static_cast<std::uint32_t>(rng() % (n + 3));
    const std::size_t max = rng() % 10;
    const auto part = h.query(from, max);
    std::size_t expect = 0;
    for (const auto& r : all)
      if (r.seq >= from && expect < max) ++expect;
    REQUIRE(part.size() == expect);
    if (!part.empty()) REQUIRE(part.front().seq == std::max<std::uint32_t>(from, h.oldest_seq()));
  }
}

TEST_CASE("tier capabilities") {
  CHECK(capabilities(GateTier::LCCG).history_capacity == 1024);
  CHECK(capabilities(GateTier::MCCG).history_capacity == 4096);
  CHECK(capabilities(GateTier::HCCG).history_capacity == 16384);

  CHECK(code_of([] { Rig r(GateTier::LCCG, 2); }) == Errc::CapabilityDenied);
  CHECK(code_of([] { Rig r(GateTier::MCCG, 2); }) == Errc::CapabilityDenied);
  CHECK(code_of([] { Rig r(GateTier::HCCG, 5); }) == Errc::CapabilityDenied);
  CHECK_NOTHROW(Rig(GateTier::HCCG, 4));
  CHECK(code_of([] { Rig r(GateTier::MCCG, 1, 0); }) == Errc::BadAddress);

  Rig l(GateTier::LCCG);
  CHECK(code_of([&] { l.gate->load_script("ON READ WHEN TRUE DO LOG;"); }) == Errc::SemanticError);
  CHECK_NOTHROW(l.gate->load_script("# comments only\n"));
  CHECK(code_of([&] { l.gate->io_update(2, true); }) == Errc::RangeError);
  const auto uid = l.add_tag(298);
  l.fields[0]->enter(uid);
  CHECK(l.gate->apply_pc_command({uid, 13, 1}).status == mailbox_status::kCapabilityDenied);
}

TEST_CASE("script parsing") {
  const auto templates = std::vector<tag::TagTemplate>{tag::product_v1()};
  const auto rules = parse_script(
      "ON READ WHEN PRODUCT_ACCEPTED == 0 DO ALARM(3);\n"
      "# note\n"
      "ON INPUT 1 WHEN INPUT_1 == 1 AND INPUT_0 == 0 OR INPUT_2 == 1 DO RELAY(1, ON), LOG;\n"
      "ON READ WHEN TRUE DO SET(RECEPTIONIST_ID, 7);",
      GateTier::MCCG, templates);
  REQUIRE(rules.size() == 3);
  CHECK(rules[0].line == 1);
  CHECK(rules[1].line == 3);
  CHECK(rules[1].trigger == Trigger::Input);
  CHECK(rules[1].when.any_of.size() == 2);
  CHECK(rules[1].when.any_of[0].size() == 2);
  CHECK(rules[2].when.always());

  auto err = [&](std::string_view text, GateTier tier = GateTier::MCCG) {
    try {
      parse_script(text, tier, templates);
    } catch (const ParseError& e) {
      return std::make_tuple(e.code(), e.line(), e.column());
    }
    return std::make_tuple(Errc::StepFailure, 0, 0);
  };
  CHECK(err("ON READ WHEN NOPE == 1 DO LOG;") == std::make_tuple(Errc::SemanticError, 1, 14));
  CHECK(std::get<0>(err("ON READ WHEN TAG_ID == 1 DO LOG")) == Errc::SyntaxError);
  CHECK(std::get<1>(err("\n\nON READ WHEN TAG_ID = 1 DO LOG;")) == 3);
  CHECK(std::get<0>(err("ON INPUT 4 WHEN TRUE DO LOG;")) == Errc::SemanticError);
  CHECK(std::get<0>(err("ON READ WHEN TAG_DATE == -1 DO LOG;")) == Errc::SemanticError);

  std::string many;
  for (int i = 0; i < 33; ++i) many += "ON READ WHEN TRUE DO LOG;\n";
  CHECK(code_of([&] { parse_script(many, GateTier::HCCG, templates); }) == Errc::TooManyRules);
  many.resize(many.size() - 26);
  CHECK(parse_script(many, GateTier::HCCG, templates).size() == 32);
}

TEST_CASE("conditions: AND binds tighter than OR") {
  const auto templates = std::vector<tag::TagTemplate>{tag::product_v1()};
  const auto rules = parse_script("ON READ WHEN TAG_ID == 1 OR TAG_ID == 298 AND PRODUCT_PRICE > 30000 DO LOG;",
                                  GateTier::MCCG, templates);
  auto rec = tag::sample_product_record();
  CHECK_FALSE(evaluate(rules[0].when, {&rec, 0}));
  rec["TAG_ID"] = std::int32_t{1};
  CHECK(evaluate(rules[0].when, {&rec, 0}));
  rec["TAG_ID"] = std::int32_t{298};
  rec["PRODUCT_PRICE"] = std::int32_t{30001};
  CHECK(evaluate(rules[0].when, {&rec, 0}));
}

TEST_CASE("reads are recorded with a snapshot") {
  Rig r(GateTier::MCCG);
  const auto uid = r.add_tag(298);
  const auto fx = r.read(uid);
  REQUIRE(fx.size() == 1);
  CHECK(fx[0].kind == Effect::Kind::Recorded);
  CHECK(fx[0].seq == 1);
  const auto h = r.gate->history_query(1, 10);
  REQUIRE(h.size() == 1);
  CHECK(h[0].uid == uid);
  CHECK(h[0].timestamp == 1173949200);
  CHECK(h[0].template_id == 1);
  const auto values = tag::values_from_snapshot(tag::product_v1(), h[0].snapshot);
  CHECK(std::get<std::int32_t>(values.at("TAG_ID")) == 298);
  CHECK(std::get<std::int32_t>(values.at("PRODUCT_PRICE")) == 25000);
  CHECK(std::get<std::int32_t>(values.at("PRODUCT_QUANTITY")) == 1);
}

TEST_CASE("unknown template raises alarm 1") {
  Rig r(GateTier::MCCG);
  r.world.create_tag(77);
  const auto fx = r.read(77);
  REQUIRE(fx.size() == 2);
  CHECK(fx[1].kind == Effect::Kind::Alarm);
  CHECK(fx[1].alarm_code == alarm_code::kUnknownTemplate);
  CHECK(r.gate->alarm_flags() == 0x0001);
  CHECK(r.gate->history_query(1, 10).at(0).event == EventKind::Alarm);
}

TEST_CASE("rules fire in order and SET touches only its slot") {
  Rig r(GateTier::MCCG);
  r.gate->load_script(
      "ON READ WHEN PRODUCT_ACCEPTED == 0 DO ALARM(3), RELAY(1, ON);\n"
      "ON READ WHEN TRUE DO SET(RECEPTIONIST_ID, 99), RELAY(0, ON);\n");
  const auto uid = r.add_tag(301, 0);
  const Bytes before = r.world.tag(uid).image.data;
  const auto fx = r.read(uid);
  std::vector<std::string> seen;
  for (const auto& e : fx) seen.push_back(describe(e));
  CHECK(seen == std::vector<std::string>{"READ #1", "ALARM #2", "ALARM code 3", "RELAY 1 ON",
                                         "WRITE " + std::to_string(uid) + ".RECEPTIONIST_ID", "WRITE #3",
                                         "RELAY 0 ON"});
  CHECK(r.gate->alarm_flags() == 0x0004);
  CHECK(r.gate->relays() == 0x0003);

  const Bytes after = r.world.tag(uid).image.data;
  const auto slot = tag::compute_layout(tag::product_v1()).slots[*tag::product_v1().index_of("RECEPTIONIST_ID")];
  for (std::size_t i = 0; i < after.size(); ++i)
    if (i < slot.offset || i >= slot.offset + slot.size) REQUIRE(after[i] == before[i]);
  const auto rec = tag::decode_record(tag::product_v1(), r.world.tag(uid).image);
  CHECK(std::get<std::int32_t>(rec.at("RECEPTIONIST_ID")) == 99);

  // same event and rules on a fresh gate give the same effects
  Rig again(GateTier::MCCG);
  again.gate->load_script(
      "ON READ WHEN PRODUCT_ACCEPTED == 0 DO ALARM(3), RELAY(1, ON);\n"
      "ON READ WHEN TRUE DO SET(RECEPTIONIST_ID, 99), RELAY(0, ON);\n");
  CHECK(again.read(again.add_tag(301, 0)) == fx);
}

TEST_CASE("write-protected slot raises alarm 2") {
  Rig r(GateTier::MCCG);
  r.gate->load_script("ON READ WHEN TRUE DO SET(PRODUCT_QUANTITY, 5);");
  const auto uid = r.add_tag(5);
  const auto slot = tag::compute_layout(tag::product_v1()).slots.back();
  r.fields[0]->enter(uid);
  r.fields[0]->set_protected(uid, slot.offset / 4, true);
  const auto fx = r.gate->on_tag_event(uid);
  CHECK(fx.back().kind == Effect::Kind::Alarm);
  CHECK(fx.back().alarm_code == alarm_code::kWriteFailed);
}

TEST_CASE("HCCG suppresses duplicate reads inside the window") {
  Rig r(GateTier::HCCG, 2);
  const auto uid = r.add_tag(9);
  CHECK(r.read(uid).front().kind == Effect::Kind::Recorded);
  r.clock.advance(1999);
  CHECK(r.read(uid, 1).front().kind == Effect::Kind::Suppressed);
  r.clock.advance(1);
  CHECK(r.read(uid).front().kind == Effect::Kind::Recorded);

  Rig m(GateTier::MCCG);
  const auto u2 = m.add_tag(9);
  m.read(u2);
  CHECK(m.read(u2).front().kind == Effect::Kind::Recorded);
}

TEST_CASE("input rules") {
  Rig r(GateTier::MCCG);
  r.gate->load_script("ON INPUT 0 WHEN INPUT_0 == 1 DO RELAY(0, ON), LOG, LOG;");
  auto fx = r.gate->io_update(0, true);
  REQUIRE(fx.size() == 2);
  CHECK(fx[0].kind == Effect::Kind::Relay);
  CHECK(fx[1].event == EventKind::Input);
  CHECK(r.gate->io_update(0, true).empty());  // no edge
  CHECK(r.gate->io_update(0, false).empty());
  CHECK(r.gate->inputs() == 0);
}

TEST_CASE("mailbox commands") {
  Rig r(GateTier::MCCG);
  const auto uid = r.add_tag(298);
  const auto price = static_cast<std::uint16_t>(*tag::product_v1().index_of("PRODUCT_PRICE"));
  CHECK(r.gate->apply_pc_command({uid, price, 26000}).status == mailbox_status::kTagAbsent);
  r.fields[0]->enter(uid);
  CHECK(r.gate->apply_pc_command({uid, 15, 1}).status == mailbox_status::kBadField);
  const auto res = r.gate->apply_pc_command({uid, price, 26000});
  CHECK(res.status == mailbox_status::kDone);
  const auto rec = tag::decode_record(tag::product_v1(), r.world.tag(uid).image);
  CHECK(std::get<std::int32_t>(rec.at("PRODUCT_PRICE")) == 26000);
  const auto w = r.gate->history_query(1, 1).at(0);
  CHECK(w.event == EventKind::Write);
  CHECK(w.snapshot[0] == price);
  CHECK(w.snapshot[2] == 26000);

  r.world.create_tag(55);
  r.fields[0]->enter(55);
  CHECK(r.gate->apply_pc_command({55, 0, 1}).status == mailbox_status::kUnknownTemplate);
}

TEST_CASE("register map over ModBus") {
  Rig r(GateTier::MCCG, 1, 7);
  modbus::RtuBus bus;
  r.gate->connect(bus);
  modbus::Master m(bus, r.clock);
  std::uint64_t unsolicited = 0, master_mark = 0;
  bus.set_line_filter([&](Bytes& w) {
    if (bus.master_bytes() == master_mark) unsolicited += w.size();
    master_mark = bus.master_bytes();
  });

  CHECK(m.read_holding(7, reg::kStatus, 1)[0] == 0x0101);  // ready, MCCG
  r.gate->load_script("ON READ WHEN TRUE DO ALARM(2);");
  const auto uid = r.add_tag(298);
  for (int i = 0; i < 6; ++i) r.read(uid);
  CHECK(m.read_holding(7, reg::kStatus, 1)[0] == 0x0103);
  const auto count = m.read_holding(7, reg::kHistoryCount, 2);
  CHECK(count == std::vector<std::uint16_t>{0, 12});

  // window of four records from seq 3
  const std::uint16_t from[] = {0, 3};
  m.write_multiple(7, reg::kHistoryFrom, from);
  CHECK(m.read_holding(7, reg::kWindowCount, 1)[0] == 4);
  const auto win = m.read_holding(7, reg::kWindow, reg::kWindowRecords * reg::kRegistersPerRecord);
  Bytes raw;
  for (auto w : win) append_be16(raw, w);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto rec = HistoryRecord::decode(ByteView(raw).subspan(i * 32, 32));
    CHECK(rec == r.gate->history_query(static_cast<std::uint32_t>(3 + i), 1).at(0));
  }

  // alarm flags clear only through the PC write
  r.read(uid);
  CHECK(r.gate->alarm_flags() == 0x0002);
  m.write_single(7, reg::kAlarmFlags, 0);
  CHECK(r.gate->alarm_flags() == 0);
  CHECK(code_of([&] { m.write_single(7, reg::kInputs, 1); }) == Errc::DeviceException);

  // relays beyond the tier are masked
  m.write_single(7, reg::kRelays, 0xFF);
  CHECK(r.gate->relays() == 0x0003);

  // mailbox: uid, field, value, then command
  r.fields[0]->enter(uid);
  const std::uint16_t mb[] = {static_cast<std::uint16_t>(uid >> 48), static_cast<std::uint16_t>(uid >> 32),
                              static_cast<std::uint16_t>(uid >> 16), static_cast<std::uint16_t>(uid), 14, 0, 4};
  m.write_multiple(7, reg::kMailboxUid, mb);
  m.write_single(7, reg::kMailboxCommand, 1);
  CHECK(m.read_holding(7, reg::kMailboxStatus, 1)[0] == mailbox_status::kDone);
  CHECK(std::get<std::int32_t>(tag::decode_record(tag::product_v1(), r.world.tag(uid).image).at("PRODUCT_QUANTITY")) ==
        4);
  CHECK(unsolicited == 0);
  CHECK(bus.pending_for_master() == 0);
}

TEST_CASE("LCCG wraps after 1024 records") {
  Rig r(GateTier::LCCG);
  const auto uid = r.add_tag(1);
  r.fields[0]->enter(uid);
  for (int i = 0; i < 1030; ++i) r.gate->on_tag_event(uid);
  const auto h = r.gate->history_query(1, 5000);
  REQUIRE(h.size() == 1024);
  CHECK(h.front().seq == 7);
  CHECK(h.back().seq == 1030);
  CHECK(r.gate->history_query(6, 1).at(0).seq == 7);
}

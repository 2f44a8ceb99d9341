#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include "rfidb2b/enterprise.hpp"
#include "rfidb2b/error.hpp"

using namespace rfidb2b;
using namespace rfidb2b::enterprise;
using nlohmann::json;

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

constexpr std::int64_t kT0 = 1173949200000;  // 2007-03-15 09:00 UTC

/// Client A buys from supplier S; A owns a receiving dock, a store room
/// and a shipping gate.
Corporation make_corp() {
  Corporation c;
  c.add_enterprise("A", "Client", kT0);
  c.add_enterprise("S", "Supplier", kT0);
  c.bind_gate({"DOCK", "A", "dock", Direction::In, true}, kT0);
  c.bind_gate({"STORE", "A", "store", Direction::In, false}, kT0);
  c.bind_gate({"SHIP", "A", "shipping", Direction::Out, false}, kT0);
  const auto o = c.place_order("A", "S", "parts", 10, kT0);
  c.confirm_order("S", o.order_id, tag::product_v1(), kT0);
  return c;
}

GateRecord read_at(std::string gate, std::uint32_t seq, std::uint32_t ts_s, TagId tag_id, std::int32_t price = 100,
                   std::int32_t qty = 1) {
  auto rec = tag::sample_product_record();
  rec["TAG_ID"] = static_cast<std::int32_t>(tag_id);
  rec["PRODUCT_PRICE"] = price;
  rec["PRODUCT_QUANTITY"] = qty;
  gate::HistoryRecord h;
  h.seq = seq;
  h.timestamp = ts_s;
  h.uid = 0xE000000000000000ULL + static_cast<std::uint64_t>(tag_id);
  h.template_id = 1;
  h.event = gate::EventKind::Read;
  h.snapshot = tag::snapshot_of(tag::product_v1(), rec);
  return {std::move(gate), h};
}

constexpr std::uint32_t kS0 = kT0 / 1000;

/// Receives `n` entities with ids 1..n through the dock.
void receive(Corporation& c, int n, std::int64_t now = kT0 + 1000) {
  std::vector<GateRecord> recs;
  for (int i = 1; i <= n; ++i) recs.push_back(read_at("DOCK", static_cast<std::uint32_t>(i), kS0 + 1, i));
  c.ingest_history("A", recs, now);
}

}  // namespace

TEST_CASE("lifecycle graph") {
  using S = EntityState;
  const std::set<std::pair<S, S>> allowed{
      {S::Received, S::Sent}, {S::Received, S::Defective}, {S::Defective, S::Repaired},
      {S::Defective, S::Returned}, {S::Repaired, S::Sent}};
  for (S a : kAllStates)
    for (S b : kAllStates) CHECK(transition_allowed(a, b) == (allowed.count({a, b}) == 1));
  for (S s : kAllStates) CHECK(parse_state(state_name(s)) == s);
  CHECK_FALSE(parse_state("lost"));
}

TEST_CASE("orders and confirmations") {
  Corporation c;
  c.add_enterprise("A", "Client");
  c.add_enterprise("S", "Supplier");
  CHECK(code_of([&] { c.place_order("A", "S", "x", 0, 0); }) == Errc::BadQuantity);
  CHECK(code_of([&] { c.place_order("A", "Z", "x", 1, 0); }) == Errc::UnknownEnterprise);
  const auto o = c.place_order("A", "S", "x", 2, 5);
  CHECK(o.order_id == 1);
  CHECK(code_of([&] { c.confirm_order("S", 9, tag::product_v1(), 6); }) == Errc::UnknownOrder);
  CHECK(code_of([&] { c.confirm_order("A", 1, tag::product_v1(), 6); }) == Errc::UnknownOrder);
  auto bad = tag::product_v1();
  bad.template_id = 0;
  CHECK(code_of([&] { c.confirm_order("S", 1, bad, 6); }) == Errc::SemanticError);
  c.confirm_order("S", 1, tag::product_v1(), 6);
  CHECK(c.orders().at(1).confirmed);
  CHECK(c.enterprise("A").latest_template(1) != nullptr);
  CHECK(c.enterprise("S").latest_template(1) == nullptr);
  CHECK(code_of([&] { c.confirm_order("S", 1, tag::product_v1(), 7); }) == Errc::AlreadyConfirmed);
}

TEST_CASE("arrival at the receiving gate creates an inventory entry") {
  auto c = make_corp();
  const std::vector<GateRecord> recs{read_at("DOCK", 1, kS0 + 10, 298, 25000, 1),
                                     read_at("DOCK", 2, kS0 + 10, 298, 25000, 1)};
  const auto res = c.ingest_history("A", recs, kT0 + 20000);
  CHECK(res.created == std::vector<TagId>{298});
  CHECK(res.duplicates_filtered == 1);
  REQUIRE(res.movements.size() == 1);
  CHECK(res.movements[0].kind == MovementEvent::Kind::Arrival);
  CHECK(res.movements[0].sources.size() == 2);
  const auto& e = c.enterprise("A").inventory.at(298);
  CHECK(e.state == EntityState::Received);
  CHECK(e.quantity == 1);
  CHECK(e.price == 25000);
  CHECK(e.location == "dock");

  // the same history again changes nothing
  const auto log_size = c.log().size();
  const auto again = c.ingest_history("A", recs, kT0 + 30000);
  CHECK(again.already_consumed == 2);
  CHECK(again.movements.empty());
  CHECK(c.log().size() == log_size);
}

TEST_CASE("filter window is two seconds per tag and gate") {
  auto c = make_corp();
  const std::vector<GateRecord> recs{read_at("DOCK", 1, kS0, 5), read_at("DOCK", 2, kS0 + 1, 5),
                                     read_at("DOCK", 3, kS0 + 3, 5), read_at("DOCK", 4, kS0 + 5, 5)};
  const auto res = c.ingest_history("A", recs, kT0 + 10000);
  CHECK(res.duplicates_filtered == 1);
  CHECK(res.movements.size() == 3);
  CHECK(res.created.size() == 1);
}

TEST_CASE("IN then OUT at another gate is one transfer") {
  auto c = make_corp();
  receive(c, 1);
  const std::vector<GateRecord> recs{read_at("STORE", 1, kS0 + 60, 1), read_at("SHIP", 1, kS0 + 90, 1)};
  const auto res = c.ingest_history("A", recs, kT0 + 100000);
  REQUIRE(res.movements.size() == 1);
  const auto& m = res.movements[0];
  CHECK(m.kind == MovementEvent::Kind::Transfer);
  CHECK(m.from_department == "store");
  CHECK(m.to_department == "shipping");
  CHECK(m.sources == std::vector<SourceRef>{{"STORE", 1}, {"SHIP", 1}});
  CHECK(c.enterprise("A").inventory.at(1).location == "shipping");
}

TEST_CASE("malformed and foreign records") {
  auto c = make_corp();
  auto alarm = read_at("DOCK", 1, kS0, 3);
  alarm.record.event = gate::EventKind::Alarm;
  auto unbound = read_at("NOWHERE", 1, kS0, 3);
  auto zero = read_at("DOCK", 2, kS0, 0);
  auto unknown_tpl = read_at("DOCK", 3, kS0, 3);
  unknown_tpl.record.template_id = 9;
  const std::vector<GateRecord> recs{alarm, unbound, zero, unknown_tpl};
  const auto res = c.ingest_history("A", recs, kT0);
  CHECK(res.ignored == 1);
  CHECK(res.malformed == 3);
  CHECK(res.movements.empty());
  CHECK(code_of([&] { c.ingest_history("Q", recs, kT0); }) == Errc::UnknownEnterprise);
}

TEST_CASE("transitions and alarms") {
  auto c = make_corp();
  c.add_alarm_rule(AlarmRule::parse("defective", "state == defective", "high", "tag {tag_id} at {enterprise}"), kT0);
  receive(c, 2);
  CHECK(code_of([&] { c.transition_entity("A", 1, EntityState::Repaired, kT0); }) == Errc::IllegalTransition);
  CHECK(code_of([&] { c.transition_entity("A", 9, EntityState::Sent, kT0); }) == Errc::UnknownEntity);
  c.transition_entity("A", 1, EntityState::Defective, kT0 + 5);
  REQUIRE(c.alarms().size() == 1);
  CHECK(c.alarms()[0].message == "tag 1 at A");
  CHECK(c.alarms()[0].severity == "high");
  c.transition_entity("A", 1, EntityState::Repaired, kT0 + 6);
  c.transition_entity("A", 1, EntityState::Sent, kT0 + 7);
  CHECK(code_of([&] { c.transition_entity("A", 1, EntityState::Received, kT0); }) == Errc::IllegalTransition);
  CHECK(c.alarms().size() == 1);

  const auto qty = AlarmRule::parse("big", "quantity > 5", "warning", "q={quantity}", "entity_received");
  CHECK(qty.op == gate::CompareOp::Gt);
  CHECK(qty.value == 5);
  CHECK(code_of([] { AlarmRule::parse("x", "quantity >> 5", "w", ""); }) == Errc::SyntaxError);
}

TEST_CASE("server writes update price and quantity") {
  auto c = make_corp();
  receive(c, 1);
  c.write_tag_field("A", 1, "PRODUCT_PRICE", 26000, kT0 + 10);
  CHECK(c.enterprise("A").inventory.at(1).price == 26000);
  CHECK(code_of([&] { c.write_tag_field("A", 1, "PRODUCT_QUANTITY", -1, kT0); }) == Errc::BadQuantity);
  CHECK(code_of([&] { c.write_tag_field("A", 7, "PRODUCT_PRICE", 1, kT0); }) == Errc::UnknownEntity);
}

TEST_CASE("report counts state entries and movements in the period") {
  auto c = make_corp();
  receive(c, 3, kT0 + 1000);
  c.transition_entity("A", 1, EntityState::Sent, kT0 + 5000);
  c.transition_entity("A", 2, EntityState::Defective, kT0 + 6000);
  const auto rows = c.corporate_report({kT0, kT0 + 5500});
  REQUIRE(rows.size() == 12);  // 2 enterprises x (5 states + movements)
  CHECK(rows[0] == ReportRow{"A", "received", 3, kT0, kT0 + 5500});
  CHECK(rows[1] == ReportRow{"A", "sent", 1, kT0, kT0 + 5500});
  CHECK(rows[2].count == 0);
  CHECK(rows[5] == ReportRow{"A", "movements", 3, kT0, kT0 + 5500});
  CHECK(rows[6].enterprise == "S");
  const auto csv = report_csv(rows);
  CHECK(csv.rfind("enterprise,state,count,period_start,period_end\n", 0) == 0);
  CHECK(csv.find("A,received,3,1173949200000,1173949205500\n") != std::string::npos);
}

TEST_CASE("handheld sync merges reads and writes once") {
  auto c = make_corp();
  receive(c, 1);
  auto session = c.open_handheld("A", "pda1", "floor");
  auto rec = tag::sample_product_record();
  rec["TAG_ID"] = std::int32_t{42};
  session.capture_read(tag::encode_record(tag::product_v1(), rec, 0xE00000000000002AULL), kT0 + 60000);
  session.queue_write(1, "PRODUCT_QUANTITY", 3, kT0 + 61000);
  session.capture_read(tag::TagImage::blank(99), kT0 + 62000);

  const auto first = c.handheld_sync(session, kT0 + 70000);
  CHECK(first.reads_ingested == 1);
  CHECK(first.reads_rejected == 1);
  CHECK(first.writes_applied == 1);
  CHECK(first.conflicts.empty());
  CHECK(c.enterprise("A").inventory.at(42).location == "floor");
  CHECK(c.enterprise("A").inventory.at(1).quantity == 3);

  const auto log_size = c.log().size();
  const auto second = c.handheld_sync(session, kT0 + 80000);
  CHECK(second.reads_ingested == 0);
  CHECK(second.writes_applied == 0);
  CHECK(second.already_synced == 2);
  CHECK(c.log().size() == log_size);
}

TEST_CASE("offline write against a changed server value is a conflict") {
  auto c = make_corp();
  receive(c, 1);
  auto session = c.open_handheld("A", "pda2", "floor");
  session.queue_write(1, "PRODUCT_PRICE", 24000, kT0 + 10);
  c.write_tag_field("A", 1, "PRODUCT_PRICE", 26000, kT0 + 20);
  const auto rep = c.handheld_sync(session, kT0 + 30);
  REQUIRE(rep.conflicts.size() == 1);
  CHECK(rep.conflicts[0].tag_id == 1);
  CHECK(c.enterprise("A").inventory.at(1).price == 26000);
  const auto log_size = c.log().size();
  CHECK(c.handheld_sync(session, kT0 + 40).conflicts.empty());
  CHECK(c.log().size() == log_size);

  // a write queued after the session saw the change goes through
  session.queue_write(1, "PRODUCT_PRICE", 27000, kT0 + 50);
  CHECK(c.handheld_sync(session, kT0 + 60).writes_applied == 1);
  CHECK(c.enterprise("A").inventory.at(1).price == 27000);
}

TEST_CASE("property: conservation under random transitions") {
  std::mt19937_64 rng(500);
  for (int round = 0; round < 5; ++round) {
    auto c = make_corp();
    const int n = 20 + static_cast<int>(rng() % 30);
    receive(c, n);
    REQUIRE(c.enterprise("A").created == static_cast<std::size_t>(n));
    std::map<TagId, EntityState> model;
    for (int i = 1; i <= n; ++i) model[i] = EntityState::Received;
    int valid = 0, rejected = 0, attempts = 0;
    while (valid < 500 && attempts < 100000) {
      ++attempts;
      auto pick = model.begin();
      std::advance(pick, static_cast<long>(rng() % model.size()));
      const TagId id = pick->first;
      const EntityState to = kAllStates[rng() % 5];
      if (transition_allowed(model[id], to)) {
        c.transition_entity("A", id, to, kT0 + 2000 + attempts);
        model[id] = to;
        ++valid;
        if (to == EntityState::Sent || to == EntityState::Returned) {
          // terminal states accumulate; restock so valid moves stay available
          const TagId fresh = 1000 + valid;
          std::vector<GateRecord> more{read_at("DOCK", static_cast<std::uint32_t>(fresh), kS0 + 2, fresh)};
          REQUIRE(c.ingest_history("A", more, kT0).created.size() == 1);
          model[fresh] = EntityState::Received;
        }
      } else {
        REQUIRE(code_of([&] { c.transition_entity("A", id, to, kT0); }) == Errc::IllegalTransition);
        ++rejected;
      }
    }
    REQUIRE(valid == 500);
    CHECK(rejected > 0);
    std::size_t total = 0;
    for (const auto& [s, k] : c.enterprise("A").state_counts()) total += k;
    CHECK(total == c.enterprise("A").created);
    CHECK(total == model.size());
    for (const auto& [id, s] : model) CHECK(c.enterprise("A").inventory.at(id).state == s);
  }
}

TEST_CASE("property: movement sources are consumed exactly once") {
  std::mt19937_64 rng(31);
  for (int round = 0; round < 30; ++round) {
    auto c = make_corp();
    receive(c, 8);
    const std::vector<std::string> gates{"DOCK", "STORE", "SHIP"};
    std::map<std::string, std::uint32_t> next_seq{{"DOCK", 100}, {"STORE", 1}, {"SHIP", 1}};
    std::vector<GateRecord> all;
    std::uint32_t ts = kS0 + 10;
    for (int i = 0; i < 150; ++i) {
      const auto& g = gates[rng() % 3];
      ts += static_cast<std::uint32_t>(rng() % 3);
      all.push_back(read_at(g, next_seq[g]++, ts, 1 + static_cast<TagId>(rng() % 8)));
    }
    std::multiset<SourceRef> produced;
    std::size_t pos = 0;
    while (pos < all.size()) {
      const std::size_t len = 1 + rng() % 40;
      std::vector<GateRecord> batch(all.begin() + pos, all.begin() + std::min(all.size(), pos + len));
      // replay part of the previous batch to exercise the consumed set
      if (pos > 0 && rng() % 2) batch.push_back(all[pos - 1]);
      pos += len;
      for (const auto& m : c.ingest_history("A", batch, kT0).movements)
        for (const auto& s : m.sources) produced.insert(s);
    }
    REQUIRE(produced.size() == all.size());
    for (const auto& g : all) REQUIRE(produced.count({g.gate_id, g.record.seq}) == 1);
    std::size_t replay_sources = 0;
    for (const auto& m : c.enterprise("A").movements) replay_sources += m.sources.size();
    CHECK(replay_sources == all.size() + 8);
  }
}

TEST_CASE("property: replaying the log rebuilds the same state") {
  std::mt19937_64 rng(12);
  for (int round = 0; round < 20; ++round) {
    auto c = make_corp();
    c.add_alarm_rule(AlarmRule::parse("d", "state == defective", "high", "{tag_id}"), kT0);
    std::int64_t now = kT0;
    std::uint32_t seq = 1;
    for (int step = 0; step < 120; ++step) {
      now += static_cast<std::int64_t>(rng() % 5000);
      const auto ids = c.enterprise("A").inventory;
      switch (rng() % 4) {
        case 0: {
          std::vector<GateRecord> recs{read_at("DOCK", seq, static_cast<std::uint32_t>(now / 1000),
                                               1 + static_cast<TagId>(rng() % 30), static_cast<std::int32_t>(rng() % 90000))};
          ++seq;
          c.ingest_history("A", recs, now);
          break;
        }
        case 1:
          if (!ids.empty()) {
            auto it = std::next(ids.begin(), static_cast<long>(rng() % ids.size()));
            const auto to = kAllStates[rng() % 5];
            if (transition_allowed(it->second.state, to)) c.transition_entity("A", it->first, to, now);
          }
          break;
        case 2:
          if (!ids.empty()) {
            auto it = std::next(ids.begin(), static_cast<long>(rng() % ids.size()));
            c.write_tag_field("A", it->first, "PRODUCT_PRICE", static_cast<std::int64_t>(rng() % 50000), now);
          }
          break;
        default:
          c.place_order("A", "S", "more", 1 + static_cast<std::int64_t>(rng() % 9), now);
      }
    }
    const auto copy = Corporation::replay(c.export_log());
    CHECK(copy.export_log() == c.export_log());
    for (int p = 0; p < 10; ++p) {
      const std::int64_t a = kT0 + static_cast<std::int64_t>(rng() % 600000);
      const Period period{a, a + static_cast<std::int64_t>(rng() % 600000)};
      REQUIRE(copy.corporate_report(period) == c.corporate_report(period));
    }
    CHECK(copy.enterprise("A").inventory == c.enterprise("A").inventory);
    CHECK(copy.alarms() == c.alarms());
    CHECK(copy.consumed_count() == c.consumed_count());
  }
}

TEST_CASE("save and load") {
  auto c = make_corp();
  receive(c, 4);
  const auto path = (std::filesystem::temp_directory_path() / "rfidb2b_store_test.jsonl").string();
  c.save(path);
  const auto back = Corporation::load(path);
  CHECK(back.export_log() == c.export_log());
  std::remove(path.c_str());
  CHECK(code_of([&] { Corporation::load(path); }) == Errc::IoError);
  CHECK(code_of([] { Corporation::replay("{\"ts\":1}\n"); }) == Errc::SyntaxError);
}

// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <set>
#include <string>

#include "rfidb2b/control_gate.hpp"
#include "rfidb2b/enterprise.hpp"
#include "rfidb2b/error.hpp"
#include "rfidb2b/modbus_rtu.hpp"
#include "rfidb2b/scenario.hpp"
#include "rfidb2b/tag_codec.hpp"
#include "rfidb2b/tag_json.hpp"
#include "rfidb2b/traceability.hpp"
#include "support/oracles.hpp"

using namespace rfidb2b;
using nlohmann::json;

namespace {

const std::string kSource = RFIDB2B_SOURCE_DIR;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

std::string two_digits(unsigned v) { return (v < 10 ? "0" : "") + std::to_string(v); }

std::string oracle_date(std::uint32_t epoch) {
  const auto c = oracle::civil_by_counting(epoch);
  return std::to_string(c.month) + "/" + std::to_string(c.day) + "/" + std::to_string(c.year) + " " +
         std::to_string(c.hour) + ":" + two_digits(c.minute);
}

Outcome criterion_1() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto t = tag::product_v1();
  const auto rec = tag::sample_product_record();
  const auto img = tag::encode_record(t, rec, 0xE004010000000298ULL);
  const auto back = tag::decode_record(t, img);
  o.require(rec.size() == 15, "sample record does not have 15 fields");
  o.require(back.size() == rec.size(), "decoded field count differs");
  for (const auto& [name, v] : rec) {
    auto it = back.find(name);
    o.require(it != back.end() && tag::identical(it->second, v), "field " + name + " changed");
  }
  // dates as shown on the product form: 3/15/2007 9:1 and 1/1/2000
  o.require(std::get<tag::Date>(back.at("TAG_DATE")).epoch_seconds == 1173949260, "TAG_DATE epoch");
  o.require(oracle_date(1173949260) == "3/15/2007 9:01", "date oracle disagrees with the form");
  o.require(tag::render_date(1173949260) == oracle_date(1173949260), "render_date(TAG_DATE)");
  o.require(tag::render_date(946684800).rfind("1/1/2000", 0) == 0, "render_date(1/1/2000)");

  const auto model = tag::layout_groups(t, back);
  o.require(model.size() == 2, "expected two display sections");
  if (model.size() == 2) {
    o.require(model[0].title == "General information", "first section title");
    o.require(model[1].title == "Specific information", "second section title");
    std::vector<std::string> shown;
    for (const auto& sec : model)
      for (const auto& row : sec.rows) shown.push_back(row.first);
    std::vector<std::string> declared;
    for (const auto& g : t.groups)
      for (const auto& f : t.fields)
        if (f.group_id == g.id) declared.push_back(f.name);
    o.require(shown == declared, "fields not listed in declaration order within groups");
    o.require(shown.size() == 15, "every field shown once");
  }
  const double s = seconds_since(t0);
  o.require(s < 1.0, "took " + std::to_string(s) + " s");
  return o;
}

/// Runs the demo scenario step by step so the registry stays inspectable.
struct DemoRun {
  scenario::Scenario s = scenario::load_scenario(kSource + "/scenarios/demo.json");
  scenario::World world{s, s.seed};

  DemoRun() {
    for (std::size_t i = 0; i < s.timeline.size(); ++i) world.run_step(i, s.timeline[i]);
  }
};

Outcome criterion_2() {
  Outcome o;
  DemoRun demo;
  const auto tree = trace::trace(demo.world.registry(), 298);
  std::set<trace::TagId> children;
  for (const auto& c : tree.root.children) children.insert(c.tag_id);
  o.require(tree.root.children.size() == 3, "root has " + std::to_string(tree.root.children.size()) + " children");
  o.require(children == std::set<trace::TagId>{202, 305, 423}, "children are not {202, 305, 423}");
  const auto report = trace::origin_report(tree);
  o.require(report.origins.size() == 3, "origin report lists " + std::to_string(report.origins.size()) + " sources");
  for (const auto& org : report.origins) o.require(org.enterprise_id == "MAT", "origin outside the materials plant");
  return o;
}

Outcome criterion_3() {
  Outcome o;
  const std::string check = "123456789";
  const Bytes ascii(check.begin(), check.end());
  const Bytes req{0x11, 0x03, 0x00, 0x6B, 0x00, 0x03};
  o.require(oracle::crc16_bitwise(ascii) == 0x4B37, "bitwise oracle on the check string");
  o.require(oracle::crc16_bitwise(req) == 0x8776, "bitwise oracle on the request");
  o.require(modbus::crc16(ascii) == 0x4B37, "crc16(\"123456789\")");
  o.require(modbus::crc16(req) == 0x8776, "crc16(11 03 00 6B 00 03)");
  o.require(modbus::encode_frame(0x11, 0x03, Bytes{0x00, 0x6B, 0x00, 0x03}) ==
                Bytes{0x11, 0x03, 0x00, 0x6B, 0x00, 0x03, 0x76, 0x87},
            "crc not appended low byte first");
  return o;
}

Outcome criterion_4() {
  Outcome o;
  const auto t0 = Clock::now();
  const Bytes wire = modbus::encode_frame(0x11, 0x03, Bytes{0x00, 0x6B, 0x00, 0x03});
  o.require(wire.size() == 8, "frame is not 8 bytes");
  for (std::size_t bit = 0; bit < 64; ++bit) {
    Bytes w = wire;
    w[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    Errc got = Errc::StepFailure;
    bool threw = false;
    try {
      modbus::decode_frame(w);
    } catch (const Error& e) {
      threw = true;
      got = e.code();
    }
    o.require(threw && got == Errc::CrcMismatch, "bit " + std::to_string(bit) + " not rejected with CrcMismatch");
  }
  const double s = seconds_since(t0);
  o.require(s < 1.0, "took " + std::to_string(s) + " s");
  return o;
}

Outcome criterion_5() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1000);
  for (int i = 0; i < 1000 && o.ok; ++i) {
    const auto t = oracle::random_template(rng, static_cast<std::uint16_t>(1 + i % 65535));
    const auto r = oracle::random_record(rng, t);
    const auto back = tag::decode_record(t, tag::encode_record(t, r, 1 + static_cast<std::uint64_t>(i)));
    o.require(back.size() == r.size(), "pair " + std::to_string(i) + ": field count");
    for (const auto& [name, v] : r) {
      auto it = back.find(name);
      o.require(it != back.end() && tag::identical(it->second, v), "pair " + std::to_string(i) + ": field " + name);
    }
  }
  const double s = seconds_since(t0);
  o.require(s < 10.0, "took " + std::to_string(s) + " s");
  return o;
}

json product(std::int64_t tag_id) {
  auto r = tag::sample_product_record();
  r["TAG_ID"] = static_cast<std::int32_t>(tag_id);
  r["COMPONENTS_NUMBER"] = std::int32_t{0};
  r["ID_BD_0"] = r["ID_BD_1"] = r["ID_BD_2"] = std::int32_t{0};
  return tag::record_to_json(tag::product_v1(), r);
}

/// Two gates on one client bus and a pool of commissioned tags. The timeline
/// has `reads` random tag events split over both gates, with PC polls between.
scenario::Scenario busy_scenario(int reads, std::uint64_t seed) {
  json doc;
  doc["seed"] = seed;
  doc["start_time"] = "2007-03-15T08:00:00Z";
  doc["templates"] = json::array({{{"file", "templates/product_v1.json"}}});
  doc["enterprises"] = json::array({{{"id", "SUP"}}, {{"id", "CLI"}}});
  doc["gates"] = json::array({{{"id", "GR1"}, {"enterprise", "CLI"}, {"tier", "MCCG"}, {"address", 1},
                               {"department", "receiving"}, {"receiving", true}},
                              {{"id", "GS1"}, {"enterprise", "CLI"}, {"tier", "HCCG"}, {"address", 2},
                               {"department", "shipping"}, {"direction", "OUT"}}});
  doc["tags"] = json::array();
  for (int i = 1; i <= 8; ++i)
    doc["tags"].push_back({{"id", "T" + std::to_string(i)}, {"uid", 0xE0040100000000 + i}, {"enterprise", "SUP"},
                           {"template", "PRODUCT_V1"}, {"record", product(500 + i)}, {"commissioned", true}});
  doc["timeline"] = json::array();
  const int chunk = 25;
  for (int done = 0, k = 0; done < reads; done += chunk, ++k) {
    doc["timeline"].push_back({{"step", "random_reads"},
                               {"gate", k % 2 ? "GS1" : "GR1"},
                               {"count", std::min(chunk, reads - done)},
                               {"interval_ms", 900}});
    doc["timeline"].push_back({{"step", "ingest"}, {"enterprise", "CLI"}});
  }
  doc["timeline"].push_back({{"step", "report"}});
  return scenario::parse_scenario(doc.dump(), kSource);
}

Outcome criterion_6() {
  Outcome o;
  const auto s = busy_scenario(100, 6);
  scenario::World w(s, s.seed);
  auto& bus = w.bus("CLI");
  std::uint64_t master_at_last = 0, unsolicited = 0, replies = 0;
  bus.set_line_filter([&](Bytes& frame) {
    ++replies;
    if (bus.master_bytes() == master_at_last) unsolicited += frame.size();
    master_at_last = bus.master_bytes();
  });
  std::size_t detections = 0;
  for (std::size_t i = 0; i < s.timeline.size(); ++i) w.run_step(i, s.timeline[i]);
  for (const auto& e : w.log().entries) detections += e.kind == "tag_detected";
  o.require(detections == 100, "scenario produced " + std::to_string(detections) + " tag events");
  o.require(replies > 0, "no slave traffic observed");
  o.require(unsolicited == 0, std::to_string(unsolicited) + " unsolicited bytes on the line");
  o.require(w.summary().unsolicited_bus_bytes == 0, "runner counted unsolicited bytes");
  return o;
}

Outcome criterion_7() {
  Outcome o;
  SimClock clock(1173949200000);
  rfid::TagWorld world;
  rfid::ReaderField field(world, "R0");
  rfid::reader::ReaderDevice device(field);
  gate::GateConfig cfg;
  cfg.gate_id = "L1";
  cfg.tier = gate::GateTier::LCCG;
  cfg.templates = {tag::product_v1()};
  gate::ControlGate g(cfg, clock, {&device});
  const std::uint64_t uid = 0xE004010000000298ULL;
  world.create_tag(uid);
  world.commission(tag::encode_record(tag::product_v1(), tag::sample_product_record(), uid));
  field.enter(uid);
  for (int i = 0; i < 1030; ++i) {
    g.on_tag_event(uid);
    clock.advance(1000);
  }
  const auto h = g.history_query(0, 100000);
  o.require(h.size() == 1024, "retained " + std::to_string(h.size()) + " records");
  for (std::size_t i = 0; i < h.size(); ++i)
    o.require(h[i].seq == 7 + i, "unexpected seq at position " + std::to_string(i));
  o.require(g.history_query(1, 10).front().seq == 7, "query from an evicted seq does not start at 7");
  o.require(g.history_query(1031, 10).empty(), "query past the newest record is not empty");
  return o;
}

Outcome criterion_8() {
  Outcome o;
  const auto r = scenario::run_scenario(scenario::load_scenario(kSource + "/scenarios/demo.json"));
  o.require(!r.failure, r.failure ? r.failure->message : "");
  const auto it = r.inventory.find("CLI");
  o.require(it != r.inventory.end() && it->second.size() == 1, "client inventory does not hold one entry");
  if (o.ok) {
    const auto& e = it->second.front();
    o.require(e.tag_id == 298, "entry is not tag 298");
    o.require(e.state == enterprise::EntityState::Received, "state is " + enterprise::state_name(e.state));
    o.require(e.quantity == 1, "quantity is " + std::to_string(e.quantity));
    o.require(e.price == 25000, "price is " + std::to_string(e.price));
  }
  return o;
}

Outcome criterion_9() {
  Outcome o;
  const auto demo = scenario::load_scenario(kSource + "/scenarios/demo.json");
  o.require(scenario::run_scenario(demo).log.to_jsonl() == scenario::run_scenario(demo).log.to_jsonl(),
            "demo logs differ");
  const auto busy = busy_scenario(100, 9);
  const auto a = scenario::run_scenario(busy, 424242).log.to_jsonl();
  const auto b = scenario::run_scenario(busy, 424242).log.to_jsonl();
  o.require(!a.empty() && a == b, "random-read logs differ for the same seed");
  return o;
}

Outcome criterion_10() {
  Outcome o;
  std::mt19937_64 rng(10);
  std::size_t injected = 0, agreed_cycles = 0;
  for (int i = 0; i < 100 && o.ok; ++i) {
    const bool inject = i % 4 == 0;
    injected += inject;
    const auto recs = oracle::random_registry(rng, 50, inject);
    o.require(recs.size() <= 50, "registry larger than 50 records");
    bool saw_cycle = false;
    for (const auto& [root, r] : recs) {
      const auto expect = oracle::trace_bfs(recs, root, trace::kDefaultMaxDepth);
      bool cycle = false;
      std::optional<trace::TraceTree> tree;
      try {
        tree = trace::trace(recs, root);
      } catch (const Error& e) {
        cycle = e.code() == Errc::CycleDetected;
        o.require(cycle, std::string("unexpected error ") + e.what());
      }
      o.require(cycle == expect.cycle, "registry " + std::to_string(i) + " root " + std::to_string(root) +
                                           ": cycle verdicts differ");
      saw_cycle |= cycle;
      if (tree && !expect.cycle) {
        o.require(oracle::same_tree(tree->root, expect, 0), "trees differ at root " + std::to_string(root));
        o.require(tree->depth == expect.depth && tree->leaf_count == expect.leaves &&
                      tree->unresolved_count == expect.unresolved,
                  "tree totals differ at root " + std::to_string(root));
      }
    }
    if (inject) {
      o.require(saw_cycle, "injected cycle in registry " + std::to_string(i) + " not reported");
      agreed_cycles += saw_cycle;
    }
  }
  o.require(injected > 0 && agreed_cycles == injected, "not every injected cycle was detected");
  return o;
}

Outcome criterion_11() {
  Outcome o;
  using enterprise::EntityState;
  constexpr std::int64_t t0 = 1173949200000;
  enterprise::Corporation c;
  c.add_enterprise("A", "Client", t0);
  c.add_enterprise("S", "Supplier", t0);
  c.bind_gate({"DOCK", "A", "dock", enterprise::Direction::In, true}, t0);
  const auto order = c.place_order("A", "S", "parts", 100, t0);
  c.confirm_order("S", order.order_id, tag::product_v1(), t0);

  std::uint32_t seq = 0;
  std::map<trace::TagId, EntityState> model;
  auto receive = [&](trace::TagId id) {
    auto rec = tag::sample_product_record();
    rec["TAG_ID"] = static_cast<std::int32_t>(id);
    gate::HistoryRecord h;
    h.seq = ++seq;
    h.timestamp = static_cast<std::uint32_t>(t0 / 1000) + seq;
    h.uid = 0xE000000000000000ULL + id;
    h.template_id = 1;
    h.event = gate::EventKind::Read;
    h.snapshot = tag::snapshot_of(tag::product_v1(), rec);
    const std::vector<enterprise::GateRecord> batch{{"DOCK", h}};
    c.ingest_history("A", batch, t0 + seq * 10000);
    model[id] = EntityState::Received;
  };
  for (trace::TagId id = 1; id <= 30; ++id) receive(id);

  std::mt19937_64 rng(11);
  int valid = 0, illegal = 0, illegal_rejected = 0;
  std::int64_t now = t0 + 10000000;
  while (valid < 500) {
    auto pick = model.begin();
    std::advance(pick, static_cast<long>(rng() % model.size()));
    const auto to = enterprise::kAllStates[rng() % 5];
    ++now;
    if (enterprise::transition_allowed(pick->second, to)) {
      c.transition_entity("A", pick->first, to, now);
      pick->second = to;
      ++valid;
      // a terminal move retires an entity; receive a fresh one so legal moves remain
      if (to == EntityState::Sent || to == EntityState::Returned) receive(1000 + static_cast<trace::TagId>(valid));
    } else {
      ++illegal;
      try {
        c.transition_entity("A", pick->first, to, now);
      } catch (const Error& e) {
        illegal_rejected += e.code() == Errc::IllegalTransition;
      }
    }
  }
  std::size_t total = 0;
  for (const auto& [state, n] : c.enterprise("A").state_counts()) total += n;
  o.require(total == c.enterprise("A").created, "state counts sum to " + std::to_string(total) + ", created " +
                                                    std::to_string(c.enterprise("A").created));
  o.require(total == model.size(), "created count differs from the model");
  o.require(illegal > 0 && illegal_rejected == illegal, "an illegal transition was accepted");
  for (const auto& [id, st] : model)
    o.require(c.enterprise("A").inventory.at(id).state == st, "state of " + std::to_string(id) + " differs");
  return o;
}

Outcome criterion_12() {
  Outcome o;
  for (const char* file : {"/scenarios/demo.json", "/scenarios/handheld_conflict.json"}) {
    const auto s = scenario::load_scenario(kSource + file);
    scenario::World w(s, s.seed);
    for (std::size_t i = 0; i < s.timeline.size(); ++i) w.run_step(i, s.timeline[i]);
    const auto& live = w.corporation();
    const auto path = (std::filesystem::temp_directory_path() / "rfidb2b_acceptance_store.jsonl").string();
    live.save(path);
    const auto loaded = enterprise::Corporation::load(path);
    std::filesystem::remove(path);
    o.require(loaded.export_log() == live.export_log(), std::string(file) + ": persisted log differs");
    const std::int64_t end = w.clock().now_ms() + 1;
    const std::vector<enterprise::Period> periods{
        {s.start_ms, end}, {s.start_ms, (s.start_ms + end) / 2}, {(s.start_ms + end) / 2, end}, {0, end + 86400000}};
    for (const auto& p : periods)
      o.require(loaded.corporate_report(p) == live.corporate_report(p), std::string(file) + ": reloaded report differs");
    o.require(!live.corporate_report(periods[0]).empty(), std::string(file) + ": empty report");
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion_1}, {2, criterion_2},   {3, criterion_3},   {4, criterion_4},
      {5, criterion_5}, {6, criterion_6},   {7, criterion_7},   {8, criterion_8},
      {9, criterion_9}, {10, criterion_10}, {11, criterion_11}, {12, criterion_12}};
  int failed = 0;
  for (const auto& [n, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::cout << (o.ok ? "PASS" : "FAIL") << " criterion " << n;
    if (!o.ok) std::cout << ": " << o.detail;
    std::cout << "\n";
    failed += !o.ok;
  }
  return failed == 0 ? 0 : 1;
}

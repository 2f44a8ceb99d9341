#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfidb2b/control_gate.hpp"
#include "rfidb2b/enterprise.hpp"
#include "rfidb2b/error.hpp"
#include "rfidb2b/modbus_rtu.hpp"
#include "rfidb2b/rfid_sim.hpp"
#include "rfidb2b/sim_clock.hpp"
#include "rfidb2b/tag_codec.hpp"
#include "rfidb2b/traceability.hpp"

namespace rfidb2b::scenario {

/// Error tied to one timeline step (0-based index).
class StepError : public Error {
 public:
  StepError(Errc code, std::size_t step, const std::string& what)
      : Error(code, "step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct EnterpriseDecl {
  std::string id;
  std::string name;
};

struct GateDecl {
  std::string id;
  std::string enterprise;
  gate::GateTier tier = gate::GateTier::LCCG;
  std::uint8_t address = 1;
  std::string department;
  enterprise::Direction direction = enterprise::Direction::In;
  bool receiving = false;
  std::string script;
  std::size_t ports = 1;
};

struct TagDecl {
  std::string id;  // scenario-local name
  std::uint64_t uid = 0;
  std::string enterprise;  // owner recorded in the trace registry
  std::uint16_t template_id = 0;
  std::uint8_t template_version = 0;
  tag::TagRecord record;
  std::size_t capacity = tag::kDefaultCapacity;
  bool commissioned = false;  // programmed before the timeline starts
};

enum class StepKind {
  AdvanceClock,
  CommissionTag,
  TagEntersField,
  TagLeavesField,
  PcCommand,
  ClearAlarms,
  PlaceOrder,
  ConfirmOrder,
  Transition,
  ServerWrite,
  HandheldOpen,
  HandheldRead,
  HandheldWrite,
  HandheldSync,
  Ingest,
  Io,
  Trace,
  Query,
  Report,
  RandomReads,
};

std::string step_name(StepKind kind);

struct Step {
  StepKind kind = StepKind::AdvanceClock;
  std::optional<std::int64_t> at_ms;  // absolute sim time, when given
  nlohmann::json args;
};

struct Scenario {
  std::uint64_t seed = 0;
  std::int64_t start_ms = 0;
  std::vector<tag::TagTemplate> templates;
  std::vector<EnterpriseDecl> enterprises;
  std::vector<GateDecl> gates;
  std::vector<TagDecl> tags;
  std::vector<enterprise::AlarmRule> alarm_rules;
  std::vector<Step> timeline;
};

/// Structural and referential validation. Throws ParseError(SyntaxError) for
/// malformed JSON, StepError(ReferenceError) for undeclared gates, tags,
/// templates, enterprises or sessions, and Error(SemanticError) for an
/// inconsistent world. Template files are resolved against base_dir.
Scenario parse_scenario(std::string_view text, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);

/// Time as integer ms since the epoch or "YYYY-MM-DDTHH:MM:SSZ".
std::int64_t parse_time(const nlohmann::json& j);

struct LogEntry {
  std::int64_t ts = 0;
  std::string source;
  std::string kind;
  nlohmann::json payload;
};

struct EventLog {
  std::vector<LogEntry> entries;

  std::string to_jsonl() const;
};

struct Summary {
  std::size_t steps = 0;
  std::size_t events = 0;
  std::size_t alarms = 0;
  std::size_t conflicts = 0;
  std::size_t errors = 0;
  std::uint64_t unsolicited_bus_bytes = 0;  // slave bytes seen outside master transactions
};

struct Failure {
  std::size_t step = 0;
  Errc cause = Errc::StepFailure;
  std::string message;
};

struct RunResult {
  EventLog log;
  Summary summary;
  std::optional<Failure> failure;
  std::string corporation_log;  // persisted enterprise event log (JSON lines)
  std::vector<enterprise::ReportRow> final_report;  // whole run
  std::map<std::string, std::vector<enterprise::InventoryEntry>> inventory;
};

/// Live world of one run. Exposed so tests can inspect module state.
class World {
 public:
  World(const Scenario& s, std::uint64_t seed);
  ~World();

  World(const World&) = delete;
  World& operator=(const World&) = delete;

  /// Executes one step; throws StepError(StepFailure) wrapping the cause.
  void run_step(std::size_t index, const Step& step);
  void emit_failure(const StepError& e);

  SimClock& clock() noexcept { return clock_; }
  enterprise::Corporation& corporation() noexcept { return corp_; }
  trace::Registry& registry() noexcept { return registry_; }
  rfid::TagWorld& tags() noexcept { return tag_world_; }
  gate::ControlGate& gate(const std::string& id);
  modbus::RtuBus& bus(const std::string& enterprise_id);
  EventLog& log() noexcept { return log_; }
  Summary& summary() noexcept { return summary_; }

 private:
  struct GateRig;
  struct EnterpriseRig;

  void emit(std::string source, std::string kind, nlohmann::json payload);
  void flush_corporation();
  void record_effects(const std::string& gate_id, const std::vector<gate::Effect>& effects);
  void commission(const TagDecl& t);
  const TagDecl& tag_decl(const std::string& id) const;
  std::vector<gate::HistoryRecord> poll_history(GateRig& rig);
  void execute(const Step& step);
  void fire_random_reads(const nlohmann::json& args);

  const Scenario* scenario_;
  SimClock clock_;
  std::mt19937_64 rng_;
  rfid::TagWorld tag_world_;
  trace::Registry registry_;
  enterprise::Corporation corp_;
  std::map<std::string, std::unique_ptr<EnterpriseRig>> enterprise_rigs_;
  std::map<std::string, std::unique_ptr<GateRig>> gate_rigs_;
  std::map<std::string, enterprise::HandheldSession> sessions_;
  std::map<std::string, std::int64_t> order_by_ref_;
  EventLog log_;
  Summary summary_;
  std::size_t corp_seen_ = 0;
  std::size_t corp_alarms_seen_ = 0;
};

/// Runs the timeline on a fresh world. A failing step halts the run; the
/// failure is returned, not thrown.
RunResult run_scenario(const Scenario& s, std::optional<std::uint64_t> seed_override = std::nullopt);

/// Unbiased draw from [0, n) that does not depend on the standard library's
/// distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

}  // namespace rfidb2b::scenario

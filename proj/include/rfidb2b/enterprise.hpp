#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rfidb2b/gate_script.hpp"
#include "rfidb2b/history.hpp"
#include "rfidb2b/tag_codec.hpp"
#include "rfidb2b/traceability.hpp"

namespace rfidb2b::enterprise {

using trace::TagId;

enum class EntityState { Received, Sent, Defective, Repaired, Returned };

inline constexpr EntityState kAllStates[] = {EntityState::Received, EntityState::Sent, EntityState::Defective,
                                             EntityState::Repaired, EntityState::Returned};

std::string state_name(EntityState s);
std::optional<EntityState> parse_state(std::string_view name);

/// received -> {sent, defective}; defective -> {repaired, returned};
/// repaired -> {sent}; sent and returned are terminal.
bool transition_allowed(EntityState from, EntityState to) noexcept;

struct InventoryEntry {
  TagId tag_id = 0;
  std::uint64_t uid = 0;
  std::string enterprise;
  EntityState state = EntityState::Received;
  std::int64_t quantity = 0;
  std::int64_t price = 0;
  std::string location;
  std::int64_t last_update = 0;

  friend bool operator==(const InventoryEntry&, const InventoryEntry&) = default;
};

struct Order {
  std::int64_t order_id = 0;
  std::string client_id;
  std::string supplier_id;
  std::string item;
  std::int64_t quantity = 0;
  std::int64_t placed_at = 0;
  bool confirmed = false;
};

struct Confirmation {
  std::int64_t order_id = 0;
  bool accepted = true;
  tag::TagTemplate tmpl;
  std::int64_t confirmed_at = 0;
};

enum class Direction { In, Out };

struct GateBinding {
  std::string gate_id;
  std::string enterprise;
  std::string department;
  Direction direction = Direction::In;
  bool receiving = false;  // new tags seen here enter the inventory
};

struct SourceRef {
  std::string gate_id;
  std::uint32_t seq = 0;

  auto operator<=>(const SourceRef&) const = default;
};

struct MovementEvent {
  enum class Kind { Arrival, Departure, Transfer };

  Kind kind = Kind::Arrival;
  TagId tag_id = 0;
  std::uint64_t uid = 0;
  std::string gate_id;  // gate of the last sighting
  Direction direction = Direction::In;
  std::string from_department;
  std::string to_department;
  std::int64_t timestamp = 0;  // sim ms of the last sighting
  std::vector<SourceRef> sources;
};

std::string movement_kind_name(MovementEvent::Kind k);

struct GateRecord {
  std::string gate_id;
  gate::HistoryRecord record;
};

struct IngestResult {
  std::vector<MovementEvent> movements;
  std::vector<TagId> created;
  std::size_t duplicates_filtered = 0;
  std::size_t already_consumed = 0;
  std::size_t ignored = 0;  // non-READ records
  std::size_t malformed = 0;
};

struct HandheldOp {
  enum class Kind { Read, Write };

  Kind kind = Kind::Read;
  std::int64_t captured_at = 0;
  tag::TagImage image;  // Read
  TagId tag_id = 0;     // Write
  std::string field;    // Write
  nlohmann::json value;  // Write
};

/// PDA working offline: a local template cache and a queue of operations
/// that are merged on the next sync.
struct HandheldSession {
  std::string session_id;
  std::string enterprise;
  std::string department;
  std::vector<tag::TagTemplate> templates;
  std::vector<HandheldOp> queued;
  std::uint64_t watermark = 0;  // server log position this session has seen

  void capture_read(const tag::TagImage& image, std::int64_t now_ms);
  void queue_write(TagId tag_id, std::string field, nlohmann::json value, std::int64_t now_ms);
  /// Local decode using the session's template cache.
  tag::TagRecord decode(const tag::TagImage& image) const;
};

struct SyncConflict {
  std::size_t op_index = 0;
  TagId tag_id = 0;
  std::string field;
  std::string reason;
};

struct MergeReport {
  std::size_t reads_ingested = 0;
  std::size_t reads_rejected = 0;
  std::size_t writes_applied = 0;
  std::size_t already_synced = 0;
  std::vector<SyncConflict> conflicts;
  std::vector<MovementEvent> movements;
  std::uint64_t watermark = 0;

  bool empty() const noexcept {
    return reads_ingested == 0 && reads_rejected == 0 && writes_applied == 0 && already_synced == 0 &&
           conflicts.empty();
  }
};

struct AlarmRule {
  std::string name;
  std::string event_kind;  // empty matches every kind
  std::string attribute;
  gate::CompareOp op = gate::CompareOp::Eq;
  nlohmann::json value;
  std::string severity = "warning";
  std::string message;  // {key} is replaced by the event payload's key

  /// "attribute op literal", e.g. `state == defective`.
  static AlarmRule parse(std::string name, std::string_view when, std::string severity, std::string message,
                         std::string event_kind = {});
};

struct FiredAlarm {
  std::string rule;
  std::string severity;
  std::string message;
  std::string enterprise;
  std::int64_t ts = 0;
  std::uint64_t event_index = 0;

  friend bool operator==(const FiredAlarm&, const FiredAlarm&) = default;
};

/// One line of the persisted event log.
struct LogEvent {
  std::int64_t ts = 0;
  std::string kind;
  nlohmann::json payload;
};

struct Period {
  std::int64_t start = 0;
  std::int64_t end = 0;  // exclusive
};

struct ReportRow {
  std::string enterprise;
  std::string state;  // a lifecycle state, or "movements"
  std::int64_t count = 0;
  std::int64_t period_start = 0;
  std::int64_t period_end = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

std::string report_csv(const std::vector<ReportRow>& rows);

/// Local-level state of one enterprise, a projection of the event log.
struct EnterpriseStore {
  std::string id;
  std::string name;
  std::map<TagId, InventoryEntry> inventory;
  std::map<std::pair<std::uint16_t, std::uint8_t>, tag::TagTemplate> templates;
  std::map<std::uint64_t, TagId> tag_of_uid;
  std::map<TagId, std::map<std::string, nlohmann::json>> tag_fields;  // server-side field updates
  std::map<TagId, std::uint64_t> last_touch;  // log index of the last event about the tag
  std::vector<MovementEvent> movements;
  std::size_t created = 0;

  const tag::TagTemplate* latest_template(std::uint16_t template_id) const;
  std::map<EntityState, std::size_t> state_counts() const;
};

/// Corporation level: every enterprise of the group plus the B2B exchange
/// between them. All state changes are appended to one event log and
/// applied from it, so replaying the log rebuilds the identical state.
/// Not thread-safe; one owner drives it.
class Corporation {
 public:
  explicit Corporation(std::string id = "CORP");

  const std::string& id() const noexcept { return id_; }

  void add_enterprise(const std::string& enterprise_id, const std::string& name, std::int64_t now_ms = 0);
  void bind_gate(const GateBinding& binding, std::int64_t now_ms = 0);
  void add_alarm_rule(const AlarmRule& rule, std::int64_t now_ms = 0);

  Order place_order(const std::string& client, const std::string& supplier, const std::string& item,
                    std::int64_t quantity, std::int64_t now_ms);
  Confirmation confirm_order(const std::string& supplier, std::int64_t order_id, const tag::TagTemplate& tmpl,
                             std::int64_t now_ms, bool accepted = true);

  /// Filtering, correlation and database update for gate history.
  IngestResult ingest_history(const std::string& enterprise, std::span<const GateRecord> records,
                              std::int64_t now_ms);

  InventoryEntry transition_entity(const std::string& enterprise, TagId tag_id, EntityState to, std::int64_t now_ms);

  /// Server-side update of one tag field (e.g. a PC edit).
  void write_tag_field(const std::string& enterprise, TagId tag_id, const std::string& field,
                       const nlohmann::json& value, std::int64_t now_ms);

  HandheldSession open_handheld(const std::string& enterprise, const std::string& session_id,
                                const std::string& department) const;
  MergeReport handheld_sync(HandheldSession& session, std::int64_t now_ms);

  std::vector<FiredAlarm> evaluate_alarm_rules(const LogEvent& event, std::uint64_t event_index) const;
  std::vector<ReportRow> corporate_report(const Period& period) const;

  const EnterpriseStore& enterprise(const std::string& enterprise_id) const;
  std::vector<std::string> enterprise_ids() const;
  bool has_enterprise(const std::string& enterprise_id) const { return stores_.count(enterprise_id) != 0; }
  const std::map<std::int64_t, Order>& orders() const noexcept { return orders_; }
  const std::map<std::int64_t, Confirmation>& confirmations() const noexcept { return confirmations_; }
  const std::vector<FiredAlarm>& alarms() const noexcept { return alarms_; }
  const std::vector<LogEvent>& log() const noexcept { return log_; }
  const std::map<std::string, GateBinding>& gate_bindings() const noexcept { return bindings_; }
  std::size_t consumed_count() const noexcept { return consumed_.size(); }

  /// Filtering window for duplicate reads of one tag at one gate.
  std::int64_t filter_window_ms = 2000;

  // Persistence: UTF-8 JSON lines {"kind", "payload", "ts"}.
  std::string export_log() const;
  static Corporation replay(std::string_view jsonl, std::string id = "CORP");
  void save(const std::string& path) const;
  static Corporation load(const std::string& path, std::string id = "CORP");

 private:
  void append(std::int64_t ts, std::string kind, nlohmann::json payload);
  void apply(const LogEvent& e, std::uint64_t index);
  EnterpriseStore& store(const std::string& enterprise_id);
  const EnterpriseStore& store(const std::string& enterprise_id) const;

  std::string id_;
  std::map<std::string, EnterpriseStore> stores_;
  std::map<std::string, GateBinding> bindings_;
  std::map<std::int64_t, Order> orders_;
  std::map<std::int64_t, Confirmation> confirmations_;
  std::vector<AlarmRule> rules_;
  std::vector<FiredAlarm> alarms_;
  std::set<std::pair<std::string, std::uint32_t>> consumed_;  // (gate or session, seq)
  std::vector<LogEvent> log_;
};

}  // namespace rfidb2b::enterprise

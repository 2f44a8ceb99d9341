#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rfidb2b/gate_script.hpp"
#include "rfidb2b/gate_tier.hpp"
#include "rfidb2b/history.hpp"
#include "rfidb2b/modbus_rtu.hpp"
#include "rfidb2b/rfid_sim.hpp"
#include "rfidb2b/sim_clock.hpp"
#include "rfidb2b/tag_codec.hpp"

namespace rfidb2b::gate {

// ModBus holding-register map of a gate.
namespace reg {
inline constexpr std::uint16_t kStatus = 0x0000;        // bit0 ready, bit1 alarm active, bits 8-9 tier
inline constexpr std::uint16_t kAlarmFlags = 0x0001;    // write 0 to clear (written value is ANDed in)
inline constexpr std::uint16_t kHistoryCount = 0x0002;  // 0x0002-0x0003, last seq (32-bit)
inline constexpr std::uint16_t kRelays = 0x0004;        // bit n = relay n
inline constexpr std::uint16_t kInputs = 0x0005;        // bit n = input n, read-only
inline constexpr std::uint16_t kMailbox = 0x0010;       // 0x0010-0x001F
inline constexpr std::uint16_t kMailboxCommand = 0x0010;  // write 1 to execute
inline constexpr std::uint16_t kMailboxStatus = 0x0011;
inline constexpr std::uint16_t kMailboxUid = 0x0012;    // 0x0012-0x0015, 64-bit
inline constexpr std::uint16_t kMailboxField = 0x0016;  // field index in template order
inline constexpr std::uint16_t kMailboxValue = 0x0017;  // 0x0017-0x0018, 32-bit
inline constexpr std::uint16_t kMailboxSize = 16;
inline constexpr std::uint16_t kHistoryFrom = 0x0100;   // 0x0100-0x0101, from_seq (32-bit)
inline constexpr std::uint16_t kWindowCount = 0x0102;   // records present in the window
inline constexpr std::uint16_t kWindow = 0x0110;        // kWindowRecords x 16 registers
inline constexpr std::uint16_t kWindowRecords = 4;
inline constexpr std::uint16_t kRegistersPerRecord = HistoryRecord::kEncodedSize / 2;
}  // namespace reg

namespace mailbox_status {
inline constexpr std::uint16_t kIdle = 0x00;
inline constexpr std::uint16_t kDone = 0x01;
inline constexpr std::uint16_t kTagAbsent = 0x02;
inline constexpr std::uint16_t kBadField = 0x03;
inline constexpr std::uint16_t kWriteProtected = 0x04;
inline constexpr std::uint16_t kCapabilityDenied = 0x05;
inline constexpr std::uint16_t kUnknownTemplate = 0x06;
inline constexpr std::uint16_t kBadValue = 0x07;
}  // namespace mailbox_status

namespace alarm_code {
inline constexpr std::uint8_t kUnknownTemplate = 0x01;
inline constexpr std::uint8_t kWriteFailed = 0x02;
}  // namespace alarm_code

struct GateConfig {
  std::string gate_id;
  GateTier tier = GateTier::LCCG;
  std::uint8_t slave_address = 1;
  std::vector<tag::TagTemplate> templates;  // templates the gate can decode
  std::int64_t dedup_window_ms = 2000;      // HCCG only
  std::size_t block_size = tag::kDefaultBlockSize;
};

struct Effect {
  enum class Kind { Recorded, Alarm, TagWrite, Relay, Suppressed };

  Kind kind = Kind::Recorded;
  std::uint32_t seq = 0;            // Recorded
  EventKind event = EventKind::Read;  // Recorded
  std::uint8_t alarm_code = 0;      // Alarm
  std::uint64_t uid = 0;            // TagWrite, Suppressed
  std::string field;                // TagWrite
  int relay = 0;                    // Relay
  bool on = false;                  // Relay

  friend bool operator==(const Effect&, const Effect&) = default;
};

std::string describe(const Effect& e);

struct MailboxCommand {
  std::uint64_t uid = 0;
  std::uint16_t field_index = 0;
  std::uint32_t value = 0;
};

struct CommandResult {
  std::uint16_t status = mailbox_status::kIdle;
  std::vector<Effect> effects;
};

/// One control gate: reader ports, history store, rules, alarms, relays and
/// inputs, reachable from the PC only through its ModBus slave interface.
/// Single-threaded; events are handled in arrival order.
class ControlGate : public modbus::BusDevice {
 public:
  ControlGate(GateConfig config, SimClock& clock, std::vector<rfid::reader::ReaderDevice*> readers);

  ControlGate(const ControlGate&) = delete;
  ControlGate& operator=(const ControlGate&) = delete;

  /// Replaces the rule set; throws on parse or capability errors.
  void load_script(std::string_view text);
  const std::vector<Rule>& rules() const noexcept { return rules_; }

  /// A tag in the field of reader `port` was detected.
  std::vector<Effect> on_tag_event(std::uint64_t uid, std::size_t port = 0);

  std::vector<HistoryRecord> history_query(std::uint32_t from_seq, std::size_t max_count) const {
    return history_.query(from_seq, max_count);
  }
  const HistoryStore& history() const noexcept { return history_; }

  CommandResult apply_pc_command(const MailboxCommand& cmd);
  std::vector<Effect> io_update(std::size_t input, bool level);

  /// Register file refreshed from the current gate state.
  const modbus::RegisterFile& registers();

  void connect(modbus::RtuBus& bus);
  void on_bus_frame(ByteView wire) override;

  const GateConfig& config() const noexcept { return config_; }
  const Capabilities& caps() const noexcept { return caps_; }
  std::uint16_t alarm_flags() const noexcept { return alarm_flags_; }
  std::uint16_t relays() const noexcept { return relays_; }
  std::uint16_t inputs() const noexcept { return inputs_; }

 private:
  const tag::TagTemplate* find_template(std::uint16_t id, std::uint8_t version) const;
  Effect record(EventKind event, std::uint64_t uid, std::uint16_t template_id, std::uint8_t port,
                const std::array<std::uint16_t, tag::kMaxSnapshotWords>& snapshot);
  void raise_alarm(std::uint8_t code, std::uint64_t uid, std::uint16_t template_id, std::uint8_t port,
                   std::vector<Effect>& effects);
  void set_relay(int relay, bool on, std::vector<Effect>& effects);
  /// Read-modify-write of the blocks holding one field slot.
  void write_slot(rfid::reader::ReaderClient& reader, std::uint64_t uid, const tag::FieldSlot& slot,
                  const std::uint8_t* bytes);
  void sync_registers();
  void after_master_write(std::uint16_t first, std::uint16_t count);

  GateConfig config_;
  Capabilities caps_;
  SimClock* clock_;
  std::vector<rfid::reader::ReaderClient> readers_;
  HistoryStore history_;
  std::vector<Rule> rules_;
  std::uint16_t alarm_flags_ = 0;
  std::uint16_t relays_ = 0;
  std::uint16_t inputs_ = 0;
  std::map<std::uint64_t, std::int64_t> last_read_ms_;
  modbus::RegisterFile regs_;
  std::uint32_t window_from_ = 1;
  modbus::RtuBus* bus_ = nullptr;
};

}  // namespace rfidb2b::gate

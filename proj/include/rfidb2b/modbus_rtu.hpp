#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "rfidb2b/bytes.hpp"
#include "rfidb2b/sim_clock.hpp"

namespace rfidb2b::modbus {

inline constexpr std::uint8_t kBroadcast = 0;
inline constexpr std::uint8_t kMaxSlaveAddress = 247;
inline constexpr std::size_t kMaxPayload = 252;
inline constexpr std::size_t kMinFrame = 4;

namespace fc {
inline constexpr std::uint8_t kReadHoldingRegisters = 0x03;
inline constexpr std::uint8_t kWriteSingleRegister = 0x06;
inline constexpr std::uint8_t kWriteMultipleRegisters = 0x10;
}  // namespace fc

namespace exception_code {
inline constexpr std::uint8_t kIllegalFunction = 0x01;
inline constexpr std::uint8_t kIllegalDataAddress = 0x02;
inline constexpr std::uint8_t kIllegalDataValue = 0x03;
}  // namespace exception_code

/// CRC-16/MODBUS: init 0xFFFF, reflected polynomial 0xA001, no final xor.
std::uint16_t crc16(ByteView bytes) noexcept;

struct Frame {
  std::uint8_t address = 0;
  std::uint8_t function = 0;
  Bytes payload;

  bool is_exception() const noexcept { return (function & 0x80) != 0; }
  friend bool operator==(const Frame&, const Frame&) = default;
};

/// addr ++ function ++ payload ++ crc(lo, hi). Throws BadAddress or FrameTooLong.
Bytes encode_frame(std::uint8_t address, std::uint8_t function, ByteView payload);
inline Bytes encode_frame(const Frame& f) { return encode_frame(f.address, f.function, f.payload); }

/// Throws TooShort (< 4 bytes) or CrcMismatch.
Frame decode_frame(ByteView wire);

Frame exception_frame(std::uint8_t address, std::uint8_t function, std::uint8_t code);

enum class Access { ReadOnly, ReadWrite };

/// Holding-register bank with declared ranges. Device code mutates values via
/// set(); the bus side goes through slave_dispatch, which enforces access.
class RegisterFile {
 public:
  /// Called after a master write has been applied, with the written span.
  using WriteHook = std::function<void(std::uint16_t first, std::uint16_t count)>;

  void declare(std::uint16_t first, std::uint16_t count, Access access);
  bool readable(std::uint16_t first, std::uint16_t count) const;
  bool writable(std::uint16_t first, std::uint16_t count) const;

  std::uint16_t get(std::uint16_t address) const;
  void set(std::uint16_t address, std::uint16_t value);

  void on_write(WriteHook hook) { hook_ = std::move(hook); }
  void master_write(std::uint16_t first, std::span<const std::uint16_t> values);

 private:
  bool covered(std::uint16_t first, std::uint16_t count, bool need_write) const;

  std::map<std::uint16_t, Access> declared_;
  std::map<std::uint16_t, std::uint16_t> values_;
  WriteHook hook_;
};

/// Serves one request addressed to `own_address`. Returns nullopt when the
/// slave must stay silent (other address, or broadcast).
std::optional<Frame> slave_dispatch(RegisterFile& regs, std::uint8_t own_address, const Frame& req);

class BusDevice {
 public:
  virtual ~BusDevice() = default;
  /// One complete frame as seen on the line, CRC unchecked.
  virtual void on_bus_frame(ByteView wire) = 0;
};

/// Simulated RS485 multi-drop line. Frames are delimited explicitly instead of
/// by inter-character silence.
class RtuBus {
 public:
  using LineFilter = std::function<void(Bytes&)>;

  void attach(BusDevice& device) { devices_.push_back(&device); }

  void master_send(const Bytes& wire);
  void slave_send(Bytes wire);
  std::optional<Bytes> master_receive();

  std::uint64_t master_bytes() const noexcept { return master_bytes_; }
  std::uint64_t slave_bytes() const noexcept { return slave_bytes_; }
  std::size_t pending_for_master() const noexcept { return inbox_.size(); }

  /// Applied to every slave-to-master frame; used to inject line noise.
  void set_line_filter(LineFilter filter) { filter_ = std::move(filter); }

 private:
  std::vector<BusDevice*> devices_;
  std::vector<Bytes> inbox_;
  std::uint64_t master_bytes_ = 0;
  std::uint64_t slave_bytes_ = 0;
  LineFilter filter_;
};

struct TransactStats {
  int attempts = 0;
  int timeouts = 0;
  int crc_errors = 0;
};

/// Single bus master. Transactions are serialized by construction.
class Master {
 public:
  Master(RtuBus& bus, SimClock& clock) : bus_(bus), clock_(clock) {}

  /// Sends req and waits for the addressed slave's reply, retrying on timeout
  /// or CRC error. Each timed-out attempt costs timeout_ms of simulated time.
  /// Broadcast requests return at once with an empty response frame.
  Frame transact(const Frame& req, std::int64_t timeout_ms, int retries);

  const TransactStats& last_stats() const noexcept { return stats_; }

  // Convenience wrappers; device exceptions surface as Error(DeviceException).
  std::vector<std::uint16_t> read_holding(std::uint8_t slave, std::uint16_t first, std::uint16_t count);
  void write_single(std::uint8_t slave, std::uint16_t address, std::uint16_t value);
  void write_multiple(std::uint8_t slave, std::uint16_t first, std::span<const std::uint16_t> values);

  std::int64_t timeout_ms = 50;
  int retries = 2;

 private:
  Frame checked(const Frame& req);

  RtuBus& bus_;
  SimClock& clock_;
  TransactStats stats_;
};

}  // namespace rfidb2b::modbus

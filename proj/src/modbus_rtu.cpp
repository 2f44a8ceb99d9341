#include "rfidb2b/modbus_rtu.hpp"

#include <array>

#include "rfidb2b/error.hpp"

namespace rfidb2b::modbus {

namespace {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
  std::array<std::uint16_t, 256> table{};
  for (std::uint16_t i = 0; i < 256; ++i) {
    std::uint16_t crc = i;
    for (int bit = 0; bit < 8; ++bit) crc = (crc & 1) ? (crc >> 1) ^ 0xA001 : crc >> 1;
    table[i] = crc;
  }
  return table;
}

constexpr auto kCrcTable = make_crc_table();

}  // namespace

std::uint16_t crc16(ByteView bytes) noexcept {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t b : bytes) crc = (crc >> 8) ^ kCrcTable[(crc ^ b) & 0xFF];
  return crc;
}

Bytes encode_frame(std::uint8_t address, std::uint8_t function, ByteView payload) {
  if (address > kMaxSlaveAddress)
    throw Error(Errc::BadAddress, "slave address " + std::to_string(address) + " outside 0..247");
  if (payload.size() > kMaxPayload)
    throw Error(Errc::FrameTooLong, "payload of " + std::to_string(payload.size()) +
                                        " bytes exceeds 252");
  Bytes wire;
  wire.reserve(payload.size() + 4);
  wire.push_back(address);
  wire.push_back(function);
  wire.insert(wire.end(), payload.begin(), payload.end());
  const std::uint16_t crc = crc16(wire);
  wire.push_back(static_cast<std::uint8_t>(crc & 0xFF));
  wire.push_back(static_cast<std::uint8_t>(crc >> 8));
  return wire;
}

Frame decode_frame(ByteView wire) {
  if (wire.size() < kMinFrame) throw Error(Errc::TooShort, "frame shorter than 4 bytes");
  if (wire.size() > kMaxPayload + 4) throw Error(Errc::FrameTooLong, "frame longer than 256 bytes");
  const std::size_t body = wire.size() - 2;
  const std::uint16_t received = static_cast<std::uint16_t>(wire[body] | (wire[body + 1] << 8));
  if (crc16(wire.first(body)) != received) throw Error(Errc::CrcMismatch, "CRC mismatch");
  return Frame{wire[0], wire[1], Bytes(wire.begin() + 2, wire.begin() + body)};
}

Frame exception_frame(std::uint8_t address, std::uint8_t function, std::uint8_t code) {
  return Frame{address, static_cast<std::uint8_t>(function | 0x80), Bytes{code}};
}

void RegisterFile::declare(std::uint16_t first, std::uint16_t count, Access access) {
  for (std::uint32_t a = first; a < std::uint32_t{first} + count; ++a) {
    declared_[static_cast<std::uint16_t>(a)] = access;
    values_.try_emplace(static_cast<std::uint16_t>(a), 0);
  }
}

bool RegisterFile::covered(std::uint16_t first, std::uint16_t count, bool need_write) const {
  if (count == 0 || std::uint32_t{first} + count > 0x10000) return false;
  for (std::uint32_t a = first; a < std::uint32_t{first} + count; ++a) {
    auto it = declared_.find(static_cast<std::uint16_t>(a));
    if (it == declared_.end()) return false;
    if (need_write && it->second != Access::ReadWrite) return false;
  }
  return true;
}

bool RegisterFile::readable(std::uint16_t first, std::uint16_t count) const {
  return covered(first, count, false);
}

bool RegisterFile::writable(std::uint16_t first, std::uint16_t count) const {
  return covered(first, count, true);
}

std::uint16_t RegisterFile::get(std::uint16_t address) const {
  auto it = values_.find(address);
  if (it == values_.end()) throw Error(Errc::RangeError, "undeclared register " + std::to_string(address));
  return it->second;
}

void RegisterFile::set(std::uint16_t address, std::uint16_t value) {
  auto it = values_.find(address);
  if (it == values_.end()) throw Error(Errc::RangeError, "undeclared register " + std::to_string(address));
  it->second = value;
}

void RegisterFile::master_write(std::uint16_t first, std::span<const std::uint16_t> values) {
  for (std::size_t i = 0; i < values.size(); ++i) values_[static_cast<std::uint16_t>(first + i)] = values[i];
  if (hook_) hook_(first, static_cast<std::uint16_t>(values.size()));
}

std::optional<Frame> slave_dispatch(RegisterFile& regs, std::uint8_t own_address, const Frame& req) {
  const bool broadcast = req.address == kBroadcast;
  if (!broadcast && req.address != own_address) return std::nullopt;

  std::optional<Frame> reply;
  auto fail = [&](std::uint8_t code) { reply = exception_frame(own_address, req.function, code); };
  const Bytes& p = req.payload;

  switch (req.function) {
    case fc::kReadHoldingRegisters: {
      if (broadcast) return std::nullopt;
      if (p.size() != 4) {
        fail(exception_code::kIllegalDataValue);
        break;
      }
      const std::uint16_t first = get_be16(&p[0]);
      const std::uint16_t count = get_be16(&p[2]);
      if (count < 1 || count > 125) {
        fail(exception_code::kIllegalDataValue);
        break;
      }
      if (!regs.readable(first, count)) {
        fail(exception_code::kIllegalDataAddress);
        break;
      }
      Frame f{own_address, req.function, {}};
      f.payload.push_back(static_cast<std::uint8_t>(count * 2));
      for (std::uint16_t i = 0; i < count; ++i) append_be16(f.payload, regs.get(first + i));
      reply = std::move(f);
      break;
    }
    case fc::kWriteSingleRegister: {
      if (p.size() != 4) {
        fail(exception_code::kIllegalDataValue);
        break;
      }
      const std::uint16_t address = get_be16(&p[0]);
      if (!regs.writable(address, 1)) {
        fail(exception_code::kIllegalDataAddress);
        break;
      }
      const std::uint16_t value = get_be16(&p[2]);
      regs.master_write(address, std::span<const std::uint16_t>(&value, 1));
      reply = Frame{own_address, req.function, p};
      break;
    }
    case fc::kWriteMultipleRegisters: {
      if (p.size() < 5) {
        fail(exception_code::kIllegalDataValue);
        break;
      }
      const std::uint16_t first = get_be16(&p[0]);
      const std::uint16_t count = get_be16(&p[2]);
      const std::uint8_t byte_count = p[4];
      if (count < 1 || count > 123 || byte_count != count * 2 || p.size() != 5u + byte_count) {
        fail(exception_code::kIllegalDataValue);
        break;
      }
      if (!regs.writable(first, count)) {
        fail(exception_code::kIllegalDataAddress);
        break;
      }
      std::vector<std::uint16_t> values(count);
      for (std::uint16_t i = 0; i < count; ++i) values[i] = get_be16(&p[5 + 2 * i]);
      regs.master_write(first, values);
      reply = Frame{own_address, req.function, Bytes(p.begin(), p.begin() + 4)};
      break;
    }
    default:
      fail(exception_code::kIllegalFunction);
      break;
  }
  if (broadcast) return std::nullopt;
  return reply;
}

void RtuBus::master_send(const Bytes& wire) {
  master_bytes_ += wire.size();
  for (BusDevice* d : devices_) d->on_bus_frame(wire);
}

void RtuBus::slave_send(Bytes wire) {
  slave_bytes_ += wire.size();
  if (filter_) filter_(wire);
  inbox_.push_back(std::move(wire));
}

std::optional<Bytes> RtuBus::master_receive() {
  if (inbox_.empty()) return std::nullopt;
  Bytes front = std::move(inbox_.front());
  inbox_.erase(inbox_.begin());
  return front;
}

Frame Master::transact(const Frame& req, std::int64_t timeout, int max_retries) {
  const Bytes wire = encode_frame(req);
  stats_ = {};
  // Stale bytes from an earlier exchange must not be mistaken for this reply.
  while (bus_.master_receive()) {
  }
  if (req.address == kBroadcast) {
    stats_.attempts = 1;
    bus_.master_send(wire);
    while (bus_.master_receive()) {
    }
    return Frame{kBroadcast, req.function, {}};
  }

  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    ++stats_.attempts;
    bus_.master_send(wire);
    bool corrupted = false;
    while (auto rx = bus_.master_receive()) {
      try {
        Frame f = decode_frame(*rx);
        if (f.address != req.address) continue;
        while (bus_.master_receive()) {
        }
        return f;
      } catch (const Error&) {
        corrupted = true;
      }
    }
    if (corrupted) {
      ++stats_.crc_errors;
    } else {
      ++stats_.timeouts;
      clock_.advance(timeout);
    }
  }
  if (stats_.crc_errors == stats_.attempts)
    throw Error(Errc::CrcMismatch, "slave " + std::to_string(req.address) + ": corrupted reply on every attempt");
  throw Error(Errc::Timeout, "slave " + std::to_string(req.address) + ": no reply after " +
                                 std::to_string(stats_.attempts) + " attempts");
}

Frame Master::checked(const Frame& req) {
  Frame reply = transact(req, timeout_ms, retries);
  if (reply.is_exception()) {
    const int code = reply.payload.empty() ? 0 : reply.payload[0];
    throw Error(Errc::DeviceException, "slave " + std::to_string(req.address) + " exception " +
                                           std::to_string(code) + " for function " +
                                           std::to_string(req.function));
  }
  return reply;
}

std::vector<std::uint16_t> Master::read_holding(std::uint8_t slave, std::uint16_t first, std::uint16_t count) {
  Frame req{slave, fc::kReadHoldingRegisters, {}};
  append_be16(req.payload, first);
  append_be16(req.payload, count);
  const Frame reply = checked(req);
  if (reply.payload.empty() || reply.payload[0] != count * 2 || reply.payload.size() != 1u + count * 2)
    throw Error(Errc::DeviceException, "malformed read response");
  std::vector<std::uint16_t> values(count);
  for (std::uint16_t i = 0; i < count; ++i) values[i] = get_be16(&reply.payload[1 + 2 * i]);
  return values;
}

void Master::write_single(std::uint8_t slave, std::uint16_t address, std::uint16_t value) {
  Frame req{slave, fc::kWriteSingleRegister, {}};
  append_be16(req.payload, address);
  append_be16(req.payload, value);
  if (slave == kBroadcast) {
    transact(req, timeout_ms, retries);
    return;
  }
  checked(req);
}

void Master::write_multiple(std::uint8_t slave, std::uint16_t first, std::span<const std::uint16_t> values) {
  Frame req{slave, fc::kWriteMultipleRegisters, {}};
  append_be16(req.payload, first);
  append_be16(req.payload, static_cast<std::uint16_t>(values.size()));
  req.payload.push_back(static_cast<std::uint8_t>(values.size() * 2));
  for (auto v : values) append_be16(req.payload, v);
  if (slave == kBroadcast) {
    transact(req, timeout_ms, retries);
    return;
  }
  checked(req);
}

}  // namespace rfidb2b::modbus

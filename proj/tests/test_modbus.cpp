#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "rfidb2b/error.hpp"
#include "rfidb2b/modbus_rtu.hpp"
#include "support/oracles.hpp"

using namespace rfidb2b;
using namespace rfidb2b::modbus;

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

/// Minimal slave around a register file.
struct TestSlave : BusDevice {
  TestSlave(RtuBus& b, std::uint8_t a) : bus(b), address(a) {
    regs.declare(0, 8, Access::ReadOnly);
    regs.declare(0x100, 16, Access::ReadWrite);
    for (std::uint16_t i = 0; i < 8; ++i) regs.set(i, static_cast<std::uint16_t>(0x1000 + i));
    b.attach(*this);
  }
  void on_bus_frame(ByteView wire) override {
    ++frames_seen;
    Frame req;
    try {
      req = decode_frame(wire);
    } catch (const Error&) {
      return;
    }
    if (auto reply = slave_dispatch(regs, address, req)) bus.slave_send(encode_frame(*reply));
  }
  RtuBus& bus;
  std::uint8_t address;
  RegisterFile regs;
  int frames_seen = 0;
};

}  // namespace

TEST_CASE("crc16 reference vectors") {
  const std::string check = "123456789";
  const Bytes ascii(check.begin(), check.end());
  CHECK(oracle::crc16_bitwise(ascii) == 0x4B37);
  CHECK(crc16(ascii) == 0x4B37);
  const Bytes req{0x11, 0x03, 0x00, 0x6B, 0x00, 0x03};
  CHECK(oracle::crc16_bitwise(req) == 0x8776);
  CHECK(crc16(req) == 0x8776);
  CHECK(crc16(Bytes{}) == 0xFFFF);
}

TEST_CASE("property: table crc equals the bitwise oracle") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5000; ++i) {
    Bytes b(rng() % 300);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    REQUIRE(crc16(b) == oracle::crc16_bitwise(b));
  }
}

TEST_CASE("frame layout puts the crc low byte first") {
  const Bytes wire = encode_frame(0x11, 0x03, Bytes{0x00, 0x6B, 0x00, 0x03});
  CHECK(wire == Bytes{0x11, 0x03, 0x00, 0x6B, 0x00, 0x03, 0x76, 0x87});
  const Frame f = decode_frame(wire);
  CHECK(f.address == 0x11);
  CHECK(f.function == 0x03);
  CHECK(f.payload == Bytes{0x00, 0x6B, 0x00, 0x03});
}

TEST_CASE("frame errors") {
  CHECK(code_of([] { encode_frame(248, 3, Bytes{}); }) == Errc::BadAddress);
  CHECK(code_of([] { encode_frame(1, 3, Bytes(253, 0)); }) == Errc::FrameTooLong);
  CHECK(encode_frame(1, 3, Bytes(252, 0)).size() == 256);
  CHECK(code_of([] { decode_frame(Bytes{1, 2, 3}); }) == Errc::TooShort);
  Bytes w = encode_frame(1, 3, Bytes{0, 0, 0, 1});
  w.back() ^= 0x01;
  CHECK(code_of([&] { decode_frame(w); }) == Errc::CrcMismatch);
}

TEST_CASE("property: single-bit corruption is always detected") {
  const Bytes wire = encode_frame(0x01, 0x03, Bytes{0x00, 0x02, 0x00, 0x02});
  REQUIRE(wire.size() == 8);
  for (std::size_t bit = 0; bit < 64; ++bit) {
    Bytes w = wire;
    w[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    REQUIRE(code_of([&] { decode_frame(w); }) == Errc::CrcMismatch);
  }
}

TEST_CASE("property: random frames round-trip") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    Frame f;
    f.address = static_cast<std::uint8_t>(rng() % 248);
    f.function = static_cast<std::uint8_t>(rng());
    f.payload.resize(rng() % (kMaxPayload + 1));
    for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng());
    REQUIRE(decode_frame(encode_frame(f)) == f);
  }
}

TEST_CASE("slave dispatch") {
  RegisterFile regs;
  regs.declare(0, 4, Access::ReadOnly);
  regs.declare(0x10, 4, Access::ReadWrite);
  regs.set(1, 0xBEEF);

  auto reply = slave_dispatch(regs, 5, {5, fc::kReadHoldingRegisters, {0, 1, 0, 1}});
  REQUIRE(reply);
  CHECK(reply->payload == Bytes{2, 0xBE, 0xEF});

  CHECK_FALSE(slave_dispatch(regs, 5, {6, fc::kReadHoldingRegisters, {0, 1, 0, 1}}));

  reply = slave_dispatch(regs, 5, {5, fc::kWriteSingleRegister, {0, 1, 0, 1}});
  REQUIRE(reply);
  CHECK(reply->function == (fc::kWriteSingleRegister | 0x80));
  CHECK(reply->payload == Bytes{exception_code::kIllegalDataAddress});

  reply = slave_dispatch(regs, 5, {5, 0x2B, {}});
  REQUIRE(reply);
  CHECK(reply->function == 0xAB);
  CHECK(reply->payload == Bytes{exception_code::kIllegalFunction});

  reply = slave_dispatch(regs, 5, {5, fc::kReadHoldingRegisters, {0, 3, 0, 2}});
  REQUIRE(reply);
  CHECK(reply->payload == Bytes{exception_code::kIllegalDataAddress});

  reply = slave_dispatch(regs, 5, {5, fc::kWriteMultipleRegisters, {0, 0x10, 0, 2, 4, 0, 7, 0, 9}});
  REQUIRE(reply);
  CHECK_FALSE(reply->is_exception());
  CHECK(regs.get(0x10) == 7);
  CHECK(regs.get(0x11) == 9);

  // broadcast writes apply silently
  CHECK_FALSE(slave_dispatch(regs, 5, {0, fc::kWriteSingleRegister, {0, 0x12, 0, 3}}));
  CHECK(regs.get(0x12) == 3);
}

TEST_CASE("property: exception responses echo the function with the high bit set") {
  RegisterFile regs;
  regs.declare(0, 4, Access::ReadOnly);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 3000; ++i) {
    Frame req{1, static_cast<std::uint8_t>(rng() % 0x80), {}};
    req.payload.resize(rng() % 12);
    for (auto& b : req.payload) b = static_cast<std::uint8_t>(rng() % 8);
    auto reply = slave_dispatch(regs, 1, req);
    REQUIRE(reply);
    if (reply->is_exception()) REQUIRE(reply->function == (req.function | 0x80));
    else REQUIRE(reply->function == req.function);
  }
}

TEST_CASE("master transactions") {
  RtuBus bus;
  SimClock clock(0);
  TestSlave a(bus, 1), b(bus, 2);
  Master m(bus, clock);
  CHECK(m.read_holding(2, 0, 3) == std::vector<std::uint16_t>{0x1000, 0x1001, 0x1002});
  m.write_single(1, 0x100, 42);
  CHECK(a.regs.get(0x100) == 42);
  const std::uint16_t vals[] = {1, 2, 3};
  m.write_multiple(2, 0x104, vals);
  CHECK(b.regs.get(0x106) == 3);
  CHECK(code_of([&] { m.write_single(1, 0, 1); }) == Errc::DeviceException);
  CHECK(clock.now_ms() == 0);

  // a missing slave costs one timeout per attempt
  m.timeout_ms = 30;
  m.retries = 2;
  CHECK(code_of([&] { m.read_holding(9, 0, 1); }) == Errc::Timeout);
  CHECK(m.last_stats().attempts == 3);
  CHECK(clock.now_ms() == 90);
}

TEST_CASE("master retries after a corrupted reply") {
  RtuBus bus;
  SimClock clock(0);
  TestSlave s(bus, 1);
  Master m(bus, clock);
  int corrupt = 1;
  bus.set_line_filter([&](Bytes& w) {
    if (corrupt-- > 0) w[2] ^= 0x40;
  });
  CHECK(m.read_holding(1, 0, 1) == std::vector<std::uint16_t>{0x1000});
  CHECK(m.last_stats().attempts == 2);
  CHECK(m.last_stats().crc_errors == 1);

  corrupt = 100;
  CHECK(code_of([&] { m.read_holding(1, 0, 1); }) == Errc::CrcMismatch);
}

TEST_CASE("slaves only speak when addressed") {
  RtuBus bus;
  SimClock clock(0);
  TestSlave a(bus, 1), b(bus, 2);
  Master m(bus, clock);
  std::uint64_t master_at_last_reply = 0;
  std::uint64_t unsolicited = 0;
  bus.set_line_filter([&](Bytes& w) {
    if (bus.master_bytes() == master_at_last_reply) unsolicited += w.size();
    master_at_last_reply = bus.master_bytes();
  });
  std::mt19937_64 rng(8);
  for (int i = 0; i < 500; ++i) {
    const auto slave = static_cast<std::uint8_t>(rng() % 3);  // 0 is broadcast
    if (slave == 0) {
      m.transact({0, fc::kWriteSingleRegister, {0x01, 0x00, 0, 1}}, 10, 0);
    } else {
      m.read_holding(slave, static_cast<std::uint16_t>(rng() % 4), 2);
    }
    CHECK(bus.pending_for_master() == 0);
  }
  CHECK(unsolicited == 0);
  CHECK(a.regs.get(0x100) == 1);
}

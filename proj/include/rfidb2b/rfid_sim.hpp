#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rfidb2b/bytes.hpp"
#include "rfidb2b/tag_codec.hpp"

namespace rfidb2b::rfid {

/// Passive HF tag: user memory plus a write-protect bit per block.
struct SimTag {
  tag::TagImage image;
  std::vector<bool> protected_blocks;
};

/// Every tag that exists in one simulated world, keyed by UID.
class TagWorld {
 public:
  SimTag& create_tag(std::uint64_t uid, std::size_t capacity = tag::kDefaultCapacity,
                     std::size_t block_size = tag::kDefaultBlockSize);

  bool contains(std::uint64_t uid) const { return tags_.count(uid) != 0; }
  SimTag& tag(std::uint64_t uid);
  const SimTag& tag(std::uint64_t uid) const;
  std::size_t size() const noexcept { return tags_.size(); }

  /// Factory programming of a whole image (commissioning); ignores protection.
  void commission(const tag::TagImage& image);

 private:
  std::map<std::uint64_t, SimTag> tags_;
};

/// The RF field of one reader antenna. Anticollision is ideal: every present
/// tag answers, in ascending UID order.
class ReaderField {
 public:
  ReaderField(TagWorld& world, std::string reader_id) : world_(&world), reader_id_(std::move(reader_id)) {}

  const std::string& reader_id() const noexcept { return reader_id_; }

  void enter(std::uint64_t uid);
  void leave(std::uint64_t uid);
  bool present(std::uint64_t uid) const { return present_.count(uid) != 0; }

  std::vector<std::uint64_t> inventory() const { return {present_.begin(), present_.end()}; }

  Bytes read_blocks(std::uint64_t uid, std::size_t start, std::size_t count) const;
  /// All-or-nothing; data length must be a multiple of the block size.
  void write_blocks(std::uint64_t uid, std::size_t start, ByteView data);
  void set_protected(std::uint64_t uid, std::size_t block, bool on);

  std::size_t block_size(std::uint64_t uid) const;

 private:
  const SimTag& present_tag(std::uint64_t uid) const;

  TagWorld* world_;
  std::string reader_id_;
  std::set<std::uint64_t> present_;
};

// Reader serial protocol: SOF 0xAA, len, cmd, payload, CRC-16 (lo, hi) over len..payload.
namespace reader {

inline constexpr std::uint8_t kSof = 0xAA;
inline constexpr std::size_t kMaxLength = 250;

inline constexpr std::uint8_t kCmdInventory = 0x01;
inline constexpr std::uint8_t kCmdRead = 0x02;
inline constexpr std::uint8_t kCmdWrite = 0x03;

inline constexpr std::uint8_t kStatusBadCommand = 0x01;
inline constexpr std::uint8_t kStatusTagAbsent = 0x02;
inline constexpr std::uint8_t kStatusRange = 0x03;
inline constexpr std::uint8_t kStatusProtected = 0x04;

/// UIDs carried by one inventory response.
inline constexpr std::size_t kMaxInventoryUids = (kMaxLength - 2) / 8;

struct ReaderFrame {
  std::uint8_t cmd = 0;
  Bytes payload;

  friend bool operator==(const ReaderFrame&, const ReaderFrame&) = default;
};

Bytes encode_reader_frame(std::uint8_t cmd, ByteView payload);
/// nullopt for anything that is not one intact frame.
std::optional<ReaderFrame> decode_reader_frame(ByteView wire);

/// Device-side handling of one received frame. An empty result means the
/// device stays silent (corrupted or unframed input).
Bytes handle_reader_frame(ReaderField& field, ByteView wire);

/// Point-to-point serial link between a gate (host) and its reader.
struct SerialLine {
  std::deque<Bytes> to_device;
  std::deque<Bytes> to_host;
};

class ReaderDevice {
 public:
  explicit ReaderDevice(ReaderField& field) : field_(&field) {}

  /// Answers every frame waiting on the line.
  void service(SerialLine& line);
  ReaderField& field() noexcept { return *field_; }

 private:
  ReaderField* field_;
};

/// Host-side driver; splits large transfers into frame-sized chunks and maps
/// status frames back to Errc values.
class ReaderClient {
 public:
  explicit ReaderClient(ReaderDevice& device) : device_(&device) {}

  std::vector<std::uint64_t> inventory();
  Bytes read_blocks(std::uint64_t uid, std::size_t start, std::size_t count, std::size_t block_size);
  void write_blocks(std::uint64_t uid, std::size_t start, ByteView data, std::size_t block_size);

  SerialLine& line() noexcept { return line_; }
  ReaderDevice& device() noexcept { return *device_; }

 private:
  ReaderFrame exchange(std::uint8_t cmd, const Bytes& payload);

  ReaderDevice* device_;
  SerialLine line_;
};

}  // namespace reader
}  // namespace rfidb2b::rfid

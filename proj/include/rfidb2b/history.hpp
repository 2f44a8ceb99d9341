#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rfidb2b/bytes.hpp"
#include "rfidb2b/tag_codec.hpp"

namespace rfidb2b::gate {

enum class EventKind : std::uint8_t { Read = 1, Write = 2, Alarm = 3, Input = 4 };

std::string event_name(EventKind kind);

/// Fixed 32-byte history entry, big-endian on the wire:
///   0 seq(4) 4 timestamp(4) 8 uid(8) 16 template_id(2) 18 event(1)
///   19 reader_port(1) 20 snapshot(6 x 2)
/// ALARM records carry the alarm code in snapshot[0]; WRITE records carry the
/// field index and the first four slot bytes; INPUT records carry input index and level.
struct HistoryRecord {
  static constexpr std::size_t kEncodedSize = 32;

  std::uint32_t seq = 0;
  std::uint32_t timestamp = 0;  // simulated epoch seconds
  std::uint8_t reader_port = 0;
  std::uint64_t uid = 0;
  std::uint16_t template_id = 0;
  EventKind event = EventKind::Read;
  std::array<std::uint16_t, tag::kMaxSnapshotWords> snapshot{};

  std::array<std::uint8_t, kEncodedSize> encode() const;
  static HistoryRecord decode(ByteView bytes);

  friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

/// Append-and-wrap log with monotone sequence numbers starting at 1. Once
/// full, each append overwrites the oldest record.
class HistoryStore {
 public:
  explicit HistoryStore(std::size_t capacity);

  /// Assigns the next sequence number and returns the stored record.
  const HistoryRecord& append(HistoryRecord record);

  /// Records with seq >= from_seq, ascending, at most max_count.
  std::vector<HistoryRecord> query(std::uint32_t from_seq, std::size_t max_count) const;

  std::uint32_t last_seq() const noexcept { return last_seq_; }
  std::uint32_t oldest_seq() const noexcept;
  std::size_t size() const noexcept { return size_; }
  std::size_t capacity() const noexcept { return ring_.size(); }

 private:
  std::vector<HistoryRecord> ring_;
  std::size_t size_ = 0;
  std::uint32_t last_seq_ = 0;
};

}  // namespace rfidb2b::gate

#include "rfidb2b/history.hpp"

#include <algorithm>

#include "rfidb2b/error.hpp"

namespace rfidb2b::gate {

std::string event_name(EventKind kind) {
  switch (kind) {
    case EventKind::Read: return "READ";
    case EventKind::Write: return "WRITE";
    case EventKind::Alarm: return "ALARM";
    case EventKind::Input: return "INPUT";
  }
  return "?";
}

std::array<std::uint8_t, HistoryRecord::kEncodedSize> HistoryRecord::encode() const {
  std::array<std::uint8_t, kEncodedSize> out{};
  put_be32(&out[0], seq);
  put_be32(&out[4], timestamp);
  put_be64(&out[8], uid);
  put_be16(&out[16], template_id);
  out[18] = static_cast<std::uint8_t>(event);
  out[19] = reader_port;
  for (std::size_t i = 0; i < snapshot.size(); ++i) put_be16(&out[20 + 2 * i], snapshot[i]);
  return out;
}

HistoryRecord HistoryRecord::decode(ByteView bytes) {
  if (bytes.size() < kEncodedSize) throw Error(Errc::TruncatedImage, "history record shorter than 32 bytes");
  HistoryRecord r;
  r.seq = get_be32(&bytes[0]);
  r.timestamp = get_be32(&bytes[4]);
  r.uid = get_be64(&bytes[8]);
  r.template_id = get_be16(&bytes[16]);
  if (bytes[18] < 1 || bytes[18] > 4) throw Error(Errc::DecodeFailure, "unknown history event kind");
  r.event = static_cast<EventKind>(bytes[18]);
  r.reader_port = bytes[19];
  for (std::size_t i = 0; i < r.snapshot.size(); ++i) r.snapshot[i] = get_be16(&bytes[20 + 2 * i]);
  return r;
}

HistoryStore::HistoryStore(std::size_t capacity) : ring_(capacity) {
  if (capacity == 0) throw Error(Errc::RangeError, "history capacity must be positive");
}

std::uint32_t HistoryStore::oldest_seq() const noexcept {
  return size_ == 0 ? 0 : last_seq_ - static_cast<std::uint32_t>(size_) + 1;
}

const HistoryRecord& HistoryStore::append(HistoryRecord record) {
  record.seq = ++last_seq_;
  HistoryRecord& slot = ring_[(record.seq - 1) % ring_.size()];
  slot = record;
  size_ = std::min(size_ + 1, ring_.size());
  return slot;
}

std::vector<HistoryRecord> HistoryStore::query(std::uint32_t from_seq, std::size_t max_count) const {
  std::vector<HistoryRecord> out;
  if (size_ == 0 || max_count == 0 || from_seq > last_seq_) return out;
  const std::uint32_t start = std::max(from_seq, oldest_seq());
  const std::size_t n = std::min<std::size_t>(max_count, last_seq_ - start + 1);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ring_[(start + i - 1) % ring_.size()]);
  return out;
}

}  // namespace rfidb2b::gate

#include "rfidb2b/batch.hpp"

#include <exception>

#include "rfidb2b/modbus_rtu.hpp"

namespace rfidb2b::batch {

namespace {

/// Runs body(i) for every index in parallel and rethrows the exception of the
/// lowest failing index, which is the one a serial loop would have raised.
template <typename Body>
void parallel_for(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

bool frame_ok(const Bytes& wire) {
  if (wire.size() < 4) return false;
  const std::size_t n = wire.size() - 2;
  const std::uint16_t crc = modbus::crc16(ByteView(wire.data(), n));
  return wire[n] == (crc & 0xFF) && wire[n + 1] == (crc >> 8);
}

OriginResult one_origin(const std::map<trace::TagId, trace::TraceRecord>& records, trace::TagId root,
                        std::size_t max_depth) {
  OriginResult r;
  try {
    r.report = trace::origin_report(trace::trace(records, root, max_depth));
  } catch (const Error& e) {
    r.error = e.code();
  }
  return r;
}

}  // namespace

std::vector<tag::TagImage> encode_records_serial(const tag::TagTemplate& t, std::span<const tag::TagRecord> records,
                                                 std::uint64_t first_uid, std::size_t capacity) {
  std::vector<tag::TagImage> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out.push_back(tag::encode_record(t, records[i], first_uid + i, capacity));
  return out;
}

std::vector<tag::TagImage> encode_records(const tag::TagTemplate& t, std::span<const tag::TagRecord> records,
                                          std::uint64_t first_uid, std::size_t capacity) {
  std::vector<tag::TagImage> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) { out[i] = tag::encode_record(t, records[i], first_uid + i, capacity); });
  return out;
}

std::vector<tag::TagRecord> decode_records_serial(const tag::TagTemplate& t, std::span<const tag::TagImage> images) {
  std::vector<tag::TagRecord> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(tag::decode_record(t, img));
  return out;
}

std::vector<tag::TagRecord> decode_records(const tag::TagTemplate& t, std::span<const tag::TagImage> images) {
  std::vector<tag::TagRecord> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) { out[i] = tag::decode_record(t, images[i]); });
  return out;
}

std::vector<std::uint8_t> verify_frames_serial(std::span<const Bytes> frames) {
  std::vector<std::uint8_t> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(frame_ok(f) ? 1 : 0);
  return out;
}

std::vector<std::uint8_t> verify_frames(std::span<const Bytes> frames) {
  std::vector<std::uint8_t> out(frames.size());
  parallel_for(frames.size(), [&](std::size_t i) { out[i] = frame_ok(frames[i]) ? 1 : 0; });
  return out;
}

std::vector<OriginResult> origin_reports_serial(const std::map<trace::TagId, trace::TraceRecord>& records,
                                                std::span<const trace::TagId> roots, std::size_t max_depth) {
  std::vector<OriginResult> out;
  out.reserve(roots.size());
  for (auto root : roots) out.push_back(one_origin(records, root, max_depth));
  return out;
}

std::vector<OriginResult> origin_reports(const std::map<trace::TagId, trace::TraceRecord>& records,
                                         std::span<const trace::TagId> roots, std::size_t max_depth) {
  std::vector<OriginResult> out(roots.size());
  parallel_for(roots.size(), [&](std::size_t i) { out[i] = one_origin(records, roots[i], max_depth); });
  return out;
}

}  // namespace rfidb2b::batch

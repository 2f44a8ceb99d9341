#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "rfidb2b/bytes.hpp"
#include "rfidb2b/error.hpp"
#include "rfidb2b/tag_codec.hpp"
#include "rfidb2b/traceability.hpp"

// Bulk kernels for commissioning runs, history audits and corporate
// provenance sweeps. Each has a serial reference; the parallel versions use
// OpenMP and give identical results, including which error is reported.
namespace rfidb2b::batch {

/// Record i is written to uid first_uid + i.
std::vector<tag::TagImage> encode_records_serial(const tag::TagTemplate& t, std::span<const tag::TagRecord> records,
                                                 std::uint64_t first_uid, std::size_t capacity = tag::kDefaultCapacity);
std::vector<tag::TagImage> encode_records(const tag::TagTemplate& t, std::span<const tag::TagRecord> records,
                                          std::uint64_t first_uid, std::size_t capacity = tag::kDefaultCapacity);

std::vector<tag::TagRecord> decode_records_serial(const tag::TagTemplate& t, std::span<const tag::TagImage> images);
std::vector<tag::TagRecord> decode_records(const tag::TagTemplate& t, std::span<const tag::TagImage> images);

/// 1 where the wire frame is long enough and its CRC checks, else 0.
std::vector<std::uint8_t> verify_frames_serial(std::span<const Bytes> frames);
std::vector<std::uint8_t> verify_frames(std::span<const Bytes> frames);

struct OriginResult {
  std::optional<trace::OriginReport> report;
  std::optional<Errc> error;  // UnknownTagId or CycleDetected
};

std::vector<OriginResult> origin_reports_serial(const std::map<trace::TagId, trace::TraceRecord>& records,
                                                std::span<const trace::TagId> roots,
                                                std::size_t max_depth = trace::kDefaultMaxDepth);
std::vector<OriginResult> origin_reports(const std::map<trace::TagId, trace::TraceRecord>& records,
                                         std::span<const trace::TagId> roots,
                                         std::size_t max_depth = trace::kDefaultMaxDepth);

}  // namespace rfidb2b::batch

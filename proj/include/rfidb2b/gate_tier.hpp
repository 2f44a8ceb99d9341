#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace rfidb2b::gate {

enum class GateTier { LCCG, MCCG, HCCG };

/// What a tier may do. Anything outside the profile is refused at
/// configuration or command time.
struct Capabilities {
  std::size_t history_capacity;
  int relays;
  int inputs;
  int reader_ports;
  std::size_t max_rules;  // 0: no script engine
  bool field_writes;
  bool dedup;
};

constexpr Capabilities capabilities(GateTier tier) {
  switch (tier) {
    case GateTier::LCCG: return {1024, 1, 2, 1, 0, false, false};
    case GateTier::MCCG: return {4096, 2, 4, 1, 32, true, false};
    case GateTier::HCCG: return {16384, 2, 4, 4, 32, true, true};
  }
  return {1024, 1, 2, 1, 0, false, false};
}

std::string tier_name(GateTier tier);
std::optional<GateTier> parse_tier(std::string_view name);

}  // namespace rfidb2b::gate

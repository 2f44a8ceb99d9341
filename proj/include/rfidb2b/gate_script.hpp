#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rfidb2b/gate_tier.hpp"
#include "rfidb2b/tag_codec.hpp"

namespace rfidb2b::gate {

// Rule language:
//   rule   := "ON" ("READ" | "INPUT" n) "WHEN" cond "DO" action ("," action)* ";"
//   cond   := "TRUE" | term (("AND" | "OR") term)*      AND binds tighter than OR
//   term   := FIELD op literal                          op: == != < > <= >=
//   action := ALARM(code) | SET(FIELD, literal) | RELAY(n, ON|OFF) | LOG
// FIELD is a template field name or INPUT_<n> (the level of digital input n).
// '#' starts a comment that runs to the end of the line.

enum class Trigger { Read, Input };
enum class CompareOp { Eq, Ne, Lt, Gt, Le, Ge };

struct Term {
  std::string field;
  CompareOp op = CompareOp::Eq;
  tag::FieldValue literal;
};

/// Disjunction of conjunctions; empty means TRUE.
struct Condition {
  std::vector<std::vector<Term>> any_of;

  bool always() const noexcept { return any_of.empty(); }
};

enum class ActionKind { Alarm, Set, Relay, Log };

struct Action {
  ActionKind kind = ActionKind::Log;
  std::uint8_t alarm_code = 0;  // 1..16, sets alarm flag bit (code - 1)
  std::string field;            // Set
  tag::FieldValue value;        // Set
  int relay = 0;                // Relay
  bool on = false;              // Relay
};

struct Rule {
  Trigger trigger = Trigger::Read;
  int input = 0;  // Trigger::Input only
  Condition when;
  std::vector<Action> actions;
  int line = 0;
};

/// Parses and checks a script against a tier and the templates the gate knows.
/// Throws ParseError(SyntaxError | SemanticError) with line/column, or
/// Error(TooManyRules).
std::vector<Rule> parse_script(std::string_view text, GateTier tier,
                               std::span<const tag::TagTemplate> templates);

/// Lookup of field values during evaluation: the decoded tag (if any) plus
/// the gate's digital inputs.
struct EvalContext {
  const tag::TagRecord* record = nullptr;
  std::uint16_t inputs = 0;
};

bool evaluate(const Condition& cond, const EvalContext& ctx);

std::string to_string(const Rule& rule);

}  // namespace rfidb2b::gate

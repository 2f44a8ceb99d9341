#include "rfidb2b/gate_script.hpp"

#include <cctype>
#include <charconv>
#include <limits>

#include "rfidb2b/error.hpp"

namespace rfidb2b::gate {

std::string tier_name(GateTier tier) {
  switch (tier) {
    case GateTier::LCCG: return "LCCG";
    case GateTier::MCCG: return "MCCG";
    case GateTier::HCCG: return "HCCG";
  }
  return "?";
}

std::optional<GateTier> parse_tier(std::string_view name) {
  if (name == "LCCG") return GateTier::LCCG;
  if (name == "MCCG") return GateTier::MCCG;
  if (name == "HCCG") return GateTier::HCCG;
  return std::nullopt;
}

namespace {

enum class Tok { Ident, Int, Real, String, Char, Punct, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  std::int64_t int_value = 0;
  double real_value = 0;
  int line = 1;
  int column = 1;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space();
      Token t;
      t.line = line_;
      t.column = col_;
      if (pos_ >= src_.size()) {
        out.push_back(t);
        return out;
      }
      const char c = src_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        t.kind = Tok::Ident;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
          t.text.push_back(take());
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '-' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        number(t);
      } else if (c == '"') {
        t.kind = Tok::String;
        take();
        for (;;) {
          if (pos_ >= src_.size() || src_[pos_] == '\n') fail(t, "unterminated string literal");
          char ch = take();
          if (ch == '"') break;
          if (ch == '\\') {
            if (pos_ >= src_.size()) fail(t, "unterminated string literal");
            ch = take();
          }
          t.text.push_back(ch);
        }
      } else if (c == '\'') {
        t.kind = Tok::Char;
        take();
        if (pos_ + 1 >= src_.size() || src_[pos_ + 1] != '\'') fail(t, "character literal must hold one character");
        t.text.push_back(take());
        take();
      } else {
        t.kind = Tok::Punct;
        static constexpr std::string_view two[] = {"==", "!=", "<=", ">="};
        for (auto op : two) {
          if (src_.substr(pos_, 2) == op) {
            t.text = std::string(op);
            take();
            take();
            break;
          }
        }
        if (t.text.empty()) {
          if (std::string_view("(),;<>").find(c) == std::string_view::npos)
            fail(t, std::string("unexpected character '") + c + "'");
          t.text.push_back(take());
        }
      }
      out.push_back(std::move(t));
    }
  }

 private:
  [[noreturn]] void fail(const Token& at, const std::string& msg) {
    throw ParseError(Errc::SyntaxError, at.line, at.column, msg);
  }

  char take() {
    const char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') take();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        take();
      } else {
        break;
      }
    }
  }

  void number(Token& t) {
    std::string text;
    if (src_[pos_] == '-') text.push_back(take());
    bool real = false;
    while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.' ||
                                  src_[pos_] == 'e' || src_[pos_] == 'E' ||
                                  ((src_[pos_] == '-' || src_[pos_] == '+') && (text.back() == 'e' || text.back() == 'E')))) {
      const char c = take();
      real = real || c == '.' || c == 'e' || c == 'E';
      text.push_back(c);
    }
    t.text = text;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (real) {
      t.kind = Tok::Real;
      auto res = std::from_chars(first, last, t.real_value);
      if (res.ec != std::errc() || res.ptr != last) fail(t, "malformed number '" + text + "'");
    } else {
      t.kind = Tok::Int;
      auto res = std::from_chars(first, last, t.int_value);
      if (res.ec != std::errc() || res.ptr != last) fail(t, "malformed integer '" + text + "'");
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

class Parser {
 public:
  Parser(std::vector<Token> toks, GateTier tier, std::span<const tag::TagTemplate> templates)
      : toks_(std::move(toks)), tier_(tier), caps_(capabilities(tier)), templates_(templates) {}

  std::vector<Rule> run() {
    std::vector<Rule> rules;
    while (peek().kind != Tok::End) {
      const Token& start = peek();
      Rule r = rule();
      if (caps_.max_rules == 0)
        semantic(start, tier_name(tier_) + " gates have no script engine");
      rules.push_back(std::move(r));
      if (rules.size() > caps_.max_rules)
        throw Error(Errc::TooManyRules, "line " + std::to_string(start.line) + ": more than " +
                                            std::to_string(caps_.max_rules) + " rules");
    }
    return rules;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_ < toks_.size() - 1 ? pos_++ : pos_]; }

  [[noreturn]] void syntax(const Token& at, const std::string& msg) {
    throw ParseError(Errc::SyntaxError, at.line, at.column, msg);
  }
  [[noreturn]] void semantic(const Token& at, const std::string& msg) {
    throw ParseError(Errc::SemanticError, at.line, at.column, msg);
  }

  bool is_word(const Token& t, std::string_view w) const { return t.kind == Tok::Ident && t.text == w; }
  bool is_punct(const Token& t, std::string_view p) const { return t.kind == Tok::Punct && t.text == p; }

  void expect_word(std::string_view w) {
    const Token& t = next();
    if (!is_word(t, w)) syntax(t, "expected " + std::string(w) + ", found '" + t.text + "'");
  }
  void expect_punct(std::string_view p) {
    const Token& t = next();
    if (!is_punct(t, p)) syntax(t, "expected '" + std::string(p) + "', found '" + t.text + "'");
  }
  std::int64_t expect_int() {
    const Token& t = next();
    if (t.kind != Tok::Int) syntax(t, "expected an integer, found '" + t.text + "'");
    return t.int_value;
  }

  Rule rule() {
    Rule r;
    r.line = peek().line;
    expect_word("ON");
    const Token& trig = next();
    if (is_word(trig, "READ")) {
      r.trigger = Trigger::Read;
    } else if (is_word(trig, "INPUT")) {
      r.trigger = Trigger::Input;
      const Token& at = peek();
      const auto n = expect_int();
      if (n < 0 || n >= caps_.inputs)
        semantic(at, "input " + std::to_string(n) + " does not exist on " + tier_name(tier_));
      r.input = static_cast<int>(n);
    } else {
      syntax(trig, "expected READ or INPUT, found '" + trig.text + "'");
    }
    expect_word("WHEN");
    r.when = condition();
    expect_word("DO");
    r.actions.push_back(action(r));
    while (is_punct(peek(), ",")) {
      next();
      r.actions.push_back(action(r));
    }
    expect_punct(";");
    return r;
  }

  Condition condition() {
    Condition c;
    if (is_word(peek(), "TRUE")) {
      next();
      return c;
    }
    c.any_of.push_back({term()});
    for (;;) {
      if (is_word(peek(), "AND")) {
        next();
        c.any_of.back().push_back(term());
      } else if (is_word(peek(), "OR")) {
        next();
        c.any_of.push_back({term()});
      } else {
        return c;
      }
    }
  }

  std::optional<int> input_pseudo_field(std::string_view name) const {
    if (name.substr(0, 6) != "INPUT_") return std::nullopt;
    int n = 0;
    auto digits = name.substr(6);
    auto res = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (digits.empty() || res.ec != std::errc() || res.ptr != digits.data() + digits.size()) return std::nullopt;
    return n;
  }

  const tag::FieldDef* template_field(std::string_view name) const {
    for (const auto& t : templates_)
      if (const auto* f = t.find(name)) return f;
    return nullptr;
  }

  tag::FieldType field_type(const Token& at) {
    if (auto n = input_pseudo_field(at.text)) {
      if (*n >= caps_.inputs) semantic(at, "input " + std::to_string(*n) + " does not exist on " + tier_name(tier_));
      return tag::FieldType::integer();
    }
    const auto* f = template_field(at.text);
    if (!f) semantic(at, "unknown field '" + at.text + "'");
    return f->type;
  }

  tag::FieldValue literal(tag::FieldType type) {
    const Token& t = next();
    using tag::FieldKind;
    switch (type.kind) {
      case FieldKind::Integer:
        if (t.kind == Tok::Int && t.int_value >= std::numeric_limits<std::int32_t>::min() &&
            t.int_value <= std::numeric_limits<std::int32_t>::max())
          return static_cast<std::int32_t>(t.int_value);
        semantic(t, "expected a 32-bit integer literal, found '" + t.text + "'");
      case FieldKind::Real:
        if (t.kind == Tok::Int) return static_cast<double>(t.int_value);
        if (t.kind == Tok::Real) return t.real_value;
        semantic(t, "expected a numeric literal, found '" + t.text + "'");
      case FieldKind::Date:
        if (t.kind == Tok::Int && t.int_value >= 0 && t.int_value <= 0xFFFFFFFFLL)
          return tag::Date{static_cast<std::uint32_t>(t.int_value)};
        semantic(t, "expected epoch seconds, found '" + t.text + "'");
      case FieldKind::Character:
        if ((t.kind == Tok::Char || t.kind == Tok::String) && t.text.size() == 1)
          return tag::Character{static_cast<std::uint8_t>(t.text[0])};
        if (t.kind == Tok::Int && t.int_value >= 0 && t.int_value <= 255)
          return tag::Character{static_cast<std::uint8_t>(t.int_value)};
        semantic(t, "expected a character literal, found '" + t.text + "'");
      case FieldKind::String:
        if (t.kind == Tok::String) return t.text;
        semantic(t, "expected a string literal, found '" + t.text + "'");
    }
    semantic(t, "unsupported literal");
  }

  Term term() {
    const Token& name = next();
    if (name.kind != Tok::Ident) syntax(name, "expected a field name, found '" + name.text + "'");
    const tag::FieldType type = field_type(name);
    Term t;
    t.field = name.text;
    const Token& op = next();
    if (op.kind != Tok::Punct) syntax(op, "expected a comparison operator, found '" + op.text + "'");
    if (op.text == "==") t.op = CompareOp::Eq;
    else if (op.text == "!=") t.op = CompareOp::Ne;
    else if (op.text == "<") t.op = CompareOp::Lt;
    else if (op.text == ">") t.op = CompareOp::Gt;
    else if (op.text == "<=") t.op = CompareOp::Le;
    else if (op.text == ">=") t.op = CompareOp::Ge;
    else syntax(op, "expected a comparison operator, found '" + op.text + "'");
    t.literal = literal(type);
    return t;
  }

  Action action(const Rule& r) {
    const Token& kw = next();
    Action a;
    if (is_word(kw, "LOG")) {
      a.kind = ActionKind::Log;
    } else if (is_word(kw, "ALARM")) {
      a.kind = ActionKind::Alarm;
      expect_punct("(");
      const Token& at = peek();
      const auto code = expect_int();
      if (code < 1 || code > 16) semantic(at, "alarm code must be in 1..16");
      a.alarm_code = static_cast<std::uint8_t>(code);
      expect_punct(")");
    } else if (is_word(kw, "RELAY")) {
      a.kind = ActionKind::Relay;
      expect_punct("(");
      const Token& at = peek();
      const auto n = expect_int();
      if (n < 0 || n >= caps_.relays) semantic(at, "relay " + std::to_string(n) + " does not exist on " + tier_name(tier_));
      a.relay = static_cast<int>(n);
      expect_punct(",");
      const Token& state = next();
      if (is_word(state, "ON")) a.on = true;
      else if (is_word(state, "OFF")) a.on = false;
      else syntax(state, "expected ON or OFF, found '" + state.text + "'");
      expect_punct(")");
    } else if (is_word(kw, "SET")) {
      a.kind = ActionKind::Set;
      if (!caps_.field_writes) semantic(kw, "SET is not available on " + tier_name(tier_));
      if (r.trigger != Trigger::Read) semantic(kw, "SET needs a READ trigger");
      expect_punct("(");
      const Token& name = next();
      if (name.kind != Tok::Ident) syntax(name, "expected a field name, found '" + name.text + "'");
      if (input_pseudo_field(name.text)) semantic(name, "inputs cannot be SET");
      const auto* f = template_field(name.text);
      if (!f) semantic(name, "unknown field '" + name.text + "'");
      a.field = name.text;
      expect_punct(",");
      const Token& at = peek();
      a.value = literal(f->type);
      if (f->type.kind == tag::FieldKind::String && std::get<std::string>(a.value).size() > f->type.max_len)
        semantic(at, "string literal longer than the field");
      expect_punct(")");
    } else {
      syntax(kw, "expected an action, found '" + kw.text + "'");
    }
    return a;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  GateTier tier_;
  Capabilities caps_;
  std::span<const tag::TagTemplate> templates_;
};

template <typename T>
bool compare(const T& a, CompareOp op, const T& b) {
  switch (op) {
    case CompareOp::Eq: return a == b;
    case CompareOp::Ne: return a != b;
    case CompareOp::Lt: return a < b;
    case CompareOp::Gt: return a > b;
    case CompareOp::Le: return a <= b;
    case CompareOp::Ge: return a >= b;
  }
  return false;
}

bool compare_values(const tag::FieldValue& lhs, CompareOp op, const tag::FieldValue& rhs) {
  if (lhs.index() != rhs.index()) return false;
  if (auto* c = std::get_if<tag::Character>(&lhs)) return compare(c->code, op, std::get<tag::Character>(rhs).code);
  if (auto* s = std::get_if<std::string>(&lhs)) return compare(*s, op, std::get<std::string>(rhs));
  if (auto* i = std::get_if<std::int32_t>(&lhs)) return compare(*i, op, std::get<std::int32_t>(rhs));
  if (auto* d = std::get_if<double>(&lhs)) return compare(*d, op, std::get<double>(rhs));
  return compare(std::get<tag::Date>(lhs).epoch_seconds, op, std::get<tag::Date>(rhs).epoch_seconds);
}

bool evaluate_term(const Term& t, const EvalContext& ctx) {
  if (t.field.rfind("INPUT_", 0) == 0) {
    int n = 0;
    std::from_chars(t.field.data() + 6, t.field.data() + t.field.size(), n);
    const std::int32_t level = (ctx.inputs >> n) & 1;
    return compare_values(level, t.op, t.literal);
  }
  if (!ctx.record) return false;
  auto it = ctx.record->find(t.field);
  if (it == ctx.record->end()) return false;
  return compare_values(it->second, t.op, t.literal);
}

const char* op_text(CompareOp op) {
  switch (op) {
    case CompareOp::Eq: return "==";
    case CompareOp::Ne: return "!=";
    case CompareOp::Lt: return "<";
    case CompareOp::Gt: return ">";
    case CompareOp::Le: return "<=";
    case CompareOp::Ge: return ">=";
  }
  return "?";
}

std::string literal_text(const tag::FieldValue& v) {
  if (auto* s = std::get_if<std::string>(&v)) return "\"" + *s + "\"";
  if (auto* c = std::get_if<tag::Character>(&v)) return std::to_string(c->code);
  if (auto* d = std::get_if<tag::Date>(&v)) return std::to_string(d->epoch_seconds);
  return tag::render_value(v);
}

}  // namespace

std::vector<Rule> parse_script(std::string_view text, GateTier tier, std::span<const tag::TagTemplate> templates) {
  return Parser(Lexer(text).run(), tier, templates).run();
}

bool evaluate(const Condition& cond, const EvalContext& ctx) {
  if (cond.always()) return true;
  for (const auto& conj : cond.any_of) {
    bool all = true;
    for (const auto& t : conj) {
      if (!evaluate_term(t, ctx)) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  return false;
}

std::string to_string(const Rule& rule) {
  std::string out = rule.trigger == Trigger::Read ? "ON READ" : "ON INPUT " + std::to_string(rule.input);
  out += " WHEN ";
  if (rule.when.always()) {
    out += "TRUE";
  } else {
    for (std::size_t i = 0; i < rule.when.any_of.size(); ++i) {
      if (i) out += " OR ";
      const auto& conj = rule.when.any_of[i];
      for (std::size_t j = 0; j < conj.size(); ++j) {
        if (j) out += " AND ";
        out += conj[j].field + " " + op_text(conj[j].op) + " " + literal_text(conj[j].literal);
      }
    }
  }
  out += " DO ";
  for (std::size_t i = 0; i < rule.actions.size(); ++i) {
    if (i) out += ", ";
    const Action& a = rule.actions[i];
    switch (a.kind) {
      case ActionKind::Log: out += "LOG"; break;
      case ActionKind::Alarm: out += "ALARM(" + std::to_string(a.alarm_code) + ")"; break;
      case ActionKind::Relay: out += "RELAY(" + std::to_string(a.relay) + (a.on ? ", ON)" : ", OFF)"); break;
      case ActionKind::Set: out += "SET(" + a.field + ", " + literal_text(a.value) + ")"; break;
    }
  }
  return out + ";";
}

}  // namespace rfidb2b::gate

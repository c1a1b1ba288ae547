#include "simstream/expr.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>

namespace simstream {

ParseError::ParseError(ParseErrorKind kind, std::size_t position, const std::string& message)
    : std::runtime_error("at " + std::to_string(position) + ": " + message),
      kind_(kind),
      position_(position),
      detail_(message) {}

Expr Expr::constant(Value v) {
  auto node = std::make_shared<Node>();
  node->kind = NodeKind::Literal;
  node->literal = v;
  return Expr(std::move(node), render_value(v));
}

namespace {

enum class Tok : std::uint8_t { End, Newline, Int, Real, Str, Name, Punct };

struct Token {
  Tok kind = Tok::End;
  std::string text;  // name, punctuation, or number digits
  std::string str;   // decoded string literal
  std::size_t pos = 0;
};

constexpr std::array kForbiddenKeywords = {
    "import", "from",   "lambda", "def",    "class", "for",   "while",  "with",   "yield",
    "global", "nonlocal", "del",  "return", "pass",  "break", "continue", "raise", "try",
    "except", "finally", "assert", "async", "await", "elif",  "as",
};

constexpr std::array kForbiddenCalls = {
    "eval", "exec", "open", "compile", "getattr", "setattr", "delattr", "hasattr", "globals", "locals",
    "vars", "input", "breakpoint", "help", "dir", "type", "object", "super", "memoryview", "print",
    "exit", "quit", "id", "hash", "iter", "next", "classmethod", "staticmethod", "property",
};

constexpr std::array kMethods = {
    "append", "count", "index", "upper", "lower", "strip", "lstrip", "rstrip", "split", "join", "replace",
    "startswith", "endswith", "format", "find", "title", "capitalize", "get", "keys", "values", "items",
};

template <std::size_t N>
bool contains(const std::array<const char*, N>& set, std::string_view s) {
  for (const char* item : set) {
    if (s == item) return true;
  }
  return false;
}

bool is_dunder(std::string_view s) { return s.size() >= 4 && s.starts_with("__") && s.ends_with("__"); }

bool ident_start(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_'; }
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
bool digit(char c) { return c >= '0' && c <= '9'; }

[[noreturn]] void syntax(std::size_t pos, const std::string& msg) {
  throw ParseError(ParseErrorKind::Syntax, pos, msg);
}

[[noreturn]] void forbidden(std::size_t pos, const std::string& msg) {
  throw ParseError(ParseErrorKind::ForbiddenConstruct, pos, msg);
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    int depth = 0;
    while (true) {
      skip_space();
      if (i_ >= src_.size()) break;
      const char c = src_[i_];
      const std::size_t start = i_;
      if (c == '\n') {
        ++i_;
        if (depth == 0) out.push_back({Tok::Newline, "\n", {}, start});
        continue;
      }
      if (digit(c) || (c == '.' && i_ + 1 < src_.size() && digit(src_[i_ + 1]))) {
        out.push_back(number());
        continue;
      }
      if (c == '"' || c == '\'') {
        out.push_back(string_literal());
        continue;
      }
      if (ident_start(c)) {
        std::size_t j = i_;
        while (j < src_.size() && ident_char(src_[j])) ++j;
        std::string name(src_.substr(i_, j - i_));
        if (j < src_.size() && (src_[j] == '"' || src_[j] == '\'') && name.size() <= 2) {
          syntax(start, "string prefixes (f-strings, byte strings) are not supported; use str.format");
        }
        i_ = j;
        if (contains(kForbiddenKeywords, name)) forbidden(start, "'" + name + "' is not allowed in expressions");
        if (is_dunder(name)) forbidden(start, "dunder names are not allowed");
        out.push_back({Tok::Name, std::move(name), {}, start});
        continue;
      }
      if (static_cast<unsigned char>(c) >= 0x80) syntax(start, "non-ASCII character outside string literal");
      out.push_back(punct(depth));
    }
    out.push_back({Tok::End, "", {}, src_.size()});
    return out;
  }

 private:
  void skip_space() {
    while (i_ < src_.size()) {
      const char c = src_[i_];
      if (c == ' ' || c == '\t' || c == '\r' || c == '\f') {
        ++i_;
      } else if (c == '#') {
        while (i_ < src_.size() && src_[i_] != '\n') ++i_;
      } else if (c == '\\' && i_ + 1 < src_.size() && src_[i_ + 1] == '\n') {
        i_ += 2;
      } else {
        break;
      }
    }
  }

  Token number() {
    const std::size_t start = i_;
    bool is_real = false;
    while (i_ < src_.size() && digit(src_[i_])) ++i_;
    if (i_ < src_.size() && src_[i_] == '.') {
      is_real = true;
      ++i_;
      while (i_ < src_.size() && digit(src_[i_])) ++i_;
    }
    if (i_ < src_.size() && (src_[i_] == 'e' || src_[i_] == 'E')) {
      std::size_t j = i_ + 1;
      if (j < src_.size() && (src_[j] == '+' || src_[j] == '-')) ++j;
      if (j < src_.size() && digit(src_[j])) {
        is_real = true;
        i_ = j;
        while (i_ < src_.size() && digit(src_[i_])) ++i_;
      }
    }
    if (i_ < src_.size() && ident_char(src_[i_])) syntax(i_, "invalid numeric literal");
    return {is_real ? Tok::Real : Tok::Int, std::string(src_.substr(start, i_ - start)), {}, start};
  }

  Token string_literal() {
    const std::size_t start = i_;
    const char quote = src_[i_];
    bool triple = src_.substr(i_, 3) == std::string(3, quote);
    i_ += triple ? 3 : 1;
    std::string out;
    while (true) {
      if (i_ >= src_.size()) syntax(start, "unterminated string literal");
      const char c = src_[i_];
      if (triple) {
        if (src_.substr(i_, 3) == std::string(3, quote)) {
          i_ += 3;
          break;
        }
      } else if (c == quote) {
        ++i_;
        break;
      } else if (c == '\n') {
        syntax(start, "unterminated string literal");
      }
      if (c != '\\') {
        out.push_back(c);
        ++i_;
        continue;
      }
      if (i_ + 1 >= src_.size()) syntax(start, "unterminated string literal");
      const char e = src_[i_ + 1];
      i_ += 2;
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case '0': out.push_back('\0'); break;
        case '\\': out.push_back('\\'); break;
        case '\'': out.push_back('\''); break;
        case '"': out.push_back('"'); break;
        case '\n': break;
        case 'x': out.push_back(static_cast<char>(hex(2, start))); break;
        case 'u': append_utf8(out, hex(4, start)); break;
        case 'U': append_utf8(out, hex(8, start)); break;
        default:
          out.push_back('\\');
          out.push_back(e);
      }
    }
    return {Tok::Str, {}, std::move(out), start};
  }

  std::uint32_t hex(int digits, std::size_t start) {
    if (i_ + static_cast<std::size_t>(digits) > src_.size()) syntax(start, "truncated escape sequence");
    std::uint32_t v = 0;
    auto res = std::from_chars(src_.data() + i_, src_.data() + i_ + digits, v, 16);
    if (res.ptr != src_.data() + i_ + digits) syntax(start, "invalid escape sequence");
    if (v > 0x10FFFF) syntax(start, "escape sequence out of range");
    i_ += static_cast<std::size_t>(digits);
    return v;
  }

  Token punct(int& depth) {
    static constexpr std::array kThree = {"//=", "**="};
    static constexpr std::array kTwo = {"//", "**", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", ":=",
                                        "<<", ">>", "->"};
    const std::size_t start = i_;
    for (const char* p : kThree) {
      if (src_.substr(i_, 3) == p) {
        i_ += 3;
        return {Tok::Punct, p, {}, start};
      }
    }
    for (const char* p : kTwo) {
      if (src_.substr(i_, 2) == p) {
        if (std::string_view(p) == ":=") forbidden(start, "assignment expressions are not allowed");
        if (std::string_view(p) == "<<" || std::string_view(p) == ">>" || std::string_view(p) == "->") {
          syntax(start, "unsupported operator '" + std::string(p) + "'");
        }
        i_ += 2;
        return {Tok::Punct, p, {}, start};
      }
    }
    const char c = src_[i_];
    static constexpr std::string_view kOne = "()[]{},:.+-*/%<>=;";
    if (kOne.find(c) == std::string_view::npos) syntax(start, std::string("unexpected character '") + c + "'");
    if (c == '(' || c == '[' || c == '{') ++depth;
    if ((c == ')' || c == ']' || c == '}') && depth > 0) --depth;
    ++i_;
    return {Tok::Punct, std::string(1, c), {}, start};
  }

  std::string_view src_;
  std::size_t i_ = 0;
};

NodePtr make_literal(Value v, std::size_t pos) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Literal;
  n->literal = std::move(v);
  n->position = pos;
  return n;
}

NodePtr make_node(NodeKind kind, std::size_t pos, std::vector<NodePtr> children = {}, std::string name = {}) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->position = pos;
  n->children = std::move(children);
  n->name = std::move(name);
  return n;
}

NodePtr make_binary(Op op, NodePtr a, NodePtr b, std::size_t pos) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Binary;
  n->op = op;
  n->position = pos;
  n->children = {std::move(a), std::move(b)};
  return n;
}

std::optional<Op> binary_op(std::string_view t) {
  if (t == "+") return Op::Add;
  if (t == "-") return Op::Sub;
  if (t == "*") return Op::Mul;
  if (t == "/") return Op::Div;
  if (t == "//") return Op::FloorDiv;
  if (t == "%") return Op::Mod;
  return std::nullopt;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  bool at_end() const { return peek().kind == Tok::End; }
  const Token& peek(std::size_t ahead = 0) const {
    const std::size_t k = std::min(pos_ + ahead, toks_.size() - 1);
    return toks_[k];
  }
  bool is_punct(std::string_view p, std::size_t ahead = 0) const {
    const Token& t = peek(ahead);
    return t.kind == Tok::Punct && t.text == p;
  }
  bool is_name(std::string_view n, std::size_t ahead = 0) const {
    const Token& t = peek(ahead);
    return t.kind == Tok::Name && t.text == n;
  }
  Token take() { return toks_[std::min(pos_++, toks_.size() - 1)]; }
  void expect(std::string_view p) {
    if (!is_punct(p)) syntax(peek().pos, "expected '" + std::string(p) + "'" + got());
    ++pos_;
  }
  std::string got() const {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::End: return " but reached end of input";
      case Tok::Newline: return " but found a line break";
      case Tok::Str: return " but found a string";
      default: return " but found '" + t.text + "'";
    }
  }

  void skip_newlines() {
    while (peek().kind == Tok::Newline) ++pos_;
  }

  // Ensures nothing but separators remain.
  void finish_statement() {
    bool separated = false;
    while (peek().kind == Tok::Newline || is_punct(";")) {
      separated = true;
      ++pos_;
    }
    if (at_end()) return;
    if (separated) throw ParseError(ParseErrorKind::MultipleStatements, peek().pos, "only one statement is allowed");
    syntax(peek().pos, "unexpected token" + got());
  }

  NodePtr expression() {
    Depth guard(*this, peek().pos);
    return ternary();
  }

  std::size_t pos_ = 0;

 private:
  struct Depth {
    Depth(Parser& p, std::size_t at) : p_(p) {
      if (++p_.depth_ > kMaxNestingDepth) forbidden(at, "expression nested too deeply");
    }
    ~Depth() { --p_.depth_; }
    Parser& p_;
  };

  NodePtr ternary() {
    const std::size_t at = peek().pos;
    NodePtr then = or_expr();
    if (!is_name("if")) return then;
    ++pos_;
    NodePtr cond = or_expr();
    if (!is_name("else")) syntax(peek().pos, "expected 'else' in conditional expression" + got());
    ++pos_;
    NodePtr otherwise = expression();
    return make_node(NodeKind::Conditional, at, {std::move(then), std::move(cond), std::move(otherwise)});
  }

  NodePtr or_expr() {
    const std::size_t at = peek().pos;
    NodePtr first = and_expr();
    if (!is_name("or")) return first;
    std::vector<NodePtr> parts{std::move(first)};
    while (is_name("or")) {
      ++pos_;
      parts.push_back(and_expr());
    }
    return make_node(NodeKind::Or, at, std::move(parts));
  }

  NodePtr and_expr() {
    const std::size_t at = peek().pos;
    NodePtr first = not_expr();
    if (!is_name("and")) return first;
    std::vector<NodePtr> parts{std::move(first)};
    while (is_name("and")) {
      ++pos_;
      parts.push_back(not_expr());
    }
    return make_node(NodeKind::And, at, std::move(parts));
  }

  NodePtr not_expr() {
    if (is_name("not")) {
      const std::size_t at = take().pos;
      Depth guard(*this, at);
      return make_node(NodeKind::Not, at, {not_expr()});
    }
    return comparison();
  }

  std::optional<Op> compare_op() {
    const Token& t = peek();
    if (t.kind == Tok::Punct) {
      if (t.text == "==") return Op::Eq;
      if (t.text == "!=") return Op::Ne;
      if (t.text == "<") return Op::Lt;
      if (t.text == "<=") return Op::Le;
      if (t.text == ">") return Op::Gt;
      if (t.text == ">=") return Op::Ge;
    } else if (t.kind == Tok::Name) {
      if (t.text == "in") return Op::In;
      if (t.text == "not" && is_name("in", 1)) return Op::NotIn;
      if (t.text == "is") syntax(t.pos, "'is' is not supported; use '=='");
    }
    return std::nullopt;
  }

  NodePtr comparison() {
    const std::size_t at = peek().pos;
    NodePtr first = arith();
    auto op = compare_op();
    if (!op) return first;
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Compare;
    n->position = at;
    n->children.push_back(std::move(first));
    while (op) {
      pos_ += (*op == Op::NotIn) ? 2 : 1;
      n->compare_ops.push_back(*op);
      n->children.push_back(arith());
      op = compare_op();
    }
    return n;
  }

  NodePtr arith() {
    NodePtr left = term();
    while (peek().kind == Tok::Punct && (peek().text == "+" || peek().text == "-")) {
      const Token t = take();
      left = make_binary(*binary_op(t.text), std::move(left), term(), t.pos);
    }
    return left;
  }

  NodePtr term() {
    NodePtr left = factor();
    while (peek().kind == Tok::Punct) {
      const auto op = binary_op(peek().text);
      if (!op || *op == Op::Add || *op == Op::Sub) break;
      const Token t = take();
      left = make_binary(*op, std::move(left), factor(), t.pos);
    }
    return left;
  }

  NodePtr factor() {
    if (peek().kind == Tok::Punct && (peek().text == "-" || peek().text == "+")) {
      const Token t = take();
      Depth guard(*this, t.pos);
      // Fold negative integer literals so INT64_MIN is expressible.
      if (t.text == "-" && peek().kind == Tok::Int && !is_punct("**", 1)) {
        const Token lit = take();
        std::uint64_t mag = 0;
        auto res = std::from_chars(lit.text.data(), lit.text.data() + lit.text.size(), mag);
        if (res.ec != std::errc() || mag > 9223372036854775808ULL) syntax(lit.pos, "integer literal too large");
        const std::int64_t v = mag == 9223372036854775808ULL ? INT64_MIN : -static_cast<std::int64_t>(mag);
        return postfix_tail(make_literal(Value::integer(v), t.pos), t.pos);
      }
      auto n = std::make_shared<Node>();
      n->kind = NodeKind::Unary;
      n->op = t.text == "-" ? Op::Neg : Op::Pos;
      n->position = t.pos;
      n->children.push_back(factor());
      return n;
    }
    return power();
  }

  NodePtr power() {
    NodePtr base = postfix();
    if (is_punct("**")) {
      const Token t = take();
      Depth guard(*this, t.pos);
      return make_binary(Op::Pow, std::move(base), factor(), t.pos);
    }
    return base;
  }

  NodePtr postfix() { return postfix_tail(atom(), peek().pos); }

  NodePtr postfix_tail(NodePtr node, std::size_t) {
    while (true) {
      if (is_punct("[")) {
        const std::size_t at = take().pos;
        node = subscript(std::move(node), at);
      } else if (is_punct(".")) {
        const std::size_t at = take().pos;
        const Token name = take();
        if (name.kind != Tok::Name) syntax(at, "expected attribute name after '.'");
        if (!is_punct("(")) forbidden(at, "attribute access is not allowed");
        node = method(std::move(node), name, at);
      } else if (is_punct("(")) {
        forbidden(peek().pos, "only builtin functions and methods can be called");
      } else {
        return node;
      }
    }
  }

  NodePtr subscript(NodePtr object, std::size_t at) {
    NodePtr lower;
    if (!is_punct(":")) {
      lower = expression();
      if (is_punct("]")) {
        ++pos_;
        return make_node(NodeKind::Index, at, {std::move(object), std::move(lower)});
      }
    }
    expect(":");
    NodePtr upper;
    if (!is_punct("]")) {
      if (is_punct(":")) syntax(peek().pos, "slice steps are not supported");
      upper = expression();
    }
    if (is_punct(":")) syntax(peek().pos, "slice steps are not supported");
    expect("]");
    if (!lower) lower = make_literal(Value(), at);
    if (!upper) upper = make_literal(Value(), at);
    return make_node(NodeKind::Slice, at, {std::move(object), std::move(lower), std::move(upper)});
  }

  std::vector<NodePtr> call_args() {
    expect("(");
    std::vector<NodePtr> args;
    while (!is_punct(")")) {
      if (is_punct("*") || is_punct("**")) syntax(peek().pos, "argument unpacking is not supported");
      if (peek().kind == Tok::Name && is_punct("=", 1)) syntax(peek().pos, "keyword arguments are not supported");
      args.push_back(expression());
      if (is_punct(",")) {
        ++pos_;
        continue;
      }
      if (!is_punct(")")) syntax(peek().pos, "expected ',' or ')' in argument list" + got());
    }
    ++pos_;
    return args;
  }

  NodePtr method(NodePtr receiver, const Token& name, std::size_t at) {
    if (is_dunder(name.text)) forbidden(name.pos, "dunder names are not allowed");
    // math.sqrt(x), statistics.mean(xs): module-style spelling of builtins.
    if (receiver->kind == NodeKind::Name && (receiver->name == "math" || receiver->name == "statistics")) {
      return call(name);
    }
    if (!contains(kMethods, name.text)) forbidden(name.pos, "method '" + name.text + "' is not available");
    std::vector<NodePtr> children{std::move(receiver)};
    for (auto& a : call_args()) children.push_back(std::move(a));
    return make_node(NodeKind::Method, at, std::move(children), name.text);
  }

  NodePtr call(const Token& name) {
    if (contains(kForbiddenCalls, name.text)) forbidden(name.pos, "'" + name.text + "' is not available");
    return make_node(NodeKind::Call, name.pos, call_args(), name.text);
  }

  NodePtr atom() {
    const Token t = take();
    switch (t.kind) {
      case Tok::Int: {
        std::int64_t v = 0;
        auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
        if (res.ec != std::errc()) syntax(t.pos, "integer literal too large");
        return make_literal(Value::integer(v), t.pos);
      }
      case Tok::Real: {
        double v = 0;
        std::string text = t.text;
        if (text.front() == '.') text.insert(text.begin(), '0');
        auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (res.ec == std::errc::result_out_of_range) {
          // Python reads over-range literals as inf / 0.0.
          v = text.find("e-") != std::string::npos || text.find("E-") != std::string::npos ? 0.0 : HUGE_VAL;
        } else if (res.ec != std::errc()) {
          syntax(t.pos, "invalid float literal");
        }
        return make_literal(Value::real(v), t.pos);
      }
      case Tok::Str: {
        std::string s = t.str;
        while (peek().kind == Tok::Str) s += take().str;
        return make_literal(Value::text(std::move(s)), t.pos);
      }
      case Tok::Name: return name_atom(t);
      case Tok::Punct:
        if (t.text == "(") return paren(t.pos);
        if (t.text == "[") return list_literal(t.pos);
        if (t.text == "{") return map_literal(t.pos);
        syntax(t.pos, "unexpected '" + t.text + "'");
      case Tok::Newline: syntax(t.pos, "unexpected line break");
      case Tok::End: syntax(t.pos, "unexpected end of input");
    }
    syntax(t.pos, "unexpected token");
  }

  NodePtr name_atom(const Token& t) {
    if (t.text == "True") return make_literal(Value::boolean(true), t.pos);
    if (t.text == "False") return make_literal(Value::boolean(false), t.pos);
    if (t.text == "None") return make_literal(Value(), t.pos);
    static constexpr std::array kReserved = {"if", "else", "and", "or", "not", "in", "is"};
    if (contains(kReserved, t.text)) syntax(t.pos, "unexpected keyword '" + t.text + "'");
    if (is_punct("(")) return call(t);
    // entity.variable (exactly one dot, not followed by a call).
    if (is_punct(".") && peek(1).kind == Tok::Name && !is_punct("(", 2)) {
      const Token attr = peek(1);
      if (is_dunder(attr.text)) forbidden(attr.pos, "dunder names are not allowed");
      pos_ += 2;
      if (t.text == "math") return make_node(NodeKind::Name, t.pos, {}, attr.text);
      return make_node(NodeKind::Qualified, t.pos, {}, t.text + "." + attr.text);
    }
    return make_node(NodeKind::Name, t.pos, {}, t.text);
  }

  NodePtr paren(std::size_t at) {
    skip_newlines();
    if (is_punct(")")) {
      ++pos_;
      return make_node(NodeKind::TupleLit, at);
    }
    NodePtr first = expression();
    if (is_punct(")")) {
      ++pos_;
      return first;
    }
    std::vector<NodePtr> items{std::move(first)};
    while (is_punct(",")) {
      ++pos_;
      if (is_punct(")")) break;
      items.push_back(expression());
    }
    expect(")");
    return make_node(NodeKind::TupleLit, at, std::move(items));
  }

  NodePtr list_literal(std::size_t at) {
    std::vector<NodePtr> items;
    while (!is_punct("]")) {
      items.push_back(expression());
      if (is_name("for")) forbidden(peek().pos, "comprehensions are not allowed");
      if (is_punct(",")) {
        ++pos_;
        continue;
      }
      if (!is_punct("]")) syntax(peek().pos, "expected ',' or ']' in list" + got());
    }
    ++pos_;
    return make_node(NodeKind::ListLit, at, std::move(items));
  }

  NodePtr map_literal(std::size_t at) {
    std::vector<NodePtr> items;
    while (!is_punct("}")) {
      items.push_back(expression());
      if (!is_punct(":")) syntax(peek().pos, "expected ':' in dict literal (sets are not supported)");
      ++pos_;
      items.push_back(expression());
      if (is_punct(",")) {
        ++pos_;
        continue;
      }
      if (!is_punct("}")) syntax(peek().pos, "expected ',' or '}' in dict" + got());
    }
    ++pos_;
    return make_node(NodeKind::MapLit, at, std::move(items));
  }

  std::vector<Token> toks_;
  int depth_ = 0;
};

std::vector<Token> lex_nonempty(std::string_view text) {
  std::vector<Token> toks = Lexer(text).run();
  bool only_space = true;
  for (const auto& t : toks) {
    if (t.kind != Tok::End && t.kind != Tok::Newline) only_space = false;
  }
  if (only_space) throw ParseError(ParseErrorKind::Empty, 0, "empty expression");
  return toks;
}

}  // namespace

Expr parse_expression(std::string_view text) {
  Parser p(lex_nonempty(text));
  p.skip_newlines();
  NodePtr root = p.expression();
  if (p.is_punct("=")) {
    syntax(p.peek().pos, "assignment is not an expression");
  }
  p.finish_statement();
  return Expr(std::move(root), std::string(text));
}

Assignment parse_assignment(std::string_view text) {
  std::vector<Token> toks = lex_nonempty(text);
  Parser p(std::move(toks));
  p.skip_newlines();

  // name [ '.' name ] ( '=' | op'=' ) rhs
  std::size_t name_len = 0;
  if (p.peek().kind == Tok::Name) {
    name_len = 1;
    if (p.is_punct(".", 1) && p.peek(2).kind == Tok::Name) name_len = 3;
  }
  if (name_len > 0) {
    const Token& op = p.peek(name_len);
    static constexpr std::array kAugmented = {"+=", "-=", "*=", "/=", "//=", "%=", "**="};
    const bool plain = op.kind == Tok::Punct && op.text == "=";
    const bool augmented = op.kind == Tok::Punct && contains(kAugmented, op.text);
    if (plain || augmented) {
      std::string lhs = p.peek().text;
      if (name_len == 3) lhs += "." + p.peek(2).text;
      static constexpr std::array kReserved = {"True", "False", "None", "if", "else", "and", "or", "not", "in", "is"};
      if (contains(kReserved, p.peek().text)) syntax(p.peek().pos, "cannot assign to keyword");
      const std::size_t lhs_pos = p.peek().pos;
      p.pos_ += name_len + 1;
      const std::size_t rhs_start = p.peek().pos;
      if (p.at_end() || p.peek().kind == Tok::Newline) syntax(p.peek().pos, "missing right-hand side");
      NodePtr rhs = p.expression();
      const std::size_t rhs_end = p.peek().pos;
      p.finish_statement();
      std::string rhs_text(text.substr(rhs_start, rhs_end - rhs_start));
      while (!rhs_text.empty() && (rhs_text.back() == ' ' || rhs_text.back() == '\n' || rhs_text.back() == '\t' ||
                                   rhs_text.back() == '\r' || rhs_text.back() == ';')) {
        rhs_text.pop_back();
      }
      if (augmented) {
        std::string op_text = op.text.substr(0, op.text.size() - 1);
        Op bop = op_text == "**" ? Op::Pow : *binary_op(op_text);
        NodeKind target_kind = name_len == 3 ? NodeKind::Qualified : NodeKind::Name;
        rhs = make_binary(bop, make_node(target_kind, lhs_pos, {}, lhs), std::move(rhs), lhs_pos);
        rhs_text = lhs + " " + op_text + " (" + rhs_text + ")";
      }
      return {std::move(lhs), Expr(std::move(rhs), std::move(rhs_text))};
    }
  }

  NodePtr root = p.expression();
  if (p.is_punct("=")) {
    throw ParseError(ParseErrorKind::NotAnAssignment, p.peek().pos,
                     "assignment target must be a variable name");
  }
  p.finish_statement();
  if (root->kind == NodeKind::Method && root->name == "append" && root->children.size() == 2) {
    const NodePtr& target = root->children[0];
    if (target->kind == NodeKind::Name || target->kind == NodeKind::Qualified) {
      auto single = make_node(NodeKind::ListLit, root->position, {root->children[1]});
      auto rhs = std::make_shared<Node>(*make_binary(Op::Add, target, std::move(single), root->position));
      rhs->name = "Concat";
      const std::size_t arg_start = root->children[1]->position;
      const std::size_t arg_end = text.rfind(')');
      std::string arg(text.substr(arg_start, arg_end > arg_start ? arg_end - arg_start : 0));
      return {target->name, Expr(std::move(rhs), target->name + " + [" + arg + "]")};
    }
  }
  throw ParseError(ParseErrorKind::NotAnAssignment, 0, "expression has no assignment target");
}

}  // namespace simstream

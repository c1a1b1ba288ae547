#pragma once

#include "simstream/state.hpp"
#include "simstream/value.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace simstream {

// Sandbox bound on any container or text built during evaluation.
inline constexpr std::size_t kMaxContainerSize = 1'000'000;
// Parser nesting bound; keeps evaluation recursion bounded too.
inline constexpr int kMaxNestingDepth = 100;

enum class ParseErrorKind : std::uint8_t {
  Syntax,
  Empty,
  ForbiddenConstruct,
  MultipleStatements,
  NotAnAssignment,
};

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, std::size_t position, const std::string& message);
  ParseErrorKind kind() const { return kind_; }
  std::size_t position() const { return position_; }
  const std::string& detail() const { return detail_; }

 private:
  ParseErrorKind kind_;
  std::size_t position_;
  std::string detail_;
};

enum class EvalErrorKind : std::uint8_t {
  NameError,
  TypeMismatch,
  DivisionByZero,
  IndexOutOfRange,
  ValueError,
  Overflow,
  ResourceLimit,
};

std::string_view eval_error_name(EvalErrorKind kind);

class EvalError : public std::runtime_error {
 public:
  EvalError(EvalErrorKind kind, const std::string& message);
  EvalErrorKind kind() const { return kind_; }

 private:
  EvalErrorKind kind_;
};

enum class NodeKind : std::uint8_t {
  Literal,
  Name,       // bare identifier
  Qualified,  // entity.variable
  Unary,
  Binary,
  And,
  Or,
  Not,
  Compare,
  Conditional,  // children: then, cond, else
  Call,         // builtin by name
  Method,       // children[0] is the receiver
  Index,
  Slice,  // children: object, lower (or null literal), upper (or null literal)
  ListLit,
  TupleLit,
  MapLit,  // alternating key/value children
};

enum class Op : std::uint8_t {
  Add, Sub, Mul, Div, FloorDiv, Mod, Pow, Neg, Pos,
  Eq, Ne, Lt, Le, Gt, Ge, In, NotIn,
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind = NodeKind::Literal;
  Op op = Op::Add;
  Value literal;
  std::string name;  // identifier, callee, method; display name override for Binary
  std::vector<Op> compare_ops;
  std::vector<NodePtr> children;
  std::size_t position = 0;
};

/// Immutable parsed expression. Cheap to copy; safe to share across threads.
class Expr {
 public:
  Expr() = default;
  Expr(NodePtr root, std::string source) : root_(std::move(root)), source_(std::move(source)) {}

  static Expr constant(Value v);

  bool valid() const { return root_ != nullptr; }
  const Node& root() const { return *root_; }
  const NodePtr& root_ptr() const { return root_; }
  const std::string& source() const { return source_; }

  // Literal root, e.g. `use_lm: false`.
  bool is_constant() const { return root_ && root_->kind == NodeKind::Literal; }

 private:
  NodePtr root_;
  std::string source_;
};

struct Assignment {
  std::string lhs;
  Expr rhs;
};

Expr parse_expression(std::string_view text);

/// One statement: `name = expr`, `name op= expr`, or the mutation sugar
/// `name.append(expr)` which becomes `name = name + [expr]`.
Assignment parse_assignment(std::string_view text);

using HostFunction = std::function<Value(std::span<const Value>)>;
using HostFunctions = std::map<std::string, HostFunction, std::less<>>;

struct EvalContext {
  const State& state;
  std::string_view scope = {};
  const State* locals = nullptr;          // consulted before state
  const HostFunctions* host = nullptr;    // extra callables, e.g. metric helpers
};

Value evaluate(const Expr& expr, const EvalContext& ctx);

// Arithmetic with the evaluator's numeric tower and overflow checks.
Value binary_op(Op op, const Value& a, const Value& b);
Value evaluate(const Expr& expr, const State& state, std::string_view scope = {});

// Parse and evaluate a literal (or constant expression) against empty state.
Value parse_literal(std::string_view text);

/// Identifiers (bare and qualified) the expression reads, in first-use order.
std::vector<std::string> free_names(const Expr& expr);

/// S-expression form used in tests, e.g. `Add(Ident(time), Int(1))`.
std::string debug_string(const Expr& expr);

}  // namespace simstream

#include "simstream/expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace simstream {

std::string_view eval_error_name(EvalErrorKind kind) {
  switch (kind) {
    case EvalErrorKind::NameError: return "NameError";
    case EvalErrorKind::TypeMismatch: return "TypeMismatch";
    case EvalErrorKind::DivisionByZero: return "DivisionByZero";
    case EvalErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case EvalErrorKind::ValueError: return "ValueError";
    case EvalErrorKind::Overflow: return "Overflow";
    case EvalErrorKind::ResourceLimit: return "ResourceLimit";
  }
  return "EvalError";
}

EvalError::EvalError(EvalErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(eval_error_name(kind)) + ": " + message), kind_(kind) {}

namespace {

[[noreturn]] void fail(EvalErrorKind kind, const std::string& msg) { throw EvalError(kind, msg); }

std::string type_of(const Value& v) {
  if (v.is_tuple()) return "tuple";
  return std::string(kind_name(v.kind()));
}

const char* op_symbol(Op op) {
  switch (op) {
    case Op::Add: return "+";
    case Op::Sub: return "-";
    case Op::Mul: return "*";
    case Op::Div: return "/";
    case Op::FloorDiv: return "//";
    case Op::Mod: return "%";
    case Op::Pow: return "**";
    case Op::Neg: return "unary -";
    case Op::Pos: return "unary +";
    case Op::Eq: return "==";
    case Op::Ne: return "!=";
    case Op::Lt: return "<";
    case Op::Le: return "<=";
    case Op::Gt: return ">";
    case Op::Ge: return ">=";
    case Op::In: return "in";
    case Op::NotIn: return "not in";
  }
  return "?";
}

[[noreturn]] void bad_operands(Op op, const Value& a, const Value& b) {
  fail(EvalErrorKind::TypeMismatch, std::string("unsupported operand type(s) for ") + op_symbol(op) + ": '" +
                                        type_of(a) + "' and '" + type_of(b) + "'");
}

// Bool participates in arithmetic as 0/1, like Python.
bool intlike(const Value& v) { return v.is_int() || v.is_bool(); }
bool numeric(const Value& v) { return v.is_number() || v.is_bool(); }
std::int64_t to_int(const Value& v) { return v.is_bool() ? (v.as_bool() ? 1 : 0) : v.as_int(); }

void check_size(std::size_t n) {
  if (n > kMaxContainerSize) {
    fail(EvalErrorKind::ResourceLimit, "result would exceed " + std::to_string(kMaxContainerSize) + " elements");
  }
}

Value real_result(double r, double a, double b, const char* what) {
  if (std::isinf(r) && std::isfinite(a) && std::isfinite(b)) fail(EvalErrorKind::Overflow, std::string(what) + " overflow");
  return Value::real(r);
}

Value int_pow(std::int64_t base, std::int64_t exp) {
  std::int64_t result = 1;
  std::int64_t b = base;
  while (exp > 0) {
    if (exp & 1) {
      if (__builtin_mul_overflow(result, b, &result)) fail(EvalErrorKind::Overflow, "integer overflow in **");
    }
    exp >>= 1;
    if (exp > 0 && __builtin_mul_overflow(b, b, &b)) fail(EvalErrorKind::Overflow, "integer overflow in **");
  }
  return Value::integer(result);
}

Value repeat(const Value& seq, std::int64_t n) {
  if (n <= 0) return seq.is_text() ? Value::text("") : (seq.is_tuple() ? Value::tuple({}) : Value::list({}));
  if (seq.is_text()) {
    const auto& s = seq.as_text();
    if (!s.empty()) check_size(s.size() * static_cast<std::size_t>(std::min<std::int64_t>(n, kMaxContainerSize + 1)));
    std::string out;
    out.reserve(s.size() * static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out += s;
    return Value::text(std::move(out));
  }
  const auto& items = seq.as_list();
  if (!items.empty()) check_size(items.size() * static_cast<std::size_t>(std::min<std::int64_t>(n, kMaxContainerSize + 1)));
  ValueList out;
  out.reserve(items.size() * static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out.insert(out.end(), items.begin(), items.end());
  return seq.is_tuple() ? Value::tuple(std::move(out)) : Value::list(std::move(out));
}

double py_fmod(double a, double b) {
  double r = std::fmod(a, b);
  if (r != 0.0 && ((r < 0) != (b < 0))) r += b;
  return r;
}

}  // namespace

Value binary_op(Op op, const Value& a, const Value& b) {
  if (op == Op::Add) {
    if (a.is_text() && b.is_text()) {
      check_size(a.as_text().size() + b.as_text().size());
      return Value::text(a.as_text() + b.as_text());
    }
    if (a.is_list() && b.is_list() && a.is_tuple() == b.is_tuple()) {
      const auto& x = a.as_list();
      const auto& y = b.as_list();
      check_size(x.size() + y.size());
      ValueList out;
      out.reserve(x.size() + y.size());
      out.insert(out.end(), x.begin(), x.end());
      out.insert(out.end(), y.begin(), y.end());
      return a.is_tuple() ? Value::tuple(std::move(out)) : Value::list(std::move(out));
    }
  }
  if (op == Op::Mul) {
    if ((a.is_text() || a.is_list()) && intlike(b)) return repeat(a, to_int(b));
    if (intlike(a) && (b.is_text() || b.is_list())) return repeat(b, to_int(a));
  }
  if (!numeric(a) || !numeric(b)) bad_operands(op, a, b);

  if (intlike(a) && intlike(b)) {
    const std::int64_t x = to_int(a);
    const std::int64_t y = to_int(b);
    std::int64_t r = 0;
    switch (op) {
      case Op::Add:
        if (__builtin_add_overflow(x, y, &r)) fail(EvalErrorKind::Overflow, "integer overflow in +");
        return Value::integer(r);
      case Op::Sub:
        if (__builtin_sub_overflow(x, y, &r)) fail(EvalErrorKind::Overflow, "integer overflow in -");
        return Value::integer(r);
      case Op::Mul:
        if (__builtin_mul_overflow(x, y, &r)) fail(EvalErrorKind::Overflow, "integer overflow in *");
        return Value::integer(r);
      case Op::Div:
        if (y == 0) fail(EvalErrorKind::DivisionByZero, "division by zero");
        return Value::real(static_cast<double>(x) / static_cast<double>(y));
      case Op::FloorDiv: {
        if (y == 0) fail(EvalErrorKind::DivisionByZero, "integer division by zero");
        if (x == std::numeric_limits<std::int64_t>::min() && y == -1) fail(EvalErrorKind::Overflow, "integer overflow in //");
        std::int64_t q = x / y;
        if ((x % y != 0) && ((x < 0) != (y < 0))) --q;
        return Value::integer(q);
      }
      case Op::Mod: {
        if (y == 0) fail(EvalErrorKind::DivisionByZero, "integer modulo by zero");
        if (y == -1) return Value::integer(0);
        std::int64_t m = x % y;
        if (m != 0 && ((m < 0) != (y < 0))) m += y;
        return Value::integer(m);
      }
      case Op::Pow:
        if (y >= 0) return int_pow(x, y);
        if (x == 0) fail(EvalErrorKind::DivisionByZero, "0 cannot be raised to a negative power");
        return Value::real(std::pow(static_cast<double>(x), static_cast<double>(y)));
      default: break;
    }
    bad_operands(op, a, b);
  }

  const double x = a.to_double();
  const double y = b.to_double();
  switch (op) {
    case Op::Add: return Value::real(x + y);
    case Op::Sub: return Value::real(x - y);
    case Op::Mul: return Value::real(x * y);
    case Op::Div:
      if (y == 0.0) fail(EvalErrorKind::DivisionByZero, "float division by zero");
      return Value::real(x / y);
    case Op::FloorDiv:
      if (y == 0.0) fail(EvalErrorKind::DivisionByZero, "float floor division by zero");
      return Value::real(std::floor(x / y));
    case Op::Mod:
      if (y == 0.0) fail(EvalErrorKind::DivisionByZero, "float modulo by zero");
      return Value::real(py_fmod(x, y));
    case Op::Pow: {
      if (x == 0.0 && y < 0) fail(EvalErrorKind::DivisionByZero, "0.0 cannot be raised to a negative power");
      const double r = std::pow(x, y);
      if (std::isnan(r) && !std::isnan(x) && !std::isnan(y)) fail(EvalErrorKind::ValueError, "math domain error in **");
      return real_result(r, x, y, "**");
    }
    default: break;
  }
  bad_operands(op, a, b);
}

namespace {

Value unary_op(Op op, const Value& v) {
  if (!numeric(v)) {
    fail(EvalErrorKind::TypeMismatch, std::string("bad operand type for ") + op_symbol(op) + ": '" + type_of(v) + "'");
  }
  if (intlike(v)) {
    const std::int64_t x = to_int(v);
    if (op == Op::Pos) return Value::integer(x);
    if (x == std::numeric_limits<std::int64_t>::min()) fail(EvalErrorKind::Overflow, "integer overflow in unary -");
    return Value::integer(-x);
  }
  return Value::real(op == Op::Neg ? -v.as_real() : v.as_real());
}

bool contains_value(const Value& container, const Value& item) {
  if (container.is_list()) {
    for (const auto& x : container.as_list()) {
      if (x == item) return true;
    }
    return false;
  }
  if (container.is_text()) {
    if (!item.is_text()) {
      fail(EvalErrorKind::TypeMismatch, "'in <string>' requires string as left operand, not " + type_of(item));
    }
    return container.as_text().find(item.as_text()) != std::string::npos;
  }
  if (container.is_map()) {
    return item.is_text() && container.find(item.as_text()) != nullptr;
  }
  fail(EvalErrorKind::TypeMismatch, "argument of type '" + type_of(container) + "' is not iterable");
}

bool compare(Op op, const Value& a, const Value& b) {
  switch (op) {
    case Op::Eq: return a == b;
    case Op::Ne: return a != b;
    case Op::In: return contains_value(b, a);
    case Op::NotIn: return !contains_value(b, a);
    default: break;
  }
  if ((a.is_real() && std::isnan(a.as_real())) || (b.is_real() && std::isnan(b.as_real()))) {
    if (numeric(a) && numeric(b)) return false;
  }
  int c = 0;
  try {
    c = compare_values(a, b);
  } catch (const std::invalid_argument&) {
    fail(EvalErrorKind::TypeMismatch, std::string("'") + op_symbol(op) + "' not supported between instances of '" +
                                          type_of(a) + "' and '" + type_of(b) + "'");
  }
  switch (op) {
    case Op::Lt: return c < 0;
    case Op::Le: return c <= 0;
    case Op::Gt: return c > 0;
    case Op::Ge: return c >= 0;
    default: return false;
  }
}

std::int64_t index_arg(const Value& v, const char* what) {
  if (!intlike(v)) fail(EvalErrorKind::TypeMismatch, std::string(what) + " indices must be integers, not " + type_of(v));
  return to_int(v);
}

Value index_value(const Value& obj, const Value& idx) {
  if (obj.is_map()) {
    if (!idx.is_text()) fail(EvalErrorKind::IndexOutOfRange, "key " + render_value(idx) + " not found");
    const Value* v = obj.find(idx.as_text());
    if (v == nullptr) fail(EvalErrorKind::IndexOutOfRange, "key " + render_value(idx) + " not found");
    return *v;
  }
  if (obj.is_list()) {
    const auto& items = obj.as_list();
    std::int64_t i = index_arg(idx, obj.is_tuple() ? "tuple" : "list");
    const auto n = static_cast<std::int64_t>(items.size());
    if (i < 0) i += n;
    if (i < 0 || i >= n) fail(EvalErrorKind::IndexOutOfRange, std::string(obj.is_tuple() ? "tuple" : "list") + " index out of range");
    return items[static_cast<std::size_t>(i)];
  }
  if (obj.is_text()) {
    const auto& s = obj.as_text();
    std::int64_t i = index_arg(idx, "string");
    const auto n = static_cast<std::int64_t>(s.size());
    if (i < 0) i += n;
    if (i < 0 || i >= n) fail(EvalErrorKind::IndexOutOfRange, "string index out of range");
    return Value::text(std::string(1, s[static_cast<std::size_t>(i)]));
  }
  fail(EvalErrorKind::TypeMismatch, "'" + type_of(obj) + "' object is not subscriptable");
}

Value slice_value(const Value& obj, const Value& lo, const Value& hi) {
  std::size_t n = 0;
  if (obj.is_list()) {
    n = obj.as_list().size();
  } else if (obj.is_text()) {
    n = obj.as_text().size();
  } else {
    fail(EvalErrorKind::TypeMismatch, "'" + type_of(obj) + "' object is not sliceable");
  }
  const auto len = static_cast<std::int64_t>(n);
  auto clamp_bound = [len](const Value& v, std::int64_t dflt) {
    if (v.is_null()) return dflt;
    std::int64_t i = index_arg(v, "slice");
    if (i < 0) i += len;
    return std::clamp<std::int64_t>(i, 0, len);
  };
  const std::int64_t a = clamp_bound(lo, 0);
  const std::int64_t b = std::max(a, clamp_bound(hi, len));
  if (obj.is_text()) return Value::text(obj.as_text().substr(static_cast<std::size_t>(a), static_cast<std::size_t>(b - a)));
  const auto& items = obj.as_list();
  ValueList out(items.begin() + a, items.begin() + b);
  return obj.is_tuple() ? Value::tuple(std::move(out)) : Value::list(std::move(out));
}

// ---------------------------------------------------------------- builtins

using Args = std::span<const Value>;

void arity(std::string_view fn, Args args, std::size_t lo, std::size_t hi) {
  if (args.size() < lo || args.size() > hi) {
    std::string expect = lo == hi ? std::to_string(lo) : std::to_string(lo) + " to " + std::to_string(hi);
    fail(EvalErrorKind::TypeMismatch,
         std::string(fn) + "() takes " + expect + " argument(s) (" + std::to_string(args.size()) + " given)");
  }
}

double num_arg(std::string_view fn, const Value& v) {
  if (!numeric(v)) fail(EvalErrorKind::TypeMismatch, std::string(fn) + "() requires a number, not '" + type_of(v) + "'");
  return v.to_double();
}

// Elements of an iterable argument.
ValueList iterate(std::string_view fn, const Value& v) {
  if (v.is_list()) return v.as_list();
  if (v.is_text()) {
    ValueList out;
    for (char c : v.as_text()) out.push_back(Value::text(std::string(1, c)));
    return out;
  }
  if (v.is_map()) {
    ValueList out;
    for (const auto& [k, _] : v.as_map()) out.push_back(Value::text(k));
    return out;
  }
  fail(EvalErrorKind::TypeMismatch, std::string(fn) + "(): '" + type_of(v) + "' object is not iterable");
}

Value real_fn(std::string_view fn, double r, double x) {
  if (std::isnan(r) && !std::isnan(x)) fail(EvalErrorKind::ValueError, "math domain error in " + std::string(fn));
  if (std::isinf(r) && std::isfinite(x)) {
    if (fn == "exp") fail(EvalErrorKind::Overflow, "math range error in exp");
    fail(EvalErrorKind::ValueError, "math domain error in " + std::string(fn));
  }
  return Value::real(r);
}

Value to_integer_from_real(double d, std::string_view fn) {
  if (std::isnan(d)) fail(EvalErrorKind::ValueError, "cannot convert float NaN to integer");
  if (std::isinf(d)) fail(EvalErrorKind::Overflow, "cannot convert float infinity to integer");
  if (d < -9223372036854775808.0 || d >= 9223372036854775808.0) {
    fail(EvalErrorKind::Overflow, std::string(fn) + "() result does not fit in 64 bits");
  }
  return Value::integer(static_cast<std::int64_t>(d));
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\n\r\f\v");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\n\r\f\v");
  return s.substr(b, e - b + 1);
}

Value min_max(std::string_view fn, Args args, bool want_max) {
  if (args.empty()) fail(EvalErrorKind::TypeMismatch, std::string(fn) + "() expected at least 1 argument");
  ValueList items = args.size() == 1 ? iterate(fn, args[0]) : ValueList(args.begin(), args.end());
  if (items.empty()) fail(EvalErrorKind::ValueError, std::string(fn) + "() arg is an empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < items.size(); ++i) {
    const bool better = want_max ? compare(Op::Gt, items[i], items[best]) : compare(Op::Lt, items[i], items[best]);
    if (better) best = i;
  }
  return items[best];
}

Value sum_of(Args args) {
  Value acc = args.size() > 1 ? args[1] : Value::integer(0);
  if (acc.is_text()) fail(EvalErrorKind::TypeMismatch, "sum() can't sum strings");
  for (const auto& v : iterate("sum", args[0])) acc = binary_op(Op::Add, acc, v);
  return acc;
}

Value sorted_of(const Value& v) {
  ValueList items = iterate("sorted", v);
  std::stable_sort(items.begin(), items.end(), [](const Value& a, const Value& b) { return compare(Op::Lt, a, b); });
  return Value::list(std::move(items));
}

Value range_of(Args args) {
  std::int64_t start = 0;
  std::int64_t stop = 0;
  std::int64_t step = 1;
  for (const auto& a : args) {
    if (!intlike(a)) fail(EvalErrorKind::TypeMismatch, "range() arguments must be integers, not " + type_of(a));
  }
  if (args.size() == 1) {
    stop = to_int(args[0]);
  } else {
    start = to_int(args[0]);
    stop = to_int(args[1]);
    if (args.size() == 3) step = to_int(args[2]);
  }
  if (step == 0) fail(EvalErrorKind::ValueError, "range() arg 3 must not be zero");
  // Count in long double to avoid overflow on extreme bounds.
  long double span = static_cast<long double>(stop) - static_cast<long double>(start);
  long double count = step > 0 ? std::ceil(span / step) : std::ceil(span / step);
  if (count < 0) count = 0;
  if (count > static_cast<long double>(kMaxContainerSize)) {
    fail(EvalErrorKind::ResourceLimit, "range() would exceed " + std::to_string(kMaxContainerSize) + " elements");
  }
  ValueList out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
    out.push_back(Value::integer(start + static_cast<std::int64_t>(i) * step));
  }
  return Value::list(std::move(out));
}

Value round_of(Args args) {
  const Value& x = args[0];
  if (!numeric(x)) fail(EvalErrorKind::TypeMismatch, "round() requires a number, not '" + type_of(x) + "'");
  if (args.size() == 1 || args[1].is_null()) {
    if (intlike(x)) return Value::integer(to_int(x));
    return to_integer_from_real(std::nearbyint(x.as_real()), "round");
  }
  if (!intlike(args[1])) fail(EvalErrorKind::TypeMismatch, "round() ndigits must be an integer");
  const std::int64_t nd = to_int(args[1]);
  if (intlike(x)) {
    if (nd >= 0) return Value::integer(to_int(x));
    if (nd < -18) return Value::integer(0);
    const std::int64_t scale = static_cast<std::int64_t>(std::pow(10.0, static_cast<double>(-nd)));
    const double q = std::nearbyint(static_cast<double>(to_int(x)) / static_cast<double>(scale));
    return Value::integer(static_cast<std::int64_t>(q) * scale);
  }
  const double v = x.as_real();
  if (!std::isfinite(v) || nd > 300) return Value::real(v);
  if (nd < -308) return Value::real(0.0 * v);
  // Decide ties on the exact decimal expansion, as Python does.
  char buf[400];
  std::snprintf(buf, sizeof(buf), "%.*f", static_cast<int>(std::max<std::int64_t>(nd, 0)), v);
  if (nd >= 0) {
    double r = 0;
    std::from_chars(buf, buf + std::char_traits<char>::length(buf), r);
    return Value::real(r);
  }
  const double scale = std::pow(10.0, static_cast<double>(-nd));
  return Value::real(std::nearbyint(v / scale) * scale);
}

Value mean_of(const Value& v) {
  ValueList items = iterate("mean", v);
  if (items.empty()) fail(EvalErrorKind::ValueError, "mean requires at least one data point");
  bool all_int = true;
  std::int64_t isum = 0;
  double dsum = 0;
  for (const auto& x : items) {
    if (!numeric(x)) fail(EvalErrorKind::TypeMismatch, "mean() requires numbers, not '" + type_of(x) + "'");
    if (intlike(x) && all_int) {
      if (__builtin_add_overflow(isum, to_int(x), &isum)) all_int = false;
    } else {
      all_int = false;
    }
    dsum += x.to_double();
  }
  const auto n = static_cast<std::int64_t>(items.size());
  if (all_int && isum % n == 0) return Value::integer(isum / n);
  return Value::real(dsum / static_cast<double>(n));
}

Value median_of(const Value& v) {
  ValueList items = sorted_of(v).as_list();
  if (items.empty()) fail(EvalErrorKind::ValueError, "no median for empty data");
  const std::size_t n = items.size();
  if (n % 2 == 1) return items[n / 2];
  return binary_op(Op::Div, binary_op(Op::Add, items[n / 2 - 1], items[n / 2]), Value::integer(2));
}

Value int_of(const Value& v) {
  switch (v.kind()) {
    case ValueKind::Int: return v;
    case ValueKind::Bool: return Value::integer(to_int(v));
    case ValueKind::Real: return to_integer_from_real(std::trunc(v.as_real()), "int");
    case ValueKind::Text: {
      std::string_view s = trim(v.as_text());
      if (!s.empty() && s.front() == '+') s.remove_prefix(1);
      std::int64_t out = 0;
      auto res = std::from_chars(s.data(), s.data() + s.size(), out);
      if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        fail(EvalErrorKind::ValueError, "invalid literal for int(): " + quote_text(v.as_text()));
      }
      return Value::integer(out);
    }
    default: fail(EvalErrorKind::TypeMismatch, "int() argument must be a string or a number, not '" + type_of(v) + "'");
  }
}

Value float_of(const Value& v) {
  if (numeric(v)) return Value::real(v.to_double());
  if (!v.is_text()) fail(EvalErrorKind::TypeMismatch, "float() argument must be a string or a number, not '" + type_of(v) + "'");
  std::string s(trim(v.as_text()));
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  bool neg = false;
  std::string_view body = lower;
  if (!body.empty() && (body.front() == '+' || body.front() == '-')) {
    neg = body.front() == '-';
    body.remove_prefix(1);
  }
  if (body == "inf" || body == "infinity") return Value::real(neg ? -HUGE_VAL : HUGE_VAL);
  if (body == "nan") return Value::real(std::numeric_limits<double>::quiet_NaN());
  double out = 0;
  std::string_view sv = s;
  if (!sv.empty() && sv.front() == '+') sv.remove_prefix(1);
  auto res = std::from_chars(sv.data(), sv.data() + sv.size(), out);
  if (sv.empty() || (res.ec != std::errc() && res.ec != std::errc::result_out_of_range) || res.ptr != sv.data() + sv.size()) {
    fail(EvalErrorKind::ValueError, "could not convert string to float: " + quote_text(v.as_text()));
  }
  return Value::real(out);
}

Value call_builtin(const std::string& fn, Args args, bool& found) {
  found = true;
  auto math1 = [&](double (*f)(double)) {
    arity(fn, args, 1, 1);
    const double x = num_arg(fn, args[0]);
    return real_fn(fn, f(x), x);
  };
  if (fn == "abs") {
    arity(fn, args, 1, 1);
    if (intlike(args[0])) {
      const std::int64_t x = to_int(args[0]);
      if (x == std::numeric_limits<std::int64_t>::min()) fail(EvalErrorKind::Overflow, "integer overflow in abs()");
      return Value::integer(x < 0 ? -x : x);
    }
    return Value::real(std::fabs(num_arg(fn, args[0])));
  }
  if (fn == "min") return min_max(fn, args, false);
  if (fn == "max") return min_max(fn, args, true);
  if (fn == "len") {
    arity(fn, args, 1, 1);
    const Value& v = args[0];
    if (v.is_text()) return Value::integer(static_cast<std::int64_t>(v.as_text().size()));
    if (v.is_list()) return Value::integer(static_cast<std::int64_t>(v.as_list().size()));
    if (v.is_map()) return Value::integer(static_cast<std::int64_t>(v.as_map().size()));
    fail(EvalErrorKind::TypeMismatch, "object of type '" + type_of(v) + "' has no len()");
  }
  if (fn == "round") {
    arity(fn, args, 1, 2);
    return round_of(args);
  }
  if (fn == "sum") {
    arity(fn, args, 1, 2);
    return sum_of(args);
  }
  if (fn == "int") {
    arity(fn, args, 0, 1);
    return args.empty() ? Value::integer(0) : int_of(args[0]);
  }
  if (fn == "float") {
    arity(fn, args, 0, 1);
    return args.empty() ? Value::real(0.0) : float_of(args[0]);
  }
  if (fn == "str") {
    arity(fn, args, 0, 1);
    return Value::text(args.empty() ? std::string() : display_value(args[0]));
  }
  if (fn == "bool") {
    arity(fn, args, 0, 1);
    return Value::boolean(!args.empty() && args[0].truthy());
  }
  if (fn == "sorted") {
    arity(fn, args, 1, 1);
    return sorted_of(args[0]);
  }
  if (fn == "reversed") {
    arity(fn, args, 1, 1);
    ValueList items = iterate(fn, args[0]);
    std::reverse(items.begin(), items.end());
    return Value::list(std::move(items));
  }
  if (fn == "range") {
    arity(fn, args, 1, 3);
    return range_of(args);
  }
  if (fn == "list" || fn == "tuple") {
    arity(fn, args, 0, 1);
    ValueList items = args.empty() ? ValueList{} : iterate(fn, args[0]);
    return fn == "list" ? Value::list(std::move(items)) : Value::tuple(std::move(items));
  }
  if (fn == "any" || fn == "all") {
    arity(fn, args, 1, 1);
    const bool want = fn == "any";
    for (const auto& v : iterate(fn, args[0])) {
      if (v.truthy() == want) return Value::boolean(want);
    }
    return Value::boolean(!want);
  }
  if (fn == "sin") return math1(std::sin);
  if (fn == "cos") return math1(std::cos);
  if (fn == "tan") return math1(std::tan);
  if (fn == "asin") return math1(std::asin);
  if (fn == "acos") return math1(std::acos);
  if (fn == "atan") return math1(std::atan);
  if (fn == "sqrt") return math1(std::sqrt);
  if (fn == "exp") return math1(std::exp);
  if (fn == "log10") {
    arity(fn, args, 1, 1);
    const double x = num_arg(fn, args[0]);
    if (x <= 0) fail(EvalErrorKind::ValueError, "math domain error in log10");
    return Value::real(std::log10(x));
  }
  if (fn == "log") {
    arity(fn, args, 1, 2);
    const double x = num_arg(fn, args[0]);
    if (x <= 0) fail(EvalErrorKind::ValueError, "math domain error in log");
    if (args.size() == 1) return Value::real(std::log(x));
    const double base = num_arg(fn, args[1]);
    if (base <= 0 || base == 1.0) fail(base == 1.0 ? EvalErrorKind::DivisionByZero : EvalErrorKind::ValueError, "invalid log base");
    return Value::real(std::log(x) / std::log(base));
  }
  if (fn == "atan2" || fn == "hypot") {
    arity(fn, args, 2, 2);
    const double y = num_arg(fn, args[0]);
    const double x = num_arg(fn, args[1]);
    return Value::real(fn == "atan2" ? std::atan2(y, x) : std::hypot(y, x));
  }
  if (fn == "floor" || fn == "ceil" || fn == "trunc") {
    arity(fn, args, 1, 1);
    if (intlike(args[0])) return Value::integer(to_int(args[0]));
    const double x = num_arg(fn, args[0]);
    const double r = fn == "floor" ? std::floor(x) : (fn == "ceil" ? std::ceil(x) : std::trunc(x));
    return to_integer_from_real(r, fn);
  }
  if (fn == "pow") {
    arity(fn, args, 2, 2);
    return binary_op(Op::Pow, args[0], args[1]);
  }
  if (fn == "mean" || fn == "fmean") {
    arity(fn, args, 1, 1);
    Value m = mean_of(args[0]);
    return fn == "fmean" ? Value::real(m.to_double()) : m;
  }
  if (fn == "median") {
    arity(fn, args, 1, 1);
    return median_of(args[0]);
  }
  if (fn == "isclose") {
    arity(fn, args, 2, 2);
    const double a = num_arg(fn, args[0]);
    const double b = num_arg(fn, args[1]);
    return Value::boolean(a == b || std::fabs(a - b) <= 1e-9 * std::max(std::fabs(a), std::fabs(b)));
  }
  found = false;
  return {};
}

// ----------------------------------------------------------------- methods

std::string format_text(const std::string& fmt, Args args) {
  std::string out;
  std::size_t auto_index = 0;
  for (std::size_t i = 0; i < fmt.size(); ++i) {
    const char c = fmt[i];
    if (c == '}') {
      if (i + 1 < fmt.size() && fmt[i + 1] == '}') ++i;
      out.push_back('}');
      continue;
    }
    if (c != '{') {
      out.push_back(c);
      continue;
    }
    if (i + 1 < fmt.size() && fmt[i + 1] == '{') {
      out.push_back('{');
      ++i;
      continue;
    }
    const auto close = fmt.find('}', i);
    if (close == std::string::npos) fail(EvalErrorKind::ValueError, "single '{' encountered in format string");
    std::string field = fmt.substr(i + 1, close - i - 1);
    std::string spec;
    if (const auto colon = field.find(':'); colon != std::string::npos) {
      spec = field.substr(colon + 1);
      field.resize(colon);
    }
    std::size_t idx = auto_index;
    if (field.empty()) {
      ++auto_index;
    } else {
      auto res = std::from_chars(field.data(), field.data() + field.size(), idx);
      if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        fail(EvalErrorKind::ValueError, "only positional format fields are supported");
      }
    }
    if (idx >= args.size()) fail(EvalErrorKind::IndexOutOfRange, "format index " + std::to_string(idx) + " out of range");
    const Value& v = args[idx];
    if (spec.empty()) {
      out += display_value(v);
    } else if (spec.size() >= 3 && spec[0] == '.' && spec.back() == 'f') {
      int prec = 0;
      std::from_chars(spec.data() + 1, spec.data() + spec.size() - 1, prec);
      char buf[512];
      std::snprintf(buf, sizeof(buf), "%.*f", std::clamp(prec, 0, 100), num_arg("format", v));
      out += buf;
    } else if (spec == "d") {
      if (!intlike(v)) fail(EvalErrorKind::ValueError, "format code 'd' requires an integer");
      out += std::to_string(to_int(v));
    } else {
      fail(EvalErrorKind::ValueError, "unsupported format spec '" + spec + "'");
    }
    i = close;
  }
  check_size(out.size());
  return out;
}

const std::string& text_arg(std::string_view method, const Value& v) {
  if (!v.is_text()) fail(EvalErrorKind::TypeMismatch, std::string(method) + "() argument must be str, not " + type_of(v));
  return v.as_text();
}

Value split_text(const std::string& s, Args args) {
  ValueList out;
  if (args.empty() || args[0].is_null()) {
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
      if (i >= s.size()) break;
      std::size_t j = i;
      while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back(Value::text(s.substr(i, j - i)));
      i = j;
    }
    return Value::list(std::move(out));
  }
  const std::string& sep = text_arg("split", args[0]);
  if (sep.empty()) fail(EvalErrorKind::ValueError, "empty separator");
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string::npos) break;
    out.push_back(Value::text(s.substr(start, pos - start)));
    start = pos + sep.size();
  }
  out.push_back(Value::text(s.substr(start)));
  return Value::list(std::move(out));
}

Value strip_text(const std::string& s, Args args, bool left, bool right) {
  std::string chars = " \t\n\r\f\v";
  if (!args.empty() && !args[0].is_null()) chars = text_arg("strip", args[0]);
  std::size_t b = 0;
  std::size_t e = s.size();
  if (left) {
    while (b < e && chars.find(s[b]) != std::string::npos) ++b;
  }
  if (right) {
    while (e > b && chars.find(s[e - 1]) != std::string::npos) --e;
  }
  return Value::text(s.substr(b, e - b));
}

Value call_method(const std::string& name, const Value& recv, Args args) {
  if (recv.is_list()) {
    const auto& items = recv.as_list();
    if (name == "append") {
      arity(name, args, 1, 1);
      if (recv.is_tuple()) fail(EvalErrorKind::TypeMismatch, "'tuple' object has no attribute 'append'");
      return binary_op(Op::Add, recv, Value::list({args[0]}));
    }
    if (name == "count") {
      arity(name, args, 1, 1);
      return Value::integer(static_cast<std::int64_t>(std::count(items.begin(), items.end(), args[0])));
    }
    if (name == "index") {
      arity(name, args, 1, 1);
      auto it = std::find(items.begin(), items.end(), args[0]);
      if (it == items.end()) fail(EvalErrorKind::ValueError, render_value(args[0]) + " is not in list");
      return Value::integer(it - items.begin());
    }
  } else if (recv.is_text()) {
    const std::string& s = recv.as_text();
    if (name == "upper" || name == "lower" || name == "title" || name == "capitalize") {
      arity(name, args, 0, 0);
      std::string out = s;
      bool word_start = true;
      for (std::size_t i = 0; i < out.size(); ++i) {
        auto c = static_cast<unsigned char>(out[i]);
        if (name == "upper") {
          out[i] = static_cast<char>(std::toupper(c));
        } else if (name == "lower") {
          out[i] = static_cast<char>(std::tolower(c));
        } else if (name == "title") {
          out[i] = static_cast<char>(word_start ? std::toupper(c) : std::tolower(c));
          word_start = !std::isalpha(c);
        } else {
          out[i] = static_cast<char>(i == 0 ? std::toupper(c) : std::tolower(c));
        }
      }
      return Value::text(std::move(out));
    }
    if (name == "strip" || name == "lstrip" || name == "rstrip") {
      arity(name, args, 0, 1);
      return strip_text(s, args, name != "rstrip", name != "lstrip");
    }
    if (name == "split") {
      arity(name, args, 0, 1);
      return split_text(s, args);
    }
    if (name == "join") {
      arity(name, args, 1, 1);
      std::string out;
      bool first = true;
      for (const auto& v : iterate("join", args[0])) {
        if (!first) out += s;
        first = false;
        out += text_arg("join", v);
        check_size(out.size());
      }
      return Value::text(std::move(out));
    }
    if (name == "replace") {
      arity(name, args, 2, 2);
      const std::string& from = text_arg(name, args[0]);
      const std::string& to = text_arg(name, args[1]);
      std::string out;
      if (from.empty()) {
        for (char c : s) {
          out += to;
          out.push_back(c);
          check_size(out.size());
        }
        out += to;
        return Value::text(std::move(out));
      }
      std::size_t start = 0;
      while (true) {
        const auto pos = s.find(from, start);
        if (pos == std::string::npos) break;
        out.append(s, start, pos - start);
        out += to;
        check_size(out.size());
        start = pos + from.size();
      }
      out.append(s, start);
      return Value::text(std::move(out));
    }
    if (name == "startswith" || name == "endswith") {
      arity(name, args, 1, 1);
      const std::string& p = text_arg(name, args[0]);
      return Value::boolean(name == "startswith" ? s.starts_with(p) : s.ends_with(p));
    }
    if (name == "find") {
      arity(name, args, 1, 1);
      const auto pos = s.find(text_arg(name, args[0]));
      return Value::integer(pos == std::string::npos ? -1 : static_cast<std::int64_t>(pos));
    }
    if (name == "count") {
      arity(name, args, 1, 1);
      const std::string& p = text_arg(name, args[0]);
      if (p.empty()) return Value::integer(static_cast<std::int64_t>(s.size() + 1));
      std::int64_t n = 0;
      for (auto pos = s.find(p); pos != std::string::npos; pos = s.find(p, pos + p.size())) ++n;
      return Value::integer(n);
    }
    if (name == "index") {
      arity(name, args, 1, 1);
      const auto pos = s.find(text_arg(name, args[0]));
      if (pos == std::string::npos) fail(EvalErrorKind::ValueError, "substring not found");
      return Value::integer(static_cast<std::int64_t>(pos));
    }
    if (name == "format") return Value::text(format_text(s, args));
  } else if (recv.is_map()) {
    if (name == "get") {
      arity(name, args, 1, 2);
      const Value* v = args[0].is_text() ? recv.find(args[0].as_text()) : nullptr;
      if (v != nullptr) return *v;
      return args.size() > 1 ? args[1] : Value();
    }
    if (name == "keys" || name == "values" || name == "items") {
      arity(name, args, 0, 0);
      ValueList out;
      for (const auto& [k, v] : recv.as_map()) {
        if (name == "keys") {
          out.push_back(Value::text(k));
        } else if (name == "values") {
          out.push_back(v);
        } else {
          out.push_back(Value::tuple({Value::text(k), v}));
        }
      }
      return Value::list(std::move(out));
    }
  }
  fail(EvalErrorKind::TypeMismatch, "'" + type_of(recv) + "' object has no method '" + name + "'");
}

// --------------------------------------------------------------- evaluator

const Value* constant(std::string_view name) {
  static const Value pi = Value::real(std::numbers::pi);
  static const Value e = Value::real(std::numbers::e);
  static const Value tau = Value::real(2 * std::numbers::pi);
  static const Value inf = Value::real(HUGE_VAL);
  static const Value nan = Value::real(std::numeric_limits<double>::quiet_NaN());
  if (name == "pi") return &pi;
  if (name == "e") return &e;
  if (name == "tau") return &tau;
  if (name == "inf") return &inf;
  if (name == "nan") return &nan;
  return nullptr;
}

class Evaluator {
 public:
  explicit Evaluator(const EvalContext& ctx) : ctx_(ctx) {}

  Value eval(const Node& n) {
    switch (n.kind) {
      case NodeKind::Literal: return n.literal;
      case NodeKind::Name: return lookup(n.name, false);
      case NodeKind::Qualified: return lookup(n.name, true);
      case NodeKind::Unary: return unary_op(n.op, eval(*n.children[0]));
      case NodeKind::Binary: return binary_op(n.op, eval(*n.children[0]), eval(*n.children[1]));
      case NodeKind::And: {
        Value v;
        for (const auto& c : n.children) {
          v = eval(*c);
          if (!v.truthy()) return v;
        }
        return v;
      }
      case NodeKind::Or: {
        Value v;
        for (const auto& c : n.children) {
          v = eval(*c);
          if (v.truthy()) return v;
        }
        return v;
      }
      case NodeKind::Not: return Value::boolean(!eval(*n.children[0]).truthy());
      case NodeKind::Compare: {
        Value left = eval(*n.children[0]);
        for (std::size_t i = 0; i < n.compare_ops.size(); ++i) {
          Value right = eval(*n.children[i + 1]);
          if (!compare(n.compare_ops[i], left, right)) return Value::boolean(false);
          left = std::move(right);
        }
        return Value::boolean(true);
      }
      case NodeKind::Conditional:
        return eval(*n.children[1]).truthy() ? eval(*n.children[0]) : eval(*n.children[2]);
      case NodeKind::Call: return call(n);
      case NodeKind::Method: {
        Value recv = eval(*n.children[0]);
        ValueList args = eval_children(n, 1);
        return call_method(n.name, recv, args);
      }
      case NodeKind::Index: return index_value(eval(*n.children[0]), eval(*n.children[1]));
      case NodeKind::Slice: return slice_value(eval(*n.children[0]), eval(*n.children[1]), eval(*n.children[2]));
      case NodeKind::ListLit: return Value::list(eval_children(n, 0));
      case NodeKind::TupleLit: return Value::tuple(eval_children(n, 0));
      case NodeKind::MapLit: {
        MapEntries entries;
        for (std::size_t i = 0; i + 1 < n.children.size(); i += 2) {
          Value k = eval(*n.children[i]);
          if (!k.is_text()) fail(EvalErrorKind::TypeMismatch, "dict keys must be str, not " + type_of(k));
          Value v = eval(*n.children[i + 1]);
          auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.first == k.as_text(); });
          if (it != entries.end()) {
            it->second = std::move(v);
          } else {
            entries.emplace_back(k.as_text(), std::move(v));
          }
        }
        return Value::map(std::move(entries));
      }
    }
    fail(EvalErrorKind::TypeMismatch, "unknown expression node");
  }

 private:
  ValueList eval_children(const Node& n, std::size_t from) {
    ValueList out;
    out.reserve(n.children.size() - from);
    for (std::size_t i = from; i < n.children.size(); ++i) out.push_back(eval(*n.children[i]));
    return out;
  }

  Value lookup(const std::string& name, bool qualified) {
    if (ctx_.locals != nullptr) {
      if (const Value* v = ctx_.locals->find(name)) return *v;
    }
    if (qualified) {
      if (const Value* v = ctx_.state.find(name)) return *v;
    } else {
      if (const Value* v = ctx_.state.resolve(name, ctx_.scope)) return *v;
      if (const Value* v = constant(name)) return *v;
    }
    fail(EvalErrorKind::NameError, "name '" + name + "' is not defined");
  }

  Value call(const Node& n) {
    ValueList args = eval_children(n, 0);
    bool found = false;
    Value out = call_builtin(n.name, args, found);
    if (found) return out;
    if (ctx_.host != nullptr) {
      if (auto it = ctx_.host->find(n.name); it != ctx_.host->end()) return it->second(args);
    }
    fail(EvalErrorKind::NameError, "function '" + n.name + "' is not defined");
  }

  const EvalContext& ctx_;
};

void collect_names(const Node& n, std::vector<std::string>& out) {
  if (n.kind == NodeKind::Name || n.kind == NodeKind::Qualified) {
    if (std::find(out.begin(), out.end(), n.name) == out.end()) out.push_back(n.name);
    return;
  }
  for (const auto& c : n.children) collect_names(*c, out);
}

const char* node_op_name(Op op) {
  switch (op) {
    case Op::Add: return "Add";
    case Op::Sub: return "Sub";
    case Op::Mul: return "Mul";
    case Op::Div: return "Div";
    case Op::FloorDiv: return "FloorDiv";
    case Op::Mod: return "Mod";
    case Op::Pow: return "Pow";
    case Op::Neg: return "Neg";
    case Op::Pos: return "Pos";
    case Op::Eq: return "Eq";
    case Op::Ne: return "NotEq";
    case Op::Lt: return "Lt";
    case Op::Le: return "LtE";
    case Op::Gt: return "Gt";
    case Op::Ge: return "GtE";
    case Op::In: return "In";
    case Op::NotIn: return "NotIn";
  }
  return "?";
}

void debug_into(const Node& n, std::string& out) {
  auto children = [&](std::size_t from) {
    for (std::size_t i = from; i < n.children.size(); ++i) {
      if (i > from) out += ", ";
      debug_into(*n.children[i], out);
    }
  };
  switch (n.kind) {
    case NodeKind::Literal: {
      const Value& v = n.literal;
      switch (v.kind()) {
        case ValueKind::Null: out += "None"; return;
        case ValueKind::Int: out += "Int(" + render_value(v) + ")"; return;
        case ValueKind::Real: out += "Real(" + render_value(v) + ")"; return;
        case ValueKind::Bool: out += "Bool(" + render_value(v) + ")"; return;
        case ValueKind::Text: out += "Text(" + render_value(v) + ")"; return;
        default: out += "Const(" + render_value(v) + ")"; return;
      }
    }
    case NodeKind::Name:
    case NodeKind::Qualified: out += "Ident(" + n.name + ")"; return;
    case NodeKind::Unary:
    case NodeKind::Binary:
      out += n.name.empty() ? node_op_name(n.op) : n.name.c_str();
      out += "(";
      children(0);
      out += ")";
      return;
    case NodeKind::And: out += "And("; children(0); out += ")"; return;
    case NodeKind::Or: out += "Or("; children(0); out += ")"; return;
    case NodeKind::Not: out += "Not("; children(0); out += ")"; return;
    case NodeKind::Compare:
      if (n.compare_ops.size() == 1) {
        out += node_op_name(n.compare_ops[0]);
        out += "(";
        children(0);
        out += ")";
        return;
      }
      out += "Compare(";
      debug_into(*n.children[0], out);
      for (std::size_t i = 0; i < n.compare_ops.size(); ++i) {
        out += ", ";
        out += node_op_name(n.compare_ops[i]);
        out += ", ";
        debug_into(*n.children[i + 1], out);
      }
      out += ")";
      return;
    case NodeKind::Conditional:
      out += "If(";
      debug_into(*n.children[1], out);
      out += ", ";
      debug_into(*n.children[0], out);
      out += ", ";
      debug_into(*n.children[2], out);
      out += ")";
      return;
    case NodeKind::Call:
      out += "Call(" + n.name;
      if (!n.children.empty()) out += ", ";
      children(0);
      out += ")";
      return;
    case NodeKind::Method:
      out += "Method(" + n.name + ", ";
      children(0);
      out += ")";
      return;
    case NodeKind::Index: out += "Index("; children(0); out += ")"; return;
    case NodeKind::Slice: out += "Slice("; children(0); out += ")"; return;
    case NodeKind::ListLit: out += "List("; children(0); out += ")"; return;
    case NodeKind::TupleLit: out += "Tuple("; children(0); out += ")"; return;
    case NodeKind::MapLit: out += "Map("; children(0); out += ")"; return;
  }
}

}  // namespace

Value evaluate(const Expr& expr, const EvalContext& ctx) {
  if (!expr.valid()) fail(EvalErrorKind::ValueError, "empty expression");
  return Evaluator(ctx).eval(expr.root());
}

Value evaluate(const Expr& expr, const State& state, std::string_view scope) {
  EvalContext ctx{state, scope};
  return evaluate(expr, ctx);
}

Value parse_literal(std::string_view text) {
  static const State empty;
  return evaluate(parse_expression(text), empty);
}

std::vector<std::string> free_names(const Expr& expr) {
  std::vector<std::string> out;
  if (expr.valid()) collect_names(expr.root(), out);
  return out;
}

std::string debug_string(const Expr& expr) {
  std::string out;
  if (expr.valid()) debug_into(expr.root(), out);
  return out;
}

}  // namespace simstream

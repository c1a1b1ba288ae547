#include "simstream/value.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace simstream {

std::string_view kind_name(ValueKind kind) {
  switch (kind) {
    case ValueKind::Null: return "None";
    case ValueKind::Int: return "int";
    case ValueKind::Real: return "float";
    case ValueKind::Bool: return "bool";
    case ValueKind::Text: return "str";
    case ValueKind::List: return "list";
    case ValueKind::Map: return "dict";
  }
  return "?";
}

Value Value::integer(std::int64_t v) { return Value(Storage(std::in_place_index<1>, v)); }
Value Value::real(double v) { return Value(Storage(std::in_place_index<2>, v)); }
Value Value::boolean(bool v) { return Value(Storage(std::in_place_index<3>, v)); }
Value Value::text(std::string v) { return Value(Storage(std::in_place_index<4>, std::move(v))); }

Value Value::list(ValueList items) {
  return Value(Storage(ListStorage{std::make_shared<const ValueList>(std::move(items)), false}));
}

Value Value::tuple(ValueList items) {
  return Value(Storage(ListStorage{std::make_shared<const ValueList>(std::move(items)), true}));
}

Value Value::map(MapEntries entries) {
  return Value(Storage(MapStorage{std::make_shared<const MapEntries>(std::move(entries))}));
}

const ValueList& Value::as_list() const { return *std::get<ListStorage>(data_).items; }
const MapEntries& Value::as_map() const { return *std::get<MapStorage>(data_).entries; }

double Value::to_double() const {
  switch (kind()) {
    case ValueKind::Int: return static_cast<double>(as_int());
    case ValueKind::Real: return as_real();
    case ValueKind::Bool: return as_bool() ? 1.0 : 0.0;
    default: throw std::bad_variant_access();
  }
}

bool Value::truthy() const {
  switch (kind()) {
    case ValueKind::Null: return false;
    case ValueKind::Int: return as_int() != 0;
    case ValueKind::Real: return as_real() != 0.0;
    case ValueKind::Bool: return as_bool();
    case ValueKind::Text: return !as_text().empty();
    case ValueKind::List: return !as_list().empty();
    case ValueKind::Map: return !as_map().empty();
  }
  return false;
}

const Value* Value::find(std::string_view key) const {
  if (!is_map()) return nullptr;
  for (const auto& [k, v] : as_map()) {
    if (k == key) return &v;
  }
  return nullptr;
}

namespace {

bool int_equals_real(std::int64_t i, double d) {
  if (!std::isfinite(d) || std::trunc(d) != d) return false;
  if (d < -9223372036854775808.0 || d >= 9223372036854775808.0) return false;
  return static_cast<std::int64_t>(d) == i;
}

}  // namespace

bool operator==(const Value& a, const Value& b) {
  const ValueKind ka = a.kind();
  const ValueKind kb = b.kind();
  if (ka == ValueKind::Int && kb == ValueKind::Real) return int_equals_real(a.as_int(), b.as_real());
  if (ka == ValueKind::Real && kb == ValueKind::Int) return int_equals_real(b.as_int(), a.as_real());
  if (ka != kb) return false;
  switch (ka) {
    case ValueKind::Null: return true;
    case ValueKind::Int: return a.as_int() == b.as_int();
    case ValueKind::Real: return a.as_real() == b.as_real();
    case ValueKind::Bool: return a.as_bool() == b.as_bool();
    case ValueKind::Text: return a.as_text() == b.as_text();
    case ValueKind::List: {
      if (a.is_tuple() != b.is_tuple()) return false;
      const auto& la = a.as_list();
      const auto& lb = b.as_list();
      if (&la == &lb) return true;
      if (la.size() != lb.size()) return false;
      for (std::size_t i = 0; i < la.size(); ++i) {
        if (la[i] != lb[i]) return false;
      }
      return true;
    }
    case ValueKind::Map: {
      const auto& ma = a.as_map();
      const auto& mb = b.as_map();
      if (ma.size() != mb.size()) return false;
      for (const auto& [k, v] : ma) {
        const Value* other = b.find(k);
        if (other == nullptr || *other != v) return false;
      }
      return true;
    }
  }
  return false;
}

bool identical(const Value& a, const Value& b) {
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case ValueKind::List: {
      if (a.is_tuple() != b.is_tuple()) return false;
      const auto& la = a.as_list();
      const auto& lb = b.as_list();
      if (&la == &lb) return true;
      if (la.size() != lb.size()) return false;
      for (std::size_t i = 0; i < la.size(); ++i) {
        if (!identical(la[i], lb[i])) return false;
      }
      return true;
    }
    case ValueKind::Map: {
      const auto& ma = a.as_map();
      const auto& mb = b.as_map();
      if (ma.size() != mb.size()) return false;
      for (std::size_t i = 0; i < ma.size(); ++i) {
        if (ma[i].first != mb[i].first || !identical(ma[i].second, mb[i].second)) return false;
      }
      return true;
    }
    case ValueKind::Real: {
      // Bitwise so that -0.0 and 0.0 (which render differently) are distinct.
      const double x = a.as_real();
      const double y = b.as_real();
      if (std::isnan(x) || std::isnan(y)) return std::isnan(x) && std::isnan(y);
      return x == y && std::signbit(x) == std::signbit(y);
    }
    default:
      return a == b;
  }
}

std::string render_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";

  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific);
  std::string sci(buf, res.ptr);

  std::string out;
  std::size_t pos = 0;
  if (sci[0] == '-') {
    out.push_back('-');
    pos = 1;
  }
  const std::size_t epos = sci.find('e');
  std::string digits;
  for (std::size_t i = pos; i < epos; ++i) {
    if (sci[i] != '.') digits.push_back(sci[i]);
  }
  const int exp = std::stoi(sci.substr(epos + 1));

  // Same switch-over points as Python's repr().
  if (exp >= -4 && exp < 16) {
    if (exp >= 0) {
      const std::size_t int_len = static_cast<std::size_t>(exp) + 1;
      if (digits.size() <= int_len) {
        out += digits;
        out.append(int_len - digits.size(), '0');
        out += ".0";
      } else {
        out += digits.substr(0, int_len);
        out.push_back('.');
        out += digits.substr(int_len);
      }
    } else {
      out += "0.";
      out.append(static_cast<std::size_t>(-exp - 1), '0');
      out += digits;
    }
    return out;
  }

  out.push_back(digits[0]);
  if (digits.size() > 1) {
    out.push_back('.');
    out += digits.substr(1);
  }
  char ebuf[16];
  std::snprintf(ebuf, sizeof(ebuf), "e%c%02d", exp < 0 ? '-' : '+', exp < 0 ? -exp : exp);
  out += ebuf;
  return out;
}

std::string quote_text(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 2);
  out.push_back('"');
  for (char c : s) {
    const auto uc = static_cast<unsigned char>(c);
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (uc < 0x20 || uc == 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\x%02x", uc);
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  out.push_back('"');
  return out;
}

namespace {

void render_into(const Value& value, std::string& out) {
  switch (value.kind()) {
    case ValueKind::Null: out += "None"; return;
    case ValueKind::Int: out += std::to_string(value.as_int()); return;
    case ValueKind::Real: out += render_real(value.as_real()); return;
    case ValueKind::Bool: out += value.as_bool() ? "True" : "False"; return;
    case ValueKind::Text: out += quote_text(value.as_text()); return;
    case ValueKind::List: {
      const bool tuple = value.is_tuple();
      const auto& items = value.as_list();
      out.push_back(tuple ? '(' : '[');
      for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += ", ";
        render_into(items[i], out);
      }
      if (tuple && items.size() == 1) out.push_back(',');
      out.push_back(tuple ? ')' : ']');
      return;
    }
    case ValueKind::Map: {
      out.push_back('{');
      bool first = true;
      for (const auto& [k, v] : value.as_map()) {
        if (!first) out += ", ";
        first = false;
        out += quote_text(k);
        out += ": ";
        render_into(v, out);
      }
      out.push_back('}');
      return;
    }
  }
}

}  // namespace

std::string render_value(const Value& value) {
  std::string out;
  render_into(value, out);
  return out;
}

std::string display_value(const Value& value) {
  if (value.is_text()) return value.as_text();
  return render_value(value);
}

int compare_values(const Value& a, const Value& b) {
  const bool an = a.is_number() || a.is_bool();
  const bool bn = b.is_number() || b.is_bool();
  if (an && bn) {
    if (a.is_int() && b.is_int()) {
      return a.as_int() < b.as_int() ? -1 : (a.as_int() > b.as_int() ? 1 : 0);
    }
    const double x = a.to_double();
    const double y = b.to_double();
    return x < y ? -1 : (x > y ? 1 : 0);
  }
  if (a.is_text() && b.is_text()) {
    const int c = a.as_text().compare(b.as_text());
    return c < 0 ? -1 : (c > 0 ? 1 : 0);
  }
  if (a.is_list() && b.is_list() && a.is_tuple() == b.is_tuple()) {
    const auto& la = a.as_list();
    const auto& lb = b.as_list();
    const std::size_t n = std::min(la.size(), lb.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (la[i] == lb[i]) continue;
      return compare_values(la[i], lb[i]);
    }
    return la.size() < lb.size() ? -1 : (la.size() > lb.size() ? 1 : 0);
  }
  throw std::invalid_argument(std::string("'<' not supported between instances of '") +
                              std::string(kind_name(a.kind())) + "' and '" + std::string(kind_name(b.kind())) +
                              "'");
}

}  // namespace simstream

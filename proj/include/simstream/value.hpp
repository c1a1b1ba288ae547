#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace simstream {

class Value;

using ValueList = std::vector<Value>;
using MapEntries = std::vector<std::pair<std::string, Value>>;

enum class ValueKind : std::uint8_t { Null, Int, Real, Bool, Text, List, Map };

std::string_view kind_name(ValueKind kind);

// Lists and maps share immutable storage, so copying a Value (and therefore a
// State or a StreamRow) never deep-copies containers.
struct ListStorage {
  std::shared_ptr<const ValueList> items;
  bool tuple = false;
};

struct MapStorage {
  std::shared_ptr<const MapEntries> entries;
};

/// Dynamically typed state-variable content.
///
/// Equality is structural. Int and Real compare numerically, Bool never equals
/// a number, tuples and lists are distinct, and maps compare as unordered sets
/// of entries.
class Value {
 public:
  Value() = default;

  static Value null() { return Value(); }
  static Value integer(std::int64_t v);
  static Value real(double v);
  static Value boolean(bool v);
  static Value text(std::string v);
  static Value list(ValueList items);
  static Value tuple(ValueList items);
  static Value map(MapEntries entries);

  ValueKind kind() const { return static_cast<ValueKind>(data_.index()); }
  bool is_null() const { return kind() == ValueKind::Null; }
  bool is_int() const { return kind() == ValueKind::Int; }
  bool is_real() const { return kind() == ValueKind::Real; }
  bool is_bool() const { return kind() == ValueKind::Bool; }
  bool is_text() const { return kind() == ValueKind::Text; }
  bool is_list() const { return kind() == ValueKind::List; }
  bool is_map() const { return kind() == ValueKind::Map; }
  bool is_tuple() const { return is_list() && std::get<ListStorage>(data_).tuple; }
  bool is_number() const { return is_int() || is_real(); }

  std::int64_t as_int() const { return std::get<std::int64_t>(data_); }
  double as_real() const { return std::get<double>(data_); }
  bool as_bool() const { return std::get<bool>(data_); }
  const std::string& as_text() const { return std::get<std::string>(data_); }
  const ValueList& as_list() const;
  const MapEntries& as_map() const;

  // Int, Real and Bool as a double; throws std::bad_variant_access otherwise.
  double to_double() const;

  // Python truthiness.
  bool truthy() const;

  // Map lookup; nullptr when absent or not a map.
  const Value* find(std::string_view key) const;

  friend bool operator==(const Value& a, const Value& b);
  friend bool operator!=(const Value& a, const Value& b) { return !(a == b); }

 private:
  using Storage = std::variant<std::monostate, std::int64_t, double, bool, std::string, ListStorage, MapStorage>;
  explicit Value(Storage s) : data_(std::move(s)) {}
  Storage data_;
};

/// Canonical literal form: integers bare, reals always carry a '.' or an
/// exponent, True/False/None, double-quoted escaped text, bracketed
/// containers with ", " separators. Re-parses to an equal Value.
std::string render_value(const Value& value);

/// Rendering used by str(): text is emitted raw, everything else canonically.
std::string display_value(const Value& value);

// Stricter than ==: same variant at every depth and same map order, so
// Int(1) and Real(1.0) differ. Equivalent to comparing render_value output.
bool identical(const Value& a, const Value& b);

std::string render_real(double v);
std::string quote_text(std::string_view s);

// Numeric-aware ordering used by comparisons and sorted(); throws
// std::invalid_argument for unorderable pairs.
int compare_values(const Value& a, const Value& b);

}  // namespace simstream

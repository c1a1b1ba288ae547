#pragma once

#include "simstream/value.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace simstream {

// `name` or `entity.name`, each segment [A-Za-z_][A-Za-z0-9_]*.
bool is_identifier(std::string_view s);
bool is_qualified_name(std::string_view s);

/// Ordered mapping from qualified variable name to Value.
///
/// Insertion order is preserved; assigning an existing name keeps its slot.
class State {
 public:
  using Entry = std::pair<std::string, Value>;

  State() = default;
  State(std::initializer_list<Entry> entries);

  bool contains(std::string_view name) const;
  const Value* find(std::string_view name) const;
  const Value& at(std::string_view name) const;  // throws std::out_of_range

  void set(std::string_view name, Value value);
  bool erase(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Resolves a name as seen from inside `scope`: `scope.name` first, then
  /// the bare global name. Returns nullptr when neither exists.
  const Value* resolve(std::string_view name, std::string_view scope) const;

  /// The key a name resolves to from `scope`, or empty when unresolved.
  std::string resolve_key(std::string_view name, std::string_view scope) const;

  friend bool operator==(const State& a, const State& b);
  friend bool operator!=(const State& a, const State& b) { return !(a == b); }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

}  // namespace simstream

#include "simstream/state.hpp"

#include <stdexcept>

namespace simstream {

namespace {

bool is_ident_start(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_'; }
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

}  // namespace

bool is_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s[0])) return false;
  for (char c : s) {
    if (!is_ident_char(c)) return false;
  }
  return true;
}

bool is_qualified_name(std::string_view s) {
  const auto dot = s.find('.');
  if (dot == std::string_view::npos) return is_identifier(s);
  return is_identifier(s.substr(0, dot)) && is_identifier(s.substr(dot + 1));
}

State::State(std::initializer_list<Entry> entries) {
  for (const auto& [k, v] : entries) set(k, v);
}

bool State::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

const Value* State::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].second;
}

const Value& State::at(std::string_view name) const {
  const Value* v = find(name);
  if (v == nullptr) throw std::out_of_range("no state variable '" + std::string(name) + "'");
  return *v;
}

void State::set(std::string_view name, Value value) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].second = std::move(value);
    return;
  }
  index_.emplace(std::string(name), entries_.size());
  entries_.emplace_back(std::string(name), std::move(value));
}

bool State::erase(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) return false;
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(it->second));
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].first, i);
  return true;
}

const Value* State::resolve(std::string_view name, std::string_view scope) const {
  if (!scope.empty() && name.find('.') == std::string_view::npos) {
    std::string qualified;
    qualified.reserve(scope.size() + 1 + name.size());
    qualified.append(scope).push_back('.');
    qualified.append(name);
    if (const Value* v = find(qualified)) return v;
  }
  return find(name);
}

std::string State::resolve_key(std::string_view name, std::string_view scope) const {
  if (!scope.empty() && name.find('.') == std::string_view::npos) {
    std::string qualified = std::string(scope) + "." + std::string(name);
    if (contains(qualified)) return qualified;
  }
  if (contains(name)) return std::string(name);
  return {};
}

bool operator==(const State& a, const State& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].first != b.entries_[i].first) return false;
    // Int(1) and Real(1.0) are different states.
    if (!identical(a.entries_[i].second, b.entries_[i].second)) return false;
  }
  return true;
}

}  // namespace simstream

#pragma once

#include "simstream/engine.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace simstream {

using OrderedJson = nlohmann::ordered_json;

template <class V>
using NamedList = std::vector<std::pair<std::string, V>>;

template <class V>
V* find_named(NamedList<V>& list, std::string_view name) {
  for (auto& [k, v] : list) {
    if (k == name) return &v;
  }
  return nullptr;
}

template <class V>
const V* find_named(const NamedList<V>& list, std::string_view name) {
  for (const auto& [k, v] : list) {
    if (k == name) return &v;
  }
  return nullptr;
}

// Replaced by the owning entity's name when a component is instantiated.
inline constexpr std::string_view kEntityPlaceholder = "$entity";

/// Operator as written in a component, before instantiation.
struct OperatorTemplate {
  std::string id;
  std::string formula;                  // "lhs = rhs" or "v.append(e)"
  OrderedJson use_lm = false;           // bool or expression string
  OrderedJson query = OrderedJson::object();
  OrderedJson tags = OrderedJson::object();
  std::vector<std::string> inline_tags; // tags written as top-level boolean keys
  std::optional<std::string> next;      // operator id or expression; absent = following operator
  std::optional<std::string> constraint;
  OrderedJson ui;                       // opaque editor hints
  // Which optional fields the source spelled out, so saving reproduces them.
  bool explicit_use_lm = false;
  bool explicit_query = false;
  bool explicit_tags = false;
};

struct MetricTemplate {
  std::string name;
  std::string expr;
  std::optional<std::string> when;
};

struct EcsConfig {
  std::string name;
  std::string description;
  NamedList<std::vector<std::string>> entities;
  NamedList<NamedList<OrderedJson>> variables;  // component -> variable -> initializer
  NamedList<std::vector<OperatorTemplate>> systems;
  std::vector<MetricTemplate> metrics;
  std::vector<std::string> termination;
  std::optional<int> default_steps;
  OrderedJson ui;

  bool has_component(std::string_view component) const;
};

class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string path, const std::string& message);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class FormulaParseError : public std::runtime_error {
 public:
  FormulaParseError(std::string path, std::string field, const ParseError& cause);
  const std::string& path() const { return path_; }
  const std::string& field() const { return field_; }
  std::size_t position() const { return position_; }

 private:
  std::string path_;
  std::string field_;
  std::size_t position_;
};

enum class CompileErrorKind : std::uint8_t { Collision, UnresolvedNext, UnknownComponent, BadInitializer, Empty };

class CompileError : public std::runtime_error {
 public:
  CompileError(CompileErrorKind kind, std::string subject, const std::string& message);
  CompileErrorKind kind() const { return kind_; }
  const std::string& subject() const { return subject_; }

 private:
  CompileErrorKind kind_;
  std::string subject_;
};

EcsConfig parse_config(std::string_view text);  // comments allowed; throws SchemaError/FormulaParseError
EcsConfig config_from_json(const OrderedJson& doc);
EcsConfig load_config(const std::string& path);
OrderedJson config_to_json(const EcsConfig& config);
std::string save_config(const EcsConfig& config);  // comments are not preserved
void write_config(const EcsConfig& config, const std::string& path);

OperatorTemplate template_from_json(const OrderedJson& j, const std::string& path = "operator");
OrderedJson template_to_json(const OperatorTemplate& t);

// JSON scalar/array/object -> Value, arrays as lists and objects as maps.
Value json_to_value(const OrderedJson& j);
OrderedJson value_to_json(const Value& v);

/// Variable initializer: a scalar; an array of candidates picked by
/// min(index, size - 1) (an empty array is the empty list); {"value": v}
/// for a literal; {"expr": "..."} for an expression literal; any other
/// object is a map. Candidates may use the wrapped forms.
Value decode_initializer(const OrderedJson& init, std::size_t index);

std::string substitute_entity(std::string_view text, std::string_view entity);

Program compile(const EcsConfig& config, std::size_t index = 0);

/// Directly authored operator list: {"initial_state": {...}, "operators": [...]}.
Program load_flat_program(std::string_view text, std::size_t index = 0);

enum class DiagnosticKind : std::uint8_t {
  UnknownComponent,
  UnreferencedComponent,
  DuplicateOperatorId,
  UnresolvedNext,
  UnusedVariable,
  UnknownQueryTag,
  CompileFailure,
};

std::string_view diagnostic_name(DiagnosticKind kind);

struct Diagnostic {
  DiagnosticKind kind;
  bool warning = false;
  std::string path;
  std::string message;
};

std::vector<Diagnostic> validate_config(const EcsConfig& config);

enum class EditKind : std::uint8_t {
  AddEntity,
  UpdateEntity,
  RemoveEntity,
  AddComponent,
  RemoveComponent,
  SetVariable,
  RemoveVariable,
  AddOperator,
  UpdateOperator,
  RemoveOperator,
};

struct ConfigEdit {
  EditKind kind = EditKind::AddEntity;
  std::string entity;
  std::string component;
  std::string name;                     // variable name or operator id
  std::vector<std::string> components;  // entity edits
  OrderedJson value;                    // variable initializer
  std::optional<OperatorTemplate> op;
  std::optional<std::size_t> position;  // insertion point for added operators
};

enum class ConfigErrorKind : std::uint8_t { UnknownPath, DuplicatePath, Invalid };

class ConfigEditError : public std::runtime_error {
 public:
  ConfigEditError(ConfigErrorKind kind, const std::string& message);
  ConfigErrorKind kind() const { return kind_; }

 private:
  ConfigErrorKind kind_;
};

struct MutationResult {
  EcsConfig config;
  std::vector<Diagnostic> diagnostics;
};

/// Applies one edit to a copy of `config` and re-validates it.
MutationResult mutate_config(const EcsConfig& config, const ConfigEdit& edit);

}  // namespace simstream

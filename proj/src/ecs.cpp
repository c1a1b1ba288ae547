#include "simstream/ecs.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace simstream {

bool EcsConfig::has_component(std::string_view component) const {
  return find_named(variables, component) != nullptr || find_named(systems, component) != nullptr;
}

SchemaError::SchemaError(std::string path, const std::string& message)
    : std::runtime_error(path + ": " + message), path_(std::move(path)) {}

FormulaParseError::FormulaParseError(std::string path, std::string field, const ParseError& cause)
    : std::runtime_error(path + "." + field + ": " + cause.what()),
      path_(std::move(path)),
      field_(std::move(field)),
      position_(cause.position()) {}

CompileError::CompileError(CompileErrorKind kind, std::string subject, const std::string& message)
    : std::runtime_error(message), kind_(kind), subject_(std::move(subject)) {}

ConfigEditError::ConfigEditError(ConfigErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

std::string substitute_entity(std::string_view text, std::string_view entity) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto pos = text.find(kEntityPlaceholder, i);
    if (pos == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    out.append(text.substr(i, pos - i));
    out.append(entity);
    i = pos + kEntityPlaceholder.size();
  }
  return out;
}

// ----------------------------------------------------------- JSON <-> Value

Value json_to_value(const OrderedJson& j) {
  switch (j.type()) {
    case OrderedJson::value_t::null: return Value();
    case OrderedJson::value_t::boolean: return Value::boolean(j.get<bool>());
    case OrderedJson::value_t::number_integer: return Value::integer(j.get<std::int64_t>());
    case OrderedJson::value_t::number_unsigned: {
      const auto u = j.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(INT64_MAX)) return Value::real(static_cast<double>(u));
      return Value::integer(static_cast<std::int64_t>(u));
    }
    case OrderedJson::value_t::number_float: return Value::real(j.get<double>());
    case OrderedJson::value_t::string: return Value::text(j.get<std::string>());
    case OrderedJson::value_t::array: {
      ValueList items;
      for (const auto& x : j) items.push_back(json_to_value(x));
      return Value::list(std::move(items));
    }
    case OrderedJson::value_t::object: {
      MapEntries entries;
      for (const auto& [k, v] : j.items()) entries.emplace_back(k, json_to_value(v));
      return Value::map(std::move(entries));
    }
    default: throw std::invalid_argument("unsupported JSON value");
  }
}

OrderedJson value_to_json(const Value& v) {
  switch (v.kind()) {
    case ValueKind::Null: return nullptr;
    case ValueKind::Bool: return v.as_bool();
    case ValueKind::Int: return v.as_int();
    case ValueKind::Real:
      if (!std::isfinite(v.as_real())) return render_value(v);
      return v.as_real();
    case ValueKind::Text: return v.as_text();
    case ValueKind::List: {
      OrderedJson arr = OrderedJson::array();
      for (const auto& x : v.as_list()) arr.push_back(value_to_json(x));
      return arr;
    }
    case ValueKind::Map: {
      OrderedJson obj = OrderedJson::object();
      for (const auto& [k, x] : v.as_map()) obj[k] = value_to_json(x);
      return obj;
    }
  }
  return nullptr;
}

Value decode_initializer(const OrderedJson& init, std::size_t index) {
  if (init.is_array()) {
    if (init.empty()) return Value::list({});
    const auto& pick = init[std::min(index, init.size() - 1)];
    // A candidate may itself be a wrapped literal; arrays inside stay lists.
    return pick.is_object() ? decode_initializer(pick, 0) : json_to_value(pick);
  }
  if (init.is_object() && init.size() == 1) {
    if (init.contains("value")) return json_to_value(init["value"]);
    if (init.contains("expr") && init["expr"].is_string()) return parse_literal(init["expr"].get<std::string>());
  }
  return json_to_value(init);
}

namespace {

OrderedJson substitute_json(const OrderedJson& j, std::string_view entity) {
  if (j.is_string()) return substitute_entity(j.get<std::string>(), entity);
  if (j.is_array()) {
    OrderedJson out = OrderedJson::array();
    for (const auto& x : j) out.push_back(substitute_json(x, entity));
    return out;
  }
  if (j.is_object()) {
    OrderedJson out = OrderedJson::object();
    for (const auto& [k, v] : j.items()) out[substitute_entity(k, entity)] = substitute_json(v, entity);
    return out;
  }
  return j;
}

// ------------------------------------------------------------------ schema

const std::set<std::string, std::less<>> kTemplateFields = {"id", "formula", "use_lm", "query", "tags", "next", "constraint", "ui"};

std::string expect_string(const OrderedJson& j, const std::string& path) {
  if (!j.is_string()) throw SchemaError(path, "expected a string");
  return j.get<std::string>();
}

void check_tag_object(const OrderedJson& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected an object of tag values");
  for (const auto& [k, _] : j.items()) {
    if (!is_identifier(substitute_entity(k, "_entity_"))) throw SchemaError(path + "." + k, "tag name is not an identifier");
  }
}

bool looks_like_id(std::string_view s) { return is_qualified_name(substitute_entity(s, "_entity_")); }

template <class F>
void checked(const std::string& path, const std::string& field, F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    throw FormulaParseError(path, field, e);
  }
}

void check_template_syntax(const OperatorTemplate& t, const std::string& path) {
  checked(path, "formula", [&] { parse_assignment(substitute_entity(t.formula, "_entity_")); });
  if (t.use_lm.is_string()) {
    checked(path, "use_lm", [&] { parse_expression(substitute_entity(t.use_lm.get<std::string>(), "_entity_")); });
  }
  if (t.next && !looks_like_id(*t.next)) {
    checked(path, "next", [&] { parse_expression(substitute_entity(*t.next, "_entity_")); });
  }
  if (t.constraint) {
    checked(path, "constraint", [&] { parse_expression(substitute_entity(*t.constraint, "_entity_")); });
  }
}

void check_initializer(const OrderedJson& init, const std::string& path) {
  if (init.is_array()) {
    for (std::size_t i = 0; i < init.size(); ++i) {
      if (init[i].is_object()) check_initializer(init[i], path + "[" + std::to_string(i) + "]");
    }
    return;
  }
  if (init.is_object() && init.size() == 1 && init.contains("expr")) {
    if (!init["expr"].is_string()) throw SchemaError(path, "\"expr\" initializer must be a string");
    checked(path, "expr", [&] { parse_expression(substitute_entity(init["expr"].get<std::string>(), "_entity_")); });
  }
}

std::vector<MetricTemplate> metrics_from_json(const OrderedJson& j, const std::string& path) {
  if (!j.is_array()) throw SchemaError(path, "expected an array");
  std::vector<MetricTemplate> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    const auto& m = j[i];
    if (!m.is_object() || !m.contains("name") || !m.contains("expr")) throw SchemaError(p, "metric needs \"name\" and \"expr\"");
    MetricTemplate t;
    t.name = expect_string(m["name"], p + ".name");
    t.expr = expect_string(m["expr"], p + ".expr");
    if (m.contains("when") && !m["when"].is_null()) t.when = expect_string(m["when"], p + ".when");
    for (const auto& [k, _] : m.items()) {
      if (k != "name" && k != "expr" && k != "when") throw SchemaError(p + "." + k, "unknown metric field");
    }
    checked(p, "expr", [&] { parse_expression(t.expr); });
    if (t.when) checked(p, "when", [&] { parse_expression(*t.when); });
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::string> termination_from_json(const OrderedJson& j, const std::string& path) {
  if (!j.is_array()) throw SchemaError(path, "expected an array of expressions");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    out.push_back(expect_string(j[i], p));
    checked(p, "expr", [&] { parse_expression(out.back()); });
  }
  return out;
}

OrderedJson metrics_to_json(const std::vector<MetricTemplate>& metrics) {
  OrderedJson arr = OrderedJson::array();
  for (const auto& m : metrics) {
    OrderedJson o = {{"name", m.name}, {"expr", m.expr}};
    if (m.when) o["when"] = *m.when;
    arr.push_back(std::move(o));
  }
  return arr;
}

OrderedJson parse_json(std::string_view text) {
  try {
    return OrderedJson::parse(text.begin(), text.end(), nullptr, true, true);
  } catch (const OrderedJson::parse_error& e) {
    throw SchemaError("$", std::string("malformed document: ") + e.what());
  }
}

}  // namespace

OperatorTemplate template_from_json(const OrderedJson& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "operator must be an object");
  OperatorTemplate t;
  if (!j.contains("id")) throw SchemaError(path, "missing \"id\"");
  t.id = expect_string(j["id"], path + ".id");
  if (!looks_like_id(t.id)) throw SchemaError(path + ".id", "'" + t.id + "' is not an identifier");
  if (!j.contains("formula")) throw SchemaError(path, "missing \"formula\"");
  t.formula = expect_string(j["formula"], path + ".formula");
  if (j.contains("use_lm")) {
    t.use_lm = j["use_lm"];
    t.explicit_use_lm = true;
    if (!t.use_lm.is_boolean() && !t.use_lm.is_string()) throw SchemaError(path + ".use_lm", "expected a boolean or an expression");
  }
  if (j.contains("query")) {
    check_tag_object(j["query"], path + ".query");
    t.query = j["query"];
    t.explicit_query = true;
  }
  if (j.contains("tags")) {
    check_tag_object(j["tags"], path + ".tags");
    t.tags = j["tags"];
    t.explicit_tags = true;
  }
  if (j.contains("next") && !j["next"].is_null()) t.next = expect_string(j["next"], path + ".next");
  if (j.contains("constraint") && !j["constraint"].is_null()) t.constraint = expect_string(j["constraint"], path + ".constraint");
  if (j.contains("ui")) t.ui = j["ui"];
  for (const auto& [k, v] : j.items()) {
    if (kTemplateFields.contains(k)) continue;
    // Operators in the flat format list their tags as top-level boolean fields.
    if (!v.is_boolean() || !is_identifier(k)) throw SchemaError(path + "." + k, "unknown operator field");
    if (t.tags.contains(k)) throw SchemaError(path + "." + k, "tag given twice");
    t.tags[k] = v;
    t.inline_tags.push_back(k);
  }
  check_template_syntax(t, path);
  return t;
}

OrderedJson template_to_json(const OperatorTemplate& t) {
  OrderedJson o = OrderedJson::object();
  o["id"] = t.id;
  o["formula"] = t.formula;
  if (t.explicit_use_lm || !(t.use_lm.is_boolean() && !t.use_lm.get<bool>())) o["use_lm"] = t.use_lm;
  if (t.explicit_query || !t.query.empty()) o["query"] = t.query;
  OrderedJson own = OrderedJson::object();
  for (const auto& [k, v] : t.tags.items()) {
    if (std::find(t.inline_tags.begin(), t.inline_tags.end(), k) == t.inline_tags.end()) own[k] = v;
  }
  if (t.explicit_tags || !own.empty()) o["tags"] = own;
  for (const auto& k : t.inline_tags) {
    if (t.tags.contains(k)) o[k] = t.tags[k];
  }
  if (t.next) o["next"] = *t.next;
  if (t.constraint) o["constraint"] = *t.constraint;
  if (!t.ui.is_null()) o["ui"] = t.ui;
  return o;
}

EcsConfig config_from_json(const OrderedJson& doc) {
  if (!doc.is_object()) throw SchemaError("$", "document must be an object");
  static const std::set<std::string, std::less<>> kTop = {"name", "description", "entities", "variables", "systems_definitions",
                                                          "metrics", "termination", "default_steps", "ui"};
  for (const auto& [k, _] : doc.items()) {
    if (!kTop.contains(k) && !k.starts_with("_")) throw SchemaError(k, "unknown top-level field");
  }
  EcsConfig c;
  if (doc.contains("name")) c.name = expect_string(doc["name"], "name");
  if (doc.contains("description")) c.description = expect_string(doc["description"], "description");

  if (!doc.contains("entities")) throw SchemaError("entities", "missing required field");
  const auto& ents = doc["entities"];
  if (!ents.is_object()) throw SchemaError("entities", "expected an object of entity -> component list");
  for (const auto& [name, comps] : ents.items()) {
    const std::string p = "entities." + name;
    if (!is_identifier(name)) throw SchemaError(p, "entity name is not an identifier");
    if (!comps.is_array()) throw SchemaError(p, "expected a list of component ids");
    std::vector<std::string> list;
    for (std::size_t i = 0; i < comps.size(); ++i) list.push_back(expect_string(comps[i], p + "[" + std::to_string(i) + "]"));
    c.entities.emplace_back(name, std::move(list));
  }

  if (doc.contains("variables")) {
    const auto& vars = doc["variables"];
    if (!vars.is_object()) throw SchemaError("variables", "expected an object of component -> variables");
    for (const auto& [comp, vs] : vars.items()) {
      const std::string p = "variables." + comp;
      if (!vs.is_object()) throw SchemaError(p, "expected an object of variable -> initial value");
      NamedList<OrderedJson> list;
      for (const auto& [var, init] : vs.items()) {
        if (!is_identifier(var)) throw SchemaError(p + "." + var, "variable name is not an identifier");
        check_initializer(init, p + "." + var);
        list.emplace_back(var, init);
      }
      c.variables.emplace_back(comp, std::move(list));
    }
  }

  if (doc.contains("systems_definitions")) {
    const auto& sys = doc["systems_definitions"];
    if (!sys.is_object()) throw SchemaError("systems_definitions", "expected an object of component -> operators");
    for (const auto& [comp, ops] : sys.items()) {
      const std::string p = "systems_definitions." + comp;
      if (!ops.is_array()) throw SchemaError(p, "expected a list of operators");
      std::vector<OperatorTemplate> list;
      for (std::size_t i = 0; i < ops.size(); ++i) list.push_back(template_from_json(ops[i], p + "[" + std::to_string(i) + "]"));
      c.systems.emplace_back(comp, std::move(list));
    }
  }

  if (doc.contains("metrics")) c.metrics = metrics_from_json(doc["metrics"], "metrics");
  if (doc.contains("termination")) c.termination = termination_from_json(doc["termination"], "termination");
  if (doc.contains("default_steps")) {
    if (!doc["default_steps"].is_number_integer() || doc["default_steps"].get<int>() < 0) {
      throw SchemaError("default_steps", "expected a non-negative integer");
    }
    c.default_steps = doc["default_steps"].get<int>();
  }
  if (doc.contains("ui")) c.ui = doc["ui"];
  return c;
}

EcsConfig parse_config(std::string_view text) { return config_from_json(parse_json(text)); }

EcsConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SchemaError(path, "cannot open config file");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

OrderedJson config_to_json(const EcsConfig& c) {
  OrderedJson doc = OrderedJson::object();
  if (!c.name.empty()) doc["name"] = c.name;
  if (!c.description.empty()) doc["description"] = c.description;
  OrderedJson ents = OrderedJson::object();
  for (const auto& [name, comps] : c.entities) ents[name] = comps;
  doc["entities"] = std::move(ents);
  OrderedJson vars = OrderedJson::object();
  for (const auto& [comp, vs] : c.variables) {
    OrderedJson o = OrderedJson::object();
    for (const auto& [k, v] : vs) o[k] = v;
    vars[comp] = std::move(o);
  }
  doc["variables"] = std::move(vars);
  OrderedJson sys = OrderedJson::object();
  for (const auto& [comp, ops] : c.systems) {
    OrderedJson arr = OrderedJson::array();
    for (const auto& t : ops) arr.push_back(template_to_json(t));
    sys[comp] = std::move(arr);
  }
  doc["systems_definitions"] = std::move(sys);
  if (!c.metrics.empty()) doc["metrics"] = metrics_to_json(c.metrics);
  if (!c.termination.empty()) doc["termination"] = c.termination;
  if (c.default_steps) doc["default_steps"] = *c.default_steps;
  if (!c.ui.is_null()) doc["ui"] = c.ui;
  return doc;
}

std::string save_config(const EcsConfig& config) { return config_to_json(config).dump(2) + "\n"; }

void write_config(const EcsConfig& config, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << save_config(config);
}

// ----------------------------------------------------------------- compile

namespace {

Query query_from_json(const OrderedJson& j) {
  Query q;
  for (const auto& [k, v] : j.items()) q.terms.emplace_back(k, json_to_value(v));
  return q;
}

TagMap tags_from_json(const OrderedJson& j) {
  TagMap tags;
  for (const auto& [k, v] : j.items()) tags.emplace_back(k, json_to_value(v));
  return tags;
}

using Aliases = std::map<std::string, std::string, std::less<>>;

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Rewrites `entity.name` references whose variable lives under a bare key.
std::string rewrite_refs(std::string_view text, const Aliases* aliases) {
  if (aliases == nullptr || aliases->empty()) return std::string(text);
  std::string out;
  out.reserve(text.size());
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const char c = text[i];
    if (c == '"' || c == '\'') {
      std::size_t j = i + 1;
      while (j < n && text[j] != c) j += text[j] == '\\' ? 2 : 1;
      j = std::min(n, j + 1);
      out.append(text.substr(i, j - i));
      i = j;
      continue;
    }
    if (ident_start(c) && (i == 0 || !(ident_char(text[i - 1]) || text[i - 1] == '.'))) {
      std::size_t j = i;
      while (j < n && ident_char(text[j])) ++j;
      if (j + 1 < n && text[j] == '.' && ident_start(text[j + 1])) {
        std::size_t k = j + 1;
        while (k < n && ident_char(text[k])) ++k;
        auto it = aliases->find(text.substr(i, k - i));
        if (it != aliases->end() && !(k < n && text[k] == '(')) {
          out.append(it->second);
          i = k;
          continue;
        }
      }
      out.append(text.substr(i, j - i));
      i = j;
      continue;
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

// Fills everything except id, lhs key and successor.
Operator instantiate(const OperatorTemplate& t, const std::string& entity, const std::string& component,
                     const std::string& path, std::string* lhs_name, const Aliases* aliases = nullptr) {
  auto prepare = [&](std::string_view text) { return rewrite_refs(substitute_entity(text, entity), aliases); };
  Operator op;
  op.template_id = t.id;
  op.entity = entity;
  op.component = component;
  op.formula_text = prepare(t.formula);
  checked(path, "formula", [&] {
    Assignment a = parse_assignment(op.formula_text);
    *lhs_name = a.lhs;
    op.formula = a.rhs;
  });
  if (t.use_lm.is_boolean()) {
    op.use_lm = Expr::constant(Value::boolean(t.use_lm.get<bool>()));
  } else if (t.use_lm.is_string()) {
    checked(path, "use_lm", [&] { op.use_lm = parse_expression(prepare(t.use_lm.get<std::string>())); });
  }
  op.query = query_from_json(substitute_json(t.query, entity));
  op.tags = tags_from_json(substitute_json(t.tags, entity));
  if (t.next) {
    const std::string next = prepare(*t.next);
    if (is_qualified_name(next)) {
      op.next_id = next;
    } else {
      checked(path, "next", [&] { op.next_expr = parse_expression(next); });
    }
  }
  if (t.constraint) checked(path, "constraint", [&] { op.constraint = parse_expression(prepare(*t.constraint)); });
  return op;
}

void add_program_extras(Program& p, const std::vector<MetricTemplate>& metrics, const std::vector<std::string>& termination,
                        const Aliases* aliases = nullptr) {
  for (const auto& m : metrics) {
    MetricSpec spec;
    spec.name = m.name;
    checked("metrics." + m.name, "expr", [&] { spec.expr = parse_expression(rewrite_refs(m.expr, aliases)); });
    if (m.when) checked("metrics." + m.name, "when", [&] { spec.when = parse_expression(rewrite_refs(*m.when, aliases)); });
    p.metrics.push_back(std::move(spec));
  }
  for (std::size_t i = 0; i < termination.size(); ++i) {
    checked("termination[" + std::to_string(i) + "]", "expr",
            [&] { p.termination.push_back(parse_expression(rewrite_refs(termination[i], aliases))); });
  }
}

Value init_value(const OrderedJson& init, std::size_t index, const std::string& entity, const std::string& path) {
  try {
    return decode_initializer(substitute_json(init, entity), index);
  } catch (const ParseError& e) {
    throw FormulaParseError(path, "expr", e);
  } catch (const EvalError& e) {
    throw CompileError(CompileErrorKind::BadInitializer, path, path + ": " + e.what());
  }
}

}  // namespace

Program compile(const EcsConfig& config, std::size_t index) {
  struct Pending {
    Operator op;
    std::string lhs_name;
    const OperatorTemplate* source = nullptr;
    std::string path;
  };

  // Variable declarations and assigned names per entity.
  std::map<std::string, int, std::less<>> var_entities;
  std::map<std::string, int, std::less<>> lhs_entities;
  std::map<std::string, int, std::less<>> id_entities;
  std::vector<Pending> pending;
  std::vector<std::set<std::string, std::less<>>> declared(config.entities.size());

  for (std::size_t e = 0; e < config.entities.size(); ++e) {
    const auto& [entity, comps] = config.entities[e];
    std::set<std::string, std::less<>> assigned;
    std::set<std::string, std::less<>> ids;
    for (const auto& comp : comps) {
      if (!config.has_component(comp)) {
        throw CompileError(CompileErrorKind::UnknownComponent, comp,
                           "entity '" + entity + "' uses unknown component '" + comp + "'");
      }
      if (const auto* vars = find_named(config.variables, comp)) {
        for (const auto& [name, _] : *vars) declared[e].insert(name);
      }
      if (const auto* ops = find_named(config.systems, comp)) {
        for (std::size_t i = 0; i < ops->size(); ++i) {
          const auto& t = (*ops)[i];
          const std::string path = "systems_definitions." + comp + "[" + std::to_string(i) + "]";
          Pending p;
          p.op = instantiate(t, entity, comp, path, &p.lhs_name);
          p.source = &t;
          p.path = path;
          if (!ids.insert(t.id).second) {
            throw CompileError(CompileErrorKind::Collision, t.id, "operator id '" + t.id + "' used twice in entity '" + entity + "'");
          }
          if (p.lhs_name.find('.') == std::string::npos) assigned.insert(p.lhs_name);
          pending.push_back(std::move(p));
        }
      }
    }
    for (const auto& n : declared[e]) ++var_entities[n];
    for (const auto& n : assigned) ++lhs_entities[n];
    for (const auto& n : ids) ++id_entities[n];
  }

  auto count = [](const auto& m, std::string_view k) {
    auto it = m.find(k);
    return it == m.end() ? 0 : it->second;
  };
  // A bare name stays bare unless several entities own it.
  auto variable_key = [&](const std::string& name, const std::string& entity, std::size_t e) {
    if (name.find('.') != std::string::npos) return name;
    const int owners = count(var_entities, name);
    if (owners == 0) return count(lhs_entities, name) >= 2 ? entity + "." + name : name;
    if (owners == 1 && !declared[e].contains(name)) return name;
    return owners >= 2 ? entity + "." + name : name;
  };

  Program program;
  program.name = config.name;
  program.default_steps = config.default_steps.value_or(10);

  for (std::size_t e = 0; e < config.entities.size(); ++e) {
    const auto& [entity, comps] = config.entities[e];
    for (const auto& comp : comps) {
      const auto* vars = find_named(config.variables, comp);
      if (vars == nullptr) continue;
      for (const auto& [name, init] : *vars) {
        const std::string key = variable_key(name, entity, e);
        Value v = init_value(init, index, entity, "variables." + comp + "." + name);
        if (const Value* existing = program.initial_state.find(key)) {
          if (!identical(*existing, v)) {
            throw CompileError(CompileErrorKind::Collision, key,
                               "'" + key + "' initialized to both " + render_value(*existing) + " and " + render_value(v));
          }
          continue;
        }
        program.initial_state.set(key, std::move(v));
      }
    }
  }

  std::map<std::string, std::size_t> entity_index;
  for (std::size_t e = 0; e < config.entities.size(); ++e) entity_index[config.entities[e].first] = e;
  // `entity.name` written explicitly must reach the same slot as a bare name
  // the entity owns alone.
  Aliases aliases;
  for (std::size_t e = 0; e < config.entities.size(); ++e) {
    const std::string& entity = config.entities[e].first;
    auto add = [&](const std::string& name) {
      if (variable_key(name, entity, e) == name) aliases.emplace(entity + "." + name, name);
    };
    for (const auto& n : declared[e]) add(n);
  }
  for (const auto& p : pending) {
    if (p.lhs_name.find('.') == std::string::npos) {
      const std::size_t e = entity_index[p.op.entity];
      if (variable_key(p.lhs_name, p.op.entity, e) == p.lhs_name) aliases.emplace(p.op.entity + "." + p.lhs_name, p.lhs_name);
    }
  }
  for (auto& p : pending) {
    const std::size_t e = entity_index[p.op.entity];
    if (!aliases.empty()) p.op = instantiate(*p.source, p.op.entity, p.op.component, p.path, &p.lhs_name, &aliases);
    p.op.id = count(id_entities, p.op.template_id) >= 2 ? p.op.entity + "." + p.op.template_id : p.op.template_id;
    p.op.lhs = variable_key(p.lhs_name, p.op.entity, e);
  }

  std::set<std::string, std::less<>> all_ids;
  for (const auto& p : pending) all_ids.insert(p.op.id);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    auto& op = pending[i].op;
    if (op.next_expr.valid()) continue;
    if (op.next_id.empty()) {
      op.next_id = pending[(i + 1) % pending.size()].op.id;
      continue;
    }
    const std::string local = op.entity + "." + op.next_id;
    if (op.next_id.find('.') == std::string::npos && all_ids.contains(local)) {
      op.next_id = local;
    } else if (!all_ids.contains(op.next_id)) {
      throw CompileError(CompileErrorKind::UnresolvedNext, op.id, "next of '" + op.id + "' names unknown operator '" + op.next_id + "'");
    }
  }

  for (auto& p : pending) program.operators.push_back(std::move(p.op));
  add_program_extras(program, config.metrics, config.termination, &aliases);
  program.finalize();
  return program;
}

Program load_flat_program(std::string_view text, std::size_t index) {
  const OrderedJson doc = parse_json(text);
  if (!doc.is_object()) throw SchemaError("$", "document must be an object");
  if (!doc.contains("initial_state") || !doc["initial_state"].is_object()) {
    throw SchemaError("initial_state", "missing or not an object");
  }
  if (!doc.contains("operators") || !doc["operators"].is_array()) throw SchemaError("operators", "missing or not a list");

  Program program;
  if (doc.contains("name")) program.name = expect_string(doc["name"], "name");
  for (const auto& [name, init] : doc["initial_state"].items()) {
    if (!is_qualified_name(name)) throw SchemaError("initial_state." + name, "not a variable name");
    check_initializer(init, "initial_state." + name);
    program.initial_state.set(name, init_value(init, index, "", "initial_state." + name));
  }
  const auto& ops = doc["operators"];
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const std::string path = "operators[" + std::to_string(i) + "]";
    const OperatorTemplate t = template_from_json(ops[i], path);
    std::string lhs;
    Operator op = instantiate(t, "", "", path, &lhs);
    op.id = t.id;
    op.lhs = lhs;
    program.operators.push_back(std::move(op));
  }
  for (std::size_t i = 0; i < program.operators.size(); ++i) {
    auto& op = program.operators[i];
    if (op.next_expr.valid()) continue;
    if (op.next_id.empty()) {
      op.next_id = program.operators[(i + 1) % program.operators.size()].id;
    } else if (std::none_of(program.operators.begin(), program.operators.end(),
                            [&](const Operator& o) { return o.id == op.next_id; })) {
      throw CompileError(CompileErrorKind::UnresolvedNext, op.id, "next of '" + op.id + "' names unknown operator '" + op.next_id + "'");
    }
  }
  std::vector<MetricTemplate> metrics;
  std::vector<std::string> termination;
  if (doc.contains("metrics")) metrics = metrics_from_json(doc["metrics"], "metrics");
  if (doc.contains("termination")) termination = termination_from_json(doc["termination"], "termination");
  add_program_extras(program, metrics, termination);
  if (doc.contains("default_steps") && doc["default_steps"].is_number_integer()) program.default_steps = doc["default_steps"].get<int>();
  program.finalize();
  return program;
}

// ---------------------------------------------------------------- validate

std::string_view diagnostic_name(DiagnosticKind kind) {
  switch (kind) {
    case DiagnosticKind::UnknownComponent: return "UnknownComponent";
    case DiagnosticKind::UnreferencedComponent: return "UnreferencedComponent";
    case DiagnosticKind::DuplicateOperatorId: return "DuplicateOperatorId";
    case DiagnosticKind::UnresolvedNext: return "UnresolvedNext";
    case DiagnosticKind::UnusedVariable: return "UnusedVariable";
    case DiagnosticKind::UnknownQueryTag: return "UnknownQueryTag";
    case DiagnosticKind::CompileFailure: return "CompileFailure";
  }
  return "Diagnostic";
}

namespace {

std::string bare(std::string_view name) {
  const auto dot = name.find('.');
  return std::string(dot == std::string_view::npos ? name : name.substr(dot + 1));
}

void read_names(std::string_view text, std::set<std::string, std::less<>>& out) {
  try {
    for (const auto& n : free_names(parse_expression(substitute_entity(text, "_entity_")))) out.insert(bare(n));
  } catch (const ParseError&) {
  }
}

}  // namespace

std::vector<Diagnostic> validate_config(const EcsConfig& config) {
  std::vector<Diagnostic> out;
  std::set<std::string, std::less<>> used_components;

  for (const auto& [entity, comps] : config.entities) {
    std::set<std::string, std::less<>> ids;
    for (const auto& comp : comps) {
      used_components.insert(comp);
      if (!config.has_component(comp)) {
        out.push_back({DiagnosticKind::UnknownComponent, false, "entities." + entity,
                       "entity '" + entity + "' uses unknown component '" + comp + "'"});
        continue;
      }
      if (const auto* ops = find_named(config.systems, comp)) {
        for (const auto& t : *ops) {
          if (!ids.insert(t.id).second) {
            out.push_back({DiagnosticKind::DuplicateOperatorId, false, "entities." + entity,
                           "operator id '" + t.id + "' appears twice in entity '" + entity + "'"});
          }
        }
      }
    }
  }

  std::set<std::string, std::less<>> all_ids;
  std::set<std::string, std::less<>> assigned;
  std::set<std::string, std::less<>> read;
  std::set<std::string, std::less<>> tags;
  for (const auto& [comp, ops] : config.systems) {
    std::set<std::string, std::less<>> local;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const auto& t = ops[i];
      all_ids.insert(t.id);
      if (!local.insert(t.id).second) {
        out.push_back({DiagnosticKind::DuplicateOperatorId, false, "systems_definitions." + comp,
                       "operator id '" + t.id + "' appears twice in component '" + comp + "'"});
      }
      try {
        Assignment a = parse_assignment(substitute_entity(t.formula, "_entity_"));
        assigned.insert(bare(a.lhs));
        for (const auto& n : free_names(a.rhs)) read.insert(bare(n));
      } catch (const ParseError&) {
      }
      if (t.use_lm.is_string()) read_names(t.use_lm.get<std::string>(), read);
      if (t.next && !looks_like_id(*t.next)) read_names(*t.next, read);
      if (t.constraint) read_names(*t.constraint, read);
      for (const auto& [k, _] : t.tags.items()) tags.insert(k);
    }
  }
  for (const auto& m : config.metrics) {
    read_names(m.expr, read);
    if (m.when) read_names(*m.when, read);
  }
  for (const auto& cond : config.termination) read_names(cond, read);
  std::set<std::string, std::less<>> variables;
  for (const auto& [comp, vars] : config.variables) {
    for (const auto& [name, init] : vars) {
      variables.insert(name);
      if (init.is_object() && init.size() == 1 && init.contains("expr") && init["expr"].is_string()) {
        read_names(init["expr"].get<std::string>(), read);
      }
    }
  }

  for (const auto& [comp, ops] : config.systems) {
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const auto& t = ops[i];
      const std::string path = "systems_definitions." + comp + "[" + std::to_string(i) + "]";
      if (t.next && looks_like_id(*t.next) && !all_ids.contains(bare(substitute_entity(*t.next, "_entity_")))) {
        out.push_back({DiagnosticKind::UnresolvedNext, false, path + ".next",
                       "operator '" + t.id + "' continues to unknown operator '" + *t.next + "'"});
      }
      for (const auto& [k, _] : t.query.items()) {
        const std::string key = substitute_entity(k, "_entity_");
        const bool entity_tag = k.find(kEntityPlaceholder) != std::string::npos;
        if (k != "human" && !entity_tag && !tags.contains(k) && !variables.contains(k)) {
          out.push_back({DiagnosticKind::UnknownQueryTag, false, path + ".query",
                         "query tag '" + key + "' is never set by any operator"});
        }
      }
    }
  }

  for (const auto& [comp, _] : config.variables) {
    if (!used_components.contains(comp)) {
      out.push_back({DiagnosticKind::UnreferencedComponent, true, "variables." + comp, "component '" + comp + "' is not used by any entity"});
    }
  }
  for (const auto& [comp, _] : config.systems) {
    if (!used_components.contains(comp) && find_named(config.variables, comp) == nullptr) {
      out.push_back({DiagnosticKind::UnreferencedComponent, true, "systems_definitions." + comp,
                     "component '" + comp + "' is not used by any entity"});
    }
  }
  for (const auto& [comp, vars] : config.variables) {
    for (const auto& [name, _] : vars) {
      if (!assigned.contains(name) && !read.contains(name)) {
        out.push_back({DiagnosticKind::UnusedVariable, true, "variables." + comp + "." + name,
                       "variable '" + name + "' is never assigned or read"});
      }
    }
  }

  try {
    compile(config, 0);
  } catch (const CompileError& e) {
    if (e.kind() != CompileErrorKind::UnknownComponent && e.kind() != CompileErrorKind::UnresolvedNext) {
      out.push_back({DiagnosticKind::CompileFailure, false, e.subject(), e.what()});
    }
  } catch (const FormulaParseError& e) {
    out.push_back({DiagnosticKind::CompileFailure, false, e.path(), e.what()});
  }
  return out;
}

// ------------------------------------------------------------------ mutate

MutationResult mutate_config(const EcsConfig& config, const ConfigEdit& edit) {
  EcsConfig c = config;
  auto unknown = [](const std::string& what) { return ConfigEditError(ConfigErrorKind::UnknownPath, what + " does not exist"); };
  auto duplicate = [](const std::string& what) { return ConfigEditError(ConfigErrorKind::DuplicatePath, what + " already exists"); };
  auto require_id = [](const std::string& name, const char* what) {
    if (!is_identifier(name)) throw ConfigEditError(ConfigErrorKind::Invalid, std::string(what) + " '" + name + "' is not an identifier");
  };

  switch (edit.kind) {
    case EditKind::AddEntity:
      require_id(edit.entity, "entity");
      if (find_named(c.entities, edit.entity)) throw duplicate("entity '" + edit.entity + "'");
      c.entities.emplace_back(edit.entity, edit.components);
      break;
    case EditKind::UpdateEntity: {
      auto* comps = find_named(c.entities, edit.entity);
      if (!comps) throw unknown("entity '" + edit.entity + "'");
      *comps = edit.components;
      break;
    }
    case EditKind::RemoveEntity: {
      auto it = std::find_if(c.entities.begin(), c.entities.end(), [&](const auto& e) { return e.first == edit.entity; });
      if (it == c.entities.end()) throw unknown("entity '" + edit.entity + "'");
      c.entities.erase(it);
      break;
    }
    case EditKind::AddComponent:
      require_id(edit.component, "component");
      if (c.has_component(edit.component)) throw duplicate("component '" + edit.component + "'");
      c.variables.emplace_back(edit.component, NamedList<OrderedJson>{});
      c.systems.emplace_back(edit.component, std::vector<OperatorTemplate>{});
      break;
    case EditKind::RemoveComponent: {
      if (!c.has_component(edit.component)) throw unknown("component '" + edit.component + "'");
      std::erase_if(c.variables, [&](const auto& v) { return v.first == edit.component; });
      std::erase_if(c.systems, [&](const auto& s) { return s.first == edit.component; });
      break;
    }
    case EditKind::SetVariable: {
      require_id(edit.name, "variable");
      if (!c.has_component(edit.component)) throw unknown("component '" + edit.component + "'");
      check_initializer(edit.value, "variables." + edit.component + "." + edit.name);
      auto* vars = find_named(c.variables, edit.component);
      if (!vars) {
        c.variables.emplace_back(edit.component, NamedList<OrderedJson>{});
        vars = &c.variables.back().second;
      }
      if (auto* v = find_named(*vars, edit.name)) {
        *v = edit.value;
      } else {
        vars->emplace_back(edit.name, edit.value);
      }
      break;
    }
    case EditKind::RemoveVariable: {
      auto* vars = find_named(c.variables, edit.component);
      if (!vars || !find_named(*vars, edit.name)) throw unknown("variable '" + edit.component + "." + edit.name + "'");
      std::erase_if(*vars, [&](const auto& v) { return v.first == edit.name; });
      break;
    }
    case EditKind::AddOperator:
    case EditKind::UpdateOperator: {
      if (!edit.op) throw ConfigEditError(ConfigErrorKind::Invalid, "operator edit needs an operator");
      const std::string path = "systems_definitions." + edit.component;
      // Round-trip through JSON so edits get the same checks as loaded files.
      OperatorTemplate t = template_from_json(template_to_json(*edit.op), path + "." + edit.op->id);
      if (!c.has_component(edit.component)) throw unknown("component '" + edit.component + "'");
      auto* ops = find_named(c.systems, edit.component);
      if (!ops) {
        c.systems.emplace_back(edit.component, std::vector<OperatorTemplate>{});
        ops = &c.systems.back().second;
      }
      auto same_id = [&](const std::string& id) {
        return std::find_if(ops->begin(), ops->end(), [&](const OperatorTemplate& o) { return o.id == id; });
      };
      if (edit.kind == EditKind::AddOperator) {
        if (same_id(t.id) != ops->end()) throw duplicate("operator '" + edit.component + "." + t.id + "'");
        const std::size_t at = std::min(edit.position.value_or(ops->size()), ops->size());
        ops->insert(ops->begin() + static_cast<std::ptrdiff_t>(at), std::move(t));
      } else {
        const std::string target = edit.name.empty() ? t.id : edit.name;
        auto it = same_id(target);
        if (it == ops->end()) throw unknown("operator '" + edit.component + "." + target + "'");
        if (t.id != target && same_id(t.id) != ops->end()) throw duplicate("operator '" + edit.component + "." + t.id + "'");
        *it = std::move(t);
      }
      break;
    }
    case EditKind::RemoveOperator: {
      auto* ops = find_named(c.systems, edit.component);
      if (!ops) throw unknown("component '" + edit.component + "'");
      const auto before = ops->size();
      std::erase_if(*ops, [&](const OperatorTemplate& o) { return o.id == edit.name; });
      if (ops->size() == before) throw unknown("operator '" + edit.component + "." + edit.name + "'");
      break;
    }
  }
  MutationResult r{std::move(c), {}};
  r.diagnostics = validate_config(r.config);
  return r;
}

}  // namespace simstream

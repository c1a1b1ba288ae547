#include "simstream/engine.hpp"

#include <algorithm>
#include <stdexcept>

namespace simstream {

const Operator* Program::find(std::string_view id) const {
  if (index_.size() == operators.size()) {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &operators[it->second];
  }
  for (const auto& op : operators) {
    if (op.id == id) return &op;
  }
  return nullptr;
}

void Program::finalize() {
  tag_names.clear();
  for (const auto& op : operators) {
    for (const auto& [k, _] : op.tags) {
      if (std::find(tag_names.begin(), tag_names.end(), k) == tag_names.end()) tag_names.push_back(k);
    }
  }
  for (auto& op : operators) {
    TagMap snap;
    snap.reserve(tag_names.size());
    for (const auto& name : tag_names) {
      auto it = std::find_if(op.tags.begin(), op.tags.end(), [&](const auto& t) { return t.first == name; });
      snap.emplace_back(name, it == op.tags.end() ? Value::boolean(false) : it->second);
    }
    op.snapshot = std::make_shared<const TagMap>(std::move(snap));
  }
  clock.clear();
  if (initial_state.contains("time")) {
    clock = "time";
  } else if (initial_state.contains("world.time")) {
    clock = "world.time";
  } else {
    for (const auto& [k, _] : initial_state) {
      if (k.ends_with(".time")) {
        clock = k;
        break;
      }
    }
  }
  if ((entry.empty() || find(entry) == nullptr) && !operators.empty()) entry = operators.front().id;
  index_.clear();
  for (std::size_t i = 0; i < operators.size(); ++i) index_.emplace(operators[i].id, i);
}

std::string_view validation_error_name(ValidationErrorKind kind) {
  switch (kind) {
    case ValidationErrorKind::WrongLhs: return "WrongLhs";
    case ValidationErrorKind::ParseFailure: return "ParseFailure";
    case ValidationErrorKind::EvalFailure: return "EvalFailure";
    case ValidationErrorKind::TypeIncompatible: return "TypeIncompatible";
    case ValidationErrorKind::MultiLine: return "MultiLine";
    case ValidationErrorKind::Constraint: return "Constraint";
  }
  return "ValidationError";
}

namespace {

constexpr std::string_view kSpace = " \t\r\f\v";

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(kSpace);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(kSpace) - b + 1);
}

// Length of a leading `name =` (not `==`) prefix, or 0.
std::size_t assignment_prefix(std::string_view line, std::string* name) {
  std::size_t i = 0;
  auto ident = [&]() {
    const std::size_t start = i;
    if (i < line.size() && (std::isalpha(static_cast<unsigned char>(line[i])) || line[i] == '_')) {
      ++i;
      while (i < line.size() && (std::isalnum(static_cast<unsigned char>(line[i])) || line[i] == '_')) ++i;
    }
    return i > start;
  };
  if (!ident()) return 0;
  if (i < line.size() && line[i] == '.') {
    ++i;
    if (!ident()) return 0;
  }
  const std::size_t name_end = i;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (i >= line.size() || line[i] != '=') return 0;
  if (i + 1 < line.size() && line[i + 1] == '=') return 0;
  if (name != nullptr) *name = std::string(line.substr(0, name_end));
  return i + 1;
}

bool type_compatible(const Value& current, const Value& next) {
  if (current.is_null()) return true;
  if (current.is_number() && next.is_number()) return true;
  return current.kind() == next.kind();
}

ValidationError invalid(ValidationErrorKind kind, std::string message) { return {kind, std::move(message)}; }

}  // namespace

std::variant<Value, ValidationError> validate_llm_row(std::string_view raw, const Operator& op, const State& state,
                                                      const HostFunctions* host) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= raw.size()) {
    auto nl = raw.find('\n', start);
    if (nl == std::string_view::npos) nl = raw.size();
    std::string_view line = trim(raw.substr(start, nl - start));
    if (!line.empty()) lines.push_back(line);
    start = nl + 1;
  }
  if (lines.size() > 1) {
    return invalid(ValidationErrorKind::MultiLine, "expected one line, got " + std::to_string(lines.size()));
  }
  std::string_view line = lines.empty() ? std::string_view{} : lines.front();

  std::string named;
  if (const std::size_t cut = assignment_prefix(line, &named); cut > 0) {
    const auto dot = op.lhs.find('.');
    const std::string_view bare = dot == std::string::npos ? std::string_view(op.lhs) : std::string_view(op.lhs).substr(dot + 1);
    if (named != op.lhs && named != bare) {
      return invalid(ValidationErrorKind::WrongLhs, "assigned '" + named + "' but this row sets '" + op.lhs + "'");
    }
    line = trim(line.substr(cut));
  }
  if (line.empty()) return invalid(ValidationErrorKind::ParseFailure, "empty completion");

  const Value* current = state.find(op.lhs);
  Value value;
  Expr expr;
  try {
    expr = parse_expression(line);
  } catch (const ParseError& e) {
    if (current == nullptr || !current->is_text()) {
      return invalid(ValidationErrorKind::ParseFailure, e.what());
    }
    value = Value::text(std::string(line));
  }
  if (expr.valid()) {
    try {
      value = evaluate(expr, EvalContext{state, op.entity, nullptr, host});
    } catch (const EvalError& e) {
      return invalid(ValidationErrorKind::EvalFailure, e.what());
    }
  }

  if (current != nullptr && !type_compatible(*current, value)) {
    return invalid(ValidationErrorKind::TypeIncompatible, "'" + op.lhs + "' holds " + std::string(kind_name(current->kind())) +
                                                              ", completion gave " + std::string(kind_name(value.kind())));
  }

  if (op.constraint.valid()) {
    const State locals{{"value", value}};
    try {
      if (!evaluate(op.constraint, EvalContext{state, op.entity, &locals, host}).truthy()) {
        return invalid(ValidationErrorKind::Constraint, render_value(value) + " violates " + op.constraint.source());
      }
    } catch (const EvalError& e) {
      return invalid(ValidationErrorKind::Constraint, std::string("constraint failed: ") + e.what());
    }
  }
  return value;
}

std::string apply_assignment(State& state, std::string_view lhs, Value value, std::string_view scope) {
  std::string key;
  if (!scope.empty() && lhs.find('.') == std::string_view::npos) {
    key = state.resolve_key(lhs, scope);
    if (key.empty()) key = std::string(scope) + "." + std::string(lhs);
  } else {
    key = std::string(lhs);
  }
  state.set(key, std::move(value));
  return key;
}

// -------------------------------------------------------------------- ledger

const LedgerEntry& ConsistencyLedger::entry(std::string_view entity) const {
  static const LedgerEntry kFresh;
  auto it = entries_.find(entity);
  return it == entries_.end() ? kFresh : it->second;
}

LedgerEntry& ConsistencyLedger::mutable_entry(std::string_view entity) {
  auto it = entries_.find(entity);
  if (it == entries_.end()) it = entries_.emplace(std::string(entity), LedgerEntry{}).first;
  return it->second;
}

void ConsistencyLedger::record_revision(std::string_view entity) { ++mutable_entry(entity).revisions_used; }

void ConsistencyLedger::record_failure(std::string_view entity, std::size_t row_index, std::string reason) {
  auto& e = mutable_entry(entity);
  ++e.final_failures;
  e.score = std::max(0, kInitialConsistencyScore - e.final_failures);
  e.failures.push_back({row_index, std::move(reason)});
}

// ---------------------------------------------------------------- simulation

Simulation::Simulation(std::shared_ptr<const Program> program, std::shared_ptr<Sampler> sampler, SimulationOptions options)
    : program_(std::move(program)), sampler_(std::move(sampler)), options_(std::move(options)) {
  if (!program_) throw std::invalid_argument("simulation needs a program");
  if (!sampler_) sampler_ = std::make_shared<StaticSampler>();
  state_ = program_->initial_state;
  current_ = program_->entry;
  TagMap human;
  for (const auto& name : program_->tag_names) human.emplace_back(name, Value::boolean(false));
  auto it = std::find_if(human.begin(), human.end(), [](const auto& t) { return t.first == "human"; });
  if (it == human.end()) {
    human.emplace_back("human", Value::boolean(true));
  } else {
    it->second = Value::boolean(true);
  }
  human_tags_ = std::make_shared<const TagMap>(std::move(human));
}

void Simulation::set_sampler(std::shared_ptr<Sampler> sampler) {
  sampler_ = sampler ? std::move(sampler) : std::make_shared<StaticSampler>();
}

Value Simulation::clock_value() const {
  if (!program_->clock.empty()) {
    if (const Value* v = state_.find(program_->clock)) return *v;
  }
  return Value::integer(cycles_);
}

Value Simulation::eval(const Expr& e, const Operator& op) const {
  return evaluate(e, EvalContext{state_, op.entity, nullptr, &options_.host});
}

std::string Simulation::context_for(const Operator& op) const {
  if (!sampler_->wants_context()) return {};
  auto rows = select_rows(stream_, op.query);
  if (options_.context_blocks) rows = last_time_blocks(std::move(rows), *options_.context_blocks);
  return render_context(std::span<const StreamRow* const>(rows));
}

Simulation::Outcome Simulation::execute_llm(const Operator& op) {
  SamplerRequest req = build_prompt(context_for(op), op.lhs);
  req.temperature = options_.temperature;
  req.max_tokens = options_.max_tokens;
  req.seed = options_.seed;
  req.time = clock_value();
  req.entity = op.entity;
  req.operator_id = op.id;

  auto first = validate_llm_row(sampler_->sample(req).raw, op, state_, &options_.host);
  if (auto* v = std::get_if<Value>(&first)) return {std::move(*v), RowSource::Llm};

  ledger_.record_revision(op.entity);
  const auto& err = std::get<ValidationError>(first);
  req.correction = "Your previous line was rejected (" + std::string(validation_error_name(err.kind)) + ": " +
                   err.message + "). Write only the value of " + op.lhs + ".";
  auto second = validate_llm_row(sampler_->sample(req).raw, op, state_, &options_.host);
  if (auto* v = std::get_if<Value>(&second)) return {std::move(*v), RowSource::LlmRevised};

  const auto& err2 = std::get<ValidationError>(second);
  ledger_.record_failure(op.entity, stream_.size(),
                         std::string(validation_error_name(err2.kind)) + ": " + err2.message);
  return {eval(op.formula, op), RowSource::Fallback};
}

std::string Simulation::resolve_next(const Operator& op) const {
  std::string target = op.next_id;
  if (op.next_expr.valid()) {
    Value v = eval(op.next_expr, op);
    if (!v.is_text()) {
      throw EvalError(EvalErrorKind::TypeMismatch, "next of '" + op.id + "' gave " + render_value(v) + ", expected an operator id");
    }
    target = v.as_text();
  }
  if (target.empty()) return program_->entry;
  if (!op.entity.empty() && target.find('.') == std::string::npos) {
    std::string local = op.entity + "." + target;
    if (program_->find(local) != nullptr) return local;
  }
  if (program_->find(target) != nullptr) return target;
  throw EvalError(EvalErrorKind::NameError, "next operator '" + target + "' of '" + op.id + "' does not exist");
}

bool Simulation::check_termination() {
  for (const auto& cond : program_->termination) {
    if (evaluate(cond, EvalContext{state_, {}, nullptr, &options_.host}).truthy()) return true;
  }
  return false;
}

const StreamRow& Simulation::step() {
  const Operator* op = program_->find(current_);
  if (op == nullptr) throw std::logic_error("current operator '" + current_ + "' does not exist");
  cycle_completed_ = false;

  Outcome out = eval(op->use_lm, *op).truthy() ? execute_llm(*op) : Outcome{eval(op->formula, *op), RowSource::Deterministic};

  state_.set(op->lhs, out.value);
  StreamRow row;
  row.time = clock_value();
  row.entity = op->entity;
  row.operator_id = op->id;
  row.lhs = op->lhs;
  row.text = row_text(op->lhs, out.value);
  row.value = std::move(out.value);
  row.tags = op->snapshot;
  row.source = out.source;
  const StreamRow& appended = stream_.append(std::move(row));

  current_ = resolve_next(*op);
  if (current_ == program_->entry) {
    ++cycles_;
    cycle_completed_ = true;
    steps_in_cycle_ = 0;
    record_metrics();
  } else if (++steps_in_cycle_ > options_.max_steps_per_cycle) {
    throw std::runtime_error("operator cycle did not return to '" + program_->entry + "' within " +
                             std::to_string(options_.max_steps_per_cycle) + " steps");
  }
  if (check_termination()) {
    terminated_ = true;
    if (!cycle_completed_) record_metrics();
  }
  return appended;
}

RunResult Simulation::run(int max_cycles) {
  RunResult r;
  const int start_cycles = cycles_;
  const std::size_t start_rows = stream_.size();
  if (program_->operators.empty()) return r;
  while (cycles_ - start_cycles < max_cycles && !terminated_) step();
  r.cycles = cycles_ - start_cycles;
  r.rows = stream_.size() - start_rows;
  r.terminated = terminated_;
  return r;
}

const StreamRow& Simulation::inject_row(std::string_view lhs, Value value) {
  if (!is_qualified_name(lhs)) throw std::invalid_argument("'" + std::string(lhs) + "' is not a variable name");
  std::string key = state_.resolve_key(lhs, {});
  if (key.empty()) key = std::string(lhs);
  state_.set(key, value);
  StreamRow row;
  row.time = clock_value();
  const auto dot = key.find('.');
  if (dot != std::string::npos) row.entity = key.substr(0, dot);
  row.operator_id = "human";
  row.lhs = key;
  row.text = row_text(key, value);
  row.value = std::move(value);
  row.tags = human_tags_;
  row.source = RowSource::Human;
  return stream_.append(std::move(row));
}

void Simulation::record_metrics() {
  if (program_->metrics.empty()) return;
  HostFunctions host = options_.host;
  host["consistency_score"] = [this](std::span<const Value> args) {
    if (args.size() != 1 || !args[0].is_text()) {
      throw EvalError(EvalErrorKind::TypeMismatch, "consistency_score() takes one entity name");
    }
    return Value::integer(ledger_.score(args[0].as_text()));
  };
  host["revisions_used"] = [this](std::span<const Value> args) {
    if (args.size() != 1 || !args[0].is_text()) {
      throw EvalError(EvalErrorKind::TypeMismatch, "revisions_used() takes one entity name");
    }
    return Value::integer(ledger_.entry(args[0].as_text()).revisions_used);
  };
  const EvalContext ctx{state_, {}, nullptr, &host};
  const Value now = clock_value();
  for (const auto& spec : program_->metrics) {
    try {
      if (spec.when.valid() && !evaluate(spec.when, ctx).truthy()) continue;
      metrics_.push_back({now, spec.name, evaluate(spec.expr, ctx)});
    } catch (const EvalError& e) {
      diagnostics_.push_back("metric '" + spec.name + "' at time " + render_value(now) + ": " + e.what());
    }
  }
}

State replay_stream(const State& initial, const OutputStream& stream) {
  static const State empty;
  State state = initial;
  for (const auto& row : stream) {
    Assignment a = parse_assignment(row.text);
    state.set(a.lhs, evaluate(a.rhs, empty));
  }
  return state;
}

}  // namespace simstream

#pragma once

#include "simstream/expr.hpp"
#include "simstream/sampler.hpp"
#include "simstream/state.hpp"
#include "simstream/stream.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace simstream {

inline constexpr int kInitialConsistencyScore = 5;

struct Operator {
  std::string id;
  std::string template_id;  // id inside its component
  std::string entity;       // empty for single-scope programs
  std::string component;
  std::string lhs;          // state key the formula assigns
  Expr formula;             // right-hand side
  std::string formula_text; // as authored, e.g. "time = time + 1"
  Expr use_lm = Expr::constant(Value::boolean(false));
  Query query;
  TagMap tags;  // as authored
  std::shared_ptr<const TagMap> snapshot = std::make_shared<const TagMap>();  // every program tag, this op's values
  std::string next_id;  // fixed successor
  Expr next_expr;       // dynamic successor; wins when valid
  Expr constraint;      // optional acceptance test for LLM values, `value` bound
};

struct MetricSpec {
  std::string name;
  Expr expr;
  Expr when;  // invalid = every completed cycle
};

struct MetricRecord {
  Value time;
  std::string name;
  Value value;
};

/// A compiled program: initial state and an ordered operator list.
struct Program {
  std::string name;
  State initial_state;
  std::vector<Operator> operators;
  std::string entry;
  std::vector<MetricSpec> metrics;
  std::vector<Expr> termination;
  std::vector<std::string> tag_names;
  std::string clock;  // state key of the time variable, empty when absent
  int default_steps = 10;

  const Operator* find(std::string_view id) const;
  // Rebuilds tag_names, every operator's tag snapshot, clock, entry and the
  // id index. Call after editing operators.
  void finalize();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

enum class ValidationErrorKind : std::uint8_t { WrongLhs, ParseFailure, EvalFailure, TypeIncompatible, MultiLine, Constraint };

std::string_view validation_error_name(ValidationErrorKind kind);

struct ValidationError {
  ValidationErrorKind kind;
  std::string message;
};

/// Turns a raw completion into a value for `op.lhs`, or says why it cannot.
std::variant<Value, ValidationError> validate_llm_row(std::string_view raw, const Operator& op, const State& state,
                                                      const HostFunctions* host = nullptr);

/// Writes `value` to `lhs`; a name that does not exist yet is created in
/// `scope` when given. Returns the key written.
std::string apply_assignment(State& state, std::string_view lhs, Value value, std::string_view scope = {});

struct LedgerFailure {
  std::size_t row_index = 0;
  std::string reason;
};

struct LedgerEntry {
  int score = kInitialConsistencyScore;
  int revisions_used = 0;
  int final_failures = 0;
  std::vector<LedgerFailure> failures;
};

class ConsistencyLedger {
 public:
  const LedgerEntry& entry(std::string_view entity) const;
  int score(std::string_view entity) const { return entry(entity).score; }
  void record_revision(std::string_view entity);
  void record_failure(std::string_view entity, std::size_t row_index, std::string reason);
  const std::map<std::string, LedgerEntry, std::less<>>& entries() const { return entries_; }

 private:
  LedgerEntry& mutable_entry(std::string_view entity);
  std::map<std::string, LedgerEntry, std::less<>> entries_;
};

struct SimulationOptions {
  std::optional<std::size_t> context_blocks;  // most recent K time blocks; unset = whole substream
  double temperature = 0.7;
  int max_tokens = 256;
  std::uint64_t seed = 0;
  HostFunctions host;
  // Guard against operator graphs that never return to the entry operator.
  std::size_t max_steps_per_cycle = 100000;
};

struct RunResult {
  int cycles = 0;
  std::size_t rows = 0;
  bool terminated = false;  // a termination condition fired
};

class Simulation {
 public:
  Simulation(std::shared_ptr<const Program> program, std::shared_ptr<Sampler> sampler, SimulationOptions options = {});

  const Program& program() const { return *program_; }
  const State& state() const { return state_; }
  const OutputStream& stream() const { return stream_; }
  const std::string& current() const { return current_; }
  const ConsistencyLedger& ledger() const { return ledger_; }
  const std::vector<MetricRecord>& metrics() const { return metrics_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }
  int cycles() const { return cycles_; }
  bool terminated() const { return terminated_; }
  Sampler& sampler() { return *sampler_; }
  // Later steps use `sampler`; a null handle means static.
  void set_sampler(std::shared_ptr<Sampler> sampler);

  /// Executes the current operator: one row appended, state updated,
  /// successor selected.
  const StreamRow& step();

  /// Steps until `max_cycles` operator cycles complete or a termination
  /// condition holds.
  RunResult run(int max_cycles);

  // Runs to the end of the current cycle (at least one step).
  RunResult run_cycle() { return run(1); }

  const StreamRow& inject_row(std::string_view lhs, Value value);

  void record_metrics();

  // The time value rows are stamped with.
  Value clock_value() const;

  // Context the operator would see now (empty for samplers without context).
  std::string context_for(const Operator& op) const;

 private:
  struct Outcome {
    Value value;
    RowSource source;
  };
  Outcome execute_llm(const Operator& op);
  Value eval(const Expr& e, const Operator& op) const;
  std::string resolve_next(const Operator& op) const;
  bool check_termination();

  std::shared_ptr<const Program> program_;
  std::shared_ptr<Sampler> sampler_;
  SimulationOptions options_;
  State state_;
  OutputStream stream_;
  std::string current_;
  ConsistencyLedger ledger_;
  std::vector<MetricRecord> metrics_;
  std::vector<std::string> diagnostics_;
  std::shared_ptr<const TagMap> human_tags_;
  int cycles_ = 0;
  bool terminated_ = false;
  bool cycle_completed_ = false;
  std::size_t steps_in_cycle_ = 0;
};

// Re-applies row texts from `initial`; used to check the replay property.
State replay_stream(const State& initial, const OutputStream& stream);

}  // namespace simstream

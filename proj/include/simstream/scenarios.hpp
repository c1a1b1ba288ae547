#pragma once

#include "simstream/ecs.hpp"
#include "simstream/engine.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace simstream {

struct Scenario {
  std::string name;
  EcsConfig config;
  int default_steps = 10;
};

class UnknownScenario : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bundled configs, compiled into the binary from configs/.
std::vector<std::string> scenario_names();
std::string_view scenario_source(std::string_view name);  // raw document text
Scenario load_scenario(std::string_view name);             // throws UnknownScenario

const std::vector<std::string>& rl_tasks();
Scenario scenario_cheese();
Scenario scenario_rl(std::string_view task);  // throws UnknownScenario for other names
Scenario scenario_social();
Scenario scenario_market();

// ------------------------------------------------------------------ batches

struct BatchOptions {
  int runs = 10;
  int steps = 25;
  std::uint64_t seed = 0;      // run r uses seed + r
  int jobs = 0;                // 0: one per hardware thread
  std::size_t base_index = 0;  // run r compiles with base_index + r when vary_index
  bool vary_index = true;
  std::optional<std::size_t> context_blocks;
};

struct RunOutcome {
  int run = 0;
  std::size_t index = 0;
  RunResult result;
  std::vector<MetricRecord> metrics;
  std::map<std::string, LedgerEntry, std::less<>> ledger;
  std::string error;  // empty when the run completed
  bool sampler_failure = false;
};

struct SummaryRow {
  Value time;
  std::string name;
  double mean = 0;
  double std = 0;  // population standard deviation
  std::size_t n = 0;
};

struct BatchResult {
  std::vector<RunOutcome> runs;
  std::vector<SummaryRow> summary;
};

/// Independent simulations of one config; each run gets its own clone of
/// `prototype`. A failing run records its error and the batch continues.
BatchResult run_batch(const EcsConfig& config, const BatchOptions& options, const Sampler& prototype);

/// Mean and population std per (time, metric) over runs, in order of first
/// appearance. Non-numeric values are skipped; booleans count as 0/1.
std::vector<SummaryRow> summarize(const std::vector<std::vector<MetricRecord>>& runs);

std::string metrics_csv(const std::vector<MetricRecord>& metrics);  // time,name,value
std::string summary_csv(const std::vector<SummaryRow>& summary);    // time,name,mean,std,n

// Writes <dir>/<run>.csv per run and <dir>/summary.csv.
void write_batch(const BatchResult& batch, const std::string& dir);

// ------------------------------------------------------------------ exports

// Plain text: query_stream plus a final newline when not empty.
std::string stream_text(const OutputStream& stream, const Query& query = {});
OrderedJson row_to_json(const StreamRow& row);
// One JSON record per line: index, time, entity, operator, lhs, value, text, tags, source.
std::string stream_jsonl(const OutputStream& stream);

void write_text_file(const std::string& path, std::string_view text);

}  // namespace simstream

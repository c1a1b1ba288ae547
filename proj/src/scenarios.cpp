#include "simstream/scenarios.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

namespace simstream {

namespace bundled {
struct Entry {
  const char* name;
  const char* text;
};
extern const Entry kConfigs[];
extern const std::size_t kConfigCount;
}  // namespace bundled

namespace {

const bundled::Entry* find_bundled(std::string_view name) {
  for (std::size_t i = 0; i < bundled::kConfigCount; ++i) {
    if (name == bundled::kConfigs[i].name) return &bundled::kConfigs[i];
  }
  return nullptr;
}

bool is_ecs_document(std::string_view text) { return text.find("\"entities\"") != std::string_view::npos; }

}  // namespace

std::vector<std::string> scenario_names() {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < bundled::kConfigCount; ++i) {
    if (is_ecs_document(bundled::kConfigs[i].text)) out.emplace_back(bundled::kConfigs[i].name);
  }
  return out;
}

std::string_view scenario_source(std::string_view name) {
  const auto* e = find_bundled(name);
  if (e == nullptr) throw UnknownScenario("unknown scenario '" + std::string(name) + "'");
  return e->text;
}

Scenario load_scenario(std::string_view name) {
  const std::string_view text = scenario_source(name);
  if (!is_ecs_document(text)) throw UnknownScenario("'" + std::string(name) + "' is a flat program, not a scenario");
  Scenario s;
  s.name = std::string(name);
  s.config = parse_config(text);
  s.default_steps = s.config.default_steps.value_or(10);
  return s;
}

const std::vector<std::string>& rl_tasks() {
  static const std::vector<std::string> kTasks = {"windy_gridworld", "key_chest",           "maze",
                                                  "mountain_car",    "temperature_control", "robot_cleaning"};
  return kTasks;
}

Scenario scenario_cheese() { return load_scenario("cheese"); }

Scenario scenario_rl(std::string_view task) {
  const auto& tasks = rl_tasks();
  if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) {
    throw UnknownScenario("unknown RL task '" + std::string(task) + "'");
  }
  return load_scenario(task);
}

Scenario scenario_social() { return load_scenario("social"); }
Scenario scenario_market() { return load_scenario("market"); }

// ------------------------------------------------------------------ batches

BatchResult run_batch(const EcsConfig& config, const BatchOptions& options, const Sampler& prototype) {
  if (options.runs < 1) throw std::invalid_argument("a batch needs at least one run");
  BatchResult batch;
  batch.runs.resize(static_cast<std::size_t>(options.runs));

  auto one = [&](int r) {
    RunOutcome& out = batch.runs[static_cast<std::size_t>(r)];
    out.run = r;
    out.index = options.vary_index ? options.base_index + static_cast<std::size_t>(r) : options.base_index;
    std::unique_ptr<Simulation> sim;
    try {
      auto program = std::make_shared<const Program>(compile(config, out.index));
      SimulationOptions so;
      so.seed = options.seed + static_cast<std::uint64_t>(r);
      so.context_blocks = options.context_blocks;
      sim = std::make_unique<Simulation>(program, std::shared_ptr<Sampler>(prototype.clone()), so);
      out.result = sim->run(options.steps);
    } catch (const SamplerError& e) {
      out.error = e.what();
      out.sampler_failure = true;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    if (sim) {
      out.metrics = sim->metrics();
      out.ledger = sim->ledger().entries();
      if (!out.error.empty()) {
        out.result.cycles = sim->cycles();
        out.result.rows = sim->stream().size();
        out.result.terminated = sim->terminated();
      }
    }
  };

  int jobs = options.jobs > 0 ? options.jobs : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  jobs = std::min(jobs, options.runs);
  if (jobs <= 1) {
    for (int r = 0; r < options.runs; ++r) one(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::jthread> workers;
    for (int j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (int r = next++; r < options.runs; r = next++) one(r);
      });
    }
  }

  std::vector<std::vector<MetricRecord>> logs;
  for (const auto& run : batch.runs) logs.push_back(run.metrics);
  batch.summary = summarize(logs);
  return batch;
}

std::vector<SummaryRow> summarize(const std::vector<std::vector<MetricRecord>>& runs) {
  std::vector<SummaryRow> rows;
  std::vector<std::vector<double>> samples;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  for (const auto& log : runs) {
    for (const auto& m : log) {
      double x = 0;
      if (m.value.is_bool()) {
        x = m.value.as_bool() ? 1.0 : 0.0;
      } else if (m.value.is_number()) {
        x = m.value.to_double();
      } else {
        continue;
      }
      auto key = std::make_pair(render_value(m.time), m.name);
      auto [it, fresh] = slot.emplace(key, rows.size());
      if (fresh) {
        rows.push_back({m.time, m.name, 0, 0, 0});
        samples.emplace_back();
      }
      samples[it->second].push_back(x);
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& xs = samples[i];
    auto& row = rows[i];
    row.n = xs.size();
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) {
      // Exact for identical runs, where summation order would otherwise leak rounding.
      row.mean = xs.front();
      row.std = 0;
      continue;
    }
    long double sum = 0;
    for (double x : xs) sum += x;
    const long double mean = sum / static_cast<long double>(xs.size());
    long double sq = 0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    row.mean = static_cast<double>(mean);
    row.std = static_cast<double>(std::sqrt(sq / static_cast<long double>(xs.size())));
  }
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string metrics_csv(const std::vector<MetricRecord>& metrics) {
  std::string out = "time,name,value\n";
  for (const auto& m : metrics) {
    out += csv_field(render_value(m.time)) + "," + csv_field(m.name) + "," + csv_field(render_value(m.value)) + "\n";
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& summary) {
  std::string out = "time,name,mean,std,n\n";
  for (const auto& r : summary) {
    out += csv_field(render_value(r.time)) + "," + csv_field(r.name) + "," + render_real(r.mean) + "," +
           render_real(r.std) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

void write_text_file(const std::string& path, std::string_view text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

void write_batch(const BatchResult& batch, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& run : batch.runs) {
    write_text_file((std::filesystem::path(dir) / (std::to_string(run.run) + ".csv")).string(), metrics_csv(run.metrics));
  }
  write_text_file((std::filesystem::path(dir) / "summary.csv").string(), summary_csv(batch.summary));
}

// ------------------------------------------------------------------ exports

std::string stream_text(const OutputStream& stream, const Query& query) {
  std::string text = query_stream(stream, query);
  if (!text.empty()) text += "\n";
  return text;
}

OrderedJson row_to_json(const StreamRow& row) {
  OrderedJson tags = OrderedJson::object();
  if (row.tags) {
    for (const auto& [k, v] : *row.tags) tags[k] = value_to_json(v);
  }
  return OrderedJson{
      {"index", row.index},
      {"time", value_to_json(row.time)},
      {"entity", row.entity},
      {"operator", row.operator_id},
      {"lhs", row.lhs},
      {"value", value_to_json(row.value)},
      {"text", row.text},
      {"tags", std::move(tags)},
      {"source", std::string(source_name(row.source))},
  };
}

std::string stream_jsonl(const OutputStream& stream) {
  std::string out;
  for (const auto& row : stream) out += row_to_json(row).dump() + "\n";
  return out;
}

}  // namespace simstream

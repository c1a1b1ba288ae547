// streamsim: run a simulation config, a batch of runs, or the control service.

#include "simstream/ecs.hpp"
#include "simstream/scenarios.hpp"
#include "simstream/service.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace simstream;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitSampler = 4;

struct Options {
  std::string ecs_file;
  std::string scenario;
  bool web = false;
  int steps = 10;
  std::string metrics;
  std::size_t index = 0;
  std::string model{kDefaultModel};
  std::string api_key;
  std::string endpoint{kDefaultEndpoint};
  std::string output_file;
  std::string query;
  std::string sampler = "auto";
  int runs = 1;
  std::uint64_t seed = 0;
  std::string stream_out;
  int jobs = 0;
  std::size_t context_blocks = 0;
  std::string batch_dir = "runs";
  bool fixed_index = false;
  std::string host = "127.0.0.1";
  int port = 8080;
};

// Raised for problems in the config itself, mapped to the config exit code.
struct ConfigProblem : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigProblem("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool is_flat_program(std::string_view text) {
  try {
    const auto j = OrderedJson::parse(text, nullptr, true, true);
    return j.is_object() && j.contains("initial_state") && j.contains("operators") && !j.contains("entities");
  } catch (const nlohmann::json::exception&) {
    return false;
  }
}

struct Loaded {
  std::string name;
  std::optional<EcsConfig> config;  // absent for flat programs
  std::string flat_text;
};

Loaded load(const Options& o) {
  Loaded l;
  if (!o.scenario.empty()) {
    Scenario s = load_scenario(o.scenario);
    l.name = s.name;
    l.config = std::move(s.config);
    return l;
  }
  const std::string text = read_file(o.ecs_file);
  l.name = std::filesystem::path(o.ecs_file).stem().string();
  if (is_flat_program(text)) {
    l.flat_text = text;
  } else {
    l.config = parse_config(text);
    if (!l.config->name.empty()) l.name = l.config->name;
  }
  return l;
}

std::unique_ptr<Sampler> sampler_for(const Options& o) {
  HttpSamplerConfig http;
  http.model = o.model;
  http.api_key = o.api_key;
  http.endpoint = o.endpoint;
  return make_sampler(o.sampler, http);
}

int run_web(const Options& o) {
  ControlService service;
  if (!o.ecs_file.empty() || !o.scenario.empty()) {
    Loaded l = load(o);
    if (!l.config) throw ConfigProblem("the service edits entity-component configs; flat programs cannot be opened");
    std::optional<std::string> path;
    if (!o.ecs_file.empty()) path = o.ecs_file;
    const std::string id = service.create_session(std::move(*l.config), o.index, o.seed, path);
    std::cout << "session " << id << "\n";
  }
  const int port = service.bind(o.host, o.port);
  std::cout << "listening on http://" << o.host << ":" << port << std::endl;
  service.serve();
  return 0;
}

int run_batch_mode(const Options& o, const Loaded& l) {
  if (!l.config) throw ConfigProblem("--runs needs an entity-component config");
  BatchOptions b;
  b.runs = o.runs;
  b.steps = o.steps;
  b.seed = o.seed;
  b.jobs = o.jobs;
  b.base_index = o.index;
  b.vary_index = !o.fixed_index;
  if (o.context_blocks > 0) b.context_blocks = o.context_blocks;
  const auto prototype = sampler_for(o);
  const BatchResult batch = run_batch(*l.config, b, *prototype);
  const std::string dir = (std::filesystem::path(o.batch_dir) / l.name).string();
  write_batch(batch, dir);
  if (!o.metrics.empty()) write_text_file(o.metrics, summary_csv(batch.summary));

  int failed = 0;
  bool sampler_failed = false;
  for (const auto& r : batch.runs) {
    if (r.error.empty()) continue;
    ++failed;
    std::cerr << "run " << r.run << " failed: " << r.error << "\n";
    sampler_failed = sampler_failed || r.sampler_failure;
  }
  std::cout << "wrote " << batch.runs.size() << " runs to " << dir << "\n";
  if (failed == 0) return 0;
  return sampler_failed ? kExitSampler : kExitRuntime;
}

int run_single(const Options& o, const Loaded& l) {
  auto program = std::make_shared<const Program>(l.config ? compile(*l.config, o.index) : load_flat_program(l.flat_text, o.index));
  const Query query = parse_query(o.query);
  SimulationOptions so;
  so.seed = o.seed;
  if (o.context_blocks > 0) so.context_blocks = o.context_blocks;
  Simulation sim(program, std::shared_ptr<Sampler>(sampler_for(o)), so);

  int code = 0;
  try {
    sim.run(o.steps);
  } catch (const SamplerError& e) {
    std::cerr << "sampler error (" << sampler_error_name(e.kind()) << "): " << e.what() << "\n";
    code = kExitSampler;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    code = kExitRuntime;
  }

  // Outputs are written even after a failure so the partial stream is kept.
  const bool quiet = !o.stream_out.empty() || !o.output_file.empty();
  if (!o.stream_out.empty()) write_text_file(o.stream_out, stream_text(sim.stream()));
  if (!o.output_file.empty()) write_text_file(o.output_file, stream_text(sim.stream(), query));
  if (!o.metrics.empty()) write_text_file(o.metrics, metrics_csv(sim.metrics()));
  if (!quiet) std::cout << stream_text(sim.stream(), query);
  for (const auto& [entity, e] : sim.ledger().entries()) {
    if (e.final_failures > 0) {
      std::cerr << (entity.empty() ? std::string("program") : entity) << ": " << e.final_failures
                << " LLM row(s) fell back to the formula, consistency score " << e.score << "\n";
    }
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Operator-driven simulation streams: run a config, a batch, or the control service."};
  // Every option states its default in the help text.
  auto described = [](std::string what, std::string fallback) { return what + ". Default: " + fallback; };
  app.add_option("ecs_file", o.ecs_file, described("Path to the ECS configuration file (or a flat operator program)", "None"));
  app.add_option("--scenario", o.scenario, described("Run a bundled scenario instead of a file", "None"));
  app.add_flag("--web", o.web, described("Flag to launch the web interface", "False"));
  app.add_option("--steps", o.steps, described("Number of simulation steps", "10"))->check(CLI::NonNegativeNumber);
  app.add_option("--metrics", o.metrics, described("Metrics tracking file path (CSV)", "None"));
  app.add_option("--index", o.index, described("Variable initialization index", "0"));
  app.add_option("--model", o.model, described("LLM model identifier", std::string(kDefaultModel)));
  app.add_option("--api-key", o.api_key,
                 described("Model API access key, read from " + std::string(kApiKeyEnv) + " when not given", "Empty string"));
  app.add_option("--endpoint", o.endpoint, described("Chat-completions endpoint URL", std::string(kDefaultEndpoint)));
  app.add_option("--output-file", o.output_file, described("Query results output path", "None"));
  app.add_option("--query", o.query, described("Substream query, comma-separated tag=value pairs", "Empty (every row)"));
  app.add_option("--sampler", o.sampler,
                 described("auto, http, static or scripted:<transcript.jsonl>; auto is http when an API key is set", "auto"));
  app.add_option("--runs", o.runs, described("Independent runs; more than one writes a batch", "1"))->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, described("Sampler seed; run r of a batch uses seed + r", "0"));
  app.add_option("--stream-out", o.stream_out, described("Write the full rendered stream here", "None"));
  app.add_option("--jobs", o.jobs, described("Parallel batch runs, 0 for one per processor", "0"))->check(CLI::NonNegativeNumber);
  app.add_option("--context-blocks", o.context_blocks, described("Keep only the last K time blocks in LLM context, 0 for all", "0"));
  app.add_option("--batch-dir", o.batch_dir, described("Batch output root; files go to <dir>/<name>/", "runs"));
  app.add_flag("--fixed-index", o.fixed_index, described("Use --index for every batch run instead of index + run", "False"));
  app.add_option("--host", o.host, described("Service bind address", "127.0.0.1"));
  app.add_option("--port", o.port, described("Service port, 0 picks a free one", "8080"));

  CLI11_PARSE(app, argc, argv);

  if (!o.web && o.ecs_file.empty() && o.scenario.empty()) {
    std::cerr << "error: give an ECS file or --scenario (or --web)\n";
    return kExitConfig;
  }
  try {
    if (o.web) return run_web(o);
    const Loaded l = load(o);
    return o.runs > 1 ? run_batch_mode(o, l) : run_single(o, l);
  } catch (const SchemaError& e) {
    std::cerr << "config error at " << e.path() << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormulaParseError& e) {
    std::cerr << "formula error at " << e.path() << " (" << e.field() << "): " << e.what() << "\n";
    return kExitConfig;
  } catch (const CompileError& e) {
    std::cerr << "compile error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigProblem& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UnknownScenario& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SamplerError& e) {
    std::cerr << "sampler error (" << sampler_error_name(e.kind()) << "): " << e.what() << "\n";
    return e.kind() == SamplerErrorKind::Config ? kExitConfig : kExitSampler;
  } catch (const std::invalid_argument& e) {
    // Malformed option values such as a bad --query.
    std::cerr << "invalid option: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

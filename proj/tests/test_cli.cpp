#include "support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

using namespace simstream;
using namespace testing;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("streamsim_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator()(const std::string& name) const { return (dir / name).string(); }
};

// Runs the CLI with `args`; stdout and stderr go to files in the scratch dir.
int cli(const Scratch& tmp, const std::string& args) {
  const std::string cmd = std::string(STREAMSIM_BIN) + " " + args + " > " + tmp("stdout.txt") + " 2> " + tmp("stderr.txt");
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string q(const std::string& s) { return "'" + s + "'"; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("reference stream through the command line") {
    Scratch tmp;
    const int rc = cli(tmp, q(config_path("cheese.json")) + " --steps 2 --sampler scripted:" +
                                q(data_path("cheese_reference_transcript.jsonl")) + " --stream-out " + q(tmp("out.txt")));
    CHECK(rc == 0);
    CHECK(read_file(tmp("out.txt")) == read_file(data_path("cheese_reference.txt")));
    CHECK(read_file(tmp("stdout.txt")).empty());
  }

  TEST_CASE("zero steps writes an empty stream") {
    Scratch tmp;
    CHECK(cli(tmp, "--scenario cheese --steps 0 --sampler static --stream-out " + q(tmp("out.txt"))) == 0);
    CHECK(fs::exists(tmp("out.txt")));
    CHECK(fs::file_size(tmp("out.txt")) == 0);
  }

  TEST_CASE("query output equals the library result") {
    Scratch tmp;
    const std::string args = q(config_path("cheese.json")) + " --steps 2 --sampler scripted:" +
                             q(data_path("cheese_reference_transcript.jsonl")) + " --query summary=True --output-file " +
                             q(tmp("s.txt")) + " --metrics " + q(tmp("m.csv"));
    CHECK(cli(tmp, args) == 0);
    auto sim = reference_run(2);
    CHECK(read_file(tmp("s.txt")) == stream_text(sim->stream(), parse_query("summary=True")));
    CHECK(read_file(tmp("m.csv")) == metrics_csv(sim->metrics()));
  }

  TEST_CASE("stdout carries the stream when no file is named") {
    Scratch tmp;
    CHECK(cli(tmp, "--scenario maze --steps 3 --sampler static --index 0") == 0);
    Simulation sim(compiled(scenario_rl("maze").config), nullptr);
    sim.run(3);
    CHECK(read_file(tmp("stdout.txt")) == stream_text(sim.stream()));
  }

  TEST_CASE("flat programs run like their entity form") {
    Scratch tmp;
    CHECK(cli(tmp, q(config_path("cheese_flat.json")) + " --steps 25 --sampler static --stream-out " + q(tmp("flat.txt"))) == 0);
    CHECK(cli(tmp, q(config_path("cheese.json")) + " --steps 25 --sampler static --stream-out " + q(tmp("ecs.txt"))) == 0);
    CHECK(read_file(tmp("flat.txt")) == read_file(tmp("ecs.txt")));
  }

  TEST_CASE("exit codes") {
    Scratch tmp;
    CHECK(cli(tmp, "") == 2);
    CHECK(cli(tmp, q(tmp("missing.json"))) == 2);
    write_text_file(tmp("bad.json"), "{\"entities\": {\"a\": 3}}");
    CHECK(cli(tmp, q(tmp("bad.json"))) == 2);
    CHECK(read_file(tmp("stderr.txt")).find("entities.a") != std::string::npos);
    write_text_file(tmp("formula.json"),
                    R"({"entities": {"a": ["c"]}, "systems_definitions": {"c": [{"id": "X", "formula": "x = (1"}]}})");
    CHECK(cli(tmp, q(tmp("formula.json"))) == 2);
    CHECK(cli(tmp, "--scenario nope") == 2);
    CHECK(cli(tmp, "--scenario cheese --query planning") == 2);
    CHECK(cli(tmp, "--scenario cheese --sampler bogus") == 2);
    CHECK(cli(tmp, "--scenario cheese --steps -1") != 0);

    // Division by zero halts the run: a runtime error.
    write_text_file(tmp("div.json"), R"({"entities": {"a": ["c"]}, "variables": {"c": {"x": 1}},
      "systems_definitions": {"c": [{"id": "X", "formula": "x = x / 0"}]}})");
    CHECK(cli(tmp, q(tmp("div.json")) + " --sampler static") == 3);

    // An exhausted transcript is a sampler error; the partial stream is still written.
    CHECK(cli(tmp, "--scenario cheese --steps 3 --sampler scripted:" + q(data_path("cheese_reference_transcript.jsonl")) +
                       " --stream-out " + q(tmp("partial.txt"))) == 4);
    CHECK(read_file(tmp("partial.txt")).starts_with(read_file(data_path("cheese_reference.txt"))));
  }

  TEST_CASE("batch mode writes per-run and summary csv") {
    Scratch tmp;
    CHECK(cli(tmp, "--scenario cheese --runs 3 --steps 5 --sampler static --jobs 2 --batch-dir " + q(tmp("runs")) +
                       " --metrics " + q(tmp("summary.csv"))) == 0);
    for (const char* f : {"0.csv", "1.csv", "2.csv", "summary.csv"}) CHECK(fs::exists(fs::path(tmp("runs")) / "cheese" / f));
    BatchOptions o;
    o.runs = 3;
    o.steps = 5;
    const BatchResult b = run_batch(scenario_cheese().config, o, StaticSampler{});
    CHECK(read_file(tmp("summary.csv")) == summary_csv(b.summary));
    CHECK(read_file((fs::path(tmp("runs")) / "cheese" / "1.csv").string()) == metrics_csv(b.runs[1].metrics));
  }

  TEST_CASE("help lists every option with its default") {
    Scratch tmp;
    CHECK(cli(tmp, "--help") == 0);
    const std::string help = read_file(tmp("stdout.txt"));
    for (const char* line : {"--web", "--steps", "--metrics", "--index", "--model", "--api-key", "--output-file", "--query",
                             "--sampler", "--runs", "--seed", "--stream-out", "--jobs"}) {
      CAPTURE(line);
      CHECK(help.find(line) != std::string::npos);
    }
    for (const char* d : {"Default: False", "Default: 10", "Default: None", "Default: 0", "Default: gemini-1.5-pro",
                          "Default: Empty string"}) {
      CAPTURE(d);
      CHECK(help.find(d) != std::string::npos);
    }
    std::stringstream ss(help);
    for (std::string line; std::getline(ss, line);) {
      if (line.starts_with("  --")) CHECK(line.find("Default: ") != std::string::npos);
    }
  }

  TEST_CASE("web mode announces the session and port") {
    Scratch tmp;
    const std::string cmd = "timeout 1 " + std::string(STREAMSIM_BIN) + " --web --scenario cheese --port 0 > " + tmp("web.txt");
    const int rc = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 124);  // still serving when the timeout fired
    const std::string out = read_file(tmp("web.txt"));
    CHECK(out.starts_with("session "));
    CHECK(out.find("listening on http://127.0.0.1:") != std::string::npos);
  }
}

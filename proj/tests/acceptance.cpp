// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when
// any line fails.

#include "rl_oracle.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <unistd.h>

using namespace simstream;
using namespace testing;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

// Collects the first failed expectation of a criterion.
class Check {
 public:
  void expect(bool cond, const std::string& what) {
    if (!cond && ok_) {
      ok_ = false;
      first_ = what;
    }
  }
  bool ok() const { return ok_; }
  Outcome done(std::string summary) const { return ok_ ? Outcome{true, std::move(summary)} : Outcome{false, first_}; }

 private:
  bool ok_ = true;
  std::string first_;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::size_t count_of(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + needle.size())) ++n;
  return n;
}

std::size_t resident_bytes() {
  std::ifstream f("/proc/self/statm");
  std::size_t total = 0, resident = 0;
  f >> total >> resident;
  return resident * static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
}

Transcript cheese_wildcards(int cycles) {
  std::string text;
  for (int c = 0; c < cycles; ++c) {
    text += R"({"time": "*", "operator": "High_Level_Plan", "completion": "\"Sweep rows\""})" "\n";
    text += R"({"time": "*", "operator": "Movement_Plan", "completion": "\"Right\""})" "\n";
    text += R"({"time": "*", "operator": "Move_X", "completion": "1"})" "\n";
    text += R"({"time": "*", "operator": "Move_Y", "completion": "0"})" "\n";
    text += R"({"time": "*", "operator": "Summary", "completion": "\"Moving\""})" "\n";
  }
  return parse_transcript(text);
}

// ------------------------------------------------------------------ criteria

Outcome reference_stream() {
  Check c;
  const auto t0 = Clock::now();
  auto sim = reference_run(2);
  const std::string text = stream_text(sim->stream());
  const double secs = seconds_since(t0);
  c.expect(text == read_file(data_path("cheese_reference.txt")), "rendered stream differs from the reference");
  // The objective row appears only in the first block.
  c.expect(sim->stream().size() == 21, "expected 21 rows, got " + std::to_string(sim->stream().size()));
  std::map<std::string, int> per_block;
  for (const auto& row : sim->stream()) ++per_block[render_value(row.time)];
  c.expect(per_block.size() == 2 && per_block["1"] == 11 && per_block["2"] == 10, "blocks are not 11 and 10 rows");
  c.expect(count_of(text, "\n\n") == 1, "expected exactly one blank line");
  c.expect(secs < 1.0, "took " + fmt(secs) + " s");
  return c.done("21 rows byte-identical in " + fmt(secs * 1000, 1) + " ms");
}

Outcome query_fixture() {
  Check c;
  Simulation sim(compiled(load_config(data_path("query_fixture.json"))), nullptr);
  sim.run(5);
  c.expect(sim.stream().size() == 8, "fixture has " + std::to_string(sim.stream().size()) + " rows");
  std::string want = read_file(data_path("query_fixture.txt"));
  if (!want.empty() && want.back() == '\n') want.pop_back();
  const Query q = parse_query("movement=True");
  const std::string got = query_stream(sim.stream(), q);
  c.expect(got == want, "query text differs from the listing");
  c.expect(select_rows(sim.stream(), q).size() == 7, "expected 7 matching rows");
  c.expect(count_of(got, "\n\n") == 1, "expected one interior blank line");
  return c.done("7 of 8 rows, exact text");
}

Outcome ecs_equivalence() {
  Check c;
  const EcsConfig ecs = load_config(config_path("cheese.json"));
  const std::string flat_text = read_file(config_path("cheese_flat.json"));
  int runs = 0;
  for (std::size_t index = 0; index < 5; ++index) {
    for (int scripted = 0; scripted < 2; ++scripted) {
      auto make = [&]() -> std::shared_ptr<Sampler> {
        if (scripted) return std::make_shared<ScriptedSampler>(cheese_wildcards(30));
        return nullptr;
      };
      Simulation a(compiled(ecs, index), make());
      Simulation b(std::make_shared<const Program>(load_flat_program(flat_text, index)), make());
      a.run(25);
      b.run(25);
      c.expect(stream_text(a.stream()) == stream_text(b.stream()),
               "streams differ at index " + std::to_string(index) + (scripted ? " (scripted)" : " (static)"));
      c.expect(metrics_csv(a.metrics()) == metrics_csv(b.metrics()), "metrics differ at index " + std::to_string(index));
      ++runs;
    }
  }
  return c.done(std::to_string(runs) + " paired 25-step runs byte-identical");
}

// Hand-computed expectations for every cheese operator formula.
Value cheese_oracle(const std::string& template_id, const State& s) {
  const auto x = s.at("location_x").as_int(), y = s.at("location_y").as_int();
  const auto t = s.at("time").as_int();
  if (template_id == "Time") return v_int(t + 1);
  if (template_id == "Objective") return v_text("Find cheese in 5x5 grid");
  if (template_id == "High_Level_Plan") return v_text("Explore systematically");
  if (template_id == "Movement_Plan") return v_text("Move right, then down");
  if (template_id == "Move_X") return v_int(t % 2 == 1 ? 1 : 0);
  if (template_id == "Move_Y") return v_int(t % 2 == 0 ? -1 : 0);
  if (template_id == "Location_X") return v_int(std::clamp<std::int64_t>(x + s.at("move_x").as_int(), 0, 4));
  if (template_id == "Location_Y") return v_int(std::clamp<std::int64_t>(y + s.at("move_y").as_int(), 0, 4));
  if (template_id == "Previous") {
    ValueList items = s.at("previously_searched").as_list();
    items.push_back(Value::tuple({v_int(x), v_int(y)}));
    return Value::list(std::move(items));
  }
  if (template_id == "Cheese_Found") return s.at("cheese_map").as_list()[x].as_list()[y];
  if (template_id == "Summary") return s.at("first_summary");
  throw std::runtime_error("no oracle for " + template_id);
}

const std::vector<std::pair<std::string, const char*>> kTableFormulas = {
    {"Time", "time = time + 1"},
    {"Objective", "objective = \"Find cheese in 5x5 grid\""},
    {"High_Level_Plan", "high_level_plan = \"Explore the grid systematically\""},
    {"Movement_Plan", "movement_plan = \"Move right then down, repeating\""},
    {"Move_X", "move_x = 1 if (time % 2 == 1) else 0"},
    {"Move_Y", "move_y = -1 if (time % 2 == 0) else 0"},
    {"Location_X", "location_x = max(0, min(4, location_x + move_x))"},
    {"Location_Y", "location_y = max(0, min(4, location_y + move_y))"},
    {"Previous", "previously_searched.append((location_x, location_y))"},
    {"Cheese_Found", "cheese_found = cheese_map[location_x][location_y]"},
    {"Summary", "summary = first_summary"},
};

Outcome evaluator_golden() {
  Check c;
  int evaluated = 0;
  std::mt19937_64 rng(7);
  const std::vector<std::shared_ptr<const Program>> programs = {
      compiled(load_config(config_path("cheese.json"))),
      std::make_shared<const Program>(load_flat_program(read_file(config_path("cheese_flat.json")))),
  };
  for (const auto& p : programs) {
    for (int trial = 0; trial < 200; ++trial) {
      State s = p->initial_state;
      s.set("time", v_int(static_cast<std::int64_t>(rng() % 6)));
      s.set("location_x", v_int(static_cast<std::int64_t>(rng() % 5)));
      s.set("location_y", v_int(static_cast<std::int64_t>(rng() % 5)));
      s.set("move_x", v_int(static_cast<std::int64_t>(rng() % 3) - 1));
      s.set("move_y", v_int(static_cast<std::int64_t>(rng() % 3) - 1));
      for (const auto& op : p->operators) {
        const std::string tid = op.template_id.empty() ? op.id : op.template_id;
        const Value got = evaluate(op.formula, s, op.entity);
        c.expect(identical(got, cheese_oracle(tid, s)), tid + " gave " + render_value(got));
        c.expect(parse_assignment(op.formula_text).lhs == op.lhs, tid + " lhs mismatch");
        ++evaluated;
      }
      // The operator table as printed; its plan strings differ from the bundled config.
      for (const auto& [tid, formula] : kTableFormulas) {
        const Assignment a = parse_assignment(formula);
        Value want = cheese_oracle(tid, s);
        if (tid == "High_Level_Plan") want = v_text("Explore the grid systematically");
        if (tid == "Movement_Plan") want = v_text("Move right then down, repeating");
        c.expect(identical(evaluate(a.rhs, s), want), std::string("table formula ") + formula);
        ++evaluated;
      }
      // The successor rule of Time, the metrics and the termination test.
      const Operator* time_op = p->find("Time");
      const auto t = s.at("time").as_int();
      c.expect(evaluate(time_op->next_expr, s) == v_text(t == 1 ? "Objective" : "High_Level_Plan"), "Time successor");
      for (const auto& m : p->metrics) {
        Value want;
        if (m.name == "cells_searched") want = v_int(static_cast<std::int64_t>(s.at("previously_searched").as_list().size()));
        if (m.name == "cheese_found") want = v_int(s.at("cheese_found").as_bool() ? 1 : 0);
        if (m.name == "location_x") want = s.at("location_x");
        if (m.name == "location_y") want = s.at("location_y");
        c.expect(identical(evaluate(m.expr, s), want), "metric " + m.name);
        ++evaluated;
      }
      for (const auto& term : p->termination) c.expect(evaluate(term, s) == s.at("cheese_found"), "termination");
    }
  }

  // Clamping keeps 0 <= location <= 4 over random move sequences.
  const Program& ecs = *programs[0];
  const Operator* lx = ecs.find("Location_X");
  const Operator* ly = ecs.find("Location_Y");
  std::uniform_int_distribution<int> move(-1, 1);
  int sequences = 0;
  for (; sequences < 10000 && c.ok(); ++sequences) {
    State s = ecs.initial_state;
    for (int k = 0; k < 25; ++k) {
      s.set("move_x", v_int(move(rng)));
      s.set("move_y", v_int(move(rng)));
      s.set("location_x", evaluate(lx->formula, s));
      s.set("location_y", evaluate(ly->formula, s));
      const auto x = s.at("location_x").as_int(), y = s.at("location_y").as_int();
      c.expect(x >= 0 && x <= 4 && y >= 0 && y <= 4, "location left the grid");
    }
  }
  return c.done(std::to_string(evaluated) + " formula evaluations, " + std::to_string(sequences) + " clamping sequences");
}

Outcome long_run() {
  Check c;
  const auto t0 = Clock::now();
  auto program = compiled(scenario_cheese().config);
  Simulation sim(program, nullptr);
  const std::size_t rss0 = resident_bytes();
  std::vector<std::pair<std::size_t, std::size_t>> samples;  // (payload bytes, resident growth)
  std::size_t payload = 0, counted = 0;
  for (int k = 0; k < 4; ++k) {
    sim.run(250);
    for (; counted < sim.stream().size(); ++counted) payload += sim.stream()[counted].text.size();
    samples.emplace_back(payload, resident_bytes() - std::min(rss0, resident_bytes()));
  }
  c.expect(sim.state().at("time") == v_int(1000), "time reached " + render_value(sim.state().at("time")));
  c.expect(sim.stream().size() == 11 + 999 * 10, "row count " + std::to_string(sim.stream().size()));
  for (const auto& row : sim.stream()) {
    if (!c.ok()) break;
    c.expect(row.text.find('\n') == std::string::npos, "row " + std::to_string(row.index) + " spans lines");
    try {
      const Assignment a = parse_assignment(row.text);
      c.expect(a.lhs == row.lhs, "row " + std::to_string(row.index) + " re-parses to another variable");
      c.expect(identical(evaluate(a.rhs, State{}), row.value), "row " + std::to_string(row.index) + " value does not round-trip");
    } catch (const std::exception& e) {
      c.expect(false, "row " + std::to_string(row.index) + ": " + e.what());
    }
  }
  c.expect(replay_stream(program->initial_state, sim.stream()) == sim.state(), "replay differs from the final state");
  // Resident growth stays proportional to the retained rows.
  const double per_byte = static_cast<double>(samples.back().second) / static_cast<double>(samples.back().first);
  c.expect(per_byte < 32.0, "resident growth " + fmt(per_byte, 1) + " bytes per payload byte");
  const double secs = seconds_since(t0);
  c.expect(secs < 30.0, "took " + fmt(secs) + " s");
  return c.done(std::to_string(sim.stream().size()) + " rows re-parsed and replayed in " + fmt(secs, 2) + " s, " +
                fmt(static_cast<double>(samples.back().second) / 1e6, 1) + " MB resident for " +
                fmt(static_cast<double>(samples.back().first) / 1e6, 1) + " MB of rows");
}

// Per-cycle social script. pattern[c][who]: 0 valid, 1 revised, 2 fails twice.
std::string social_script(const std::vector<std::array<int, 3>>& pattern) {
  static const char* kWho[] = {"alice", "bob", "charlie"};
  std::string t;
  auto line = [&](std::int64_t time, const std::string& op, const std::string& completion) {
    t += nlohmann::json{{"time", time}, {"operator", op}, {"completion", completion}}.dump() + "\n";
  };
  for (std::size_t c = 0; c < pattern.size(); ++c) {
    const auto time = static_cast<std::int64_t>(c) + 2;
    line(time, "Event", "\"Wind.\"");
    for (int w = 0; w < 3; ++w) {
      const std::string who = kWho[w];
      line(time, who + ".Perspective", "\"Watching.\"");
      // No action rule accepts juggling, whoever holds the ball.
      if (pattern[c][w] >= 1) line(time, who + ".Action", "\"juggle: Look!\"");
      if (pattern[c][w] == 2) line(time, who + ".Action", "\"juggle: Again!\"");
      if (pattern[c][w] <= 1) line(time, who + ".Action", "\"wait: Ready.\"");
    }
  }
  return t;
}

// Runs the pattern cycle by cycle; the first mismatch against the rule is reported.
std::string check_scores(const std::vector<std::array<int, 3>>& pattern) {
  static const char* kWho[] = {"alice", "bob", "charlie"};
  Simulation sim(compiled(scenario_social().config), std::make_shared<ScriptedSampler>(parse_transcript(social_script(pattern))));
  sim.run(1);  // the deterministic first block
  std::array<int, 3> failures{}, revisions{};
  for (std::size_t c = 0; c < pattern.size(); ++c) {
    sim.run(1);
    for (int w = 0; w < 3; ++w) {
      if (pattern[c][w] == 2) ++failures[w];
      if (pattern[c][w] >= 1) ++revisions[w];
      const auto& e = sim.ledger().entry(kWho[w]);
      const int want = std::max(0, 5 - failures[w]);
      if (e.score != want || sim.ledger().score(kWho[w]) != want || e.final_failures != failures[w] ||
          e.revisions_used != revisions[w]) {
        return std::string(kWho[w]) + " at time " + std::to_string(c + 2) + ": score " + std::to_string(e.score) + ", failures " +
               std::to_string(e.final_failures) + ", revisions " + std::to_string(e.revisions_used) + "; rule gives " +
               std::to_string(want) + ", " + std::to_string(failures[w]) + ", " + std::to_string(revisions[w]);
      }
    }
  }
  if (sim.sampler().name() == "scripted") {
    const auto& s = dynamic_cast<const ScriptedSampler&>(sim.sampler());
    if (s.remaining() != 0) return "transcript not fully consumed";
  }
  return {};
}

Outcome consistency_protocol() {
  Check c;
  // Fixed script: bob fails every cycle, alice revises once, charlie is clean.
  std::vector<std::array<int, 3>> fixed;
  for (int k = 0; k < 7; ++k) fixed.push_back({k == 2 ? 1 : 0, 2, 0});
  const std::string err = check_scores(fixed);
  c.expect(err.empty(), "scripted trajectory: " + err);

  std::mt19937_64 rng(31);
  int trials = 0;
  for (; trials < 200 && c.ok(); ++trials) {
    std::vector<std::array<int, 3>> pattern(1 + rng() % 8);
    for (auto& cycle : pattern) {
      for (auto& who : cycle) who = static_cast<int>(rng() % 3);
    }
    const std::string e = check_scores(pattern);
    c.expect(e.empty(), "random pattern " + std::to_string(trials) + ": " + e);
  }
  return c.done("fixed trajectory and " + std::to_string(trials) + " random fault patterns follow max(0, 5 - failures)");
}

Outcome rl_oracles() {
  Check c;
  int total = 0;
  std::uint64_t seed = 1;
  for (const auto& task : rl_tasks()) {
    const rl_oracle::Report r = rl_oracle::check_task(task, 1000, seed++);
    total += r.cases;
    c.expect(r.cases == 1000, task + " ran " + std::to_string(r.cases) + " cases");
    c.expect(r.mismatches == 0, std::to_string(r.mismatches) + " mismatches, first " + r.first);
  }
  return c.done(std::to_string(rl_tasks().size()) + " tasks, " + std::to_string(total) + " random pairs, no mismatch");
}

Outcome batch_harness() {
  Check c;
  BatchOptions o;
  o.runs = 10;
  o.steps = 25;
  o.vary_index = false;
  o.jobs = 4;
  const ScriptedSampler prototype(cheese_wildcards(30));
  const BatchResult b = run_batch(scenario_cheese().config, o, prototype);
  c.expect(b.runs.size() == 10, "run count");
  for (const auto& r : b.runs) c.expect(r.error.empty() && r.result.cycles == 25, "run " + std::to_string(r.run) + " incomplete");
  c.expect(!b.summary.empty(), "empty summary");
  for (std::size_t k = 0; k < b.summary.size() && c.ok(); ++k) {
    const SummaryRow& row = b.summary[k];
    // Identical runs: the mean is any run's value and the spread is zero.
    c.expect(row.n == 10, row.name + " n = " + std::to_string(row.n));
    c.expect(row.std == 0.0, row.name + " std " + fmt(row.std, 12));
    c.expect(row.mean == b.runs[0].metrics[k].value.to_double(), row.name + " mean " + fmt(row.mean, 12));
  }
  const std::string summary = summary_csv(b.summary);
  std::stringstream ss(summary);
  std::string line;
  std::getline(ss, line);
  c.expect(line == "time,name,mean,std,n", "summary header " + line);
  std::size_t lines = 0;
  while (std::getline(ss, line)) {
    ++lines;
    c.expect(std::count(line.begin(), line.end(), ',') == 4, "summary line " + line);
  }
  c.expect(lines == b.summary.size(), "summary line count");
  c.expect(metrics_csv(b.runs[0].metrics).starts_with("time,name,value\n"), "metrics header");
  o.jobs = 1;
  c.expect(summary_csv(run_batch(scenario_cheese().config, o, prototype).summary) == summary, "summary depends on job count");
  return c.done("10 x 25 runs, " + std::to_string(b.summary.size()) + " summary rows with std 0");
}

Outcome market_liveness() {
  Check c;
  Simulation sim(compiled(scenario_market().config), nullptr);
  const RunResult r = sim.run(250);
  c.expect(r.cycles == 250, "completed " + std::to_string(r.cycles) + " cycles");
  for (const auto& row : sim.stream()) {
    if (row.lhs.starts_with("inventory_") || row.lhs.find(".inventory_") != std::string::npos) {
      c.expect(row.value.to_double() >= 0, "negative inventory in row " + std::to_string(row.index));
    }
  }
  std::map<std::string, std::int64_t> labor;
  int utilities = 0;
  for (const auto& m : sim.metrics()) {
    const std::string t = render_value(m.time);
    if (m.name == "inventory_labor") labor[t] = m.value.as_int();
    if (m.name != "utility") continue;
    ++utilities;
    const std::int64_t inv = labor.at(t);
    const Value want = inv > 5 ? Value::real(0.2 * static_cast<double>(10 - inv)) : v_int(0);
    c.expect(identical(m.value, want), "utility " + render_value(m.value) + " at time " + t);
  }
  c.expect(utilities == 250, std::to_string(utilities) + " utility records");
  return c.done("250 cycles, inventories non-negative, " + std::to_string(utilities) + " utility values exact");
}

Outcome determinism() {
  Check c;
  struct Case {
    const char* name;
    std::function<std::shared_ptr<Sampler>()> sampler;
    std::shared_ptr<const Program> program;
    int cycles;
  };
  const std::vector<Case> cases = {
      {"cheese", [] { return std::make_shared<ScriptedSampler>(cheese_wildcards(30)); }, compiled(scenario_cheese().config), 25},
      {"social", [] { return std::make_shared<ScriptedSampler>(parse_transcript(social_script({{0, 1, 2}, {2, 0, 1}}))); },
       compiled(scenario_social().config), 3},
      {"market", [] { return std::shared_ptr<Sampler>(); }, compiled(scenario_market().config), 25},
  };
  for (const auto& k : cases) {
    SimulationOptions opts;
    opts.seed = 99;
    Simulation a(k.program, k.sampler(), opts), b(k.program, k.sampler(), opts);
    a.run(k.cycles);
    b.run(k.cycles);
    c.expect(!a.stream().empty(), std::string(k.name) + " produced nothing");
    c.expect(stream_text(a.stream()) == stream_text(b.stream()), std::string(k.name) + " stream text differs");
    c.expect(metrics_csv(a.metrics()) == metrics_csv(b.metrics()), std::string(k.name) + " metric csv differs");
  }
  return c.done("cheese, social and market repeat byte-for-byte");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"reference cheese stream", reference_stream},
      {"query fixture", query_fixture},
      {"ecs equivalence", ecs_equivalence},
      {"evaluator golden suite", evaluator_golden},
      {"long-run format consistency", long_run},
      {"consistency-score protocol", consistency_protocol},
      {"rl environment oracles", rl_oracles},
      {"batch harness", batch_harness},
      {"market liveness", market_liveness},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.ok) ++failed;
    std::cout << (o.ok ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

#pragma once

// Independent step functions for the six RL tasks, written against the task
// rules rather than the config formulas, and a driver that compares them with
// the compiled dynamics operators on random (state, action) pairs.

#include "simstream/ecs.hpp"
#include "simstream/engine.hpp"
#include "simstream/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace rl_oracle {

using simstream::State;
using simstream::Value;

using Cell = std::pair<std::int64_t, std::int64_t>;

inline Value cell_value(Cell c) { return Value::tuple({Value::integer(c.first), Value::integer(c.second)}); }

inline Value cells_value(const std::vector<Cell>& cells) {
  simstream::ValueList items;
  for (const auto& c : cells) items.push_back(cell_value(c));
  return Value::list(std::move(items));
}

inline std::vector<Cell> cells_of(const Value& v) {
  std::vector<Cell> out;
  for (const auto& item : v.as_list()) out.emplace_back(item.as_list()[0].as_int(), item.as_list()[1].as_int());
  return out;
}

inline std::int64_t clamp(std::int64_t v, std::int64_t lo, std::int64_t hi) { return std::max(lo, std::min(hi, v)); }

inline bool contains(const std::vector<Cell>& cells, Cell c) { return std::find(cells.begin(), cells.end(), c) != cells.end(); }

// Expected values of every variable the step changes.
using Expected = std::vector<std::pair<std::string, Value>>;

struct Pair {
  State state;
  Expected expected;
};

inline std::int64_t i(const State& s, const char* k) { return s.at(k).as_int(); }
inline double r(const State& s, const char* k) { return s.at(k).is_int() ? static_cast<double>(s.at(k).as_int()) : s.at(k).as_real(); }
inline bool b(const State& s, const char* k) { return s.at(k).as_bool(); }

using Rng = std::mt19937_64;

inline std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}
inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Pair windy(State s, Rng& rng) {
  s.set("x", Value::integer(pick(rng, 0, 9)));
  s.set("y", Value::integer(pick(rng, 0, 6)));
  s.set("goal_x", Value::integer(pick(rng, 0, 9)));
  s.set("goal_y", Value::integer(pick(rng, 0, 6)));
  s.set("move_x", Value::integer(pick(rng, -1, 1)));
  s.set("move_y", Value::integer(pick(rng, -1, 1)));
  const std::int64_t strength[] = {0, 0, 0, 1, 1, 1, 2, 2, 1, 0};
  const std::int64_t x = i(s, "x"), y = i(s, "y");
  const std::int64_t wind = strength[x];  // the wind where the agent starts
  const std::int64_t nx = clamp(x + i(s, "move_x"), 0, 9);
  const std::int64_t ny = clamp(y + i(s, "move_y") - wind, 0, 6);
  const std::int64_t d = std::abs(i(s, "goal_x") - nx) + std::abs(i(s, "goal_y") - ny);
  return {s, {{"wind", Value::integer(wind)}, {"x", Value::integer(nx)}, {"y", Value::integer(ny)}, {"distance", Value::integer(d)}}};
}

inline Pair key_chest(State s, Rng& rng) {
  for (const char* k : {"x", "y", "key_x", "key_y", "chest_x", "chest_y"}) s.set(k, Value::integer(pick(rng, 0, 4)));
  s.set("has_key", Value::boolean(rng() % 2));
  s.set("chest_opened", Value::boolean(b(s, "has_key") && rng() % 2));
  s.set("move_x", Value::integer(pick(rng, -1, 1)));
  s.set("move_y", Value::integer(pick(rng, -1, 1)));
  const std::int64_t nx = clamp(i(s, "x") + i(s, "move_x"), 0, 4);
  const std::int64_t ny = clamp(i(s, "y") + i(s, "move_y"), 0, 4);
  const bool key = b(s, "has_key") || (nx == i(s, "key_x") && ny == i(s, "key_y"));
  const bool open = b(s, "chest_opened") || (key && nx == i(s, "chest_x") && ny == i(s, "chest_y"));
  return {s,
          {{"x", Value::integer(nx)},
           {"y", Value::integer(ny)},
           {"has_key", Value::boolean(key)},
           {"chest_opened", Value::boolean(open)},
           {"score", Value::integer((key ? 1 : 0) + (open ? 1 : 0))}}};
}

inline Pair maze(State s, Rng& rng) {
  const std::vector<Cell> walls = {{1, 0}, {1, 1}, {1, 2}, {3, 1}, {3, 2}, {3, 3}, {3, 4}, {5, 2}, {1, 4}, {2, 4}, {4, 4}};
  Cell at;
  do {
    at = {pick(rng, 0, 5), pick(rng, 0, 5)};
  } while (contains(walls, at));
  s.set("x", Value::integer(at.first));
  s.set("y", Value::integer(at.second));
  s.set("move_x", Value::integer(pick(rng, -1, 1)));
  s.set("move_y", Value::integer(pick(rng, -1, 1)));
  const Cell target{at.first + i(s, "move_x"), at.second + i(s, "move_y")};
  const bool inside = target.first >= 0 && target.first <= 5 && target.second >= 0 && target.second <= 5;
  const bool blocked = !inside || contains(walls, target);
  const Cell next = blocked ? at : target;
  const std::int64_t d = std::abs(5 - next.first) + std::abs(5 - next.second);
  return {s,
          {{"target_x", Value::integer(target.first)},
           {"target_y", Value::integer(target.second)},
           {"blocked", Value::boolean(blocked)},
           {"x", Value::integer(next.first)},
           {"y", Value::integer(next.second)},
           {"distance", Value::integer(d)}}};
}

inline Pair mountain_car(State s, Rng& rng) {
  s.set("position", Value::real(uniform(rng, -1.2, 0.6)));
  s.set("velocity", Value::real(uniform(rng, -0.07, 0.07)));
  s.set("action", Value::integer(pick(rng, -1, 1)));
  // Classic mountain-car update with force 0.001 and gravity 0.0025.
  const double p = r(s, "position");
  double v = r(s, "velocity") + 0.001 * static_cast<double>(i(s, "action")) - 0.0025 * std::cos(3.0 * p);
  v = std::clamp(v, -0.07, 0.07);
  const double np = std::clamp(p + v, -1.2, 0.6);
  if (np <= -1.2 && v < 0) v = 0.0;
  return {s, {{"velocity", Value::real(v)}, {"position", Value::real(np)}, {"reached", Value::boolean(np >= 0.5)}}};
}

inline Pair temperature(State s, Rng& rng) {
  s.set("time", Value::integer(pick(rng, 0, 1000)));
  s.set("temperature", Value::real(uniform(rng, -20.0, 60.0)));
  s.set("heater", Value::integer(pick(rng, 0, 5)));
  s.set("time_in_band", Value::integer(pick(rng, 0, 100)));
  const double outside = 10.0 + 5.0 * std::sin(static_cast<double>(i(s, "time")) / 4.0);
  const double t = r(s, "temperature");
  const double nt = std::clamp(t + 0.1 * (outside - t) + 0.8 * static_cast<double>(i(s, "heater")), -20.0, 60.0);
  const bool band = nt >= 20.0 && nt <= 22.0;
  return {s,
          {{"outside", Value::real(outside)},
           {"temperature", Value::real(nt)},
           {"in_band", Value::boolean(band)},
           {"time_in_band", Value::integer(i(s, "time_in_band") + (band ? 1 : 0))}}};
}

inline Pair robot_cleaning(State s, Rng& rng) {
  const std::vector<Cell> pillars = {{1, 1}, {3, 1}, {1, 3}, {3, 3}};
  std::vector<Cell> free;
  for (std::int64_t x = 0; x <= 4; ++x) {
    for (std::int64_t y = 0; y <= 4; ++y) {
      if (!contains(pillars, {x, y})) free.emplace_back(x, y);
    }
  }
  const Cell at = free[static_cast<std::size_t>(pick(rng, 0, static_cast<std::int64_t>(free.size()) - 1))];
  std::shuffle(free.begin(), free.end(), rng);
  std::vector<Cell> dirt(free.begin(), free.begin() + pick(rng, 0, 8));
  s.set("x", Value::integer(at.first));
  s.set("y", Value::integer(at.second));
  s.set("dirt", cells_value(dirt));
  s.set("cleaned", Value::integer(pick(rng, 0, 10)));
  s.set("move_x", Value::integer(pick(rng, -1, 1)));
  s.set("move_y", Value::integer(pick(rng, -1, 1)));
  const Cell target{at.first + i(s, "move_x"), at.second + i(s, "move_y")};
  const bool inside = target.first >= 0 && target.first <= 4 && target.second >= 0 && target.second <= 4;
  const bool blocked = !inside || contains(pillars, target);
  const Cell next = blocked ? at : target;
  const bool now = contains(dirt, next);
  if (now) dirt.erase(std::find(dirt.begin(), dirt.end(), next));
  return {s,
          {{"target_x", Value::integer(target.first)},
           {"target_y", Value::integer(target.second)},
           {"blocked", Value::boolean(blocked)},
           {"x", Value::integer(next.first)},
           {"y", Value::integer(next.second)},
           {"cleaned_now", Value::boolean(now)},
           {"dirt", cells_value(dirt)},
           {"cleaned", Value::integer(i(s, "cleaned") + (now ? 1 : 0))}}};
}

inline Pair random_pair(const std::string& task, const State& base, Rng& rng) {
  if (task == "windy_gridworld") return windy(base, rng);
  if (task == "key_chest") return key_chest(base, rng);
  if (task == "maze") return maze(base, rng);
  if (task == "mountain_car") return mountain_car(base, rng);
  if (task == "temperature_control") return temperature(base, rng);
  return robot_cleaning(base, rng);
}

// Reals compare within 1e-9; everything else exactly.
inline bool same(const Value& got, const Value& want) {
  if (want.is_real()) return got.is_real() && std::abs(got.as_real() - want.as_real()) <= 1e-9;
  return simstream::identical(got, want);
}

// The task's dynamics operators as their own cyclic program.
inline std::shared_ptr<simstream::Program> dynamics_program(const std::string& task) {
  auto p = std::make_shared<simstream::Program>(simstream::compile(simstream::scenario_rl(task).config));
  std::erase_if(p->operators, [](const simstream::Operator& op) { return op.component != "dynamics"; });
  for (std::size_t k = 0; k < p->operators.size(); ++k) {
    p->operators[k].next_expr = simstream::Expr();
    p->operators[k].next_id = p->operators[(k + 1) % p->operators.size()].id;
  }
  p->metrics.clear();
  p->termination.clear();
  p->finalize();
  return p;
}

struct Report {
  int cases = 0;
  int mismatches = 0;
  std::string first;
};

// One engine cycle of the dynamics per random pair, compared with the oracle.
inline Report check_task(const std::string& task, int cases, std::uint64_t seed) {
  Report rep;
  const auto base = dynamics_program(task);
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    Pair pr = random_pair(task, base->initial_state, rng);
    auto prog = std::make_shared<simstream::Program>(*base);
    prog->initial_state = pr.state;
    prog->finalize();
    simstream::Simulation sim(prog, nullptr);
    sim.run(1);
    ++rep.cases;
    for (const auto& [k, want] : pr.expected) {
      const Value* got = sim.state().find(k);
      if (got == nullptr || !same(*got, want)) {
        if (rep.mismatches++ == 0) {
          rep.first = task + ": " + k + " = " + (got ? simstream::render_value(*got) : std::string("<missing>")) +
                      ", oracle " + simstream::render_value(want);
        }
        break;
      }
    }
  }
  return rep;
}

}  // namespace rl_oracle

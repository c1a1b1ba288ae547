#pragma once

#include "simstream/ecs.hpp"
#include "simstream/engine.hpp"
#include "simstream/scenarios.hpp"

#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>

namespace testing {

inline std::string data_path(const std::string& name) { return std::string(SIMSTREAM_TEST_DATA) + "/" + name; }
inline std::string config_path(const std::string& name) { return std::string(SIMSTREAM_CONFIGS) + "/" + name; }

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::shared_ptr<const simstream::Program> compiled(const simstream::EcsConfig& c, std::size_t index = 0) {
  return std::make_shared<const simstream::Program>(simstream::compile(c, index));
}

inline std::shared_ptr<simstream::Sampler> scripted(const std::string& transcript_file) {
  return std::make_shared<simstream::ScriptedSampler>(simstream::load_transcript(data_path(transcript_file)));
}

// Cheese scenario run for `cycles` time steps with the reference block-2 completions.
inline std::unique_ptr<simstream::Simulation> reference_run(int cycles = 2) {
  auto sim = std::make_unique<simstream::Simulation>(compiled(simstream::scenario_cheese().config),
                                                     scripted("cheese_reference_transcript.jsonl"));
  sim->run(cycles);
  return sim;
}

inline simstream::Value v_int(std::int64_t x) { return simstream::Value::integer(x); }
inline simstream::Value v_real(double x) { return simstream::Value::real(x); }
inline simstream::Value v_bool(bool x) { return simstream::Value::boolean(x); }
inline simstream::Value v_text(std::string x) { return simstream::Value::text(std::move(x)); }

}  // namespace testing

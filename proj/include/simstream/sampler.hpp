#pragma once

#include "simstream/value.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace simstream {

inline constexpr std::string_view kPromptPreamble =
    "Continue the simulation log. Output only the next value, one line.\n";
inline constexpr std::string_view kDefaultModel = "gemini-1.5-pro";
inline constexpr std::string_view kDefaultEndpoint =
    "https://generativelanguage.googleapis.com/v1beta/openai/chat/completions";
inline constexpr std::string_view kApiKeyEnv = "STREAMSIM_API_KEY";

struct SamplerRequest {
  std::string preamble{kPromptPreamble};
  std::string correction;  // set on the single revision attempt
  std::string context;
  std::string stub;        // "lhs = "
  double temperature = 0.7;
  int max_tokens = 256;
  std::uint64_t seed = 0;
  Value time;
  std::string entity;
  std::string operator_id;

  // The completion prompt as one text: preamble, correction, context, stub.
  std::string prompt_text() const;
  std::string system_text() const;  // preamble + correction
  std::string user_text() const;    // context + "\n" + stub
};

SamplerRequest build_prompt(std::string_view context, std::string_view lhs);

struct SamplerResponse {
  std::string raw;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
  std::chrono::milliseconds latency{0};
};

enum class SamplerErrorKind : std::uint8_t { Unavailable, TranscriptExhausted, Auth, Config, Protocol };

std::string_view sampler_error_name(SamplerErrorKind kind);

class SamplerError : public std::runtime_error {
 public:
  SamplerError(SamplerErrorKind kind, const std::string& message);
  SamplerErrorKind kind() const { return kind_; }

 private:
  SamplerErrorKind kind_;
};

/// The LLM sampling function. Implementations must be safe to call from
/// several simulations at once.
class Sampler {
 public:
  virtual ~Sampler() = default;
  virtual SamplerResponse sample(const SamplerRequest& request) = 0;
  virtual std::string name() const = 0;
  // A fresh handle with the same configuration and no consumed state.
  virtual std::unique_ptr<Sampler> clone() const = 0;
  // False when responses never depend on the prompt, letting the engine skip
  // context assembly.
  virtual bool wants_context() const { return true; }
};

/// Always returns an empty completion, which sends the engine down the
/// fallback path.
class StaticSampler final : public Sampler {
 public:
  SamplerResponse sample(const SamplerRequest& request) override;
  std::string name() const override { return "static"; }
  std::unique_ptr<Sampler> clone() const override { return std::make_unique<StaticSampler>(); }
  bool wants_context() const override { return false; }
};

struct TranscriptEntry {
  std::optional<Value> time;            // nullopt = wildcard
  std::optional<std::string> operator_id;  // nullopt = wildcard
  std::string completion;
};

using Transcript = std::vector<TranscriptEntry>;

// Line-delimited JSON: {"time": 2 | "*", "operator": "Move_X" | "*", "completion": "..."}
Transcript parse_transcript(std::string_view text);
Transcript load_transcript(const std::string& path);
std::string format_transcript(const Transcript& transcript);

/// Replays completions. Each request takes the first unconsumed entry whose
/// key matches (time, operator id); entries are consumed once.
class ScriptedSampler final : public Sampler {
 public:
  explicit ScriptedSampler(Transcript transcript);
  SamplerResponse sample(const SamplerRequest& request) override;
  std::string name() const override { return "scripted"; }
  std::unique_ptr<Sampler> clone() const override;
  std::size_t consumed() const;
  std::size_t remaining() const;

 private:
  Transcript transcript_;
  std::vector<bool> used_;
  std::size_t first_unused_ = 0;
  mutable std::mutex mu_;
};

struct HttpSamplerConfig {
  std::string model{kDefaultModel};
  std::string api_key;  // empty: read from the environment
  std::string endpoint{kDefaultEndpoint};
  int attempts = 3;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds backoff_ceiling{8000};
  std::chrono::seconds timeout{60};
};

// Flag value first, then the environment; empty when neither is set.
std::string resolve_api_key(std::string_view flag_value);

/// Chat-completions client: a system message with the preamble and a user
/// message with context and stub, stop at the first newline.
class HttpSampler final : public Sampler {
 public:
  explicit HttpSampler(HttpSamplerConfig config);  // throws SamplerError{Config}
  SamplerResponse sample(const SamplerRequest& request) override;
  std::string name() const override { return "http"; }
  std::unique_ptr<Sampler> clone() const override { return std::make_unique<HttpSampler>(config_); }
  const HttpSamplerConfig& config() const { return config_; }

  std::string request_body(const SamplerRequest& request) const;

 private:
  HttpSamplerConfig config_;
  std::string scheme_host_;
  std::string path_;
};

/// "static", "http", "scripted:<path>" or "auto" (http when an API key is
/// available, static otherwise). Throws SamplerError{Config} for other specs.
std::unique_ptr<Sampler> make_sampler(std::string_view spec, const HttpSamplerConfig& http = {});

}  // namespace simstream

#include "simstream/sampler.hpp"

#include "simstream/expr.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace simstream {

using json = nlohmann::json;

std::string SamplerRequest::system_text() const {
  if (correction.empty()) return preamble;
  return preamble + correction + "\n";
}

std::string SamplerRequest::user_text() const {
  if (context.empty()) return stub;
  return context + "\n" + stub;
}

std::string SamplerRequest::prompt_text() const { return system_text() + user_text(); }

SamplerRequest build_prompt(std::string_view context, std::string_view lhs) {
  SamplerRequest req;
  req.context = std::string(context);
  req.stub = std::string(lhs) + " = ";
  return req;
}

std::string_view sampler_error_name(SamplerErrorKind kind) {
  switch (kind) {
    case SamplerErrorKind::Unavailable: return "SamplerUnavailable";
    case SamplerErrorKind::TranscriptExhausted: return "TranscriptExhausted";
    case SamplerErrorKind::Auth: return "AuthError";
    case SamplerErrorKind::Config: return "ConfigError";
    case SamplerErrorKind::Protocol: return "ProtocolError";
  }
  return "SamplerError";
}

SamplerError::SamplerError(SamplerErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(sampler_error_name(kind)) + ": " + message), kind_(kind) {}

SamplerResponse StaticSampler::sample(const SamplerRequest&) { return {}; }

// ---------------------------------------------------------------- transcript

namespace {

Value json_to_time(const json& j) {
  if (j.is_number_integer()) return Value::integer(j.get<std::int64_t>());
  if (j.is_number_float()) return Value::real(j.get<double>());
  if (j.is_string()) return parse_literal(j.get<std::string>());
  throw std::invalid_argument("transcript time must be a number, a literal string, or \"*\"");
}

}  // namespace

Transcript parse_transcript(std::string_view text) {
  Transcript out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("transcript line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("completion") || !j["completion"].is_string()) {
      throw std::invalid_argument("transcript line " + std::to_string(lineno) + ": missing string \"completion\"");
    }
    TranscriptEntry e;
    e.completion = j["completion"].get<std::string>();
    if (j.contains("time") && !(j["time"].is_string() && j["time"] == "*")) e.time = json_to_time(j["time"]);
    if (j.contains("operator") && !(j["operator"].is_string() && j["operator"] == "*")) {
      if (!j["operator"].is_string()) throw std::invalid_argument("transcript line " + std::to_string(lineno) + ": operator must be a string");
      e.operator_id = j["operator"].get<std::string>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

Transcript load_transcript(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw SamplerError(SamplerErrorKind::Config, "cannot open transcript '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_transcript(ss.str());
}

std::string format_transcript(const Transcript& transcript) {
  std::string out;
  for (const auto& e : transcript) {
    json j = json::object();
    if (!e.time) {
      j["time"] = "*";
    } else if (e.time->is_int()) {
      j["time"] = e.time->as_int();
    } else if (e.time->is_real()) {
      j["time"] = e.time->as_real();
    } else {
      j["time"] = render_value(*e.time);
    }
    j["operator"] = e.operator_id.value_or("*");
    j["completion"] = e.completion;
    out += j.dump() + "\n";
  }
  return out;
}

ScriptedSampler::ScriptedSampler(Transcript transcript)
    : transcript_(std::move(transcript)), used_(transcript_.size(), false) {}

std::unique_ptr<Sampler> ScriptedSampler::clone() const { return std::make_unique<ScriptedSampler>(transcript_); }

SamplerResponse ScriptedSampler::sample(const SamplerRequest& request) {
  std::lock_guard lock(mu_);
  for (std::size_t i = first_unused_; i < transcript_.size(); ++i) {
    if (used_[i]) continue;
    const auto& e = transcript_[i];
    if (e.time && *e.time != request.time) continue;
    if (e.operator_id && *e.operator_id != request.operator_id) continue;
    used_[i] = true;
    while (first_unused_ < used_.size() && used_[first_unused_]) ++first_unused_;
    SamplerResponse r;
    r.raw = e.completion;
    return r;
  }
  throw SamplerError(SamplerErrorKind::TranscriptExhausted,
                     "no transcript entry for time " + render_value(request.time) + ", operator " + request.operator_id);
}

std::size_t ScriptedSampler::consumed() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count(used_.begin(), used_.end(), true));
}

std::size_t ScriptedSampler::remaining() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count(used_.begin(), used_.end(), false));
}

// ---------------------------------------------------------------------- http

std::string resolve_api_key(std::string_view flag_value) {
  if (!flag_value.empty()) return std::string(flag_value);
  if (const char* env = std::getenv(std::string(kApiKeyEnv).c_str())) return env;
  return {};
}

HttpSampler::HttpSampler(HttpSamplerConfig config) : config_(std::move(config)) {
  if (config_.model.empty()) throw SamplerError(SamplerErrorKind::Config, "model identifier must not be empty");
  if (config_.attempts < 1) throw SamplerError(SamplerErrorKind::Config, "attempts must be at least 1");
  config_.api_key = resolve_api_key(config_.api_key);
  const auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw SamplerError(SamplerErrorKind::Config, "endpoint '" + config_.endpoint + "' is not an absolute URL");
  }
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  scheme_host_ = config_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
}

std::string HttpSampler::request_body(const SamplerRequest& request) const {
  json body = {
      {"model", config_.model},
      {"messages",
       json::array({{{"role", "system"}, {"content", request.system_text()}},
                    {{"role", "user"}, {"content", request.user_text()}}})},
      {"temperature", request.temperature},
      {"max_tokens", request.max_tokens},
      {"stop", json::array({"\n"})},
      {"seed", request.seed},
  };
  return body.dump();
}

SamplerResponse HttpSampler::sample(const SamplerRequest& request) {
  const std::string body = request_body(request);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  std::string last_error;
  auto delay = config_.backoff_base;
  for (int attempt = 0; attempt < config_.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::min(delay, config_.backoff_ceiling));
      delay *= 2;
    }
    httplib::Client client(scheme_host_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path_, headers, body, "application/json");
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw SamplerError(SamplerErrorKind::Auth, "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw SamplerError(SamplerErrorKind::Protocol, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    try {
      const json j = json::parse(res->body);
      SamplerResponse out;
      const auto& content = j.at("choices").at(0).at("message").at("content");
      out.raw = content.is_null() ? std::string() : content.get<std::string>();
      if (j.contains("usage") && j["usage"].is_object()) {
        const auto& u = j["usage"];
        if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number_integer()) out.prompt_tokens = u["prompt_tokens"].get<int>();
        if (u.contains("completion_tokens") && u["completion_tokens"].is_number_integer()) {
          out.completion_tokens = u["completion_tokens"].get<int>();
        }
      }
      out.latency = elapsed;
      return out;
    } catch (const json::exception& e) {
      throw SamplerError(SamplerErrorKind::Protocol, std::string("malformed completion response: ") + e.what());
    }
  }
  throw SamplerError(SamplerErrorKind::Unavailable,
                     "no response after " + std::to_string(config_.attempts) + " attempts (" + last_error + ")");
}

std::unique_ptr<Sampler> make_sampler(std::string_view spec, const HttpSamplerConfig& http) {
  if (spec == "static") return std::make_unique<StaticSampler>();
  if (spec == "http") return std::make_unique<HttpSampler>(http);
  if (spec == "auto") {
    if (resolve_api_key(http.api_key).empty()) return std::make_unique<StaticSampler>();
    return std::make_unique<HttpSampler>(http);
  }
  constexpr std::string_view kScripted = "scripted:";
  if (spec.starts_with(kScripted) && spec.size() > kScripted.size()) {
    return std::make_unique<ScriptedSampler>(load_transcript(std::string(spec.substr(kScripted.size()))));
  }
  throw SamplerError(SamplerErrorKind::Config,
                     "unknown sampler '" + std::string(spec) + "' (expected auto, http, static or scripted:<path>)");
}

}  // namespace simstream

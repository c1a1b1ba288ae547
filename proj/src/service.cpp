#include "simstream/service.hpp"

#include "simstream/scenarios.hpp"

#include <httplib.h>

#include <atomic>
#include <map>
#include <mutex>
#include <random>
#include <thread>

namespace simstream {

namespace {

struct HttpError : std::runtime_error {
  HttpError(int status, std::string kind, const std::string& message)
      : std::runtime_error(message), status(status), kind(std::move(kind)) {}
  int status;
  std::string kind;
};

HttpError not_found(const std::string& what) { return {404, "not_found", what}; }
HttpError bad_request(const std::string& what) { return {400, "invalid", what}; }

struct Session {
  std::string id;
  std::string name;

  // Guards everything below except the published view. A run also needs
  // `running`; while it is set only the run owner touches `sim`.
  std::mutex mu;
  EcsConfig config;
  std::optional<std::string> path;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::optional<std::size_t> context_blocks;
  std::shared_ptr<Sampler> sampler = std::make_shared<StaticSampler>();  // prototype; runs use clones
  std::unique_ptr<Simulation> sim;
  std::string compile_error;
  std::vector<Diagnostic> diagnostics;
  std::thread worker;
  std::atomic<bool> running{false};
  std::atomic<bool> cancel{false};

  // Published view: copies made by the run owner after every step.
  mutable std::mutex view_mu;
  std::vector<StreamRow> rows;
  std::vector<MetricRecord> metrics;
  std::map<std::string, LedgerEntry, std::less<>> ledger;
  std::string status = "idle";
  std::string error;
  std::string error_kind;
  int cycles = 0;
  bool terminated = false;
  std::string current;
  std::uint64_t generation = 0;
};

using SessionPtr = std::shared_ptr<Session>;

OrderedJson body_json(const httplib::Request& req) {
  if (req.body.empty()) return OrderedJson::object();
  OrderedJson j = OrderedJson::parse(req.body, nullptr, true, true);
  if (!j.is_object()) throw bad_request("request body must be a JSON object");
  return j;
}

void send(httplib::Response& res, int status, const OrderedJson& j) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

OrderedJson diagnostics_json(const std::vector<Diagnostic>& ds) {
  OrderedJson out = OrderedJson::array();
  for (const auto& d : ds) {
    out.push_back({{"kind", std::string(diagnostic_name(d.kind))},
                   {"warning", d.warning},
                   {"path", d.path},
                   {"message", d.message}});
  }
  return out;
}

OrderedJson ledger_json(const std::map<std::string, LedgerEntry, std::less<>>& ledger) {
  OrderedJson out = OrderedJson::object();
  for (const auto& [entity, e] : ledger) {
    OrderedJson failures = OrderedJson::array();
    for (const auto& f : e.failures) failures.push_back({{"row", f.row_index}, {"reason", f.reason}});
    out[entity.empty() ? "_" : entity] = {{"score", e.score},
                                          {"revisions_used", e.revisions_used},
                                          {"final_failures", e.final_failures},
                                          {"failures", std::move(failures)}};
  }
  return out;
}

OrderedJson metric_json(const MetricRecord& m) {
  return {{"time", value_to_json(m.time)}, {"name", m.name}, {"value", value_to_json(m.value)}};
}

OrderedJson operator_json(const Operator& op) {
  return {{"id", op.id},     {"entity", op.entity}, {"component", op.component}, {"lhs", op.lhs},
          {"formula", op.formula_text}, {"next", op.next_id}};
}

template <class T>
T optional_field(const OrderedJson& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  return j[key].get<T>();
}

class Service {
 public:
  Service() { routes(); }

  ~Service() {
    std::vector<SessionPtr> all;
    {
      std::lock_guard g(sessions_mu_);
      for (auto& [id, s] : sessions_) all.push_back(s);
      sessions_.clear();
    }
    for (auto& s : all) halt_worker(*s);
  }

  httplib::Server server;

  std::string create(EcsConfig config, std::size_t index, std::uint64_t seed, std::optional<std::string> path,
                     std::optional<std::size_t> context_blocks = std::nullopt) {
    auto s = std::make_shared<Session>();
    s->name = config.name;
    s->config = std::move(config);
    s->index = index;
    s->seed = seed;
    s->path = std::move(path);
    s->context_blocks = context_blocks;
    s->diagnostics = validate_config(s->config);
    rebuild(*s);
    std::lock_guard g(sessions_mu_);
    s->id = fresh_id();
    sessions_[s->id] = s;
    return s->id;
  }

 private:
  std::mutex sessions_mu_;
  std::map<std::string, SessionPtr> sessions_;
  std::mt19937_64 ids_{std::random_device{}()};

  std::string fresh_id() {
    static constexpr char kHex[] = "0123456789abcdef";
    for (;;) {
      std::uint64_t x = ids_();
      std::string id;
      for (int i = 0; i < 12; ++i, x >>= 4) id += kHex[x & 15];
      if (!sessions_.contains(id)) return id;
    }
  }

  SessionPtr session(const httplib::Request& req) {
    std::lock_guard g(sessions_mu_);
    auto it = sessions_.find(req.matches[1].str());
    if (it == sessions_.end()) throw not_found("no session '" + req.matches[1].str() + "'");
    return it->second;
  }

  static void halt_worker(Session& s) {
    s.cancel = true;
    if (s.worker.joinable()) s.worker.join();
  }

  // Caller holds s.mu and the session is not running.
  static void rebuild(Session& s) {
    if (s.worker.joinable()) s.worker.join();
    s.sim.reset();
    s.compile_error.clear();
    try {
      auto program = std::make_shared<const Program>(compile(s.config, s.index));
      SimulationOptions options;
      options.seed = s.seed;
      options.context_blocks = s.context_blocks;
      s.sim = std::make_unique<Simulation>(program, std::shared_ptr<Sampler>(s.sampler->clone()), options);
    } catch (const std::exception& e) {
      s.compile_error = e.what();
    }
    std::lock_guard g(s.view_mu);
    s.rows.clear();
    s.metrics.clear();
    s.ledger.clear();
    s.cycles = 0;
    s.terminated = false;
    s.current = s.sim ? s.sim->current() : std::string();
    s.status = s.sim ? "idle" : "error";
    s.error = s.compile_error;
    s.error_kind = s.sim ? "" : "compile";
    ++s.generation;
  }

  static void publish(Session& s) {
    const Simulation& sim = *s.sim;
    std::lock_guard g(s.view_mu);
    for (std::size_t i = s.rows.size(); i < sim.stream().size(); ++i) s.rows.push_back(sim.stream()[i]);
    for (std::size_t i = s.metrics.size(); i < sim.metrics().size(); ++i) s.metrics.push_back(sim.metrics()[i]);
    s.ledger = sim.ledger().entries();
    s.cycles = sim.cycles();
    s.terminated = sim.terminated();
    s.current = sim.current();
  }

  static void finish(Session& s, std::string status, std::string kind, std::string error) {
    std::lock_guard g(s.view_mu);
    s.status = std::move(status);
    s.error_kind = std::move(kind);
    s.error = std::move(error);
  }

  // Runs up to `cycles` operator cycles; the caller owns the run flag.
  // Returns the HTTP status describing how it ended.
  static int drive(Session& s, int cycles) {
    Simulation& sim = *s.sim;
    const int target = sim.cycles() + cycles;
    try {
      while (sim.cycles() < target && !sim.terminated() && !s.cancel && !sim.program().operators.empty()) {
        sim.step();
        publish(s);
      }
    } catch (const SamplerError& e) {
      publish(s);
      finish(s, "error", "sampler", std::string(sampler_error_name(e.kind())) + ": " + e.what());
      return 502;
    } catch (const std::exception& e) {
      publish(s);
      finish(s, "error", "runtime", e.what());
      return 500;
    }
    finish(s, sim.terminated() ? "halted" : "idle", "", "");
    return 200;
  }

  // Claims the run flag; caller holds s.mu.
  static void claim(Session& s) {
    if (s.running) throw HttpError(409, "running", "a run is in progress");
    if (!s.sim) throw HttpError(400, "compile", "config does not compile: " + s.compile_error);
  }

  static void require_idle(Session& s) {
    if (s.running) throw HttpError(409, "running", "a run is in progress");
  }

  static std::shared_ptr<Sampler> sampler_from(const OrderedJson& body) {
    const std::string kind = body["sampler"].get<std::string>();
    if (kind == "scripted") {
      const auto& t = body.contains("transcript") ? body["transcript"] : OrderedJson();
      std::string text;
      if (t.is_string()) {
        text = t.get<std::string>();
      } else if (t.is_array()) {
        for (const auto& e : t) text += e.dump() + "\n";
      } else {
        throw bad_request("a scripted sampler needs a transcript (JSON lines text or an array of entries)");
      }
      return std::make_shared<ScriptedSampler>(parse_transcript(text));
    }
    HttpSamplerConfig http;
    http.model = optional_field<std::string>(body, "model", http.model);
    http.api_key = optional_field<std::string>(body, "api_key", "");
    http.endpoint = optional_field<std::string>(body, "endpoint", http.endpoint);
    return make_sampler(kind, http);
  }

  OrderedJson status_json(Session& s) {
    OrderedJson j;
    {
      std::lock_guard g(s.view_mu);
      j = {{"id", s.id},
           {"name", s.name},
           {"status", s.status},
           {"running", s.running.load()},
           {"error", s.error.empty() ? OrderedJson() : OrderedJson(s.error)},
           {"error_kind", s.error_kind.empty() ? OrderedJson() : OrderedJson(s.error_kind)},
           {"cycles", s.cycles},
           {"rows", s.rows.size()},
           {"metrics", s.metrics.size()},
           {"terminated", s.terminated},
           {"current", s.current},
           {"generation", s.generation},
           {"ledger", ledger_json(s.ledger)}};
    }
    return j;
  }

  // Config edit through mutate_config; resets the simulation.
  OrderedJson edit(Session& s, const ConfigEdit& e) {
    std::lock_guard g(s.mu);
    require_idle(s);
    MutationResult r = mutate_config(s.config, e);
    s.config = std::move(r.config);
    s.diagnostics = std::move(r.diagnostics);
    rebuild(s);
    return {{"diagnostics", diagnostics_json(s.diagnostics)}, {"compiled", s.sim != nullptr}};
  }

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      auto fail = [&](int status, const std::string& kind, const std::string& message, OrderedJson extra = {}) {
        OrderedJson j = {{"error", message}, {"kind", kind}};
        if (extra.is_object()) j.update(extra);
        send(res, status, j);
      };
      try {
        h(req, res);
      } catch (const HttpError& e) {
        fail(e.status, e.kind, e.what());
      } catch (const SchemaError& e) {
        fail(400, "schema", e.what(), {{"path", e.path()}});
      } catch (const FormulaParseError& e) {
        fail(400, "formula", e.what(), {{"path", e.path()}, {"field", e.field()}, {"position", e.position()}});
      } catch (const CompileError& e) {
        fail(400, "compile", e.what(), {{"subject", e.subject()}});
      } catch (const ConfigEditError& e) {
        if (e.kind() == ConfigErrorKind::UnknownPath) {
          fail(404, "not_found", e.what());
        } else {
          fail(400, e.kind() == ConfigErrorKind::DuplicatePath ? "duplicate" : "invalid", e.what());
        }
      } catch (const UnknownScenario& e) {
        fail(404, "not_found", e.what());
      } catch (const SamplerError& e) {
        // Bad sampler settings are the client's fault; failures while sampling are not.
        if (e.kind() == SamplerErrorKind::Config) {
          fail(400, "sampler_config", e.what());
        } else {
          fail(502, "sampler", e.what());
        }
      } catch (const ParseError& e) {
        fail(400, "parse", e.what(), {{"position", e.position()}});
      } catch (const nlohmann::json::exception& e) {
        fail(400, "invalid", std::string("malformed request: ") + e.what());
      } catch (const std::invalid_argument& e) {
        fail(400, "invalid", e.what());
      } catch (const std::exception& e) {
        fail(500, "internal", e.what());
      }
    };
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Get("/scenarios", guarded([](const httplib::Request&, httplib::Response& res) {
                 OrderedJson names = scenario_names();
                 send(res, 200, {{"scenarios", names}});
               }));

    server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
                 std::vector<SessionPtr> all;
                 {
                   std::lock_guard g(sessions_mu_);
                   for (auto& [id, s] : sessions_) all.push_back(s);
                 }
                 OrderedJson out = OrderedJson::array();
                 for (auto& s : all) out.push_back(status_json(*s));
                 send(res, 200, {{"sessions", out}});
               }));

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const OrderedJson body = body_json(req);
                  EcsConfig config;
                  std::optional<std::string> path;
                  if (body.contains("scenario")) {
                    config = load_scenario(body["scenario"].get<std::string>()).config;
                  } else if (body.contains("config")) {
                    config = config_from_json(body["config"]);
                  } else if (body.contains("path")) {
                    path = body["path"].get<std::string>();
                    config = load_config(*path);
                  } else {
                    throw bad_request("give one of scenario, config or path");
                  }
                  std::optional<std::size_t> blocks;
                  if (body.contains("context_blocks") && !body["context_blocks"].is_null()) {
                    blocks = body["context_blocks"].get<std::size_t>();
                  }
                  const std::string id = create(std::move(config), optional_field<std::size_t>(body, "index", 0),
                                                optional_field<std::uint64_t>(body, "seed", 0), path, blocks);
                  auto s = [&] {
                    std::lock_guard g(sessions_mu_);
                    return sessions_.at(id);
                  }();
                  OrderedJson out = status_json(*s);
                  std::lock_guard g(s->mu);
                  out["diagnostics"] = diagnostics_json(s->diagnostics);
                  send(res, 201, out);
                }));

    server.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                    SessionPtr s = session(req);
                    {
                      std::lock_guard g(sessions_mu_);
                      sessions_.erase(s->id);
                    }
                    std::lock_guard g(s->mu);
                    halt_worker(*s);
                    send(res, 200, {{"deleted", s->id}});
                  }));

    server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send(res, 200, status_json(*session(req)));
               }));

    server.Get(R"(/sessions/([^/]+)/status)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 OrderedJson out = status_json(*s);
                 std::lock_guard g(s->mu);
                 out["index"] = s->index;
                 out["seed"] = s->seed;
                 out["sampler"] = s->sampler->name();
                 out["diagnostics"] = diagnostics_json(s->diagnostics);
                 send(res, 200, out);
               }));

    // ---------------------------------------------------------- config

    server.Get(R"(/sessions/([^/]+)/config)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 std::lock_guard g(s->mu);
                 send(res, 200, config_to_json(s->config));
               }));

    server.Put(R"(/sessions/([^/]+)/config)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 EcsConfig config = config_from_json(body_json(req));
                 std::lock_guard g(s->mu);
                 require_idle(*s);
                 s->config = std::move(config);
                 s->name = s->config.name;
                 s->diagnostics = validate_config(s->config);
                 rebuild(*s);
                 send(res, 200, {{"diagnostics", diagnostics_json(s->diagnostics)}, {"compiled", s->sim != nullptr}});
               }));

    server.Get(R"(/sessions/([^/]+)/entities)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 std::lock_guard g(s->mu);
                 OrderedJson out = OrderedJson::array();
                 for (const auto& [name, comps] : s->config.entities) out.push_back({{"name", name}, {"components", comps}});
                 send(res, 200, {{"entities", out}});
               }));

    server.Post(R"(/sessions/([^/]+)/entities)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  const OrderedJson body = body_json(req);
                  ConfigEdit e;
                  e.kind = EditKind::AddEntity;
                  e.entity = body.at("name").get<std::string>();
                  e.components = optional_field<std::vector<std::string>>(body, "components", {});
                  send(res, 201, edit(*s, e));
                }));

    server.Put(R"(/sessions/([^/]+)/entities/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 const OrderedJson body = body_json(req);
                 ConfigEdit e;
                 e.kind = EditKind::UpdateEntity;
                 e.entity = req.matches[2].str();
                 e.components = body.at("components").get<std::vector<std::string>>();
                 send(res, 200, edit(*s, e));
               }));

    server.Delete(R"(/sessions/([^/]+)/entities/([^/]+))",
                  guarded([this](const httplib::Request& req, httplib::Response& res) {
                    SessionPtr s = session(req);
                    ConfigEdit e;
                    e.kind = EditKind::RemoveEntity;
                    e.entity = req.matches[2].str();
                    send(res, 200, edit(*s, e));
                  }));

    server.Get(R"(/sessions/([^/]+)/components)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 std::lock_guard g(s->mu);
                 const OrderedJson doc = config_to_json(s->config);
                 OrderedJson out = OrderedJson::array();
                 auto names = [&] {
                   std::vector<std::string> n;
                   for (const auto& [c, _] : s->config.variables) n.push_back(c);
                   for (const auto& [c, _] : s->config.systems) {
                     if (std::find(n.begin(), n.end(), c) == n.end()) n.push_back(c);
                   }
                   return n;
                 }();
                 for (const auto& c : names) {
                   OrderedJson vars = OrderedJson::object();
                   if (const auto* vs = find_named(s->config.variables, c)) {
                     for (const auto& [k, v] : *vs) vars[k] = v;
                   }
                   OrderedJson ops = OrderedJson::array();
                   if (const auto* os = find_named(s->config.systems, c)) {
                     for (const auto& t : *os) ops.push_back(template_to_json(t));
                   }
                   out.push_back({{"name", c}, {"variables", std::move(vars)}, {"operators", std::move(ops)}});
                 }
                 send(res, 200, {{"components", out}});
               }));

    server.Post(R"(/sessions/([^/]+)/components)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  ConfigEdit e;
                  e.kind = EditKind::AddComponent;
                  e.component = body_json(req).at("name").get<std::string>();
                  send(res, 201, edit(*s, e));
                }));

    server.Delete(R"(/sessions/([^/]+)/components/([^/]+))",
                  guarded([this](const httplib::Request& req, httplib::Response& res) {
                    SessionPtr s = session(req);
                    ConfigEdit e;
                    e.kind = EditKind::RemoveComponent;
                    e.component = req.matches[2].str();
                    send(res, 200, edit(*s, e));
                  }));

    server.Get(R"(/sessions/([^/]+)/variables/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 std::lock_guard g(s->mu);
                 const std::string c = req.matches[2].str();
                 if (!s->config.has_component(c)) throw not_found("component '" + c + "' does not exist");
                 OrderedJson vars = OrderedJson::object();
                 if (const auto* vs = find_named(s->config.variables, c)) {
                   for (const auto& [k, v] : *vs) vars[k] = v;
                 }
                 send(res, 200, {{"variables", vars}});
               }));

    server.Put(R"(/sessions/([^/]+)/variables/([^/]+)/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 const OrderedJson body = body_json(req);
                 if (!body.contains("value")) throw bad_request("body needs a value (the initializer)");
                 ConfigEdit e;
                 e.kind = EditKind::SetVariable;
                 e.component = req.matches[2].str();
                 e.name = req.matches[3].str();
                 e.value = body["value"];
                 send(res, 200, edit(*s, e));
               }));

    server.Delete(R"(/sessions/([^/]+)/variables/([^/]+)/([^/]+))",
                  guarded([this](const httplib::Request& req, httplib::Response& res) {
                    SessionPtr s = session(req);
                    ConfigEdit e;
                    e.kind = EditKind::RemoveVariable;
                    e.component = req.matches[2].str();
                    e.name = req.matches[3].str();
                    send(res, 200, edit(*s, e));
                  }));

    server.Get(R"(/sessions/([^/]+)/operators/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 std::lock_guard g(s->mu);
                 const std::string c = req.matches[2].str();
                 if (!s->config.has_component(c)) throw not_found("component '" + c + "' does not exist");
                 OrderedJson ops = OrderedJson::array();
                 if (const auto* os = find_named(s->config.systems, c)) {
                   for (const auto& t : *os) ops.push_back(template_to_json(t));
                 }
                 send(res, 200, {{"operators", ops}});
               }));

    server.Get(R"(/sessions/([^/]+)/operators/([^/]+)/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 std::lock_guard g(s->mu);
                 const std::string c = req.matches[2].str();
                 const std::string id = req.matches[3].str();
                 if (const auto* os = find_named(s->config.systems, c)) {
                   for (const auto& t : *os) {
                     if (t.id == id) return send(res, 200, template_to_json(t));
                   }
                 }
                 throw not_found("operator '" + c + "." + id + "' does not exist");
               }));

    server.Post(R"(/sessions/([^/]+)/operators/([^/]+))",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  OrderedJson body = body_json(req);
                  ConfigEdit e;
                  e.kind = EditKind::AddOperator;
                  e.component = req.matches[2].str();
                  if (body.contains("position")) {
                    e.position = body["position"].get<std::size_t>();
                    body.erase("position");
                  }
                  const OrderedJson op = body.contains("operator") ? body["operator"] : body;
                  e.op = template_from_json(op, "systems_definitions." + e.component);
                  send(res, 201, edit(*s, e));
                }));

    server.Put(R"(/sessions/([^/]+)/operators/([^/]+)/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 ConfigEdit e;
                 e.kind = EditKind::UpdateOperator;
                 e.component = req.matches[2].str();
                 e.name = req.matches[3].str();
                 OrderedJson op = body_json(req);
                 if (!op.contains("id")) op["id"] = e.name;
                 e.op = template_from_json(op, "systems_definitions." + e.component + "." + e.name);
                 send(res, 200, edit(*s, e));
               }));

    server.Delete(R"(/sessions/([^/]+)/operators/([^/]+)/([^/]+))",
                  guarded([this](const httplib::Request& req, httplib::Response& res) {
                    SessionPtr s = session(req);
                    ConfigEdit e;
                    e.kind = EditKind::RemoveOperator;
                    e.component = req.matches[2].str();
                    e.name = req.matches[3].str();
                    send(res, 200, edit(*s, e));
                  }));

    server.Get(R"(/sessions/([^/]+)/program)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 std::lock_guard g(s->mu);
                 // Compiled fresh so the answer never depends on run progress.
                 const Program p = compile(s->config, s->index);
                 OrderedJson state = OrderedJson::object();
                 for (const auto& [k, v] : p.initial_state) state[k] = value_to_json(v);
                 OrderedJson ops = OrderedJson::array();
                 for (const auto& op : p.operators) ops.push_back(operator_json(op));
                 send(res, 200, {{"initial_state", state}, {"operators", ops}, {"entry", p.entry}, {"tags", p.tag_names}});
               }));

    server.Post(R"(/sessions/([^/]+)/save)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  const OrderedJson body = body_json(req);
                  std::lock_guard g(s->mu);
                  const std::string path = optional_field<std::string>(body, "path", s->path.value_or(""));
                  if (path.empty()) throw bad_request("no path given and the session has no file");
                  write_config(s->config, path);
                  s->path = path;
                  send(res, 200, {{"path", path}});
                }));

    // ---------------------------------------------------------- run control

    server.Post(R"(/sessions/([^/]+)/run)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  const OrderedJson body = body_json(req);
                  std::unique_lock g(s->mu);
                  claim(*s);
                  const int steps = optional_field<int>(body, "steps", s->sim->program().default_steps);
                  if (steps < 0) throw bad_request("steps must be >= 0");
                  if (body.contains("sampler") && !body["sampler"].is_null()) {
                    s->sampler = sampler_from(body);
                    s->sim->set_sampler(std::shared_ptr<Sampler>(s->sampler->clone()));
                  }
                  if (s->worker.joinable()) s->worker.join();
                  s->running = true;
                  s->cancel = false;
                  finish(*s, "running", "", "");
                  if (optional_field<bool>(body, "wait", false)) {
                    g.unlock();
                    const int code = drive(*s, steps);
                    s->running = false;
                    OrderedJson out = status_json(*s);
                    send(res, code, out);
                    return;
                  }
                  Session* raw = s.get();
                  s->worker = std::thread([raw, steps] {
                    drive(*raw, steps);
                    raw->running = false;
                  });
                  send(res, 202, status_json(*s));
                }));

    server.Post(R"(/sessions/([^/]+)/step)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  std::unique_lock g(s->mu);
                  claim(*s);
                  if (s->worker.joinable()) s->worker.join();
                  s->running = true;
                  s->cancel = false;
                  g.unlock();
                  const int code = drive(*s, 1);
                  s->running = false;
                  send(res, code, status_json(*s));
                }));

    server.Post(R"(/sessions/([^/]+)/pause)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  s->cancel = true;
                  std::lock_guard g(s->mu);
                  if (s->worker.joinable()) s->worker.join();
                  send(res, 200, status_json(*s));
                }));

    server.Post(R"(/sessions/([^/]+)/reset)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  const OrderedJson body = body_json(req);
                  std::lock_guard g(s->mu);
                  require_idle(*s);
                  s->index = optional_field<std::size_t>(body, "index", s->index);
                  s->seed = optional_field<std::uint64_t>(body, "seed", s->seed);
                  if (body.contains("context_blocks")) {
                    s->context_blocks = body["context_blocks"].is_null()
                                            ? std::nullopt
                                            : std::optional<std::size_t>(body["context_blocks"].get<std::size_t>());
                  }
                  if (body.contains("sampler") && !body["sampler"].is_null()) s->sampler = sampler_from(body);
                  rebuild(*s);
                  send(res, 200, status_json(*s));
                }));

    server.Post(R"(/sessions/([^/]+)/inject)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  SessionPtr s = session(req);
                  const OrderedJson body = body_json(req);
                  const std::string lhs = body.at("lhs").get<std::string>();
                  Value v;
                  if (body.contains("literal")) {
                    v = parse_literal(body["literal"].get<std::string>());
                  } else if (body.contains("value")) {
                    v = json_to_value(body["value"]);
                  } else {
                    throw bad_request("inject needs value or literal");
                  }
                  std::lock_guard g(s->mu);
                  claim(*s);
                  const StreamRow& row = s->sim->inject_row(lhs, std::move(v));
                  OrderedJson out = row_to_json(row);
                  publish(*s);
                  send(res, 201, out);
                }));

    // ---------------------------------------------------------- reads

    server.Get(R"(/sessions/([^/]+)/stream)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 const Query q = req.has_param("query") ? parse_query(req.get_param_value("query")) : Query{};
                 long long after = -1;
                 if (req.has_param("after")) after = std::stoll(req.get_param_value("after"));
                 std::size_t limit = SIZE_MAX;
                 if (req.has_param("limit")) limit = std::stoull(req.get_param_value("limit"));
                 const bool text = req.has_param("format") && req.get_param_value("format") == "text";

                 std::vector<StreamRow> page;
                 long long cursor = after;
                 std::size_t total = 0;
                 std::uint64_t generation = 0;
                 {
                   std::lock_guard g(s->view_mu);
                   total = s->rows.size();
                   generation = s->generation;
                   const std::size_t begin = static_cast<std::size_t>(std::max(0LL, after + 1));
                   for (std::size_t i = begin; i < s->rows.size() && page.size() < limit; ++i) {
                     cursor = static_cast<long long>(i);
                     if (row_matches(s->rows[i], q)) page.push_back(s->rows[i]);
                   }
                 }
                 if (text) {
                   std::string body = render_context(std::span<const StreamRow>(page));
                   if (!body.empty()) body += "\n";
                   res.set_header("X-Stream-Cursor", std::to_string(cursor));
                   res.set_content(body, "text/plain; charset=utf-8");
                   return;
                 }
                 OrderedJson rows = OrderedJson::array();
                 for (const auto& r : page) rows.push_back(row_to_json(r));
                 send(res, 200, {{"rows", rows}, {"cursor", cursor}, {"total", total}, {"generation", generation}});
               }));

    server.Get(R"(/sessions/([^/]+)/metrics)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 SessionPtr s = session(req);
                 std::optional<Value> after;
                 if (req.has_param("after")) after = parse_literal(req.get_param_value("after"));
                 std::vector<MetricRecord> page;
                 {
                   std::lock_guard g(s->view_mu);
                   for (const auto& m : s->metrics) {
                     if (after && compare_values(m.time, *after) <= 0) continue;
                     page.push_back(m);
                   }
                 }
                 if (req.has_param("format") && req.get_param_value("format") == "csv") {
                   res.set_content(metrics_csv(page), "text/csv");
                   return;
                 }
                 OrderedJson out = OrderedJson::array();
                 for (const auto& m : page) out.push_back(metric_json(m));
                 send(res, 200, {{"metrics", out}});
               }));
  }
};

}  // namespace

struct ControlService::Impl {
  Service service;
  std::thread thread;
};

ControlService::ControlService() : impl_(std::make_unique<Impl>()) {}

ControlService::~ControlService() { stop(); }

int ControlService::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->service.server.bind_to_any_port(host)
                              : (impl_->service.server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void ControlService::serve() { impl_->service.server.listen_after_bind(); }

void ControlService::serve_background() {
  impl_->thread = std::thread([this] { serve(); });
  impl_->service.server.wait_until_ready();
}

void ControlService::stop() {
  impl_->service.server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string ControlService::create_session(EcsConfig config, std::size_t index, std::uint64_t seed,
                                           std::optional<std::string> path) {
  return impl_->service.create(std::move(config), index, seed, std::move(path));
}

}  // namespace simstream

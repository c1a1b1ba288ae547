#pragma once

#include "simstream/ecs.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

namespace simstream {

/// JSON control plane over HTTP: sessions, config CRUD, run control, stream
/// and metric retrieval, human row injection.
///
/// Each session's simulation is owned by whoever holds its run flag (a run
/// worker or a synchronous handler); readers only see the published snapshot.
class ControlService {
 public:
  ControlService();
  ~ControlService();
  ControlService(const ControlService&) = delete;
  ControlService& operator=(const ControlService&) = delete;

  // Port 0 picks a free port. Returns the bound port; throws on failure.
  int bind(const std::string& host, int port);
  void serve();             // blocks until stop()
  void serve_background();  // serve() on an internal thread
  void stop();

  // Opens a session without a request, e.g. for a config named on the command line.
  std::string create_session(EcsConfig config, std::size_t index = 0, std::uint64_t seed = 0,
                             std::optional<std::string> path = std::nullopt);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace simstream

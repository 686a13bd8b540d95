#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "latentguard/encoder.hpp"
#include "latentguard/index.hpp"

namespace lg {

// One JSON object per line: request {"id": string, "prompt": string}, response
// {"id", "unsafe", "score", "top_concept"}. A request that cannot be parsed or
// scored answers {"id": null, "error": string} and the loop continues.
std::string handle_request_line(const ConceptIndex& index, const ToyEncoder& encoder,
                                const std::string& line);

struct ServeStats {
  std::uint64_t requests = 0;
  std::uint64_t errors = 0;
};

// Blocking request loop over plain streams; used by the stdio transport and by
// tests. Stops at EOF, or between lines once *stop turns true.
ServeStats serve_stream(const ConceptIndex& index, const ToyEncoder& encoder, std::istream& in,
                        std::ostream& out, const std::atomic<bool>* stop = nullptr);

// Localhost TCP listener. Connections are handled on their own threads against
// one shared immutable index; responses per connection come back in request
// order.
class TcpGuardServer {
 public:
  TcpGuardServer(const ConceptIndex& index, const ToyEncoder& encoder);
  ~TcpGuardServer();
  TcpGuardServer(const TcpGuardServer&) = delete;
  TcpGuardServer& operator=(const TcpGuardServer&) = delete;

  // port 0 binds an ephemeral port; throws std::runtime_error on bind failure
  void start(int port);
  int port() const { return port_; }
  bool running() const { return listen_fd_ >= 0; }

  // closes the listener and drains connection threads; in-flight lines are
  // answered before their connections close
  void stop();

 private:
  void accept_loop();
  void connection_loop(int fd);

  const ConceptIndex& index_;
  const ToyEncoder& encoder_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

// CLI entry point. transport is "stdio" or "tcp"; SIGINT/SIGTERM trigger a
// graceful shutdown that flushes pending responses. Returns a process exit
// code.
int run_service(const ConceptIndex& index, const ToyEncoder& encoder,
                const std::string& transport, int port, std::ostream& log);

}  // namespace lg

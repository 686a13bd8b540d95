#include "latentguard/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <ctime>
#include <istream>
#include <optional>
#include <ostream>

#include <nlohmann/json.hpp>

namespace lg {

namespace {

// responses keep key order stable for log readability
using json = nlohmann::ordered_json;

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

std::string respond(const ConceptIndex& index, const ToyEncoder& encoder, const std::string& line,
                    bool& ok) {
  ok = false;
  json req;
  try {
    req = json::parse(line);
  } catch (const json::exception& e) {
    return json{{"id", nullptr}, {"error", std::string("invalid JSON: ") + e.what()}}.dump();
  }
  if (!req.is_object() || !req.contains("id") || !req.contains("prompt") ||
      !req["id"].is_string() || !req["prompt"].is_string())
    return json{{"id", nullptr},
                {"error", "request must be {\"id\": string, \"prompt\": string}"}}
        .dump();
  for (auto it = req.begin(); it != req.end(); ++it)
    if (it.key() != "id" && it.key() != "prompt")
      return json{{"id", nullptr}, {"error", "unknown request field '" + it.key() + "'"}}.dump();
  try {
    const GuardVerdict v = classify(index, encoder, req["prompt"].get<std::string>());
    ok = true;
    return json{{"id", req["id"]},
                {"unsafe", v.unsafe},
                {"score", v.min_distance},
                {"top_concept", v.top_concept}}
        .dump();
  } catch (const std::exception& e) {
    return json{{"id", nullptr}, {"error", e.what()}}.dump();
  }
}

// line-buffered reads over a file descriptor; polls so shutdown flags are
// noticed while idle
class FdLineReader {
 public:
  explicit FdLineReader(int fd) : fd_(fd) {}

  // nullopt on EOF, read error, or stop; a final unterminated line is returned
  std::optional<std::string> next(const std::atomic<bool>* stop) {
    while (true) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      if (eof_) {
        if (buf_.empty()) return std::nullopt;
        std::string line = std::move(buf_);
        buf_.clear();
        return line;
      }
      if (stop && stop->load()) return std::nullopt;
      pollfd p{fd_, POLLIN, 0};
      const int pr = ::poll(&p, 1, 200);
      if (pr < 0) {
        if (errno == EINTR) continue;
        return std::nullopt;
      }
      if (pr == 0) continue;  // timeout, re-check stop
      char chunk[4096];
      const ssize_t n = ::read(fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        return std::nullopt;
      }
      if (n == 0) {
        eof_ = true;
        continue;
      }
      buf_.append(chunk, std::size_t(n));
    }
  }

 private:
  int fd_;
  std::string buf_;
  bool eof_ = false;
};

bool write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += std::size_t(n);
  }
  return true;
}

}  // namespace

std::string handle_request_line(const ConceptIndex& index, const ToyEncoder& encoder,
                                const std::string& line) {
  bool ok = false;
  return respond(index, encoder, line, ok);
}

ServeStats serve_stream(const ConceptIndex& index, const ToyEncoder& encoder, std::istream& in,
                        std::ostream& out, const std::atomic<bool>* stop) {
  ServeStats stats;
  std::string line;
  while ((!stop || !stop->load()) && std::getline(in, line)) {
    if (line.empty()) continue;
    bool ok = false;
    out << respond(index, encoder, line, ok) << "\n" << std::flush;
    ++stats.requests;
    stats.errors += ok ? 0 : 1;
  }
  return stats;
}

TcpGuardServer::TcpGuardServer(const ConceptIndex& index, const ToyEncoder& encoder)
    : index_(index), encoder_(encoder) {}

TcpGuardServer::~TcpGuardServer() { stop(); }

void TcpGuardServer::start(int port) {
  if (listen_fd_ >= 0) throw std::runtime_error("server already started");
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(std::uint16_t(port));
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string err = std::strerror(errno);
    ::close(fd);
    throw std::runtime_error("cannot bind 127.0.0.1:" + std::to_string(port) + ": " + err);
  }
  if (::listen(fd, 16) < 0) {
    const std::string err = std::strerror(errno);
    ::close(fd);
    throw std::runtime_error("listen: " + err);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = int(ntohs(bound.sin_port));
  listen_fd_ = fd;
  stopping_.store(false);
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpGuardServer::accept_loop() {
  while (!stopping_.load()) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int pr = ::poll(&p, 1, 200);
    if (pr < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (pr == 0) continue;
    const int conn = ::accept(listen_fd_, nullptr, nullptr);
    if (conn < 0) continue;
    std::lock_guard<std::mutex> lock(workers_mu_);
    workers_.emplace_back([this, conn] { connection_loop(conn); });
  }
}

void TcpGuardServer::connection_loop(int fd) {
  FdLineReader reader(fd);
  while (auto line = reader.next(&stopping_)) {
    if (line->empty()) continue;
    bool ok = false;
    if (!write_all(fd, respond(index_, encoder_, *line, ok) + "\n")) break;
  }
  ::shutdown(fd, SHUT_RDWR);
  ::close(fd);
}

void TcpGuardServer::stop() {
  if (listen_fd_ < 0) return;
  stopping_.store(true);
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  listen_fd_ = -1;
  std::lock_guard<std::mutex> lock(workers_mu_);
  for (auto& w : workers_)
    if (w.joinable()) w.join();
  workers_.clear();
}

int run_service(const ConceptIndex& index, const ToyEncoder& encoder,
                const std::string& transport, int port, std::ostream& log) {
  g_interrupted = 0;
  struct sigaction sa{};
  sa.sa_handler = on_signal;
  ::sigaction(SIGINT, &sa, nullptr);
  ::sigaction(SIGTERM, &sa, nullptr);

  if (transport == "stdio") {
    log << "serving on stdio, " << index.size() << " concepts, gamma " << index.gamma << "\n";
    FdLineReader reader(STDIN_FILENO);
    std::atomic<bool> stop{false};
    ServeStats stats;
    while (true) {
      if (g_interrupted) stop.store(true);
      auto line = reader.next(&stop);
      if (!line) break;
      if (line->empty()) continue;
      bool ok = false;
      const std::string out = respond(index, encoder, *line, ok) + "\n";
      if (!write_all(STDOUT_FILENO, out)) break;
      ++stats.requests;
      stats.errors += ok ? 0 : 1;
    }
    log << "served " << stats.requests << " requests (" << stats.errors << " errors)\n";
    return 0;
  }
  if (transport == "tcp") {
    TcpGuardServer server(index, encoder);
    server.start(port);
    log << "serving on 127.0.0.1:" << server.port() << ", " << index.size()
        << " concepts, gamma " << index.gamma << "\n";
    while (!g_interrupted) {
      timespec ts{0, 100 * 1000 * 1000};
      ::nanosleep(&ts, nullptr);
    }
    log << "interrupt received, shutting down\n";
    server.stop();
    return 0;
  }
  log << "unknown transport '" << transport << "' (expected stdio or tcp)\n";
  return 2;
}

}  // namespace lg

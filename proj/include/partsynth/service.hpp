#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include <json.hpp>

#include "partsynth/psn.hpp"
#include "partsynth/synthesis.hpp"

namespace partsynth {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  /// Concurrent decoding requests before the service answers 503.
  int decode_cap = 4;
  SynthesisConfig synthesis;
  /// When set, every session is written here after each change and looked up
  /// here when it is not in memory.
  std::filesystem::path session_dir;
};

/// Non-blocking counter of in-flight decodes.
class DecodeGate {
 public:
  explicit DecodeGate(int cap) : cap_(cap) {}

  class Slot {
   public:
    Slot() = default;
    explicit Slot(DecodeGate* g) : gate_(g) {}
    Slot(Slot&& o) noexcept : gate_(std::exchange(o.gate_, nullptr)) {}
    Slot& operator=(Slot&& o) noexcept {
      release();
      gate_ = std::exchange(o.gate_, nullptr);
      return *this;
    }
    ~Slot() { release(); }
    explicit operator bool() const noexcept { return gate_ != nullptr; }

   private:
    void release() {
      if (gate_) gate_->in_flight_.fetch_sub(1);
      gate_ = nullptr;
    }
    DecodeGate* gate_ = nullptr;
  };

  /// Empty slot when the cap is reached.
  Slot try_acquire();
  int in_flight() const noexcept { return in_flight_.load(); }
  int cap() const noexcept { return cap_; }

 private:
  int cap_;
  std::atomic<int> in_flight_{0};
};

/// Loaded suggestion networks by kind; all share one PCN and implicit decoder.
using ModelRegistry = std::map<PsnKind, SynthesisModels>;

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Route logic without the socket layer. Thread-safe.
class SynthesisService {
 public:
  SynthesisService(ModelRegistry models, ServiceConfig config);
  ~SynthesisService();

  ApiResponse create_session(const std::string& body);
  ApiResponse get_session(const std::string& id);
  ApiResponse delete_session(const std::string& id);
  ApiResponse propose(const std::string& id, const std::string& node, const std::string& body);
  ApiResponse select(const std::string& id, const std::string& node, const std::string& body);
  ApiResponse mesh(const std::string& id, const std::string& node, const std::string& res);

  /// The JSON state the API reports for a session.
  static nlohmann::json state(const SynthesisSession& session);

  DecodeGate& gate() noexcept { return gate_; }
  const ServiceConfig& config() const noexcept { return config_; }

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();

 private:
  struct Entry;
  struct Server;
  std::shared_ptr<Entry> find(const std::string& id);
  void persist(const SynthesisSession& session) const;
  int bind();

  ModelRegistry models_;
  ServiceConfig config_;
  DecodeGate gate_;
  std::mutex store_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::unique_ptr<Server> server_;
};

}  // namespace partsynth

#include "partsynth/service.hpp"

#include <charconv>
#include <random>
#include <thread>

#include <httplib.h>

#include "partsynth/error.hpp"
#include "partsynth/io.hpp"

namespace partsynth {

using nlohmann::json;

struct SynthesisService::Entry {
  std::mutex mutex;
  std::optional<SynthesisSession> session;
};

struct SynthesisService::Server {
  httplib::Server http;
  std::thread thread;
  int port = 0;
};

namespace {

ApiResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }

ApiResponse error_response(int status, std::string_view code, const std::string& message) {
  return json_response(status, {{"code", code}, {"message", message}});
}

ApiResponse map_error(const Error& e) {
  switch (e.code()) {
    case ErrorCode::DeadNode: return error_response(404, "unknown_node", e.what());
    case ErrorCode::DepthLimit: return error_response(409, "depth_limit", e.what());
    case ErrorCode::StaleSuggestions: return error_response(410, "stale_suggestions", e.what());
    case ErrorCode::IndexOutOfRange: return error_response(400, "bad_index", e.what());
    case ErrorCode::ModelNotReady: return error_response(409, "model_not_loaded", e.what());
    case ErrorCode::WrongModel: return error_response(409, "model_mismatch", e.what());
    case ErrorCode::EmptyShape: return error_response(400, "empty_shape", e.what());
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidKind: return error_response(400, "bad_request", e.what());
    default: return error_response(500, "internal", e.what());
  }
}

template <class F>
ApiResponse guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return map_error(e);
  } catch (const json::exception& e) {
    return error_response(400, "bad_request", std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

std::string random_session_id() {
  static constexpr char kHex[] = "0123456789abcdef";
  std::random_device rd;
  std::string out;
  for (int i = 0; i < 4; ++i) {
    const auto v = rd();
    for (int shift = 28; shift >= 0; shift -= 4) out += kHex[(v >> shift) & 0xf];
  }
  return out;
}

bool plausible_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!std::isalnum(static_cast<unsigned char>(c))) return false;
  return true;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  auto j = json::parse(body);
  if (!j.is_object()) throw json::type_error::create(302, "request body must be a JSON object", nullptr);
  return j;
}

json xf_json(const AffineTransform& xf) { return {{"scale", xf.scale}, {"translation", xf.translation}}; }

}  // namespace

DecodeGate::Slot DecodeGate::try_acquire() {
  int cur = in_flight_.load();
  while (cur < cap_)
    if (in_flight_.compare_exchange_weak(cur, cur + 1)) return Slot(this);
  return {};
}

SynthesisService::SynthesisService(ModelRegistry models, ServiceConfig config)
    : models_(std::move(models)), config_(std::move(config)), gate_(config_.decode_cap) {
  if (config_.decode_cap < 1) fail(ErrorCode::InvalidArgument, "decode cap must be at least 1");
  if (!config_.session_dir.empty()) std::filesystem::create_directories(config_.session_dir);
}

SynthesisService::~SynthesisService() { stop(); }

json SynthesisService::state(const SynthesisSession& session) {
  auto j = session_to_json(session);
  j["pending"] = json::array();
  for (const auto& [node, set] : session.pending())
    j["pending"].push_back({{"node", node}, {"k", set.items.size()}, {"seed", set.seed}});
  return j;
}

void SynthesisService::persist(const SynthesisSession& session) const {
  if (!config_.session_dir.empty()) save_session(config_.session_dir / (session.id() + ".json"), session);
}

std::shared_ptr<SynthesisService::Entry> SynthesisService::find(const std::string& id) {
  if (!plausible_id(id)) return nullptr;
  std::lock_guard lock(store_mutex_);
  if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
  if (config_.session_dir.empty()) return nullptr;
  const auto path = config_.session_dir / (id + ".json");
  if (!std::filesystem::exists(path)) return nullptr;
  const auto doc = json::parse(io::read_file(path));
  const auto kind = parse_psn_kind(doc.at("checkpoints").at("psn_kind").get<std::string>());
  const auto m = models_.find(kind);
  if (m == models_.end()) fail(ErrorCode::ModelNotReady, "stored session needs a " + std::string(to_string(kind)) + " model");
  auto entry = std::make_shared<Entry>();
  entry->session = restore_session(doc, m->second);
  sessions_.emplace(id, entry);
  return entry;
}

ApiResponse SynthesisService::create_session(const std::string& body) {
  return guarded([&] {
    const auto req = parse_body(body);
    if (models_.empty()) return error_response(409, "model_not_loaded", "no models were loaded at start-up");
    auto models = models_.begin();
    if (req.contains("psn_kind")) {
      const auto kind = parse_psn_kind(req.at("psn_kind").get<std::string>());
      models = models_.find(kind);
      if (models == models_.end())
        return error_response(409, "model_not_loaded", "no " + std::string(to_string(kind)) + " model was loaded");
    }
    SynthesisConfig cfg = config_.synthesis;
    cfg.k = req.value("k", 4);
    if (cfg.k < 1 || cfg.k > 64) return error_response(400, "bad_request", "k must lie in 1..64");
    const auto seed = req.value("seed", std::uint64_t{0});
    if (!req.contains("initial")) return error_response(400, "bad_request", "missing initial");
    const auto initial_text = req.at("initial").get<std::string>();
    InitialPart initial = RandomInitial{seed};
    if (initial_text != "random") {
      try {
        initial = io::decode_vgrid(io::base64_decode(initial_text));
      } catch (const Error& e) {
        return error_response(400, "bad_grid", e.what());
      }
    }
    auto slot = gate_.try_acquire();
    if (!slot) return error_response(503, "busy", "decode capacity exhausted");
    auto entry = std::make_shared<Entry>();
    entry->session = start_session(initial, models->second, cfg, random_session_id());
    persist(*entry->session);
    const auto out = state(*entry->session);
    {
      std::lock_guard lock(store_mutex_);
      sessions_.emplace(entry->session->id(), entry);
    }
    return json_response(201, out);
  });
}

ApiResponse SynthesisService::get_session(const std::string& id) {
  return guarded([&] {
    auto entry = find(id);
    if (!entry) return error_response(404, "unknown_session", "no session " + id);
    std::lock_guard lock(entry->mutex);
    if (!entry->session) return error_response(404, "unknown_session", "no session " + id);
    return json_response(200, state(*entry->session));
  });
}

ApiResponse SynthesisService::delete_session(const std::string& id) {
  return guarded([&] {
    auto entry = find(id);
    if (!entry) return error_response(404, "unknown_session", "no session " + id);
    std::lock_guard lock(entry->mutex);
    {
      std::lock_guard store(store_mutex_);
      sessions_.erase(id);
    }
    // A request already holding the entry sees it vanish.
    entry->session.reset();
    if (!config_.session_dir.empty()) std::filesystem::remove(config_.session_dir / (id + ".json"));
    return ApiResponse{204, "", "application/json"};
  });
}

ApiResponse SynthesisService::propose(const std::string& id, const std::string& node, const std::string& body) {
  return guarded([&] {
    auto entry = find(id);
    if (!entry) return error_response(404, "unknown_session", "no session " + id);
    const auto nid = parse_int(node);
    if (!nid) return error_response(404, "unknown_node", "no node " + node);
    const auto req = parse_body(body);
    const auto seed = req.value("seed", std::uint64_t{0});
    auto slot = gate_.try_acquire();
    if (!slot) return error_response(503, "busy", "decode capacity exhausted");
    std::lock_guard lock(entry->mutex);
    if (!entry->session) return error_response(404, "unknown_session", "no session " + id);
    const auto& set = partsynth::propose(*entry->session, *nid, seed);
    json items = json::array();
    for (std::size_t i = 0; i < set.items.size(); ++i) {
      const auto& item = set.items[i];
      items.push_back({{"index", i},
                       {"mesh", io::to_obj(marching_cubes(item.preview_assembly, 0.5))},
                       {"xf", xf_json(item.xf)}});
    }
    persist(*entry->session);
    return json_response(200, {{"session", id}, {"node", *nid}, {"seed", seed}, {"items", items}});
  });
}

ApiResponse SynthesisService::select(const std::string& id, const std::string& node, const std::string& body) {
  return guarded([&] {
    auto entry = find(id);
    if (!entry) return error_response(404, "unknown_session", "no session " + id);
    const auto nid = parse_int(node);
    if (!nid) return error_response(404, "unknown_node", "no node " + node);
    const auto req = parse_body(body);
    if (!req.contains("index")) return error_response(400, "bad_request", "missing index");
    const int index = req.at("index").get<int>();
    std::lock_guard lock(entry->mutex);
    if (!entry->session) return error_response(404, "unknown_session", "no session " + id);
    const int child = partsynth::select(*entry->session, *nid, index);
    persist(*entry->session);
    auto out = state(*entry->session);
    out["selected"] = child;
    return json_response(200, out);
  });
}

ApiResponse SynthesisService::mesh(const std::string& id, const std::string& node, const std::string& res) {
  return guarded([&] {
    auto entry = find(id);
    if (!entry) return error_response(404, "unknown_session", "no session " + id);
    const auto nid = parse_int(node);
    if (!nid) return error_response(404, "unknown_node", "no node " + node);
    int r = 32;
    if (!res.empty()) {
      const auto parsed = parse_int(res);
      if (!parsed) return error_response(422, "bad_resolution", "res must be an integer");
      r = *parsed;
    }
    if (r < 8 || r > 128) return error_response(422, "bad_resolution", "res must lie in 8..128");
    auto slot = gate_.try_acquire();
    if (!slot) return error_response(503, "busy", "decode capacity exhausted");
    std::lock_guard lock(entry->mutex);
    if (!entry->session) return error_response(404, "unknown_session", "no session " + id);
    return ApiResponse{200, io::to_obj(export_node(*entry->session, *nid, r)), "text/plain"};
  });
}

int SynthesisService::bind() {
  if (server_) fail(ErrorCode::InvalidArgument, "service already started");
  server_ = std::make_unique<Server>();
  auto& http = server_->http;
  const auto send = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    if (!r.body.empty()) res.set_content(r.body, r.content_type);
  };
  http.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, create_session(req.body));
  });
  http.Get(R"(/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, get_session(req.matches[1]));
  });
  http.Delete(R"(/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, delete_session(req.matches[1]));
  });
  http.Post(R"(/sessions/([^/]+)/nodes/([^/]+)/propose)",
            [this, send](const httplib::Request& req, httplib::Response& res) {
              send(res, propose(req.matches[1], req.matches[2], req.body));
            });
  http.Post(R"(/sessions/([^/]+)/nodes/([^/]+)/select)",
            [this, send](const httplib::Request& req, httplib::Response& res) {
              send(res, select(req.matches[1], req.matches[2], req.body));
            });
  http.Get(R"(/sessions/([^/]+)/nodes/([^/]+)/mesh)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, mesh(req.matches[1], req.matches[2], req.get_param_value("res")));
  });
  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      const json body{{"code", res.status == 404 ? "not_found" : "error"}, {"message", httplib::status_message(res.status)}};
      res.set_content(body.dump(), "application/json");
    }
  });

  int port = config_.port;
  if (port == 0) {
    port = http.bind_to_any_port(config_.host);
  } else if (!http.bind_to_port(config_.host, port)) {
    port = -1;
  }
  if (port < 0) {
    server_.reset();
    fail(ErrorCode::Io, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  server_->port = port;
  return port;
}

int SynthesisService::start() {
  const int port = bind();
  server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
  return port;
}

void SynthesisService::run() {
  bind();
  server_->http.listen_after_bind();
}

void SynthesisService::stop() {
  if (!server_) return;
  server_->http.stop();
  // A blocking run() owns its loop; only a start() thread is torn down here.
  if (server_->thread.joinable()) {
    server_->thread.join();
    server_.reset();
  }
}

}  // namespace partsynth

#include "partsynth/config.hpp"

#include <functional>
#include <map>

#include "partsynth/error.hpp"
#include "partsynth/io.hpp"
#include "partsynth/random.hpp"

namespace partsynth {

namespace {

using nlohmann::json;
using Setter = std::function<void(const json&)>;

void apply_keys(const json& doc, const std::string& where, const std::map<std::string, Setter>& keys) {
  if (!doc.is_object()) fail(ErrorCode::InvalidArgument, where + " must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    const auto it = keys.find(key);
    if (it == keys.end()) fail(ErrorCode::InvalidArgument, "unknown config key " + where + "." + key);
    try {
      it->second(value);
    } catch (const json::exception&) {
      fail(ErrorCode::InvalidArgument, "bad value for config key " + where + "." + key + ": " + value.dump());
    }
  }
}

template <class T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

Setter set_path(std::filesystem::path& field, const std::filesystem::path& base) {
  return [&field, base](const json& v) {
    std::filesystem::path p = v.get<std::string>();
    field = (p.is_relative() && !p.empty() && !base.empty()) ? base / p : p;
  };
}

void rebase_paths(RunConfig& c, const std::filesystem::path& base) {
  for (auto* p : {&c.data.dir, &c.pcn.checkpoint, &c.pcn.curve, &c.implicit.checkpoint, &c.implicit.curve,
                  &c.psn.checkpoint, &c.psn.curve, &c.synthesis.out, &c.synthesis.session_dir, &c.metrics.report})
    if (!p->empty() && p->is_relative()) *p = base / *p;
}

void sync_shared(RunConfig& c) {
  c.pcn.model.resolution = c.data.resolution;
  c.implicit.model.latent_dim = c.pcn.model.latent_dim;
  c.psn.model.latent_dim = c.pcn.model.latent_dim;
}

}  // namespace

PsnTrainConfig PsnSection::train_config(bool paper_profile, std::uint64_t seed) const {
  auto tc = paper_profile ? PsnTrainConfig::paper(kind) : PsnTrainConfig::desk(kind);
  if (epochs) tc.epochs = *epochs;
  if (lr) tc.lr = *lr;
  tc.batch_size = batch_size;
  tc.seed = seed;
  return tc;
}

RunConfig RunConfig::preset(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == "desk") {
    c.pcn.train.epochs_joint = 20;
    c.pcn.train.epochs_stn = 5;
    c.implicit.train.epochs = 10;
  } else if (profile == "paper") {
    c.data.resolution = 64;
    c.pcn.train.epochs_joint = 1000;
    c.pcn.train.epochs_stn = 500;
    c.implicit.train.epochs = 100;
  } else {
    fail(ErrorCode::InvalidArgument, "unknown profile '" + profile + "' (expected desk or paper)");
  }
  sync_shared(c);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const std::string& fallback_profile) {
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Format, "config " + path.string() + " is not JSON: " + e.what());
  }
  if (!doc.is_object()) fail(ErrorCode::InvalidArgument, "config must be a JSON object");
  std::string profile = fallback_profile;
  if (doc.contains("profile")) {
    if (!doc["profile"].is_string()) fail(ErrorCode::InvalidArgument, "profile must be a string");
    profile = doc["profile"].get<std::string>();
  }
  auto c = preset(profile);
  const auto base = std::filesystem::absolute(path).parent_path();
  rebase_paths(c, base);
  c.apply(doc, base);
  return c;
}

void RunConfig::apply(const json& doc, const std::filesystem::path& base) {
  const auto& b = base;
  apply_keys(
      doc, "config",
      {{"profile",
        [&](const json& v) {
          if (v.get<std::string>() != profile) fail(ErrorCode::InvalidArgument, "profile can only be chosen on load");
        }},
       {"seed", set(seed)},
       {"data",
        [&](const json& v) {
          apply_keys(v, "data",
                     {{"category", [&](const json& x) { data.category = parse_category(x.get<std::string>()); }},
                      {"count", set(data.count)},
                      {"resolution", set(data.resolution)},
                      {"dir", set_path(data.dir, b)},
                      {"pairs_per_shape", set(data.pairs_per_shape)}});
        }},
       {"pcn",
        [&](const json& v) {
          apply_keys(v, "pcn",
                     {{"latent_dim", set(pcn.model.latent_dim)},
                      {"channels", set(pcn.model.channels)},
                      {"lr_ae", set(pcn.train.lr_ae)},
                      {"lr_stn", set(pcn.train.lr_stn)},
                      {"epochs_joint", set(pcn.train.epochs_joint)},
                      {"epochs_stn", set(pcn.train.epochs_stn)},
                      {"batch_size", set(pcn.train.batch_size)},
                      {"checkpoint", set_path(pcn.checkpoint, b)},
                      {"curve", set_path(pcn.curve, b)}});
        }},
       {"implicit",
        [&](const json& v) {
          apply_keys(v, "implicit",
                     {{"channels", set(implicit.model.channels)},
                      {"width", set(implicit.model.width)},
                      {"lr", set(implicit.train.lr)},
                      {"epochs", set(implicit.train.epochs)},
                      {"batch_size", set(implicit.train.batch_size)},
                      {"points_per_part", set(implicit.train.points_per_part)},
                      {"occupied_fraction", set(implicit.train.occupied_fraction)},
                      {"checkpoint", set_path(implicit.checkpoint, b)},
                      {"curve", set_path(implicit.curve, b)}});
        }},
       {"psn",
        [&](const json& v) {
          apply_keys(v, "psn",
                     {{"kind", [&](const json& x) { psn.kind = parse_psn_kind(x.get<std::string>()); }},
                      {"noise_dim", set(psn.model.noise_dim)},
                      {"mixture", set(psn.model.mixture)},
                      {"candidates", set(psn.model.candidates)},
                      {"hidden", set(psn.model.hidden)},
                      {"diffusion_steps", set(psn.model.diffusion_steps)},
                      {"beta_start", set(psn.model.beta_start)},
                      {"beta_end", set(psn.model.beta_end)},
                      {"unet_channels", set(psn.model.unet_channels)},
                      {"epochs", [&](const json& x) { psn.epochs = x.get<int>(); }},
                      {"lr", [&](const json& x) { psn.lr = x.get<double>(); }},
                      {"batch_size", set(psn.batch_size)},
                      {"checkpoint", set_path(psn.checkpoint, b)},
                      {"curve", set_path(psn.curve, b)}});
        }},
       {"synthesis",
        [&](const json& v) {
          apply_keys(v, "synthesis",
                     {{"k", set(synthesis.session.k)},
                      {"max_depth", set(synthesis.session.max_depth)},
                      {"random_attempts", set(synthesis.session.random_attempts)},
                      {"export_resolution", set(synthesis.export_resolution)},
                      {"out", set_path(synthesis.out, b)},
                      {"host", set(synthesis.host)},
                      {"port", set(synthesis.port)},
                      {"decode_cap", set(synthesis.decode_cap)},
                      {"session_dir", set_path(synthesis.session_dir, b)}});
        }},
       {"metrics", [&](const json& v) {
          apply_keys(v, "metrics",
                     {{"surface_points", set(metrics.surface_points)}, {"report", set_path(metrics.report, b)}});
        }}});
  sync_shared(*this);
}

json RunConfig::to_json() const {
  json psn_j{{"kind", to_string(psn.kind)},
             {"noise_dim", psn.model.noise_dim},
             {"mixture", psn.model.mixture},
             {"candidates", psn.model.candidates},
             {"hidden", psn.model.hidden},
             {"diffusion_steps", psn.model.diffusion_steps},
             {"beta_start", psn.model.beta_start},
             {"beta_end", psn.model.beta_end},
             {"unet_channels", psn.model.unet_channels},
             {"batch_size", psn.batch_size},
             {"checkpoint", psn.checkpoint.string()},
             {"curve", psn.curve.string()}};
  const auto tc = psn.train_config(paper(), 0);
  psn_j["epochs"] = tc.epochs;
  psn_j["lr"] = tc.lr;
  return {{"profile", profile},
          {"seed", seed},
          {"data",
           {{"category", to_string(data.category)},
            {"count", data.count},
            {"resolution", data.resolution},
            {"dir", data.dir.string()},
            {"pairs_per_shape", data.pairs_per_shape}}},
          {"pcn",
           {{"latent_dim", pcn.model.latent_dim},
            {"channels", pcn.model.channels},
            {"lr_ae", pcn.train.lr_ae},
            {"lr_stn", pcn.train.lr_stn},
            {"epochs_joint", pcn.train.epochs_joint},
            {"epochs_stn", pcn.train.epochs_stn},
            {"batch_size", pcn.train.batch_size},
            {"checkpoint", pcn.checkpoint.string()},
            {"curve", pcn.curve.string()}}},
          {"implicit",
           {{"channels", implicit.model.channels},
            {"width", implicit.model.width},
            {"lr", implicit.train.lr},
            {"epochs", implicit.train.epochs},
            {"batch_size", implicit.train.batch_size},
            {"points_per_part", implicit.train.points_per_part},
            {"occupied_fraction", implicit.train.occupied_fraction},
            {"checkpoint", implicit.checkpoint.string()},
            {"curve", implicit.curve.string()}}},
          {"psn", psn_j},
          {"synthesis",
           {{"k", synthesis.session.k},
            {"max_depth", synthesis.session.max_depth},
            {"random_attempts", synthesis.session.random_attempts},
            {"export_resolution", synthesis.export_resolution},
            {"out", synthesis.out.string()},
            {"host", synthesis.host},
            {"port", synthesis.port},
            {"decode_cap", synthesis.decode_cap},
            {"session_dir", synthesis.session_dir.string()}}},
          {"metrics", {{"surface_points", metrics.surface_points}, {"report", metrics.report.string()}}}};
}

std::uint64_t RunConfig::stage_seed(std::uint64_t stage) const { return derive_seed(seed, stage); }

ServiceConfig RunConfig::service() const {
  ServiceConfig s;
  s.host = synthesis.host;
  s.port = synthesis.port;
  s.decode_cap = synthesis.decode_cap;
  s.synthesis = synthesis.session;
  s.session_dir = synthesis.session_dir;
  return s;
}

}  // namespace partsynth

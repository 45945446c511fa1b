#include "partsynth/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>

#include "partsynth/config.hpp"
#include "partsynth/error.hpp"
#include "partsynth/io.hpp"
#include "partsynth/metrics.hpp"
#include "partsynth/random.hpp"

namespace partsynth {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::mutex g_serve_mutex;
SynthesisService* g_serving = nullptr;

// Stage indices for seed derivation.
constexpr std::uint64_t kSeedData = 0, kSeedPcn = 1, kSeedImplicit = 2, kSeedPsnPairs = 3, kSeedPsn = 4,
                        kSeedSynth = 5, kSeedMetrics = 6;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
  RunConfig cfg;
  bool verbose = false;

  void log(const std::string& line) const {
    if (verbose) err << line << '\n';
  }
};

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw UsageError("missing " + what + ": " + path.string());
}

DatasetSplit load_data(const Context& ctx, const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw UsageError("missing dataset directory " + dir.string() + " (run gen-data first)");
  auto split = load_dataset(dir);
  ctx.log("loaded " + std::to_string(split.train.size()) + " training shapes from " + dir.string());
  return split;
}

std::vector<PartRecord> train_parts(const DatasetSplit& split) {
  std::vector<PartRecord> parts;
  for (const auto& s : split.train)
    for (const auto& p : s.parts) parts.push_back(p);
  return parts;
}

template <class F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fs", s);
  return buf;
}

SynthesisModels load_models(const Context& ctx, const fs::path& pcn_path, const fs::path& implicit_path,
                            const fs::path& psn_path) {
  require_file(pcn_path, "PCN checkpoint");
  require_file(implicit_path, "implicit decoder checkpoint");
  require_file(psn_path, "suggestion network checkpoint");
  auto pcn = std::make_shared<PcnModel>(PcnModel::load(pcn_path));
  auto implicit = std::make_shared<ImplicitModel>(ImplicitModel::load(implicit_path));
  auto psn = std::make_shared<SuggestionModel>(SuggestionModel::load(psn_path));
  ctx.log("loaded models: pcn R=" + std::to_string(pcn->resolution()) + ", psn " + std::string(to_string(psn->kind())));
  return SynthesisModels::make(std::move(pcn), std::move(implicit), std::move(psn));
}

void serve(const Context& ctx, ModelRegistry models, const ServiceConfig& sc) {
  SynthesisService service(std::move(models), sc);
  {
    std::lock_guard lock(g_serve_mutex);
    g_serving = &service;
  }
  ctx.out << "serving on http://" << sc.host << ":" << sc.port << std::endl;
  try {
    service.run();
  } catch (...) {
    std::lock_guard lock(g_serve_mutex);
    g_serving = nullptr;
    throw;
  }
  std::lock_guard lock(g_serve_mutex);
  g_serving = nullptr;
}

// ---- gen-data ----

struct GenOptions {
  std::optional<std::string> category;
  std::optional<int> count, resolution;
  std::optional<std::string> out;
};

void cmd_gen_data(Context& ctx, const GenOptions& o) {
  auto& d = ctx.cfg.data;
  if (o.category) d.category = parse_category(*o.category);
  if (o.count) d.count = *o.count;
  if (o.resolution) d.resolution = *o.resolution;
  const fs::path dir = o.out ? fs::path(*o.out) : d.dir;
  if (d.count < 2) throw UsageError("--count must be at least 2");
  const auto split = make_dataset(d.category, d.count, ctx.cfg.stage_seed(kSeedData), d.resolution);
  save_dataset(dir, split);
  ctx.out << "wrote " << split.train.size() << " train + " << split.test.size() << " test " << to_string(d.category)
          << " shapes at R=" << d.resolution << " to " << dir.string() << '\n';
}

// ---- train ----

struct TrainOptions {
  std::optional<std::string> data, checkpoint, curve, pcn, model;
  std::optional<int> epochs_joint, epochs_stn, epochs, batch_size;
  std::optional<double> lr_ae, lr_stn, lr;
};

void write_curve(const Context& ctx, const fs::path& path, const std::string& csv) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file(path, csv);
  ctx.log("loss curve -> " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void cmd_train_pcn(Context& ctx, const TrainOptions& o) {
  auto& s = ctx.cfg.pcn;
  if (o.epochs_joint) s.train.epochs_joint = *o.epochs_joint;
  if (o.epochs_stn) s.train.epochs_stn = *o.epochs_stn;
  if (o.lr_ae) s.train.lr_ae = *o.lr_ae;
  if (o.lr_stn) s.train.lr_stn = *o.lr_stn;
  if (o.batch_size) s.train.batch_size = *o.batch_size;
  const fs::path ckpt = o.checkpoint ? fs::path(*o.checkpoint) : s.checkpoint;
  const fs::path curve = o.curve ? fs::path(*o.curve) : s.curve;
  const auto split = load_data(ctx, o.data ? fs::path(*o.data) : ctx.cfg.data.dir);
  const auto parts = train_parts(split);
  if (parts.empty()) throw UsageError("dataset has no training parts");
  auto model_cfg = s.model;
  model_cfg.resolution = parts.front().normalized.resolution();
  PcnModel model(model_cfg, ctx.cfg.stage_seed(kSeedPcn));
  auto tc = s.train;
  tc.seed = ctx.cfg.stage_seed(kSeedPcn);
  PcnReport report;
  const double secs = timed([&] { report = model.train(parts, tc); });
  ensure_parent(ckpt);
  model.save(ckpt);
  write_curve(ctx, curve, report.to_csv());
  for (const auto& e : report.epochs)
    ctx.log("pcn epoch " + std::to_string(e.epoch) + " stage " + std::to_string(e.stage) +
            " ae=" + std::to_string(e.loss_ae) + " stn=" + std::to_string(e.loss_stn));
  ctx.out << "trained pcn on " << parts.size() << " parts (" << tc.epochs_joint << "+" << tc.epochs_stn
          << " epochs, lr " << tc.lr_ae << "/" << tc.lr_stn << ") in " << fmt_seconds(secs) << " -> " << ckpt.string()
          << '\n';
}

void cmd_train_implicit(Context& ctx, const TrainOptions& o) {
  auto& s = ctx.cfg.implicit;
  const fs::path pcn_path = o.pcn ? fs::path(*o.pcn) : ctx.cfg.pcn.checkpoint;
  require_file(pcn_path, "PCN checkpoint (train pcn first)");
  if (o.epochs) s.train.epochs = *o.epochs;
  if (o.lr) s.train.lr = *o.lr;
  if (o.batch_size) s.train.batch_size = *o.batch_size;
  const fs::path ckpt = o.checkpoint ? fs::path(*o.checkpoint) : s.checkpoint;
  const fs::path curve = o.curve ? fs::path(*o.curve) : s.curve;
  const auto pcn = PcnModel::load(pcn_path);
  const auto split = load_data(ctx, o.data ? fs::path(*o.data) : ctx.cfg.data.dir);
  std::vector<ImplicitSample> samples;
  for (const auto& p : train_parts(split)) samples.push_back({p.normalized, pcn.encode(p.normalized)});
  if (samples.empty()) throw UsageError("dataset has no training parts");
  auto model_cfg = s.model;
  model_cfg.latent_dim = pcn.latent_dim();
  ImplicitModel model(model_cfg, ctx.cfg.stage_seed(kSeedImplicit));
  auto tc = s.train;
  tc.seed = ctx.cfg.stage_seed(kSeedImplicit);
  ImplicitReport report;
  const double secs = timed([&] { report = model.train(samples, tc); });
  ensure_parent(ckpt);
  model.save(ckpt);
  std::ostringstream csv;
  csv.precision(9);
  csv << "epoch,bce\n";
  for (std::size_t e = 0; e < report.losses.size(); ++e) csv << e + 1 << ',' << report.losses[e] << '\n';
  write_curve(ctx, curve, csv.str());
  ctx.out << "trained implicit decoder on " << samples.size() << " parts (" << tc.epochs << " epochs) in "
          << fmt_seconds(secs) << " -> " << ckpt.string() << '\n';
}

void cmd_train_psn(Context& ctx, const TrainOptions& o) {
  auto& s = ctx.cfg.psn;
  if (o.model) s.kind = parse_psn_kind(*o.model);
  const fs::path pcn_path = o.pcn ? fs::path(*o.pcn) : ctx.cfg.pcn.checkpoint;
  require_file(pcn_path, "PCN checkpoint (train pcn first)");
  if (o.epochs) s.epochs = *o.epochs;
  if (o.lr) s.lr = *o.lr;
  if (o.batch_size) s.batch_size = *o.batch_size;
  const fs::path ckpt = o.checkpoint ? fs::path(*o.checkpoint) : s.checkpoint;
  const fs::path curve = o.curve ? fs::path(*o.curve) : s.curve;
  const auto pcn = PcnModel::load(pcn_path);
  const auto split = load_data(ctx, o.data ? fs::path(*o.data) : ctx.cfg.data.dir);
  auto pairs = make_psn_samples(split.train, ctx.cfg.data.pairs_per_shape, ctx.cfg.stage_seed(kSeedPsnPairs));
  if (pairs.samples.empty()) throw UsageError("dataset yields no suggestion training pairs");
  const auto sealed = seal_latents(std::move(pairs.samples), pcn);
  auto model_cfg = s.model;
  model_cfg.latent_dim = pcn.latent_dim();
  SuggestionModel model(s.kind, model_cfg, ctx.cfg.stage_seed(kSeedPsn));
  const auto tc = s.train_config(ctx.cfg.paper(), ctx.cfg.stage_seed(kSeedPsn));
  PsnReport report;
  const double secs = timed([&] { report = train_psn(model, sealed, tc); });
  ensure_parent(ckpt);
  model.save(ckpt);
  write_curve(ctx, curve, report.to_csv());
  ctx.out << "trained " << to_string(s.kind) << " on " << sealed.size() << " pairs (" << tc.epochs << " epochs, lr "
          << model.learning_rate() << ") in " << fmt_seconds(secs) << " -> " << ckpt.string() << '\n';
}

// ---- synth / serve ----

struct SynthOptions {
  std::vector<int> auto_args;
  bool serve = false;
  std::optional<int> port, decode_cap, export_resolution;
  std::optional<std::string> out, host, session_dir, pcn, implicit;
  std::vector<std::string> psn;
};

fs::path pick(const std::optional<std::string>& flag, const fs::path& fallback) {
  return flag ? fs::path(*flag) : fallback;
}

ServiceConfig service_config(const Context& ctx, const SynthOptions& o) {
  auto sc = ctx.cfg.service();
  if (o.host) sc.host = *o.host;
  if (o.port) sc.port = *o.port;
  if (o.decode_cap) sc.decode_cap = *o.decode_cap;
  if (o.session_dir) sc.session_dir = *o.session_dir;
  if (sc.port < 1 || sc.port > 65535) throw UsageError("--port must lie in 1..65535");
  if (sc.decode_cap < 1) throw UsageError("--decode-cap must be at least 1");
  return sc;
}

ModelRegistry load_registry(const Context& ctx, const SynthOptions& o) {
  const auto pcn = pick(o.pcn, ctx.cfg.pcn.checkpoint), implicit = pick(o.implicit, ctx.cfg.implicit.checkpoint);
  std::vector<fs::path> psn_paths(o.psn.begin(), o.psn.end());
  if (psn_paths.empty()) psn_paths.push_back(ctx.cfg.psn.checkpoint);
  ModelRegistry reg;
  for (const auto& p : psn_paths) {
    auto m = load_models(ctx, pcn, implicit, p);
    const auto kind = m.psn->kind();
    if (reg.contains(kind)) throw UsageError("two suggestion checkpoints of kind " + std::string(to_string(kind)));
    reg.emplace(kind, std::move(m));
  }
  return reg;
}

void cmd_serve(Context& ctx, const SynthOptions& o) {
  const auto sc = service_config(ctx, o);
  serve(ctx, load_registry(ctx, o), sc);
}

void cmd_synth(Context& ctx, const SynthOptions& o) {
  if (o.serve == !o.auto_args.empty()) throw UsageError("synth needs exactly one of --auto K N or --serve");
  if (o.serve) return cmd_serve(ctx, o);
  const int rounds = o.auto_args.at(0), shapes = o.auto_args.at(1);
  if (rounds < 1) throw UsageError("--auto K needs K >= 1");
  if (shapes < 1) throw UsageError("--auto N needs N >= 1");
  if (o.psn.size() > 1) throw UsageError("synth --auto takes a single --psn checkpoint");
  const auto models = load_models(ctx, pick(o.pcn, ctx.cfg.pcn.checkpoint),
                                  pick(o.implicit, ctx.cfg.implicit.checkpoint),
                                  o.psn.empty() ? ctx.cfg.psn.checkpoint : fs::path(o.psn.front()));
  auto session_cfg = ctx.cfg.synthesis.session;
  session_cfg.max_depth = std::max(session_cfg.max_depth, rounds);
  const int res = o.export_resolution ? *o.export_resolution
                  : ctx.cfg.synthesis.export_resolution > 0 ? ctx.cfg.synthesis.export_resolution
                                                            : models.resolution();
  if (res < 8 || res > 128) throw UsageError("export resolution must lie in 8..128");
  const fs::path dir = pick(o.out, ctx.cfg.synthesis.out);
  fs::create_directories(dir);
  std::vector<SynthesisSession> sessions;
  const double secs =
      timed([&] { sessions = auto_sample_sessions(models, session_cfg, rounds, shapes, ctx.cfg.stage_seed(kSeedSynth)); });
  json manifest{{"rounds", rounds}, {"shapes", shapes}, {"seed", ctx.cfg.seed}, {"resolution", res},
                {"checkpoints", models.digests}, {"files", json::array()}};
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "shape_%03zu", i);
    const auto& s = sessions[i];
    const int leaf = s.nodes().rbegin()->first;
    const auto obj = io::to_obj(export_node(s, leaf, res));
    io::write_file(dir / (std::string(stem) + ".obj"), obj);
    save_session(dir / (std::string(stem) + ".session.json"), s);
    manifest["files"].push_back({{"obj", std::string(stem) + ".obj"},
                                 {"session", std::string(stem) + ".session.json"},
                                 {"parts", s.node(leaf).parts.size()},
                                 {"digest", io::digest(obj)}});
    ctx.log(std::string(stem) + " " + io::digest(obj));
  }
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  ctx.out << "synthesized " << sessions.size() << " shapes with " << rounds << " rounds in " << fmt_seconds(secs)
          << " -> " << dir.string() << '\n';
}

// ---- evaluate ----

struct EvalOptions {
  std::optional<std::string> gen, ref, out;
  std::string protocol = "table4";
  std::optional<int> points;
};

std::vector<fs::path> files_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PointCloud> surface_clouds(const Context& ctx, const fs::path& dir, int points) {
  std::vector<PointCloud> clouds;
  for (const auto& f : files_in(dir)) {
    const auto ext = f.extension().string();
    TriangleMesh mesh;
    if (ext == ".obj") {
      mesh = io::load_obj(f);
    } else if (ext == ".vgrid") {
      mesh = marching_cubes(io::load_vgrid(f), 0.5);
    } else {
      continue;
    }
    if (mesh.faces.empty()) throw UsageError("mesh without faces: " + f.string());
    // Seeded by content so identical meshes get identical samples.
    const auto bytes = io::to_obj(mesh);
    const auto seed = derive_seed(ctx.cfg.stage_seed(kSeedMetrics), std::hash<std::string>{}(io::digest(bytes)));
    clouds.push_back(sample_mesh_points(mesh, points, seed));
  }
  if (clouds.empty()) throw UsageError("no .obj or .vgrid meshes in " + dir.string());
  ctx.log(std::to_string(clouds.size()) + " meshes from " + dir.string());
  return clouds;
}

std::vector<VoxelGrid> part_grids(const fs::path& dir) {
  std::vector<VoxelGrid> parts;
  for (const auto& f : files_in(dir)) {
    if (f.extension() == ".vgrid") {
      parts.push_back(io::load_vgrid(f));
    } else if (f.extension() == ".obj") {
      throw UsageError("table1 compares voxel parts; found mesh " + f.string());
    }
  }
  return parts;
}

void cmd_evaluate(Context& ctx, const EvalOptions& o) {
  if (!o.gen) throw UsageError("--gen is required");
  json report;
  if (o.protocol == "table4") {
    if (!o.ref) throw UsageError("table4 needs --ref");
    const int points = o.points.value_or(ctx.cfg.metrics.surface_points);
    if (points < 1) throw UsageError("--points must be positive");
    const auto gen = surface_clouds(ctx, *o.gen, points);
    const auto ref = surface_clouds(ctx, *o.ref, points);
    report = json::parse(to_json(generative_report(gen, ref)));
    report["points_per_mesh"] = points;
  } else if (o.protocol == "table1") {
    // Each subdirectory holds the suggestions for one condition; a flat
    // directory is a single condition.
    std::vector<fs::path> conditions;
    for (const auto& e : fs::directory_iterator(*o.gen))
      if (e.is_directory()) conditions.push_back(e.path());
    std::sort(conditions.begin(), conditions.end());
    if (conditions.empty()) conditions.push_back(*o.gen);
    double ed = 0, cd = 0, em = 0;
    int pairs = 0, skipped = 0, used = 0;
    bool exact = true;
    for (const auto& c : conditions) {
      const auto parts = part_grids(c);
      if (parts.size() < 2) continue;
      const auto r = pairwise_diversity(parts);
      ed += r.mean_ed;
      cd += r.mean_cd;
      em += r.mean_emd;
      pairs += r.pair_count;
      skipped += r.skipped;
      exact = exact && r.emd_exact;
      ++used;
    }
    if (used == 0) throw UsageError("table1 needs at least two .vgrid parts per condition");
    report = {{"mean_ed", ed / used}, {"mean_cd", cd / used}, {"mean_emd", em / used}, {"pair_count", pairs},
              {"skipped", skipped},   {"emd_exact", exact},    {"conditions", used}};
  } else {
    throw UsageError("unknown protocol '" + o.protocol + "' (table1 or table4)");
  }
  report["protocol"] = o.protocol;
  const fs::path out = pick(o.out, ctx.cfg.metrics.report);
  ensure_parent(out);
  io::write_file(out, report.dump(2) + "\n");
  ctx.out << report.dump(2) << '\n';
}

// ---- psn-info ----

void cmd_psn_info(Context& ctx, const std::optional<std::string>& path) {
  const fs::path p = pick(path, ctx.cfg.psn.checkpoint);
  require_file(p, "suggestion network checkpoint");
  ctx.out << SuggestionModel::load(p).info().dump(2) << '\n';
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Divergence: return kExitDivergence;
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidKind:
    case ErrorCode::InvalidSpec:
    case ErrorCode::Io:
    case ErrorCode::Format:
    case ErrorCode::ModelNotReady:
    case ErrorCode::WrongModel:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::ResolutionMismatch:
    case ErrorCode::DepthLimit: return kExitUsage;
    default: return kExitInternal;
  }
}

}  // namespace

void request_serve_shutdown() {
  std::lock_guard lock(g_serve_mutex);
  if (g_serving) g_serving->stop();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Part-based shape synthesis: data, training, synthesis, evaluation and serving.", "partsynth"};
  app.require_subcommand(1);
  // Global flags may follow the subcommand.
  app.fallthrough();
  std::optional<std::string> config_path, profile;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--profile", profile, "desk (default) or paper presets");
  app.add_option("--seed", seed, "run seed");
  app.add_flag("-v,--verbose", verbose, "progress on stderr");

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the procedural part dataset");
  gen_cmd->add_option("--category", gen.category, "chair or table");
  gen_cmd->add_option("--count", gen.count, "number of shapes");
  gen_cmd->add_option("--resolution", gen.resolution, "grid resolution");
  gen_cmd->add_option("--out", gen.out, "output directory");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train one pipeline stage");
  train_cmd->require_subcommand(1);
  const auto common = [&](CLI::App* c) {
    c->add_option("--data", tr.data, "dataset directory");
    c->add_option("--checkpoint", tr.checkpoint, "output checkpoint");
    c->add_option("--curve", tr.curve, "output loss CSV");
    c->add_option("--batch-size", tr.batch_size);
  };
  auto* t_pcn = train_cmd->add_subcommand("pcn", "part composition network (autoencoder + localizer)");
  common(t_pcn);
  t_pcn->add_option("--epochs-joint", tr.epochs_joint);
  t_pcn->add_option("--epochs-stn", tr.epochs_stn);
  t_pcn->add_option("--lr-ae", tr.lr_ae);
  t_pcn->add_option("--lr-stn", tr.lr_stn);
  auto* t_imp = train_cmd->add_subcommand("implicit", "implicit occupancy decoder");
  common(t_imp);
  t_imp->add_option("--pcn", tr.pcn, "PCN checkpoint");
  t_imp->add_option("--epochs", tr.epochs);
  t_imp->add_option("--lr", tr.lr);
  auto* t_psn = train_cmd->add_subcommand("psn", "part suggestion network");
  common(t_psn);
  t_psn->add_option("--model", tr.model, "mdn, cgan, cimle or cddpm");
  t_psn->add_option("--pcn", tr.pcn, "PCN checkpoint");
  t_psn->add_option("--epochs", tr.epochs);
  t_psn->add_option("--lr", tr.lr);

  SynthOptions sy;
  const auto model_opts = [&](CLI::App* c) {
    c->add_option("--pcn", sy.pcn, "PCN checkpoint");
    c->add_option("--implicit", sy.implicit, "implicit decoder checkpoint");
    c->add_option("--psn", sy.psn, "suggestion network checkpoint(s)");
  };
  const auto serve_opts = [&](CLI::App* c) {
    c->add_option("--host", sy.host, "listen address (loopback by default)");
    c->add_option("--port", sy.port);
    c->add_option("--decode-cap", sy.decode_cap, "concurrent decodes before 503");
    c->add_option("--session-dir", sy.session_dir, "persist sessions here");
  };
  auto* synth_cmd = app.add_subcommand("synth", "automatic synthesis or interactive serving");
  model_opts(synth_cmd);
  serve_opts(synth_cmd);
  synth_cmd->add_option("--auto", sy.auto_args, "K rounds, N shapes")->expected(2);
  synth_cmd->add_flag("--serve", sy.serve, "launch the HTTP service");
  synth_cmd->add_option("--out", sy.out, "output directory");
  synth_cmd->add_option("--resolution", sy.export_resolution, "export resolution");
  auto* serve_cmd = app.add_subcommand("serve", "launch the HTTP service");
  model_opts(serve_cmd);
  serve_opts(serve_cmd);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "diversity or generative metrics");
  eval_cmd->add_option("--gen", ev.gen, "generated set");
  eval_cmd->add_option("--ref", ev.ref, "reference set");
  eval_cmd->add_option("--protocol", ev.protocol, "table1 or table4");
  eval_cmd->add_option("--points", ev.points, "surface samples per mesh");
  eval_cmd->add_option("--out", ev.out, "report path");

  std::optional<std::string> info_path;
  auto* info_cmd = app.add_subcommand("psn-info", "describe a suggestion network checkpoint");
  info_cmd->add_option("checkpoint", info_path, "checkpoint path");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg = config_path ? RunConfig::load(*config_path, profile.value_or("desk"))
                                : RunConfig::preset(profile.value_or("desk"));
    if (config_path && profile && *profile != cfg.profile)
      throw UsageError("--profile disagrees with the config file's profile");
    if (seed) cfg.seed = *seed;
    Context ctx{out, err, std::move(cfg), verbose};
    if (*gen_cmd) {
      cmd_gen_data(ctx, gen);
    } else if (*t_pcn) {
      cmd_train_pcn(ctx, tr);
    } else if (*t_imp) {
      cmd_train_implicit(ctx, tr);
    } else if (*t_psn) {
      cmd_train_psn(ctx, tr);
    } else if (*synth_cmd) {
      cmd_synth(ctx, sy);
    } else if (*serve_cmd) {
      cmd_serve(ctx, sy);
    } else if (*eval_cmd) {
      cmd_evaluate(ctx, ev);
    } else if (*info_cmd) {
      cmd_psn_info(ctx, info_path);
    }
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace partsynth

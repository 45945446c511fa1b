#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <httplib.h>

#include "partsynth/cli.hpp"
#include "partsynth/config.hpp"
#include "partsynth/error.hpp"
#include "partsynth/io.hpp"

using namespace partsynth;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t data_rows(const fs::path& csv) {
  std::istringstream in(io::read_file(csv));
  std::string line;
  std::size_t n = 0;
  std::getline(in, line);
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

std::vector<std::string> listing(const fs::path& dir, const std::string& ext) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

// One small pipeline shared by the tests below: R = 16, d = 16.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "partsynth_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_ / "run");
    config_ = root_ / "run" / "config.json";
    io::write_file(config_, json{{"seed", 5},
                                 {"data", {{"resolution", 16}, {"count", 12}, {"dir", "data"}}},
                                 {"pcn", {{"latent_dim", 16}, {"channels", {4, 8, 8, 16, 16}}, {"lr_ae", 1e-3},
                                          {"lr_stn", 1e-5}, {"batch_size", 4}}},
                                 {"implicit", {{"channels", 8}, {"width", 32}, {"epochs", 30}, {"batch_size", 2}}},
                                 {"psn", {{"noise_dim", 8}, {"hidden", 64}, {"epochs", 5}, {"lr", 1e-3},
                                          {"batch_size", 8}}},
                                 {"synthesis", {{"out", "synth"}}},
                                 {"metrics", {{"report", "report.json"}}}}
                                .dump(2));
    ASSERT_EQ(cli({"--config", config_.string(), "gen-data"}).code, 0);
    const auto pcn = cli({"--config", config_.string(), "train", "pcn", "--epochs-joint", "30", "--epochs-stn", "15"});
    ASSERT_EQ(pcn.code, 0) << pcn.err;
    const auto imp = cli({"--config", config_.string(), "train", "implicit"});
    ASSERT_EQ(imp.code, 0) << imp.err;
    const auto psn = cli({"--config", config_.string(), "train", "psn", "--model", "cimle"});
    ASSERT_EQ(psn.code, 0) << psn.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::vector<std::string> with_config(std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", config_.string()});
    return args;
  }

  static inline fs::path root_, config_;
};

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"train"}).code, 2);
  EXPECT_EQ(cli({"--profile", "huge", "psn-info"}).code, 2);
  EXPECT_EQ(cli({"evaluate", "--protocol", "table9", "--gen", "."}).code, 2);
  EXPECT_EQ(cli({"psn-info", "/nonexistent/psn.ckpt"}).code, 2);
}

TEST(Cli, MissingPrerequisites) {
  const auto dir = fs::temp_directory_path() / "partsynth_cli_missing";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto missing = (dir / "pcn.ckpt").string();
  auto r = cli({"train", "psn", "--model", "cimle", "--pcn", missing});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("PCN checkpoint"), std::string::npos);
  EXPECT_EQ(cli({"train", "implicit", "--pcn", missing}).code, 2);
  EXPECT_EQ(cli({"train", "pcn", "--data", (dir / "nodata").string()}).code, 2);
  EXPECT_EQ(cli({"synth", "--auto", "2", "2", "--pcn", missing}).code, 2);
  fs::remove_all(dir);
}

TEST(Config, ProfilesAndDefaults) {
  const auto desk = RunConfig::preset("desk");
  EXPECT_DOUBLE_EQ(desk.pcn.train.lr_ae, 1e-4);
  EXPECT_DOUBLE_EQ(desk.pcn.train.lr_stn, 1e-6);
  EXPECT_EQ(desk.data.resolution, 32);
  EXPECT_EQ(desk.metrics.surface_points, 2048);
  EXPECT_EQ(desk.synthesis.session.k, 4);
  EXPECT_EQ(desk.synthesis.host, "127.0.0.1");
  EXPECT_EQ(desk.synthesis.decode_cap, 4);
  const auto paper = RunConfig::preset("paper");
  EXPECT_EQ(paper.pcn.train.epochs_joint, 1000);
  EXPECT_EQ(paper.pcn.train.epochs_stn, 500);
  EXPECT_DOUBLE_EQ(paper.psn.train_config(true, 0).lr, 1e-4);
  EXPECT_EQ(paper.psn.train_config(true, 0).epochs, 500);
  auto cgan = paper;
  cgan.psn.kind = PsnKind::Cgan;
  EXPECT_DOUBLE_EQ(cgan.psn.train_config(true, 0).lr, 1e-5);
  EXPECT_EQ(cgan.psn.train_config(true, 0).epochs, 2000);
  EXPECT_THROW(RunConfig::preset("huge"), Error);
}

TEST(Config, FileRules) {
  const auto dir = fs::temp_directory_path() / "partsynth_config_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "sub");
  const auto write = [&](const json& j) {
    io::write_file(dir / "sub" / "c.json", j.dump());
    return dir / "sub" / "c.json";
  };
  const auto c = RunConfig::load(write({{"profile", "paper"},
                                        {"data", {{"dir", "d"}}},
                                        {"pcn", {{"checkpoint", "/abs/p.ckpt"}}},
                                        {"psn", {{"kind", "mdn"}, {"epochs", 3}}}}));
  EXPECT_EQ(c.profile, "paper");
  EXPECT_EQ(c.data.resolution, 64);
  EXPECT_EQ(c.data.dir, fs::absolute(dir / "sub") / "d");
  EXPECT_EQ(c.pcn.checkpoint, fs::path("/abs/p.ckpt"));
  // Untouched defaults also land next to the config file.
  EXPECT_EQ(c.implicit.checkpoint, fs::absolute(dir / "sub") / "checkpoints/implicit.ckpt");
  EXPECT_EQ(c.synthesis.out, fs::absolute(dir / "sub") / "synth");
  EXPECT_EQ(c.psn.kind, PsnKind::Mdn);
  EXPECT_EQ(c.psn.train_config(true, 0).epochs, 3);
  EXPECT_DOUBLE_EQ(c.psn.train_config(true, 0).lr, 1e-4);

  const auto code = [&](const json& j) {
    try {
      RunConfig::load(write(j));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  EXPECT_EQ(code({{"pcn", {{"lr_typo", 1}}}}), ErrorCode::InvalidArgument);
  EXPECT_EQ(code({{"extra", {}}}), ErrorCode::InvalidArgument);
  EXPECT_EQ(code({{"data", {{"count", "many"}}}}), ErrorCode::InvalidArgument);
  EXPECT_EQ(code({{"psn", {{"kind", "vae"}}}}), ErrorCode::InvalidKind);
  io::write_file(dir / "bad.json", "{");
  EXPECT_THROW(RunConfig::load(dir / "bad.json"), Error);
  // Round trip through the JSON form.
  auto again = RunConfig::preset("paper");
  again.apply(c.to_json());
  EXPECT_EQ(again.to_json(), c.to_json());

  EXPECT_EQ(cli({"--config", (dir / "sub" / "c.json").string(), "psn-info"}).code, 2);
  io::write_file(dir / "sub" / "c.json", json{{"bogus", 1}}.dump());
  EXPECT_EQ(cli({"--config", (dir / "sub" / "c.json").string(), "psn-info"}).code, 2);
  fs::remove_all(dir);
}

TEST_F(Pipeline, GenDataIsSeeded) {
  const auto a = root_ / "a", b = root_ / "b", c = root_ / "c";
  for (const auto& [dir, seed] : {std::pair{a, "7"}, std::pair{b, "7"}, std::pair{c, "8"}})
    ASSERT_EQ(cli({"gen-data", "--category", "chair", "--count", "6", "--resolution", "16", "--seed", seed, "--out",
                   dir.string()})
                  .code,
              0);
  EXPECT_EQ(io::read_file(a / "manifest.json"), io::read_file(b / "manifest.json"));
  const auto parts = listing(a / "parts", ".vgrid");
  ASSERT_FALSE(parts.empty());
  for (const auto& f : parts) EXPECT_EQ(io::read_file(a / "parts" / f), io::read_file(b / "parts" / f));
  bool differs = false;
  for (const auto& f : parts)
    differs = differs || !fs::exists(c / "parts" / f) || io::read_file(a / "parts" / f) != io::read_file(c / "parts" / f);
  EXPECT_TRUE(differs);
  EXPECT_EQ(cli({"gen-data", "--category", "sofa", "--out", a.string()}).code, 2);
}

TEST_F(Pipeline, TrainingOutputs) {
  const auto run = root_ / "run";
  EXPECT_EQ(data_rows(run / "checkpoints" / "pcn.csv"), 45u);
  EXPECT_EQ(io::read_file(run / "checkpoints" / "pcn.csv").substr(0, 22), "epoch,loss_AE,loss_STN");
  EXPECT_EQ(data_rows(run / "checkpoints" / "implicit.csv"), 30u);
  EXPECT_EQ(data_rows(run / "checkpoints" / "psn.csv"), 5u);

  const auto defaults = cli({"--config", config_.string(), "train", "pcn", "--epochs-joint", "1", "--epochs-stn", "1",
                             "--checkpoint", (root_ / "d.ckpt").string(), "--curve", (root_ / "d.csv").string()});
  ASSERT_EQ(defaults.code, 0) << defaults.err;
  EXPECT_DOUBLE_EQ(PcnModel::load(root_ / "d.ckpt").train_config().at("lr_ae").get<double>(), 1e-3);
  // Without a config or flags the default rates apply.
  const auto bare = cli({"train", "pcn", "--data", (run / "data").string(), "--epochs-joint", "1", "--epochs-stn", "0",
                         "--checkpoint", (root_ / "e.ckpt").string(), "--curve", (root_ / "e.csv").string()});
  ASSERT_EQ(bare.code, 0) << bare.err;
  const auto meta = PcnModel::load(root_ / "e.ckpt").train_config();
  EXPECT_DOUBLE_EQ(meta.at("lr_ae").get<double>(), 1e-4);
  EXPECT_DOUBLE_EQ(meta.at("lr_stn").get<double>(), 1e-6);

  // Same seed, same weights.
  const auto again = cli({"--config", config_.string(), "train", "pcn", "--epochs-joint", "1", "--epochs-stn", "1",
                          "--checkpoint", (root_ / "d2.ckpt").string(), "--curve", (root_ / "d2.csv").string()});
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(io::read_file(root_ / "d.ckpt"), io::read_file(root_ / "d2.ckpt"));

  const auto diverged = cli(with_config({"train", "pcn", "--epochs-joint", "2", "--epochs-stn", "0", "--lr-ae", "1e20",
                                         "--checkpoint", (root_ / "x.ckpt").string(), "--curve",
                                         (root_ / "x.csv").string()}));
  EXPECT_EQ(diverged.code, 3) << diverged.err;
}

TEST_F(Pipeline, PsnInfo) {
  const auto r = cli(with_config({"psn-info"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto info = json::parse(r.out);
  EXPECT_EQ(info.at("kind"), "cimle");
  EXPECT_EQ(info.at("d"), 16);
  EXPECT_EQ(info.at("h"), 4);
  EXPECT_EQ(info.at("train").at("epochs"), 5);
  EXPECT_DOUBLE_EQ(info.at("train").at("lr").get<double>(), 1e-3);
}

TEST_F(Pipeline, AutoSynthesis) {
  const auto out1 = root_ / "s1", out2 = root_ / "s2";
  const auto a = cli(with_config({"synth", "--auto", "3", "4", "--seed", "1", "--out", out1.string()}));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(cli(with_config({"synth", "--auto", "3", "4", "--seed", "1", "--out", out2.string()})).code, 0);
  const auto objs = listing(out1, ".obj");
  ASSERT_EQ(objs.size(), 4u);
  EXPECT_EQ(listing(out1, ".json").size(), 5u);  // 4 sessions + manifest
  for (const auto& f : objs) {
    EXPECT_EQ(io::read_file(out1 / f), io::read_file(out2 / f));
    EXPECT_GT(io::load_obj(out1 / f).faces.size(), 0u);
  }
  const auto manifest = json::parse(io::read_file(out1 / "manifest.json"));
  for (const auto& f : manifest.at("files")) EXPECT_EQ(f.at("parts"), 4);
  EXPECT_EQ(manifest, json::parse(io::read_file(out2 / "manifest.json")));

  EXPECT_EQ(cli(with_config({"synth", "--auto", "0", "4", "--out", out1.string()})).code, 2);
  EXPECT_EQ(cli(with_config({"synth", "--auto", "2"})).code, 2);
  EXPECT_EQ(cli(with_config({"synth"})).code, 2);
}

TEST_F(Pipeline, Evaluate) {
  const auto gen = root_ / "eval_gen";
  ASSERT_EQ(cli(with_config({"synth", "--auto", "2", "3", "--seed", "4", "--out", gen.string()})).code, 0);
  const auto r = cli(with_config({"evaluate", "--gen", gen.string(), "--ref", gen.string(), "--protocol", "table4"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = json::parse(r.out);
  EXPECT_EQ(rep.at("cov").get<double>(), 1.0);
  EXPECT_EQ(rep.at("mmd").get<double>(), 0.0);
  EXPECT_EQ(rep.at("jsd").get<double>(), 0.0);
  EXPECT_EQ(rep.at("points_per_mesh"), 2048);
  EXPECT_EQ(rep.at("n_gen"), 3);
  EXPECT_EQ(json::parse(io::read_file(root_ / "run" / "report.json")), rep);

  // Four voxel parts give six pairs.
  const auto parts = root_ / "eval_parts";
  fs::create_directories(parts);
  const auto data = load_dataset(root_ / "run" / "data");
  for (int i = 0; i < 4; ++i)
    io::save_vgrid(parts / ("p" + std::to_string(i) + ".vgrid"), data.train[i].parts.front().normalized);
  const auto t1 = cli(with_config({"evaluate", "--gen", parts.string(), "--protocol", "table1"}));
  ASSERT_EQ(t1.code, 0) << t1.err;
  EXPECT_EQ(json::parse(t1.out).at("pair_count"), 6);

  EXPECT_EQ(cli(with_config({"evaluate", "--gen", gen.string(), "--protocol", "table1"})).code, 2);
  EXPECT_EQ(cli(with_config({"evaluate", "--gen", gen.string(), "--protocol", "table4"})).code, 2);
  EXPECT_EQ(cli(with_config({"evaluate", "--gen", (root_ / "nowhere").string(), "--ref", gen.string()})).code, 2);
}

TEST_F(Pipeline, Serve) {
  const int port = 20000 + static_cast<int>(::getpid() % 20000);
  CliRun result{-1, "", ""};
  std::thread server([&] { result = cli(with_config({"synth", "--serve", "--port", std::to_string(port)})); });
  httplib::Client client("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 200 && !res; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    res = client.Get("/sessions/0123abcd");
  }
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  auto created = client.Post("/sessions", R"({"initial": "random", "seed": 1})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  request_serve_shutdown();
  server.join();
  EXPECT_EQ(result.code, 0) << result.err;
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "partsynth/dataset.hpp"
#include "partsynth/implicit_decoder.hpp"
#include "partsynth/pcn.hpp"
#include "partsynth/psn.hpp"
#include "partsynth/service.hpp"
#include "partsynth/synthesis.hpp"

namespace partsynth {

struct DataSection {
  Category category = Category::Chair;
  int count = 500;
  int resolution = 32;
  std::filesystem::path dir = "data";
  /// Training pairs drawn per shape for the suggestion network.
  int pairs_per_shape = 4;
};

struct PcnSection {
  PcnConfig model;
  PcnTrainConfig train;
  std::filesystem::path checkpoint = "checkpoints/pcn.ckpt";
  std::filesystem::path curve = "checkpoints/pcn.csv";
};

struct ImplicitSection {
  ImplicitConfig model;
  ImplicitTrainConfig train;
  std::filesystem::path checkpoint = "checkpoints/implicit.ckpt";
  std::filesystem::path curve = "checkpoints/implicit.csv";
};

struct PsnSection {
  PsnKind kind = PsnKind::Cimle;
  PsnConfig model;
  /// Unset values fall back to the profile's preset for the kind.
  std::optional<int> epochs;
  std::optional<double> lr;
  int batch_size = 32;
  std::filesystem::path checkpoint = "checkpoints/psn.ckpt";
  std::filesystem::path curve = "checkpoints/psn.csv";

  PsnTrainConfig train_config(bool paper_profile, std::uint64_t seed) const;
};

struct SynthesisSection {
  SynthesisConfig session;
  /// Marching-cubes resolution of exported meshes; 0 means the working one.
  int export_resolution = 0;
  std::filesystem::path out = "synth";
  std::string host = "127.0.0.1";
  int port = 8080;
  int decode_cap = 4;
  std::filesystem::path session_dir;
};

struct MetricsSection {
  int surface_points = 2048;
  std::filesystem::path report = "metrics.json";
};

/// Everything a CLI run reads. Built from a profile, then a JSON file, then flags.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  DataSection data;
  PcnSection pcn;
  ImplicitSection implicit;
  PsnSection psn;
  SynthesisSection synthesis;
  MetricsSection metrics;

  /// "desk" (small, the default) or "paper". Throws InvalidArgument otherwise.
  static RunConfig preset(const std::string& profile);
  /// Reads a JSON file over its "profile" (or `fallback_profile`). Relative
  /// paths are taken relative to the file's directory. Unknown keys throw
  /// InvalidArgument; unparsable files throw Format.
  static RunConfig load(const std::filesystem::path& path, const std::string& fallback_profile = "desk");

  /// Overlays a JSON document of the same shape.
  void apply(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;

  bool paper() const { return profile == "paper"; }
  /// Seed of one pipeline stage, derived from the run seed.
  std::uint64_t stage_seed(std::uint64_t stage) const;
  ServiceConfig service() const;
};

}  // namespace partsynth

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "partsynth/implicit_decoder.hpp"
#include "partsynth/latent.hpp"
#include "partsynth/pcn.hpp"
#include "partsynth/psn.hpp"
#include "partsynth/voxel_geometry.hpp"

namespace partsynth {

/// The three trained networks a session runs on. Shared and read-only.
struct SynthesisModels {
  std::shared_ptr<const PcnModel> pcn;
  std::shared_ptr<const ImplicitModel> implicit;
  std::shared_ptr<const SuggestionModel> psn;
  /// Digest of each network's weights, keyed pcn / implicit / psn.
  nlohmann::json digests = nlohmann::json::object();

  /// Computes the digests. Throws ModelNotReady when any model is missing or
  /// untrained and ShapeMismatch when the latent sizes disagree.
  static SynthesisModels make(std::shared_ptr<const PcnModel> pcn, std::shared_ptr<const ImplicitModel> implicit,
                              std::shared_ptr<const SuggestionModel> psn);
  int resolution() const { return pcn->resolution(); }
};

struct SynthesisConfig {
  /// Suggestions per round.
  int k = 4;
  /// Deepest node that may still be proposed from.
  int max_depth = 8;
  /// Attempts at drawing a non-empty random initial part.
  int random_attempts = 16;
};

struct PlacedPart {
  LatentCode latent;
  AffineTransform xf;
  /// Geometry of an explicitly supplied initial part; latent-decoded parts
  /// leave this empty.
  std::optional<VoxelGrid> source;
};

struct AssemblyNode {
  int id = 0;
  std::optional<int> parent;
  VoxelGrid assembly;
  std::vector<PlacedPart> parts;
  int depth = 0;
  /// Seed of the proposal this node was selected from and the chosen index.
  std::uint64_t proposal_seed = 0;
  int choice = -1;
};

struct SuggestionItem {
  LatentCode latent;
  AffineTransform xf;
  /// Implicit field of the suggested part in its canonical frame.
  VoxelGrid part_field;
  VoxelGrid placed;
  VoxelGrid preview_assembly;
};

struct SuggestionSet {
  int node_id = 0;
  std::uint64_t seed = 0;
  std::vector<SuggestionItem> items;
};

struct RandomInitial {
  std::uint64_t seed = 0;
};
using InitialPart = std::variant<VoxelGrid, RandomInitial>;

class SynthesisSession {
 public:
  const std::string& id() const noexcept { return id_; }
  const SynthesisConfig& config() const noexcept { return config_; }
  const SynthesisModels& models() const noexcept { return models_; }
  const std::map<int, AssemblyNode>& nodes() const noexcept { return nodes_; }
  const std::map<int, SuggestionSet>& pending() const noexcept { return pending_; }
  const AssemblyNode& node(int id) const;
  int root_id() const noexcept { return 0; }

 private:
  friend SynthesisSession start_session(const InitialPart&, const SynthesisModels&, const SynthesisConfig&, std::string);
  friend const SuggestionSet& propose(SynthesisSession&, int, std::uint64_t);
  friend int select(SynthesisSession&, int, int);
  friend SynthesisSession restore_session(const nlohmann::json&, const SynthesisModels&);

  std::string id_;
  SynthesisConfig config_;
  SynthesisModels models_;
  std::map<int, AssemblyNode> nodes_;
  std::map<int, SuggestionSet> pending_;
  int next_id_ = 1;
};

/// Root = the initial part placed by the localization network. A grid at a
/// different resolution is resampled first. Throws ModelNotReady or
/// EmptyShape.
SynthesisSession start_session(const InitialPart& initial, const SynthesisModels& models,
                               const SynthesisConfig& config = {}, std::string id = {});

/// Encodes the node's assembly, draws k latents, localizes each on its
/// autoencoder reconstruction, decodes the geometry with the implicit
/// decoder, places it and composes the previews. Replaces any pending set of
/// that node. Throws DeadNode or DepthLimit.
const SuggestionSet& propose(SynthesisSession& session, int node_id, std::uint64_t seed);

/// Creates the child for item `index` and consumes the pending set. Throws
/// StaleSuggestions, IndexOutOfRange or DeadNode.
int select(SynthesisSession& session, int node_id, int index);

/// One session per shape: random start, then `rounds` proposals each
/// followed by a uniformly random choice.
std::vector<SynthesisSession> auto_sample_sessions(const SynthesisModels& models, const SynthesisConfig& config,
                                                   int rounds, int n_shapes, std::uint64_t seed);
/// The leaves of auto_sample_sessions.
std::vector<AssemblyNode> auto_sample(const SynthesisModels& models, const SynthesisConfig& config, int rounds,
                                      int n_shapes, std::uint64_t seed);

/// Per-axis rescale of an initial part before it enters a session.
VoxelGrid edit_initial(const VoxelGrid& part, const Vec3& axis_scales);

/// Re-decodes every part at `resolution`, places and composes them, then
/// extracts the 0.5 iso-surface.
VoxelGrid node_field(const SynthesisSession& session, int node_id, int resolution);
TriangleMesh export_node(const SynthesisSession& session, int node_id, int resolution);

/// {id, config, digests, nodes, edges, latents, transforms, seeds, pending}.
nlohmann::json session_to_json(const SynthesisSession& session);
/// Rebuilds the tree from its parts. Throws WrongModel when the digests
/// differ from `models` and Format on a malformed document.
SynthesisSession restore_session(const nlohmann::json& doc, const SynthesisModels& models);

void save_session(const std::filesystem::path& path, const SynthesisSession& session);
SynthesisSession load_session(const std::filesystem::path& path, const SynthesisModels& models);

}  // namespace partsynth

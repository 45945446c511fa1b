#include "partsynth/synthesis.hpp"

#include <random>

#include "partsynth/checkpoint.hpp"
#include "partsynth/error.hpp"
#include "partsynth/io.hpp"
#include "partsynth/random.hpp"

namespace partsynth {

namespace {

std::string weights_digest(std::string_view kind, const torch::nn::Module& module) {
  return io::digest(encode_checkpoint(kind, nlohmann::json::object(), module));
}

VoxelGrid part_geometry(const SynthesisModels& models, const PlacedPart& part, int resolution) {
  if (part.source) return resample(*part.source, resolution);
  return models.implicit->decode_field(part.latent, resolution);
}

std::string default_id(std::uint64_t seed) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out = "s";
  const auto v = derive_seed(seed, 0x5e55);
  for (int shift = 60; shift >= 0; shift -= 4) out += kHex[(v >> shift) & 0xf];
  return out;
}

}  // namespace

SynthesisModels SynthesisModels::make(std::shared_ptr<const PcnModel> pcn, std::shared_ptr<const ImplicitModel> implicit,
                                      std::shared_ptr<const SuggestionModel> psn) {
  if (!pcn || !pcn->ready()) fail(ErrorCode::ModelNotReady, "part composition network is not trained");
  if (!implicit || !implicit->ready()) fail(ErrorCode::ModelNotReady, "implicit decoder is not trained");
  if (!psn || !psn->ready()) fail(ErrorCode::ModelNotReady, "suggestion network is not trained");
  if (pcn->latent_dim() != implicit->latent_dim() || pcn->latent_dim() != psn->latent_dim())
    fail(ErrorCode::ShapeMismatch, "models disagree on the latent dimension");
  SynthesisModels m;
  m.digests = {{"pcn", weights_digest("pcn", *pcn->net())},
               {"implicit", weights_digest("implicit", *implicit->net())},
               {"psn", weights_digest(to_string(psn->kind()), *psn->net())},
               {"psn_kind", to_string(psn->kind())}};
  m.pcn = std::move(pcn);
  m.implicit = std::move(implicit);
  m.psn = std::move(psn);
  return m;
}

const AssemblyNode& SynthesisSession::node(int id) const {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) fail(ErrorCode::DeadNode, "no node " + std::to_string(id) + " in session " + id_);
  return it->second;
}

SynthesisSession start_session(const InitialPart& initial, const SynthesisModels& models, const SynthesisConfig& config,
                               std::string id) {
  if (!models.pcn || !models.implicit || !models.psn || !models.pcn->ready() || !models.implicit->ready() ||
      !models.psn->ready())
    fail(ErrorCode::ModelNotReady, "synthesis needs all three models trained");
  if (config.k < 1 || config.max_depth < 0 || config.random_attempts < 1)
    fail(ErrorCode::InvalidArgument, "invalid synthesis configuration");
  const int r = models.resolution();

  PlacedPart part;
  VoxelGrid placed;
  if (const auto* grid = std::get_if<VoxelGrid>(&initial)) {
    if (grid->empty() || grid->count_occupied() == 0) fail(ErrorCode::EmptyShape, "initial part is empty");
    auto source = resample(*grid, r);
    if (source.count_occupied() == 0) fail(ErrorCode::EmptyShape, "initial part vanishes at the working resolution");
    part.latent = models.pcn->encode(source);
    part.xf = models.pcn->localize(source);
    placed = apply_affine(source, part.xf);
    part.source = std::move(source);
    if (id.empty()) id = default_id(std::hash<std::string>{}(io::digest(io::encode_vgrid(*grid))));
  } else {
    const auto seed = std::get<RandomInitial>(initial).seed;
    const int d = models.implicit->latent_dim();
    bool found = false;
    // Uniform codes occasionally decode to nothing; redraw a bounded number of times.
    for (int attempt = 0; attempt < config.random_attempts && !found; ++attempt) {
      std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
      std::uniform_real_distribution<float> u(0.0f, 1.0f);
      LatentCode z{std::vector<float>(static_cast<std::size_t>(d))};
      for (float& v : z.values) v = u(rng);
      const auto geo = models.implicit->decode_field(z, r);
      if (geo.count_occupied() == 0) continue;
      part.latent = std::move(z);
      part.xf = models.pcn->localize(geo);
      placed = apply_affine(geo, part.xf);
      found = placed.count_occupied() > 0;
    }
    if (!found) fail(ErrorCode::EmptyShape, "no non-empty random initial part found");
    if (id.empty()) id = default_id(seed);
  }

  SynthesisSession s;
  s.id_ = std::move(id);
  s.config_ = config;
  s.models_ = models;
  AssemblyNode root;
  root.id = 0;
  root.assembly = std::move(placed);
  root.parts.push_back(std::move(part));
  s.nodes_.emplace(0, std::move(root));
  return s;
}

const SuggestionSet& propose(SynthesisSession& session, int node_id, std::uint64_t seed) {
  const auto& node = session.node(node_id);
  if (node.depth >= session.config_.max_depth)
    fail(ErrorCode::DepthLimit, "node " + std::to_string(node_id) + " is at the maximum depth");
  const auto& m = session.models_;
  const int r = m.resolution();
  const auto y = m.pcn->encode(node.assembly);
  SuggestionSet set;
  set.node_id = node_id;
  set.seed = seed;
  for (auto& z : m.psn->suggest(y, session.config_.k, seed)) {
    SuggestionItem item;
    // Localization reads the autoencoder reconstruction; the geometry that is
    // placed comes from the implicit decoder.
    item.xf = m.pcn->localize(m.pcn->decode(z));
    item.part_field = m.implicit->decode_field(z, r);
    item.placed = apply_affine(item.part_field, item.xf);
    item.preview_assembly = compose_assembly(node.assembly, item.placed);
    item.latent = std::move(z);
    set.items.push_back(std::move(item));
  }
  auto& slot = session.pending_[node_id];
  slot = std::move(set);
  return slot;
}

int select(SynthesisSession& session, int node_id, int index) {
  const auto& parent = session.node(node_id);
  const auto it = session.pending_.find(node_id);
  if (it == session.pending_.end())
    fail(ErrorCode::StaleSuggestions, "node " + std::to_string(node_id) + " has no open suggestion set");
  auto& items = it->second.items;
  if (index < 0 || index >= static_cast<int>(items.size()))
    fail(ErrorCode::IndexOutOfRange, "suggestion index " + std::to_string(index) + " outside 0.." +
                                         std::to_string(static_cast<int>(items.size()) - 1));
  auto& item = items[static_cast<std::size_t>(index)];
  AssemblyNode child;
  child.id = session.next_id_++;
  child.parent = node_id;
  child.depth = parent.depth + 1;
  child.parts = parent.parts;
  child.parts.push_back({std::move(item.latent), item.xf, std::nullopt});
  child.assembly = std::move(item.preview_assembly);
  child.proposal_seed = it->second.seed;
  child.choice = index;
  const int id = child.id;
  session.nodes_.emplace(id, std::move(child));
  session.pending_.erase(it);
  return id;
}

std::vector<SynthesisSession> auto_sample_sessions(const SynthesisModels& models, const SynthesisConfig& config,
                                                   int rounds, int n_shapes, std::uint64_t seed) {
  if (rounds < 1) fail(ErrorCode::InvalidArgument, "auto sampling needs at least one round");
  if (n_shapes < 1) fail(ErrorCode::InvalidArgument, "auto sampling needs at least one shape");
  if (rounds > config.max_depth) fail(ErrorCode::DepthLimit, "more rounds than the maximum depth allows");
  std::vector<SynthesisSession> out;
  for (int i = 0; i < n_shapes; ++i) {
    const auto shape_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    auto s = start_session(RandomInitial{shape_seed}, models, config, default_id(shape_seed));
    std::mt19937_64 pick(derive_seed(shape_seed, 1));
    int node = s.root_id();
    for (int round = 0; round < rounds; ++round) {
      const auto& set = propose(s, node, derive_seed(shape_seed, 100 + static_cast<std::uint64_t>(round)));
      std::uniform_int_distribution<int> choice(0, static_cast<int>(set.items.size()) - 1);
      node = select(s, node, choice(pick));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<AssemblyNode> auto_sample(const SynthesisModels& models, const SynthesisConfig& config, int rounds,
                                      int n_shapes, std::uint64_t seed) {
  std::vector<AssemblyNode> leaves;
  for (const auto& s : auto_sample_sessions(models, config, rounds, n_shapes, seed))
    leaves.push_back(s.nodes().rbegin()->second);
  return leaves;
}

VoxelGrid edit_initial(const VoxelGrid& part, const Vec3& axis_scales) { return scale_axes(part, axis_scales); }

VoxelGrid node_field(const SynthesisSession& session, int node_id, int resolution) {
  const auto& node = session.node(node_id);
  if (resolution < 2) fail(ErrorCode::InvalidArgument, "export resolution must be at least 2");
  std::vector<VoxelGrid> placed;
  for (const auto& part : node.parts)
    placed.push_back(apply_affine(part_geometry(session.models(), part, resolution), part.xf));
  return compose_assembly(placed);
}

TriangleMesh export_node(const SynthesisSession& session, int node_id, int resolution) {
  return marching_cubes(node_field(session, node_id, resolution), 0.5);
}

}  // namespace partsynth

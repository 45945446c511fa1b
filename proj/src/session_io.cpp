#include <algorithm>

#include "partsynth/error.hpp"
#include "partsynth/io.hpp"
#include "partsynth/synthesis.hpp"

namespace partsynth {

namespace {

using nlohmann::json;

json xf_to_json(const AffineTransform& xf) { return {{"scale", xf.scale}, {"translation", xf.translation}}; }

AffineTransform xf_from_json(const json& j) {
  AffineTransform xf;
  xf.scale = j.at("scale").get<double>();
  xf.translation = j.at("translation").get<Vec3>();
  xf.validate();
  return xf;
}

}  // namespace

json session_to_json(const SynthesisSession& session) {
  json nodes = json::array(), edges = json::array(), latents = json::array(), transforms = json::array(),
       seeds = json::array();
  for (const auto& [id, node] : session.nodes()) {
    json n{{"id", id}, {"depth", node.depth}, {"parent", node.parent ? json(*node.parent) : json(nullptr)}};
    if (node.parent) {
      edges.push_back({*node.parent, id});
      seeds.push_back({{"node", id}, {"proposal_seed", node.proposal_seed}, {"choice", node.choice}});
    }
    nodes.push_back(std::move(n));
    // Each node adds exactly one part to its parent's list.
    const auto& part = node.parts.back();
    json l{{"node", id}, {"values", part.latent.values}};
    if (part.source) l["source_vgrid"] = io::base64_encode(io::encode_vgrid(*part.source));
    latents.push_back(std::move(l));
    transforms.push_back({{"node", id}, {"xf", xf_to_json(part.xf)}});
  }
  json pending = json::array();
  for (const auto& [id, set] : session.pending()) pending.push_back({{"node", id}, {"seed", set.seed}});
  const auto& c = session.config();
  return {{"format", "partsynth-session"},
          {"version", 1},
          {"id", session.id()},
          {"config", {{"k", c.k}, {"max_depth", c.max_depth}, {"random_attempts", c.random_attempts}}},
          {"checkpoints", session.models().digests},
          {"nodes", nodes},
          {"edges", edges},
          {"latents", latents},
          {"transforms", transforms},
          {"seeds", seeds},
          {"pending", pending}};
}

SynthesisSession restore_session(const json& doc, const SynthesisModels& models) {
  SynthesisSession s;
  std::vector<std::pair<int, std::uint64_t>> reopen;
  try {
    if (doc.value("format", "") != "partsynth-session" || doc.value("version", 0) != 1)
      fail(ErrorCode::Format, "not a version 1 session document");
    if (doc.at("checkpoints") != models.digests)
      fail(ErrorCode::WrongModel, "session was created with different model checkpoints");
    s.id_ = doc.at("id").get<std::string>();
    const auto& c = doc.at("config");
    s.config_.k = c.at("k").get<int>();
    s.config_.max_depth = c.at("max_depth").get<int>();
    s.config_.random_attempts = c.at("random_attempts").get<int>();
    s.models_ = models;

    std::map<int, json> latents, transforms, seeds;
    for (const auto& l : doc.at("latents")) latents[l.at("node").get<int>()] = l;
    for (const auto& t : doc.at("transforms")) transforms[t.at("node").get<int>()] = t;
    for (const auto& sd : doc.at("seeds")) seeds[sd.at("node").get<int>()] = sd;

    const int r = models.resolution();
    // Node ids grow monotonically, so parents always precede children.
    std::vector<json> order(doc.at("nodes").begin(), doc.at("nodes").end());
    std::sort(order.begin(), order.end(), [](const json& a, const json& b) { return a.at("id") < b.at("id"); });
    for (const auto& n : order) {
      AssemblyNode node;
      node.id = n.at("id").get<int>();
      node.depth = n.at("depth").get<int>();
      PlacedPart part;
      const auto& l = latents.at(node.id);
      part.latent.values = l.at("values").get<std::vector<float>>();
      if (static_cast<int>(part.latent.dim()) != models.pcn->latent_dim())
        fail(ErrorCode::ShapeMismatch, "stored latent has the wrong dimension");
      if (l.contains("source_vgrid")) part.source = io::decode_vgrid(io::base64_decode(l.at("source_vgrid").get<std::string>()));
      part.xf = xf_from_json(transforms.at(node.id).at("xf"));
      const auto geometry = part.source ? resample(*part.source, r) : models.implicit->decode_field(part.latent, r);
      const auto placed = apply_affine(geometry, part.xf);
      if (n.at("parent").is_null()) {
        if (node.id != 0 || node.depth != 0) fail(ErrorCode::Format, "root must be node 0 at depth 0");
        node.assembly = placed;
      } else {
        node.parent = n.at("parent").get<int>();
        const auto& parent = s.nodes_.at(*node.parent);
        if (node.depth != parent.depth + 1) fail(ErrorCode::Format, "inconsistent node depth");
        node.parts = parent.parts;
        node.assembly = compose_assembly(parent.assembly, placed);
        node.proposal_seed = seeds.at(node.id).at("proposal_seed").get<std::uint64_t>();
        node.choice = seeds.at(node.id).at("choice").get<int>();
      }
      node.parts.push_back(std::move(part));
      s.next_id_ = std::max(s.next_id_, node.id + 1);
      s.nodes_.emplace(node.id, std::move(node));
    }
    if (!s.nodes_.contains(0)) fail(ErrorCode::Format, "session has no root");
    for (const auto& p : doc.value("pending", json::array()))
      reopen.emplace_back(p.at("node").get<int>(), p.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("malformed session document: ") + e.what());
  } catch (const std::out_of_range&) {
    fail(ErrorCode::Format, "session document references a missing node");
  }
  // Pending sets are pure functions of (node, seed) and are simply redrawn.
  for (const auto& [node, seed] : reopen) propose(s, node, seed);
  return s;
}

void save_session(const std::filesystem::path& path, const SynthesisSession& session) {
  io::write_file(path, session_to_json(session).dump(2) + "\n");
}

SynthesisSession load_session(const std::filesystem::path& path, const SynthesisModels& models) {
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Format, std::string("session file is not JSON: ") + e.what());
  }
  return restore_session(doc, models);
}

}  // namespace partsynth

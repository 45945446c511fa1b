#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "partsynth/error.hpp"
#include "partsynth/io.hpp"
#include "partsynth/synthesis.hpp"
#include "tiny_models.hpp"

using namespace partsynth;
using testing_support::tiny_models;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

VoxelGrid seat_part() {
  const auto data = make_dataset(Category::Chair, 5, 2, 16);
  return data.train.front().parts.front().normalized;
}

bool contains(const VoxelGrid& big, const VoxelGrid& small) {
  for (std::size_t n = 0; n < big.size(); ++n)
    if (small.values()[n] >= 0.5f && big.values()[n] < 0.5f) return false;
  return true;
}

}  // namespace

TEST(Synthesis, ModelsMustBeTrained) {
  EXPECT_EQ(code_of([] { SynthesisModels::make(nullptr, nullptr, nullptr); }), ErrorCode::ModelNotReady);
  const auto& m = tiny_models();
  auto fresh_psn = std::make_shared<SuggestionModel>(PsnKind::Mdn, m.psn->config());
  EXPECT_EQ(code_of([&] { SynthesisModels::make(m.pcn, m.implicit, fresh_psn); }), ErrorCode::ModelNotReady);
  EXPECT_EQ(code_of([] { start_session(RandomInitial{1}, SynthesisModels{}); }), ErrorCode::ModelNotReady);
  EXPECT_EQ(m.digests.size(), 4u);
}

TEST(Synthesis, ExplicitRootIsTheLocalizedPart) {
  const auto& m = tiny_models();
  const auto part = seat_part();
  const auto s = start_session(part, m);
  const auto& root = s.node(0);
  EXPECT_EQ(root.depth, 0);
  EXPECT_FALSE(root.parent);
  ASSERT_EQ(root.parts.size(), 1u);
  EXPECT_EQ(root.assembly, apply_affine(part, m.pcn->localize(part)));
  EXPECT_EQ(code_of([&] { start_session(VoxelGrid(16), m); }), ErrorCode::EmptyShape);
  // Other resolutions are resampled to the working one.
  EXPECT_EQ(start_session(resample(part, 32), m).node(0).assembly.resolution(), 16);
}

TEST(Synthesis, RandomRootIsReproducible) {
  const auto& m = tiny_models();
  const auto a = start_session(RandomInitial{5}, m);
  const auto b = start_session(RandomInitial{5}, m);
  EXPECT_EQ(a.node(0).assembly, b.node(0).assembly);
  EXPECT_EQ(a.id(), b.id());
  EXPECT_GT(a.node(0).assembly.count_occupied(), 0u);
}

TEST(Synthesis, ProposeFollowsTheSuggestionPipeline) {
  const auto& m = tiny_models();
  auto s = start_session(seat_part(), m);
  const auto set = propose(s, 0, 7);
  ASSERT_EQ(set.items.size(), 4u);
  const auto& root = s.node(0);
  const auto zs = m.psn->suggest(m.pcn->encode(root.assembly), 4, 7);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& it = set.items[i];
    EXPECT_EQ(it.latent, zs[i]);
    EXPECT_EQ(it.xf, m.pcn->localize(m.pcn->decode(zs[i])));
    EXPECT_EQ(it.part_field, m.implicit->decode_field(zs[i], 16));
    EXPECT_EQ(it.placed, apply_affine(it.part_field, it.xf));
    EXPECT_EQ(it.preview_assembly, compose_assembly(root.assembly, it.placed));
    EXPECT_TRUE(contains(it.preview_assembly, root.assembly));
  }
  const auto again = propose(s, 0, 7);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(again.items[i].preview_assembly, set.items[i].preview_assembly);
  EXPECT_EQ(code_of([&] { propose(s, 99, 1); }), ErrorCode::DeadNode);
}

TEST(Synthesis, SelectExtendsTheTreeOnce) {
  const auto& m = tiny_models();
  auto s = start_session(seat_part(), m);
  EXPECT_EQ(code_of([&] { select(s, 0, 0); }), ErrorCode::StaleSuggestions);
  const auto set = propose(s, 0, 3);
  const auto parent_before = s.node(0).assembly;
  EXPECT_EQ(code_of([&] { select(s, 0, 4); }), ErrorCode::IndexOutOfRange);
  EXPECT_EQ(code_of([&] { select(s, 0, -1); }), ErrorCode::IndexOutOfRange);
  const int child = select(s, 0, 2);
  EXPECT_EQ(s.node(child).depth, 1);
  EXPECT_EQ(*s.node(child).parent, 0);
  EXPECT_EQ(s.node(child).parts.size(), 2u);
  EXPECT_EQ(s.node(child).assembly, compose_assembly(parent_before, set.items[2].placed));
  EXPECT_EQ(s.node(0).assembly, parent_before);
  EXPECT_EQ(code_of([&] { select(s, 0, 2); }), ErrorCode::StaleSuggestions);
  EXPECT_TRUE(s.pending().empty());
}

TEST(Synthesis, DepthLimit) {
  const auto& m = tiny_models();
  SynthesisConfig cfg;
  cfg.max_depth = 1;
  auto s = start_session(seat_part(), m, cfg);
  propose(s, 0, 1);
  const int child = select(s, 0, 0);
  EXPECT_EQ(code_of([&] { propose(s, child, 2); }), ErrorCode::DepthLimit);
}

TEST(Synthesis, RandomOperationSequencesKeepTreeInvariants) {
  const auto& m = tiny_models();
  std::mt19937_64 rng(17);
  auto s = start_session(RandomInitial{3}, m);
  std::map<int, VoxelGrid> snapshot;
  for (int step = 0; step < 12; ++step) {
    std::vector<int> ids;
    for (const auto& [id, n] : s.nodes())
      if (n.depth < s.config().max_depth) ids.push_back(id);
    const int node = ids[rng() % ids.size()];
    if (rng() % 3 == 0 && s.pending().contains(node)) {
      select(s, node, static_cast<int>(rng() % 4));
    } else {
      propose(s, node, rng());
      if (rng() % 2 == 0) select(s, node, static_cast<int>(rng() % 4));
    }
    for (const auto& [id, n] : s.nodes()) {
      if (snapshot.contains(id)) EXPECT_EQ(snapshot[id], n.assembly) << "node " << id << " mutated";
      snapshot[id] = n.assembly;
      EXPECT_EQ(n.parts.size(), static_cast<std::size_t>(n.depth + 1));
      if (n.parent) {
        const auto& p = s.node(*n.parent);
        EXPECT_LT(p.id, id);
        EXPECT_EQ(n.depth, p.depth + 1);
        EXPECT_GE(n.assembly.count_occupied(), p.assembly.count_occupied());
      }
    }
    for (const auto& [id, set] : s.pending()) EXPECT_TRUE(s.nodes().contains(id));
  }
}

TEST(Synthesis, AutoSampleIsDeterministic) {
  const auto& m = tiny_models();
  const auto a = auto_sample(m, {}, 3, 4, 9);
  ASSERT_EQ(a.size(), 4u);
  for (const auto& leaf : a) {
    EXPECT_EQ(leaf.parts.size(), 4u);
    EXPECT_EQ(leaf.depth, 3);
  }
  const auto b = auto_sample(m, {}, 3, 4, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].assembly, b[i].assembly);
  EXPECT_EQ(code_of([&] { auto_sample(m, {}, 0, 4, 9); }), ErrorCode::InvalidArgument);
}

TEST(Synthesis, EditInitialRescalesAxes) {
  VoxelGrid slab(32);
  for (int i = 8; i < 24; ++i)
    for (int j = 12; j < 20; ++j)
      for (int k = 4; k < 28; ++k) slab(i, j, k) = 1.0f;
  EXPECT_EQ(edit_initial(slab, {1, 1, 1}), slab);
  const auto half = edit_initial(slab, {0.5, 1, 1});
  const auto b = occupied_bounds(half);
  EXPECT_NEAR((b.hi[0] - b.lo[0]) * 32, 8.0, 1.0);
  const auto three_quarter = occupied_bounds(edit_initial(slab, {0.75, 1, 1}));
  EXPECT_NEAR((three_quarter.hi[0] - three_quarter.lo[0]) * 32, 12.0, 1.0);
  EXPECT_EQ(code_of([&] { edit_initial(slab, {0.0, 1, 1}); }), ErrorCode::InvalidTransform);
}

TEST(Synthesis, ExportRedecodesParts) {
  const auto& m = tiny_models();
  auto s = start_session(seat_part(), m);
  EXPECT_EQ(io::to_obj(export_node(s, 0, 16)), io::to_obj(marching_cubes(s.node(0).assembly, 0.5)));
  propose(s, 0, 4);
  const int child = select(s, 0, 1);
  EXPECT_EQ(node_field(s, child, 16), s.node(child).assembly);
  const auto lo = export_node(s, child, 32), hi = export_node(s, child, 48);
  EXPECT_GT(lo.vertices.size(), 0u);
  EXPECT_GT(lo.faces.size(), 0u);
  EXPECT_GE(hi.vertices.size(), lo.vertices.size());
}

TEST(SessionIo, ReloadReproducesExports) {
  const auto& m = tiny_models();
  auto s = start_session(seat_part(), m);
  propose(s, 0, 1);
  const int a = select(s, 0, 3);
  propose(s, a, 2);
  const int b = select(s, a, 0);
  propose(s, 0, 5);
  propose(s, b, 6);

  const auto dir = std::filesystem::temp_directory_path() / "partsynth_session_io";
  std::filesystem::create_directories(dir);
  save_session(dir / "s.json", s);
  const auto back = load_session(dir / "s.json", m);
  EXPECT_EQ(back.id(), s.id());
  ASSERT_EQ(back.nodes().size(), s.nodes().size());
  for (const auto& [id, n] : s.nodes()) {
    EXPECT_EQ(back.node(id).assembly, n.assembly);
    EXPECT_EQ(io::to_obj(export_node(back, id, 24)), io::to_obj(export_node(s, id, 24)));
  }
  ASSERT_EQ(back.pending().size(), 2u);
  EXPECT_EQ(back.pending().at(b).items[1].preview_assembly, s.pending().at(b).items[1].preview_assembly);
  EXPECT_EQ(session_to_json(back), session_to_json(s));

  auto doc = session_to_json(s);
  doc["checkpoints"]["pcn"] = "0000000000000000";
  EXPECT_EQ(code_of([&] { restore_session(doc, m); }), ErrorCode::WrongModel);
  auto broken = session_to_json(s);
  broken["latents"].erase(1);
  EXPECT_EQ(code_of([&] { restore_session(broken, m); }), ErrorCode::Format);
  io::write_file(dir / "bad.json", "{nope");
  EXPECT_EQ(code_of([&] { load_session(dir / "bad.json", m); }), ErrorCode::Format);
  std::filesystem::remove_all(dir);
}

TEST(SessionIo, AutoSampledSessionsRoundTrip) {
  const auto& m = tiny_models(PsnKind::Mdn);
  for (const auto& s : auto_sample_sessions(m, {}, 2, 2, 4)) {
    const auto back = restore_session(session_to_json(s), m);
    const int leaf = s.nodes().rbegin()->first;
    EXPECT_EQ(io::to_obj(export_node(back, leaf, 20)), io::to_obj(export_node(s, leaf, 20)));
  }
}

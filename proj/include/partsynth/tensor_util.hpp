#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "partsynth/latent.hpp"
#include "partsynth/voxel_geometry.hpp"

namespace partsynth {

/// [N, 1, R, R, R] float tensor; depth/height/width follow the grid's i/j/k.
torch::Tensor grids_to_tensor(std::span<const VoxelGrid> grids);
torch::Tensor grid_to_tensor(const VoxelGrid& grid);
/// Accepts [R, R, R] or [1, 1, R, R, R]; values are clamped into [0, 1].
VoxelGrid tensor_to_grid(const torch::Tensor& t);

torch::Tensor latents_to_tensor(std::span<const LatentCode> codes);
LatentCode tensor_to_latent(const torch::Tensor& row);

/// Differentiable counterpart of apply_affine on a batch: volume [N,1,R,R,R],
/// scale [N], translation [N,3] in frame units. Uses zero padding outside
/// the grid, matching apply_affine exactly.
torch::Tensor warp_volume(const torch::Tensor& volume, const torch::Tensor& scale, const torch::Tensor& translation);

/// Frame coordinates of the R^3 voxel centers, [R^3, 3] in x-major order.
torch::Tensor voxel_centers(int resolution);

/// Seeds torch's global generator. Training code calls this before building
/// models so that initialization is reproducible.
void seed_torch(std::uint64_t seed);

/// Throws Divergence with `epoch` when `value` is not finite.
void check_finite(double value, int epoch, const char* what);

}  // namespace partsynth

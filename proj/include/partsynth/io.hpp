#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "partsynth/voxel_geometry.hpp"

namespace partsynth::io {

/// "VGRID\0\0\1" followed by little-endian uint32 R and R^3 float32 values.
inline constexpr std::string_view kVgridMagic{"VGRID\0\0\1", 8};

void write_vgrid(std::ostream& out, const VoxelGrid& grid);
VoxelGrid read_vgrid(std::istream& in);
std::string encode_vgrid(const VoxelGrid& grid);
VoxelGrid decode_vgrid(std::string_view bytes);
void save_vgrid(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid load_vgrid(const std::filesystem::path& path);

/// Wavefront OBJ with `v` and `f` records only (1-based indices).
std::string to_obj(const TriangleMesh& mesh);
TriangleMesh parse_obj(std::string_view text);
void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh load_obj(const std::filesystem::path& path);

/// CSV with header "x,y,z".
std::string to_csv(const PointCloud& cloud);
void save_csv(const std::filesystem::path& path, const PointCloud& cloud);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::string base64_encode(std::string_view bytes);
/// Throws ErrorCode::Format on characters outside the standard alphabet.
std::string base64_decode(std::string_view text);

/// FNV-1a 64-bit content digest as 16 hex characters.
std::string digest(std::string_view bytes);

}  // namespace partsynth::io

#include "partsynth/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "partsynth/error.hpp"

namespace partsynth::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string encode_vgrid(const VoxelGrid& grid) {
  std::string out(kVgridMagic);
  out.reserve(kVgridMagic.size() + 4 + grid.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(grid.resolution()));
  for (float v : grid.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

VoxelGrid decode_vgrid(std::string_view bytes) {
  if (bytes.size() < kVgridMagic.size() + 4 || bytes.substr(0, kVgridMagic.size()) != kVgridMagic) {
    fail(ErrorCode::Format, "not a VGRID/1 payload");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kVgridMagic.size();
  const std::uint32_t r = get_u32(p);
  if (r == 0 || r > 1024) fail(ErrorCode::Format, "VGRID resolution out of range: " + std::to_string(r));
  const std::size_t count = static_cast<std::size_t>(r) * r * r;
  if (bytes.size() != kVgridMagic.size() + 4 + count * 4) fail(ErrorCode::Format, "VGRID payload has wrong length");
  std::vector<float> values(count);
  p += 4;
  for (std::size_t n = 0; n < count; ++n) values[n] = std::bit_cast<float>(get_u32(p + 4 * n));
  try {
    return VoxelGrid(static_cast<int>(r), std::move(values));
  } catch (const Error& e) {
    fail(ErrorCode::Format, std::string("VGRID values invalid: ") + e.what());
  }
}

void write_vgrid(std::ostream& out, const VoxelGrid& grid) {
  const std::string bytes = encode_vgrid(grid);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

VoxelGrid read_vgrid(std::istream& in) {
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_vgrid(buf.str());
}

void save_vgrid(const std::filesystem::path& path, const VoxelGrid& grid) { write_file(path, encode_vgrid(grid)); }

VoxelGrid load_vgrid(const std::filesystem::path& path) { return decode_vgrid(read_file(path)); }

std::string to_obj(const TriangleMesh& mesh) {
  std::string out;
  out.reserve(mesh.vertices.size() * 32 + mesh.faces.size() * 24);
  char buf[96];
  for (const auto& v : mesh.vertices) {
    const int n = std::snprintf(buf, sizeof buf, "v %.6f %.6f %.6f\n", v[0], v[1], v[2]);
    out.append(buf, static_cast<std::size_t>(n));
  }
  for (const auto& f : mesh.faces) {
    const int n = std::snprintf(buf, sizeof buf, "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

TriangleMesh parse_obj(std::string_view text) {
  TriangleMesh mesh;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p[0] >> p[1] >> p[2])) fail(ErrorCode::Format, "bad vertex on OBJ line " + std::to_string(line_no));
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::array<std::int32_t, 3> f{};
      for (auto& idx : f) {
        std::string tok;
        if (!(ls >> tok)) fail(ErrorCode::Format, "bad face on OBJ line " + std::to_string(line_no));
        // Accept "i", "i/t" and "i/t/n" forms; only the vertex index matters.
        long v = 0;
        auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{}) fail(ErrorCode::Format, "bad face index on OBJ line " + std::to_string(line_no));
        idx = static_cast<std::int32_t>(v - 1);
      }
      mesh.faces.push_back(f);
    }
  }
  if (!mesh.valid()) fail(ErrorCode::Format, "OBJ has out-of-range or degenerate faces");
  return mesh;
}

void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh) { write_file(path, to_obj(mesh)); }

TriangleMesh load_obj(const std::filesystem::path& path) { return parse_obj(read_file(path)); }

std::string to_csv(const PointCloud& cloud) {
  std::string out = "x,y,z\n";
  char buf[96];
  for (const auto& p : cloud.points) {
    const int n = std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p[0], p[1], p[2]);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

void save_csv(const std::filesystem::path& path, const PointCloud& cloud) { write_file(path, to_csv(cloud)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t n = 0;
  for (; n + 2 < bytes.size(); n += 3) {
    const auto v = (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[n])) << 16) |
                   (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[n + 1])) << 8) |
                   static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[n + 2]));
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  const std::size_t rest = bytes.size() - n;
  if (rest > 0) {
    std::uint32_t v = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[n])) << 16;
    if (rest == 2) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[n + 1])) << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (std::size_t i = 0; i < kAlphabet.size(); ++i) lookup[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);

  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  std::size_t padding = 0;
  for (char ch : text) {
    if (ch == '=') {
      ++padding;
      continue;
    }
    if (ch == '\n' || ch == '\r') continue;
    const int v = lookup[static_cast<unsigned char>(ch)];
    if (v < 0 || padding > 0) fail(ErrorCode::Format, "invalid base64 input");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFFu));
    }
  }
  if (padding > 2 || bits >= 6) fail(ErrorCode::Format, "invalid base64 length");
  return out;
}

std::string digest(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace partsynth::io

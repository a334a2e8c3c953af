#include "xlrm/io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace xlrm::io {

namespace {

constexpr char kMagic[4] = {'X', 'L', 'R', 'M'};

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_tensor(const std::string& path, const std::vector<uint32_t>& dims, const float* data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kFormatVersion);
  write_u32(os, static_cast<uint32_t>(dims.size()));
  size_t count = 1;
  for (uint32_t d : dims) {
    write_u32(os, d);
    count *= d;
  }
  os.write(reinterpret_cast<const char*>(data), std::streamsize(count * sizeof(float)));
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad magic in " + path);
  const uint32_t version = read_u32(is);
  if (version != kFormatVersion)
    throw std::runtime_error("unsupported format version in " + path);
  const uint32_t ndim = read_u32(is);
  if (ndim == 0 || ndim > 8) throw std::runtime_error("bad dimension count in " + path);
  Tensor t;
  size_t count = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    t.dims.push_back(read_u32(is));
    count *= t.dims.back();
  }
  t.data.resize(count);
  is.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(count * sizeof(float)));
  if (!is) throw std::runtime_error("truncated tensor file: " + path);
  return t;
}

void write_volume(const std::string& path, const VolumeGrid& vol) {
  const uint32_t r = static_cast<uint32_t>(vol.resolution);
  write_tensor(path, {r, r, r}, vol.values.data());
}

VolumeGrid read_volume(const std::string& path) {
  Tensor t = read_tensor(path);
  if (t.dims.size() != 3 || t.dims[0] != t.dims[1] || t.dims[1] != t.dims[2])
    throw std::runtime_error("not a cubic volume: " + path);
  VolumeGrid vol(static_cast<int>(t.dims[0]));
  vol.values = std::move(t.data);
  return vol;
}

void write_projections(const std::string& path, const std::vector<float>& images, int views,
                       int rows, int cols) {
  write_tensor(path, {uint32_t(views), uint32_t(rows), uint32_t(cols)}, images.data());
}

Config parse_config(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
    cfg[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string geometry_to_text(const ScannerGeometry& geom) {
  std::ostringstream os;
  os.precision(17);
  os << "dso_mm = " << geom.dso_mm << "\n";
  os << "dsd_mm = " << geom.dsd_mm << "\n";
  os << "det_rows = " << geom.det_rows << "\n";
  os << "det_cols = " << geom.det_cols << "\n";
  os << "pixel_mm = " << geom.pixel_mm << "\n";
  os << "volume_extent_mm = " << geom.volume_extent_mm << "\n";
  os << "angles_deg = ";
  for (size_t i = 0; i < geom.angles_deg.size(); ++i) {
    if (i) os << ",";
    os << geom.angles_deg[i];
  }
  os << "\n";
  return os.str();
}

ScannerGeometry geometry_from_text(const std::string& text) {
  const Config cfg = parse_config(text);
  ScannerGeometry g;
  auto need = [&](const std::string& key) {
    auto it = cfg.find(key);
    if (it == cfg.end()) throw std::invalid_argument("geometry block missing key: " + key);
    return it->second;
  };
  g.dso_mm = std::stod(need("dso_mm"));
  g.dsd_mm = std::stod(need("dsd_mm"));
  g.det_rows = std::stoi(need("det_rows"));
  g.det_cols = std::stoi(need("det_cols"));
  g.pixel_mm = std::stod(need("pixel_mm"));
  g.volume_extent_mm = std::stod(need("volume_extent_mm"));
  g.angles_deg.clear();
  std::istringstream as(need("angles_deg"));
  std::string tok;
  while (std::getline(as, tok, ','))
    if (!trim(tok).empty()) g.angles_deg.push_back(std::stod(tok));
  return g;
}

namespace {

void write_chunk(std::ostream& os, const char type[4], const std::vector<uint8_t>& data) {
  auto be32 = [&](uint32_t v) {
    const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(static_cast<uint32_t>(data.size()));
  os.write(type, 4);
  if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), uInt(data.size()));
  be32(static_cast<uint32_t>(crc));
}

}  // namespace

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
  if (pixels.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("write_png_gray: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr(13);
  auto put32 = [&](uint8_t* p, uint32_t v) {
    p[0] = uint8_t(v >> 24), p[1] = uint8_t(v >> 16), p[2] = uint8_t(v >> 8), p[3] = uint8_t(v);
  };
  put32(&ihdr[0], uint32_t(width));
  put32(&ihdr[4], uint32_t(height));
  ihdr[8] = 8;  // bit depth
  ihdr[9] = 0;  // grayscale
  write_chunk(os, "IHDR", ihdr);

  // filter byte 0 per scanline, then one zlib stream
  std::vector<uint8_t> raw(static_cast<size_t>(height) * (width + 1));
  for (int r = 0; r < height; ++r) {
    raw[static_cast<size_t>(r) * (width + 1)] = 0;
    std::memcpy(&raw[static_cast<size_t>(r) * (width + 1) + 1],
                &pixels[static_cast<size_t>(r) * width], width);
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png compression failed");
  comp.resize(comp_len);
  write_chunk(os, "IDAT", comp);
  write_chunk(os, "IEND", {});
}

void write_slice_png(const std::string& path, const VolumeGrid& vol, int z) {
  const int r = vol.resolution;
  if (z < 0 || z >= r) throw std::invalid_argument("write_slice_png: slice out of range");
  std::vector<uint8_t> px(static_cast<size_t>(r) * r);
  for (int y = 0; y < r; ++y)
    for (int x = 0; x < r; ++x)
      px[static_cast<size_t>(y) * r + x] =
          static_cast<uint8_t>(std::clamp(vol.at(x, y, z), 0.0f, 1.0f) * 255.0f + 0.5f);
  write_png_gray(path, r, r, px);
}

}  // namespace xlrm::io

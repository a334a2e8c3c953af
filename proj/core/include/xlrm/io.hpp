#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xlrm/geometry.hpp"
#include "xlrm/phantom.hpp"

namespace xlrm::io {

// Binary tensor container: magic "XLRM", u32 format version, u32 ndim,
// ndim x u32 dims, little-endian f32 payload.
constexpr uint32_t kFormatVersion = 1;

void write_tensor(const std::string& path, const std::vector<uint32_t>& dims, const float* data);

struct Tensor {
  std::vector<uint32_t> dims;
  std::vector<float> data;
};
Tensor read_tensor(const std::string& path);

void write_volume(const std::string& path, const VolumeGrid& vol);
VolumeGrid read_volume(const std::string& path);

// view-major projection stack (views x rows x cols)
void write_projections(const std::string& path, const std::vector<float>& images, int views,
                       int rows, int cols);

// Flat `key = value` config text, one pair per line, '#' comments.
using Config = std::map<std::string, std::string>;
Config parse_config(const std::string& text);
Config load_config_file(const std::string& path);

// Geometry as a flat key=value block (angles comma-separated), with
// round-trip-exact doubles.
std::string geometry_to_text(const ScannerGeometry& geom);
ScannerGeometry geometry_from_text(const std::string& text);

// 8-bit grayscale PNG, one byte per pixel, row-major.
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels);

// Axial slice of a volume as PNG ([0,1] mapped to [0,255]).
void write_slice_png(const std::string& path, const VolumeGrid& vol, int z);

}  // namespace xlrm::io

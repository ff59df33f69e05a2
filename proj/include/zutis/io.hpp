#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "zutis/curation.hpp"
#include "zutis/grid.hpp"

namespace zutis {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- PNG

Image read_png_rgb(const fs::path& path);
void write_png_rgb(const fs::path& path, const Image& image);
Grid<std::uint16_t> read_png_gray16(const fs::path& path);
void write_png_gray16(const fs::path& path, const Grid<std::uint16_t>& map);
/// Any PNG; nonzero luminance becomes 1.
BinaryMask read_png_mask(const fs::path& path);
void write_png_mask(const fs::path& path, const BinaryMask& mask);

// ---------------------------------------------------------------- RLE

/// Row-major run lengths alternating background/foreground, starting with a
/// (possibly zero) background run.
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

RleMask rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const RleMask& rle);

// ---------------------------------------------------------------- text utils

std::string read_text(const fs::path& path);
/// Writes atomically enough for our purposes: temp file then rename.
void write_text(const fs::path& path, const std::string& content);
std::string format_float(double v);

// ---------------------------------------------------------------- stores

/// `<dir>/<id>.png`, `<dir>/<id>_inst.png` (16-bit ids), `<dir>/<id>.txt`
/// with one "<instance id> <category name>" line per instance.
void write_pseudo_sample(const fs::path& dir, const std::string& id, const PseudoSample& sample,
                         const std::vector<std::string>& category_names, const std::string& config_hash);
PseudoSample read_pseudo_sample(const fs::path& dir, const std::string& id,
                                const std::vector<std::string>& category_names);
/// Sample ids in a store, sorted.
std::vector<std::string> list_sample_ids(const fs::path& dir);

void write_archive_manifest(const fs::path& path, const Archive& archive, const IndexDataset& index,
                            const std::string& config_hash);
/// Category name, k and (locator, similarity) entries.
struct ArchiveManifest {
  std::string category;
  int k = 0;
  std::vector<std::string> locators;
  std::vector<double> similarities;
};
ArchiveManifest read_archive_manifest(const fs::path& path);

}  // namespace zutis

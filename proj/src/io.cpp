#include "zutis/io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "zutis/error.hpp"

namespace zutis {
namespace {

struct PngRead {
  png_image info;
  std::vector<std::uint8_t> buffer;
};

PngRead read_png(const fs::path& path, std::uint32_t format) {
  PngRead r;
  std::memset(&r.info, 0, sizeof r.info);
  r.info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&r.info, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + r.info.message);
  }
  r.info.format = format;
  r.buffer.resize(PNG_IMAGE_SIZE(r.info));
  if (!png_image_finish_read(&r.info, nullptr, r.buffer.data(), 0, nullptr)) {
    const std::string msg = r.info.message;
    png_image_free(&r.info);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return r;
}

void write_png(const fs::path& path, int h, int w, std::uint32_t format, const void* data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image info;
  std::memset(&info, 0, sizeof info);
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(w);
  info.height = static_cast<png_uint_32>(h);
  info.format = format;
  if (!png_image_write_to_file(&info, path.c_str(), 0, data, 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + info.message);
  }
}

}  // namespace

Image read_png_rgb(const fs::path& path) {
  PngRead r = read_png(path, PNG_FORMAT_RGB);
  Image img(static_cast<int>(r.info.height), static_cast<int>(r.info.width));
  std::copy(r.buffer.begin(), r.buffer.end(), img.bytes().begin());
  return img;
}

void write_png_rgb(const fs::path& path, const Image& image) {
  write_png(path, image.height(), image.width(), PNG_FORMAT_RGB, image.bytes().data());
}

Grid<std::uint16_t> read_png_gray16(const fs::path& path) {
  PngRead r = read_png(path, PNG_FORMAT_LINEAR_Y);
  Grid<std::uint16_t> g(static_cast<int>(r.info.height), static_cast<int>(r.info.width));
  std::memcpy(g.storage().data(), r.buffer.data(), g.size() * sizeof(std::uint16_t));
  return g;
}

void write_png_gray16(const fs::path& path, const Grid<std::uint16_t>& map) {
  write_png(path, map.height(), map.width(), PNG_FORMAT_LINEAR_Y, map.storage().data());
}

BinaryMask read_png_mask(const fs::path& path) {
  PngRead r = read_png(path, PNG_FORMAT_GRAY);
  BinaryMask m(static_cast<int>(r.info.height), static_cast<int>(r.info.width));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = r.buffer[i] != 0;
  return m;
}

void write_png_mask(const fs::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = mask[i] ? 255 : 0;
  write_png(path, mask.height(), mask.width(), PNG_FORMAT_GRAY, px.data());
}

RleMask rle_encode(const BinaryMask& mask) {
  RleMask r{mask.height(), mask.width(), {}};
  std::uint8_t cur = 0;
  std::uint32_t run = 0;
  for (auto v : mask.values()) {
    const std::uint8_t b = v != 0;
    if (b != cur) {
      r.counts.push_back(run);
      run = 0;
      cur = b;
    }
    ++run;
  }
  r.counts.push_back(run);
  return r;
}

BinaryMask rle_decode(const RleMask& rle) {
  BinaryMask m(rle.height, rle.width, 0);
  std::size_t pos = 0;
  std::uint8_t cur = 0;
  for (auto c : rle.counts) {
    if (pos + c > m.size()) throw DataError("RLE runs exceed the mask size");
    std::fill_n(m.storage().begin() + static_cast<std::ptrdiff_t>(pos), c, cur);
    pos += c;
    cur ^= 1;
  }
  if (pos != m.size()) throw DataError("RLE runs do not cover the mask");
  return m;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("failed writing " + path.string());
  }
  fs::rename(tmp, path);
}

std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_pseudo_sample(const fs::path& dir, const std::string& id, const PseudoSample& sample,
                         const std::vector<std::string>& category_names, const std::string& config_hash) {
  sample.validate();
  write_png_rgb(dir / (id + ".png"), sample.image);
  Grid<std::uint16_t> inst(sample.instance_map.height(), sample.instance_map.width());
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (sample.instance_map[i] > 0xffff) throw DataError("instance id does not fit 16 bits");
    inst[i] = static_cast<std::uint16_t>(sample.instance_map[i]);
  }
  write_png_gray16(dir / (id + "_inst.png"), inst);
  std::string txt = "config " + config_hash + "\n";
  for (const auto& p : sample.provenance) txt += "provenance " + p + "\n";
  for (const auto& [inst_id, cat] : sample.instance_categories) {
    if (cat < 0 || cat >= static_cast<int>(category_names.size())) throw DataError("category index out of range");
    txt += std::to_string(inst_id) + " " + category_names[static_cast<std::size_t>(cat)] + "\n";
  }
  write_text(dir / (id + ".txt"), txt);
}

PseudoSample read_pseudo_sample(const fs::path& dir, const std::string& id,
                                const std::vector<std::string>& category_names) {
  PseudoSample s;
  s.image = read_png_rgb(dir / (id + ".png"));
  const auto inst = read_png_gray16(dir / (id + "_inst.png"));
  s.instance_map = LabelMap(inst.height(), inst.width());
  for (std::size_t i = 0; i < inst.size(); ++i) s.instance_map[i] = inst[i];
  std::istringstream in(read_text(dir / (id + ".txt")));
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw DataError("malformed sidecar line in " + id + ": " + line);
    const std::string key = line.substr(0, sp), rest = line.substr(sp + 1);
    if (key == "config") continue;
    if (key == "provenance") {
      s.provenance.push_back(rest);
      continue;
    }
    const auto it = std::find(category_names.begin(), category_names.end(), rest);
    if (it == category_names.end()) throw DataError("unknown category '" + rest + "' in " + id);
    s.instance_categories[std::stoi(key)] = static_cast<int>(it - category_names.begin());
  }
  s.validate();
  return s;
}

std::vector<std::string> list_sample_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  if (!fs::exists(dir)) return ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    constexpr std::string_view suffix = "_inst.png";
    if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void write_archive_manifest(const fs::path& path, const Archive& archive, const IndexDataset& index,
                            const std::string& config_hash) {
  std::string txt = "config " + config_hash + "\ncategory " + archive.category_name + "\nk " + std::to_string(archive.k) +
                    "\nmembers " + std::to_string(archive.member_indices.size()) + "\n";
  for (std::size_t i = 0; i < archive.member_indices.size(); ++i) {
    txt += index.image_refs.at(static_cast<std::size_t>(archive.member_indices[i])) + "\t" +
           format_float(archive.similarities[i]) + "\n";
  }
  write_text(path, txt);
}

ArchiveManifest read_archive_manifest(const fs::path& path) {
  ArchiveManifest m;
  std::istringstream in(read_text(path));
  std::string line;
  long members = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab != std::string::npos) {
      m.locators.push_back(line.substr(0, tab));
      m.similarities.push_back(std::stod(line.substr(tab + 1)));
      continue;
    }
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp), val = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "category") {
      m.category = val;
    } else if (key == "k") {
      m.k = std::stoi(val);
    } else if (key == "members") {
      members = std::stol(val);
    } else if (key != "config") {
      throw DataError("unexpected manifest line in " + path.string() + ": " + line);
    }
  }
  if (members >= 0 && members != static_cast<long>(m.locators.size())) {
    throw DataError("archive manifest " + path.string() + " is truncated");
  }
  return m;
}

}  // namespace zutis

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "pixrec/data.hpp"
#include "pixrec/errors.hpp"

namespace pixrec {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1u << 30)) fail(std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + what, start);
    return v;
  }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw ParseError("pnm: " + msg + " at byte offset " + std::to_string(at));
  }

  std::size_t pos_ = 0;
  std::span<const std::uint8_t> bytes_;
};

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

}  // namespace

Image8 parse_pnm(std::span<const std::uint8_t> bytes) {
  HeaderReader r(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    r.fail("expected magic P5 or P6", 0);
  }
  Image8 img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  r.pos_ = 2;
  img.width = r.number("width");
  img.height = r.number("height");
  r.skip_space_and_comments();
  const std::size_t maxval_at = r.pos_;
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval), maxval_at);
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_])) {
    r.fail("expected single whitespace after maxval", r.pos_);
  }
  ++r.pos_;
  const std::size_t expected = img.width * img.height * img.channels;
  const std::size_t actual = bytes.size() - r.pos_;
  if (actual < expected) {
    r.fail("truncated payload: expected " + std::to_string(expected) + " bytes, got " +
               std::to_string(actual),
           r.pos_);
  }
  img.pixels.assign(bytes.begin() + static_cast<long>(r.pos_),
                    bytes.begin() + static_cast<long>(r.pos_ + expected));
  return img;
}

std::vector<std::uint8_t> encode_pnm(const Image8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ConfigError("pnm supports 1 or 3 channels, got " + std::to_string(img.channels));
  }
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Image8 load_image(const std::filesystem::path& path) {
  try {
    return parse_pnm(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_image(const std::filesystem::path& path, const Image8& img) {
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

Image8 to_image8(const QuantizedImage& q) {
  Image8 img{q.height, q.width, q.channels, std::vector<std::uint8_t>(q.data.size())};
  for (std::size_t i = 0; i < q.data.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>((2 * q.data[i] + 1) * 256 / (2 * q.levels));
  }
  return img;
}

QuantizedImage from_image8(const Image8& img, int levels) {
  if (levels < 2 || levels > 256) throw ConfigError("8-bit images support 2 <= K <= 256");
  QuantizedImage q(img.height, img.width, img.channels, levels);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    q.data[i] = static_cast<std::int32_t>(img.pixels[i]) * levels / 256;
  }
  return q;
}

RealImage image8_to_real(const Image8& img) {
  RealImage r(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) r.values[i] = img.pixels[i] / 255.0;
  return r;
}

std::vector<Image8> parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw ParseError("idx: header truncated at byte offset " + std::to_string(bytes.size()));
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != 0x00000803) {
    throw ParseError("idx: bad image magic " + std::to_string(magic) + " at byte offset 0");
  }
  const std::size_t n = be32(bytes, 4), rows = be32(bytes, 8), cols = be32(bytes, 12);
  const std::size_t expected = n * rows * cols;
  if (bytes.size() - 16 < expected) {
    throw ParseError("idx: truncated payload: expected " + std::to_string(expected) +
                     " bytes, got " + std::to_string(bytes.size() - 16) + " at byte offset 16");
  }
  std::vector<Image8> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].height = rows;
    out[i].width = cols;
    out[i].channels = 1;
    const auto* p = bytes.data() + 16 + i * rows * cols;
    out[i].pixels.assign(p, p + rows * cols);
  }
  return out;
}

std::vector<Image8> read_idx_images(const std::filesystem::path& path) {
  return parse_idx_images(read_file(path));
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 8) throw ParseError("idx: label header truncated");
  if (be32(bytes, 0) != 0x00000801) throw ParseError("idx: bad label magic at byte offset 0");
  const std::size_t n = be32(bytes, 4);
  if (bytes.size() - 8 < n) {
    throw ParseError("idx: truncated labels: expected " + std::to_string(n) + " bytes, got " +
                     std::to_string(bytes.size() - 8));
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(n)};
}

std::vector<std::pair<std::string, std::string>> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected input_path<TAB>target_path");
    }
    entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path,
                    std::span<const std::pair<std::string, std::string>> entries) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write manifest " + path.string());
  for (const auto& [a, b] : entries) out << a << '\t' << b << '\n';
}

PairedDataset load_dataset(const std::filesystem::path& manifest, int levels) {
  const auto base = manifest.parent_path();
  PairedDataset ds;
  for (const auto& [in, target] : read_manifest(manifest)) {
    const auto resolve = [&](const std::string& p) {
      const std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    ds.inputs.push_back(from_image8(load_image(resolve(in)), levels));
    ds.targets.push_back(from_image8(load_image(resolve(target)), levels));
    ds.tags.push_back(-1);
  }
  return ds;
}

void save_dataset(const PairedDataset& ds, const std::filesystem::path& dir,
                  const std::string& manifest_name) {
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string ext = ds.inputs[i].channels == 1 ? ".pgm" : ".ppm";
    const std::string stem = ds.split + "_" + std::to_string(i);
    save_image(dir / (stem + "_x" + ext), to_image8(ds.inputs[i]));
    save_image(dir / (stem + "_y" + ext), to_image8(ds.targets[i]));
    entries.emplace_back(stem + "_x" + ext, stem + "_y" + ext);
  }
  write_manifest(dir / manifest_name, entries);
}

}  // namespace pixrec

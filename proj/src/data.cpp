#include "salprune/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "salprune/image_io.hpp"
#include "salprune/rng.hpp"

namespace salprune {
namespace {

constexpr double kRed[3] = {0.85, 0.10, 0.10};
constexpr double kYellow[3] = {0.95, 0.82, 0.10};
constexpr double kBlue[3] = {0.10, 0.30, 0.85};
constexpr double kGreen[3] = {0.10, 0.62, 0.22};

SignSpec make_spec(int id, Outline o, const double (&c)[3], const char* name, Glyph g) {
  SignSpec s;
  s.class_id = id;
  s.outline = o;
  std::copy(std::begin(c), std::end(c), s.fill);
  s.color_name = name;
  s.glyph = g;
  return s;
}

const std::array<SignSpec, kMaxSyntheticClasses> kCatalog = {
    make_spec(0, Outline::circle, kRed, "red", Glyph::bar),
    make_spec(1, Outline::triangle, kYellow, "yellow", Glyph::dot),
    make_spec(2, Outline::square, kBlue, "blue", Glyph::cross),
    make_spec(3, Outline::octagon, kRed, "red", Glyph::none),
    make_spec(4, Outline::circle, kBlue, "blue", Glyph::dot),
    make_spec(5, Outline::triangle, kRed, "red", Glyph::none),
    make_spec(6, Outline::square, kGreen, "green", Glyph::bar),
    make_spec(7, Outline::octagon, kYellow, "yellow", Glyph::cross),
};

const char* outline_name(Outline o) {
  switch (o) {
    case Outline::circle: return "circle";
    case Outline::triangle: return "triangle";
    case Outline::square: return "square";
    case Outline::octagon: return "octagon";
  }
  return "?";
}

const char* glyph_name(Glyph g) {
  switch (g) {
    case Glyph::bar: return "bar";
    case Glyph::dot: return "dot";
    case Glyph::cross: return "cross";
    case Glyph::none: return "none";
  }
  return "?";
}

// Point-in-outline in unit sign coordinates (circumradius 1, y up).
bool inside_outline(Outline o, double u, double v) {
  switch (o) {
    case Outline::circle:
      return u * u + v * v <= 1.0;
    case Outline::square:
      return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case Outline::octagon: {
      const double a = std::cos(std::numbers::pi / 8.0);
      return std::abs(u) <= a && std::abs(v) <= a && (std::abs(u) + std::abs(v)) <= a * std::numbers::sqrt2;
    }
    case Outline::triangle: {
      // Vertices (0,1), (-sqrt3/2,-1/2), (sqrt3/2,-1/2).
      if (v < -0.5) return false;
      const double half = (1.0 - v) / std::numbers::sqrt3;
      return std::abs(u) <= half;
    }
  }
  return false;
}

bool inside_glyph(Glyph g, double u, double v) {
  switch (g) {
    case Glyph::bar:
      return std::abs(u) <= 0.55 && std::abs(v) <= 0.15;
    case Glyph::dot:
      return u * u + v * v <= 0.25 * 0.25;
    case Glyph::cross:
      return (std::abs(u) <= 0.55 && std::abs(v) <= 0.13) || (std::abs(v) <= 0.55 && std::abs(u) <= 0.13);
    case Glyph::none:
      return false;
  }
  return false;
}

void render_sign(const SignSpec& spec, SplitMix64& rng, double* img) {
  constexpr int S = kImageSize;
  constexpr std::size_t plane = static_cast<std::size_t>(S) * S;
  const double background = rng.uniform(0.35, 0.65);
  const double cx = (S - 1) / 2.0 + rng.uniform(-3.0, 3.0);
  const double cy = (S - 1) / 2.0 + rng.uniform(-3.0, 3.0);
  const double radius = 10.0 * rng.uniform(0.8, 1.2);
  const double angle = rng.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
  const double brightness = rng.uniform(0.8, 1.2);
  const double ca = std::cos(angle), sa = std::sin(angle);

  const bool dark_glyph = spec.fill[0] + spec.fill[1] + spec.fill[2] > 1.5;
  const double glyph_level = dark_glyph ? 0.05 : 0.95;
  constexpr double border = 0.95;
  constexpr double offsets[2] = {0.25, 0.75};

  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      double rgb[3] = {0, 0, 0};
      for (double oy : offsets) {
        for (double ox : offsets) {
          const double px = x + ox - 0.5 - cx;
          const double py = cy - (y + oy - 0.5);
          const double u = (ca * px + sa * py) / radius;
          const double v = (-sa * px + ca * py) / radius;
          double c[3] = {background, background, background};
          if (inside_outline(spec.outline, u, v)) {
            const double iu = u / 0.8, iv = v / 0.8;
            if (!inside_outline(spec.outline, iu, iv)) {
              c[0] = c[1] = c[2] = border;
            } else if (inside_glyph(spec.glyph, u, v)) {
              c[0] = c[1] = c[2] = glyph_level;
            } else {
              std::copy(std::begin(spec.fill), std::end(spec.fill), c);
            }
          }
          for (int k = 0; k < 3; ++k) rgb[k] += 0.25 * c[k];
        }
      }
      for (int k = 0; k < 3; ++k) img[k * plane + static_cast<std::size_t>(y) * S + x] = rgb[k] * brightness;
    }
  }
  for (std::size_t i = 0; i < 3 * plane; ++i) img[i] = std::clamp(img[i] + 0.05 * rng.gaussian(), 0.0, 1.0);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

std::span<const SignSpec> sign_catalog() { return kCatalog; }

Tensor Dataset::batch(std::span<const int> indices) const {
  const std::size_t per = images.size() / static_cast<std::size_t>(std::max(1, size()));
  Shape shape = images.shape();
  shape[0] = static_cast<int>(indices.size());
  std::vector<double> buf(per * indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = images.data().subspan(per * static_cast<std::size_t>(indices[k]), per);
    std::copy(src.begin(), src.end(), buf.begin() + static_cast<std::ptrdiff_t>(per * k));
  }
  return Tensor(std::move(shape), std::move(buf));
}

std::vector<int> Dataset::batch_labels(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

Dataset Dataset::head(int n) const {
  if (n >= size()) return *this;
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Dataset d = *this;
  d.images = batch(idx);
  d.labels.resize(static_cast<std::size_t>(n));
  return d;
}

Dataset generate_synthetic(int classes, int per_class, std::uint64_t seed, Split split) {
  if (classes < 2 || classes > kMaxSyntheticClasses) {
    throw DataError("synthetic class count must be in [2, 8], got " + std::to_string(classes));
  }
  if (per_class < 1) throw DataError("synthetic per-class count must be >= 1");
  Dataset d;
  d.split = split;
  d.seed = seed;
  for (int k = 0; k < classes; ++k) {
    const SignSpec& s = kCatalog[static_cast<std::size_t>(k)];
    d.class_names.push_back(std::string(outline_name(s.outline)) + "_" + s.color_name + "_" + glyph_name(s.glyph));
  }
  const int n = classes * per_class;
  d.images = Tensor({n, 3, kImageSize, kImageSize});
  d.labels.resize(static_cast<std::size_t>(n));
  const Stream stream = split == Split::train ? Stream::data_train : Stream::data_test;
  const std::size_t per = 3 * static_cast<std::size_t>(kImageSize) * kImageSize;
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;
    SplitMix64 rng(stream_seed(seed, stream, {static_cast<std::uint64_t>(i)}));
    render_sign(kCatalog[static_cast<std::size_t>(label)], rng, d.images.data().data() + per * i);
    d.labels[static_cast<std::size_t>(i)] = label;
  }
  return d;
}

std::vector<double> resize_bilinear(std::span<const double> src, int channels, int in_h, int in_w,
                                    int out_h, int out_w) {
  std::vector<double> out(static_cast<std::size_t>(channels) * out_h * out_w);
  auto coord = [](int dst, int in, int outn, int& i0, int& i1, double& t) {
    double s = (dst + 0.5) * static_cast<double>(in) / outn - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    t = s - i0;
  };
  for (int y = 0; y < out_h; ++y) {
    int y0, y1;
    double ty;
    coord(y, in_h, out_h, y0, y1, ty);
    for (int x = 0; x < out_w; ++x) {
      int x0, x1;
      double tx;
      coord(x, in_w, out_w, x0, x1, tx);
      for (int c = 0; c < channels; ++c) {
        const double* p = src.data() + static_cast<std::size_t>(c) * in_h * in_w;
        const double a = p[y0 * in_w + x0], b = p[y0 * in_w + x1];
        const double cc = p[y1 * in_w + x0], dd = p[y1 * in_w + x1];
        // a + t(b - a) keeps constant regions exactly constant.
        const double top = a + tx * (b - a);
        const double bot = cc + tx * (dd - cc);
        out[(static_cast<std::size_t>(c) * out_h + y) * out_w + x] = top + ty * (bot - top);
      }
    }
  }
  return out;
}

Dataset load_image_folder(const std::filesystem::path& root, const std::filesystem::path& labels_file,
                          Split split) {
  std::ifstream in(labels_file);
  if (!in) throw DataError("cannot open labels file " + labels_file.string());
  Dataset d;
  d.split = split;
  std::vector<std::vector<double>> images;
  std::string line;
  int lineno = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto comma = t.rfind(',');
    const std::string where = labels_file.string() + ":" + std::to_string(lineno);
    if (comma == std::string::npos || comma == 0) throw DataError(where + ": malformed line, expected 'relative_path,class_index'");
    const std::string rel = trim(t.substr(0, comma));
    const std::string lab = trim(t.substr(comma + 1));
    int label = -1;
    try {
      std::size_t used = 0;
      label = std::stoi(lab, &used);
      if (used != lab.size()) throw std::invalid_argument(lab);
    } catch (const std::exception&) {
      throw DataError(where + ": malformed class index '" + lab + "'");
    }
    if (label < 0) throw DataError(where + ": negative class index");
    const auto path = root / rel;
    if (!std::filesystem::exists(path)) throw DataError(where + ": missing image file " + path.string());
    Image8 img;
    try {
      img = read_image(path);
    } catch (const ImageError& e) {
      throw DataError(where + ": " + e.what());
    }
    std::vector<double> chw(3 * static_cast<std::size_t>(img.width) * img.height);
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c)
          chw[c * plane + static_cast<std::size_t>(y) * img.width + x] =
              img.at(x, y, img.channels == 1 ? 0 : c) / 255.0;
    if (img.width == kImageSize && img.height == kImageSize) {
      images.push_back(std::move(chw));
    } else {
      images.push_back(resize_bilinear(chw, 3, img.height, img.width, kImageSize, kImageSize));
    }
    d.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  if (d.labels.empty()) throw DataError("empty dataset: no samples listed in " + labels_file.string());
  for (int k = 0; k <= max_label; ++k) d.class_names.push_back("class" + std::to_string(k));
  const int n = static_cast<int>(images.size());
  std::vector<double> flat;
  flat.reserve(images.size() * images.front().size());
  for (auto& im : images) flat.insert(flat.end(), im.begin(), im.end());
  d.images = Tensor({n, 3, kImageSize, kImageSize}, std::move(flat));
  return d;
}

void export_image_folder(const Dataset& data, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::ofstream labels(root / "labels.txt", std::ios::trunc);
  if (!labels) throw DataError("cannot write " + (root / "labels.txt").string());
  const int S = data.images.dim(2);
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  for (int i = 0; i < data.size(); ++i) {
    Image8 img{S, S, 3, std::vector<std::uint8_t>(plane * 3)};
    const double* src = data.images.data().data() + 3 * plane * i;
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c)
        img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(src[c * plane + p], 0.0, 1.0) * 255.0));
    char name[32];
    std::snprintf(name, sizeof name, "%05d.ppm", i);
    write_pnm(root / name, img);
    labels << name << ',' << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

}  // namespace salprune

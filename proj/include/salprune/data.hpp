#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "salprune/tensor.hpp"

namespace salprune {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split : std::uint8_t { train, test };

const char* split_name(Split s);

struct Dataset {
  Tensor images;  // [N, 3, 32, 32], values in [0, 1]
  std::vector<int> labels;
  std::vector<std::string> class_names;
  Split split = Split::train;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(labels.size()); }
  int classes() const { return static_cast<int>(class_names.size()); }
  Tensor image(int i) const { return images.slice(i); }
  // Gathers the given sample indices into a batch tensor.
  Tensor batch(std::span<const int> indices) const;
  std::vector<int> batch_labels(std::span<const int> indices) const;
  // First `n` samples (or all when n >= size()).
  Dataset head(int n) const;
};

enum class Outline : std::uint8_t { circle, triangle, square, octagon };
enum class Glyph : std::uint8_t { bar, dot, cross, none };

struct SignSpec {
  int class_id = 0;
  Outline outline = Outline::circle;
  double fill[3] = {0, 0, 0};
  const char* color_name = "";
  Glyph glyph = Glyph::none;
};

inline constexpr int kMaxSyntheticClasses = 8;
inline constexpr int kImageSize = 32;

// The fixed table of synthetic sign classes; (outline, color, glyph) is unique per class.
std::span<const SignSpec> sign_catalog();

// K * per_class images, laid out with label i % K for image i. Each image is
// rendered with center jitter of +-3 px, scale in [0.8, 1.2], rotation of
// +-10 degrees, brightness in [0.8, 1.2] and additive Gaussian noise with
// sigma 0.05, then clipped to [0, 1]. Train and test draw from distinct streams.
Dataset generate_synthetic(int classes, int per_class, std::uint64_t seed, Split split);

// Labels file lines are `relative_path,class_index`; blank lines and lines
// starting with '#' are ignored. Images are bilinearly resized to 32x32 and
// grayscale inputs are replicated to three channels.
Dataset load_image_folder(const std::filesystem::path& root, const std::filesystem::path& labels_file,
                          Split split = Split::test);

// Half-pixel-centered bilinear resample of one [C, H, W] image.
std::vector<double> resize_bilinear(std::span<const double> src, int channels, int in_h, int in_w,
                                    int out_h, int out_w);

// Writes every image as a PPM plus a labels file that load_image_folder accepts.
void export_image_folder(const Dataset& data, const std::filesystem::path& root);

}  // namespace salprune

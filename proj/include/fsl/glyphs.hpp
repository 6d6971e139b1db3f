#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace fsl {

// Procedural stand-in for a handwritten character set: each class is a fixed
// arrangement of strokes, each image a jittered rendering of it.
struct GlyphConfig {
  std::size_t classes = 20;
  std::size_t per_class = 200;
  std::size_t image_size = 32;
  std::size_t train_classes = 12;  // the rest are test classes
  std::uint64_t seed = 0;
};

struct Stroke {
  // Polyline in the unit square.
  std::vector<std::pair<double, double>> points;
};

struct GlyphTemplate {
  std::vector<Stroke> strokes;
  double thickness = 0.07;
};

GlyphTemplate glyph_template(std::uint64_t seed, std::size_t class_index);

// Row-major [size x size] intensities in [0, 1], white strokes on black.
std::vector<float> render_glyph(const GlyphTemplate& t, std::uint64_t seed, std::size_t class_index,
                                std::size_t instance, std::size_t size);

// Writes <out>/gNN/NNNN.png for every class and instance, plus
// <out>/protocols.json with a `custom` protocol splitting the classes into
// the first `train_classes` and the rest. Returns the class folder names.
std::vector<std::string> write_glyph_dataset(const std::filesystem::path& out, const GlyphConfig& cfg);

}  // namespace fsl

#include "fsl/glyphs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <fmt/format.h>

#include "fsl/episodes.hpp"
#include "fsl/errors.hpp"
#include "fsl/image.hpp"
#include "fsl/rng.hpp"

namespace fs = std::filesystem;

namespace fsl {

namespace {

using Point = std::pair<double, double>;

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.first - a.first, dy = b.second - a.second;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.first - a.first) * dx + (p.second - a.second) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.first + t * dx - p.first, ey = a.second + t * dy - p.second;
  return std::sqrt(ex * ex + ey * ey);
}

Stroke random_stroke(Rng& rng) {
  Stroke s;
  const double kind = rng.uniform();
  if (kind < 0.45) {
    // straight bar
    s.points = {{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)}, {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)}};
  } else if (kind < 0.85) {
    // arc
    const double cx = rng.uniform(0.3, 0.7), cy = rng.uniform(0.3, 0.7), r = rng.uniform(0.12, 0.3);
    const double start = rng.uniform(0, 2 * std::numbers::pi), sweep = rng.uniform(1.2, 4.5);
    for (int i = 0; i <= 12; ++i) {
      const double a = start + sweep * i / 12.0;
      s.points.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
    }
  } else {
    // hook: two bars sharing a corner
    const Point corner{rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75)};
    s.points = {{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)}, corner,
                {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)}};
  }
  return s;
}

}  // namespace

GlyphTemplate glyph_template(std::uint64_t seed, std::size_t class_index) {
  // Classes draw most of their strokes from a small shared pool, so any two
  // classes are likely to have parts in common and only the combination
  // identifies the class.
  constexpr std::size_t kPool = 10;
  std::vector<Stroke> pool;
  Rng pool_rng = Rng::stream(seed, 0x900100);
  for (std::size_t i = 0; i < kPool; ++i) pool.push_back(random_stroke(pool_rng));

  Rng rng = Rng::stream(seed, 0x91a0000 + class_index);
  GlyphTemplate t;
  std::vector<std::size_t> order(kPool);
  for (std::size_t i = 0; i < kPool; ++i) order[i] = i;
  for (std::size_t i = 0; i < 2; ++i) {
    std::swap(order[i], order[i + rng.uniform_index(kPool - i)]);
    t.strokes.push_back(pool[order[i]]);
  }
  t.strokes.push_back(random_stroke(rng));
  t.thickness = rng.uniform(0.06, 0.09);
  return t;
}

std::vector<float> render_glyph(const GlyphTemplate& t, std::uint64_t seed, std::size_t class_index,
                                std::size_t instance, std::size_t size) {
  Rng rng = Rng::stream(seed ^ 0x5eed5eedULL, class_index * 1000003ULL + instance);
  const double angle = rng.uniform(-15, 15) * std::numbers::pi / 180;
  const double scale = rng.uniform(0.85, 1.15);
  const double tx = rng.uniform(-0.08, 0.08), ty = rng.uniform(-0.08, 0.08);
  const double thick = t.thickness * rng.uniform(0.8, 1.2);
  const double ca = std::cos(angle), sa = std::sin(angle);
  // Now and then a stroke is left out, like a hasty writer would.
  const std::size_t dropped = rng.uniform() < 0.2 ? rng.uniform_index(t.strokes.size()) : t.strokes.size();

  std::vector<std::vector<Point>> lines;
  for (std::size_t s = 0; s < t.strokes.size(); ++s) {
    std::vector<Point> pts;
    for (auto [x, y] : t.strokes[s].points) {
      x += rng.uniform(-0.05, 0.05);
      y += rng.uniform(-0.05, 0.05);
      const double u = x - 0.5, v = y - 0.5;
      pts.emplace_back(0.5 + tx + scale * (ca * u - sa * v), 0.5 + ty + scale * (sa * u + ca * v));
    }
    if (s != dropped) lines.push_back(std::move(pts));
  }

  std::vector<float> img(size * size);
  const double aa = 1.0 / double(size);  // one pixel of edge softening
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const Point p{(c + 0.5) / double(size), (r + 0.5) / double(size)};
      double d = 1e9;
      for (const auto& pts : lines) {
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) d = std::min(d, segment_distance(p, pts[i], pts[i + 1]));
      }
      const double ink = std::clamp((thick / 2 - d) / aa + 0.5, 0.0, 1.0);
      img[r * size + c] = float(std::clamp(ink + 0.08 * rng.normal(), 0.0, 1.0));
    }
  }
  return img;
}

std::vector<std::string> write_glyph_dataset(const fs::path& out, const GlyphConfig& cfg) {
  if (cfg.classes < 2 || cfg.per_class == 0 || cfg.train_classes == 0 || cfg.train_classes >= cfg.classes) {
    throw ContractError(fmt::format("glyph set needs >= 2 classes and 1 <= train classes < classes, got {} / {}",
                                    cfg.classes, cfg.train_classes));
  }
  if (cfg.image_size < 8) throw ContractError("glyph images must be at least 8 pixels wide");
  fs::create_directories(out);
  std::vector<std::string> names;
  const int width = cfg.classes > 100 ? 3 : 2;
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    names.push_back(fmt::format("g{:0{}}", k, width));
    const fs::path dir = out / names.back();
    fs::create_directories(dir);
    const GlyphTemplate t = glyph_template(cfg.seed, k);
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      write_gray_png(dir / fmt::format("{:04}.png", i), render_glyph(t, cfg.seed, k, i, cfg.image_size),
                     cfg.image_size, cfg.image_size);
    }
  }
  ProtocolManifest m;
  ProtocolEntry e;
  e.train_root = e.test_root = ".";
  e.train_classes.assign(names.begin(), names.begin() + std::ptrdiff_t(cfg.train_classes));
  e.test_classes.assign(names.begin() + std::ptrdiff_t(cfg.train_classes), names.end());
  m.entries.emplace("custom", std::move(e));
  m.save(out / "protocols.json");
  return names;
}

}  // namespace fsl

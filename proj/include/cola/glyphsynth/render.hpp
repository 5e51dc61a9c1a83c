#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "cola/core/errors.hpp"
#include "cola/core/image.hpp"
#include "cola/core/rng.hpp"
#include "cola/glyphsynth/glyph_spec.hpp"
#include "cola/glyphsynth/primitives.hpp"

namespace cola::glyph {

struct RenderStyle {
  double stroke_width = 3.0;  // pixels
  double jitter_sigma = 0.0;  // pixels, per-vertex Gaussian displacement
  double rotation = 0.0;      // degrees
  double scale = 1.0;         // fraction of the layout box
  bool is_template = true;
};

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct LeafPlacement {
  int leaf_index = 0;  // left-to-right leaf order in the tree
  int primitive = 0;
  Box region;          // region assigned by the layout operators
};

inline constexpr double kCanvasMargin = 0.08;

namespace detail {

inline void place(const GlyphTree& t, const Box& box, std::vector<LeafPlacement>& out) {
  if (t.is_leaf()) {
    out.push_back({static_cast<int>(out.size()), t.primitive, box});
    return;
  }
  const double r = t.ratio();
  switch (t.op) {
    case LayoutOp::left_right: {
      const double xm = box.x0 + r * box.width();
      place(t.children[0], {box.x0, box.y0, xm, box.y1}, out);
      place(t.children[1], {xm, box.y0, box.x1, box.y1}, out);
      break;
    }
    case LayoutOp::top_bottom: {
      const double ym = box.y0 + r * box.height();
      place(t.children[0], {box.x0, box.y0, box.x1, ym}, out);
      place(t.children[1], {box.x0, ym, box.x1, box.y1}, out);
      break;
    }
    case LayoutOp::enclosure: {
      place(t.children[0], box, out);
      const double iw = r * box.width(), ih = r * box.height();
      const double cx = (box.x0 + box.x1) / 2, cy = (box.y0 + box.y1) / 2;
      place(t.children[1], {cx - iw / 2, cy - ih / 2, cx + iw / 2, cy + ih / 2}, out);
      break;
    }
    case LayoutOp::overlay:
      place(t.children[0], box, out);
      place(t.children[1], box, out);
      break;
    case LayoutOp::leaf: break;
  }
}

}  // namespace detail

// Regions assigned to each leaf on a canvas x canvas image.
inline std::vector<LeafPlacement> layout(const GlyphTree& tree, int canvas) {
  const double m = kCanvasMargin * canvas;
  std::vector<LeafPlacement> out;
  detail::place(tree, {m, m, canvas - m, canvas - m}, out);
  return out;
}

// Stroke polylines of every leaf, in canvas pixel coordinates, after layout,
// jitter and the global similarity transform. The outer vector is indexed by
// leaf order.
inline std::vector<std::vector<std::vector<Point>>> place_strokes(const GlyphSpec& spec, const PrimitiveBank& bank,
                                                                  const RenderStyle& style, int canvas,
                                                                  std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x72656e64ULL));
  const auto leaves = layout(spec.tree, canvas);
  const double c = canvas / 2.0;
  const double th = style.rotation * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  std::vector<std::vector<std::vector<Point>>> out;
  for (const auto& leaf : leaves) {
    if (leaf.primitive < 0 || leaf.primitive >= static_cast<int>(bank.size()))
      throw InvalidArgument("glyph references primitive " + std::to_string(leaf.primitive) + " outside the bank");
    const auto& prim = bank.primitives[leaf.primitive];
    const double pad = style.stroke_width / 2 + 1.0;
    const Box& b = leaf.region;
    const double w = std::max(1.0, b.width() - 2 * pad), h = std::max(1.0, b.height() - 2 * pad);
    std::vector<std::vector<Point>> strokes;
    for (const auto& s : prim.strokes) {
      std::vector<Point> pts;
      for (const auto& q : s.points) {
        double x = b.x0 + pad + q.x * w;
        double y = b.y0 + pad + q.y * h;
        if (style.jitter_sigma > 0) {
          x += rng.normal() * style.jitter_sigma;
          y += rng.normal() * style.jitter_sigma;
        }
        const double dx = (x - c) * style.scale, dy = (y - c) * style.scale;
        pts.push_back({c + cs * dx - sn * dy, c + sn * dx + cs * dy});
      }
      strokes.push_back(std::move(pts));
    }
    out.push_back(std::move(strokes));
  }
  // Pull everything back inside the canvas if jitter/rotation pushed it out.
  const double lim = style.stroke_width / 2 + 1.0;
  double reach = 0;
  for (const auto& leaf : out)
    for (const auto& s : leaf)
      for (const auto& p : s) reach = std::max({reach, std::abs(p.x - c), std::abs(p.y - c)});
  if (reach > c - lim) {
    const double f = (c - lim) / reach;
    for (auto& leaf : out)
      for (auto& s : leaf)
        for (auto& p : s) p = {c + (p.x - c) * f, c + (p.y - c) * f};
  }
  return out;
}

// Grayscale rendering in [0, 1]. `only_leaf` >= 0 draws a single leaf, which
// the ink attribution checks use.
inline Image render(const GlyphSpec& spec, const PrimitiveBank& bank, const RenderStyle& style, int canvas,
                    std::uint64_t seed = 0, int only_leaf = -1) {
  if (canvas < 32) throw InvalidArgument("render: canvas must be >= 32, got " + std::to_string(canvas));
  Image img(canvas, canvas);
  const auto leaves = place_strokes(spec, bank, style, canvas, seed);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (only_leaf >= 0 && static_cast<int>(i) != only_leaf) continue;
    for (const auto& s : leaves[i]) draw_polyline(img, s, style.stroke_width);
  }
  return img;
}

// The n-th clean template style: no jitter or rotation; stroke width and
// scale cycle through a small template-safe range.
inline RenderStyle template_style(int n, int canvas) {
  const double unit = canvas / 80.0;
  RenderStyle s;
  s.is_template = true;
  s.stroke_width = unit * (2.6 + 1.0 * ((n * 7) % 10) / 9.0);
  s.scale = 1.0 - 0.06 * ((n * 3) % 10) / 9.0;
  return s;
}

// A randomized "handwritten" sample style. `shift` scales jitter and
// rotation (1 = the standard corpus).
inline RenderStyle sample_style(Rng& rng, int canvas, double shift = 1.0) {
  const double unit = canvas / 80.0;
  RenderStyle s;
  s.is_template = false;
  s.stroke_width = unit * rng.uniform(2.2, 4.2);
  s.jitter_sigma = shift * unit * rng.uniform(0.4, 1.2);
  s.rotation = shift * rng.uniform(-6.0, 6.0);
  s.scale = rng.uniform(0.86, 1.0);
  return s;
}

}  // namespace cola::glyph

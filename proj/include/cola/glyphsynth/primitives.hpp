#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cola/core/errors.hpp"
#include "cola/core/image.hpp"
#include "cola/core/rng.hpp"

namespace cola::glyph {

struct Point {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

enum class StrokeKind { line, polyline, arc };

inline std::string to_string(StrokeKind k) {
  switch (k) {
    case StrokeKind::line: return "line";
    case StrokeKind::polyline: return "polyline";
    case StrokeKind::arc: return "arc";
  }
  return "line";
}

inline StrokeKind stroke_kind_from_string(const std::string& s) {
  if (s == "line") return StrokeKind::line;
  if (s == "polyline") return StrokeKind::polyline;
  if (s == "arc") return StrokeKind::arc;
  throw InvalidArgument("unknown stroke kind '" + s + "'");
}

// A stroke is stored as its polyline in unit-square coordinates; arcs are
// pre-tessellated so rendering treats every stroke uniformly.
struct Stroke {
  StrokeKind kind = StrokeKind::line;
  std::vector<Point> points;
  friend bool operator==(const Stroke&, const Stroke&) = default;
};

struct PrimitiveShape {
  int id = 0;
  std::vector<Stroke> strokes;
  friend bool operator==(const PrimitiveShape&, const PrimitiveShape&) = default;
};

struct PrimitiveBank {
  std::vector<PrimitiveShape> primitives;
  std::uint64_t seed = 0;

  std::size_t size() const { return primitives.size(); }
  friend bool operator==(const PrimitiveBank&, const PrimitiveBank&) = default;
};

// Anti-aliased distance-field rasterization of one segment into `img`
// (ink combined with max).
inline void draw_segment(Image& img, Point a, Point b, double width) {
  const double half = width / 2.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - half - 1)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + half + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - half - 1)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + half + 1)));
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double qx = a.x + t * dx - px, qy = a.y + t * dy - py;
      const double d = std::sqrt(qx * qx + qy * qy);
      const double v = std::clamp(half + 0.5 - d, 0.0, 1.0);
      float& dst = img.at(x, y);
      dst = std::max(dst, static_cast<float>(v));
    }
}

inline void draw_polyline(Image& img, const std::vector<Point>& pts, double width) {
  if (pts.size() == 1) draw_segment(img, pts[0], pts[0], width);
  for (std::size_t i = 1; i < pts.size(); ++i) draw_segment(img, pts[i - 1], pts[i], width);
}

// Renders a primitive alone into a side x side cell, unit square mapped to
// the full cell.
inline Image render_primitive_cell(const PrimitiveShape& p, int side, double stroke_width) {
  Image img(side, side);
  for (const auto& s : p.strokes) {
    std::vector<Point> pts;
    pts.reserve(s.points.size());
    for (const auto& q : s.points) pts.push_back({q.x * side, q.y * side});
    draw_polyline(img, pts, stroke_width);
  }
  return img;
}

// Fraction of the cell covered by ink at the reference resolution.
inline double ink_coverage(const PrimitiveShape& p) {
  constexpr int side = 32;
  const Image cell = render_primitive_cell(p, side, 2.5);
  return cell.ink() / (side * side);
}

namespace detail {

inline Stroke random_stroke(Rng& rng) {
  Stroke s;
  const double u = rng.uniform();
  auto pt = [&rng] { return Point{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}; };
  if (u < 0.4) {
    s.kind = StrokeKind::line;
    Point a = pt(), b = pt();
    while (std::hypot(a.x - b.x, a.y - b.y) < 0.35) b = pt();
    s.points = {a, b};
  } else if (u < 0.7) {
    s.kind = StrokeKind::polyline;
    const int n = 3 + static_cast<int>(rng.below(2));
    s.points.push_back(pt());
    while (static_cast<int>(s.points.size()) < n) {
      Point q = pt();
      if (std::hypot(q.x - s.points.back().x, q.y - s.points.back().y) >= 0.25) s.points.push_back(q);
    }
  } else {
    s.kind = StrokeKind::arc;
    const double r = rng.uniform(0.18, 0.4);
    const double cx = rng.uniform(0.1 + r, 0.9 - r);
    const double cy = rng.uniform(0.1 + r, 0.9 - r);
    const double a0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double span = rng.uniform(0.5, 1.6) * std::numbers::pi;
    constexpr int segments = 10;
    for (int i = 0; i <= segments; ++i) {
      const double a = a0 + span * i / segments;
      s.points.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
  }
  return s;
}

inline double cell_distance(const Image& a, const Image& b) {
  double diff = 0, mass = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    diff += std::abs(a.pixels[i] - b.pixels[i]);
    mass += std::max(a.pixels[i], b.pixels[i]);
  }
  return mass > 0 ? diff / mass : 0.0;
}

}  // namespace detail

// Deterministic bank of `count` random stroke primitives. Each primitive has
// 1-3 strokes, 1%-60% ink coverage, and differs visibly from the others.
inline PrimitiveBank make_primitive_bank(std::uint64_t seed, int count) {
  if (count < 2) throw InvalidArgument("make_primitive_bank: count must be >= 2, got " + std::to_string(count));
  PrimitiveBank bank;
  bank.seed = seed;
  Rng rng(derive_seed(seed, 0x7072696dULL));
  std::vector<Image> cells;
  double min_distance = 0.55;
  int rejected = 0;
  while (static_cast<int>(bank.primitives.size()) < count) {
    PrimitiveShape p;
    p.id = static_cast<int>(bank.primitives.size());
    const int strokes = 1 + static_cast<int>(rng.below(3));
    for (int s = 0; s < strokes; ++s) p.strokes.push_back(detail::random_stroke(rng));
    const double cov = ink_coverage(p);
    bool ok = cov >= 0.01 && cov <= 0.60;
    Image cell;
    if (ok) {
      cell = render_primitive_cell(p, 24, 2.0);
      for (const auto& other : cells)
        if (detail::cell_distance(cell, other) < min_distance) {
          ok = false;
          break;
        }
    }
    if (!ok) {
      // Large banks cannot all be mutually far apart; relax gradually.
      if (++rejected % 200 == 0) min_distance *= 0.9;
      continue;
    }
    cells.push_back(std::move(cell));
    bank.primitives.push_back(std::move(p));
  }
  return bank;
}

inline nlohmann::json to_json(const PrimitiveBank& bank) {
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : bank.primitives) {
    nlohmann::json strokes = nlohmann::json::array();
    for (const auto& s : p.strokes) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& q : s.points) pts.push_back({q.x, q.y});
      strokes.push_back({{"kind", to_string(s.kind)}, {"points", pts}});
    }
    prims.push_back({{"id", p.id}, {"strokes", strokes}});
  }
  return {{"seed", bank.seed}, {"primitives", prims}};
}

inline PrimitiveBank primitive_bank_from_json(const nlohmann::json& j) {
  PrimitiveBank bank;
  bank.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jp : j.at("primitives")) {
    PrimitiveShape p;
    p.id = jp.at("id").get<int>();
    for (const auto& js : jp.at("strokes")) {
      Stroke s;
      s.kind = stroke_kind_from_string(js.at("kind").get<std::string>());
      for (const auto& q : js.at("points")) s.points.push_back({q.at(0).get<double>(), q.at(1).get<double>()});
      p.strokes.push_back(std::move(s));
    }
    if (p.id != static_cast<int>(bank.primitives.size()))
      throw InvalidArgument("primitive ids must be contiguous from 0");
    bank.primitives.push_back(std::move(p));
  }
  return bank;
}

}  // namespace cola::glyph

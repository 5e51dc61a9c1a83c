#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "cola/core/errors.hpp"
#include "cola/core/rng.hpp"
#include "cola/glyphsynth/glyph_spec.hpp"
#include "cola/glyphsynth/primitives.hpp"

namespace cola::glyph {

struct CharsetOptions {
  // Primitive popularity: a seeded random ranking splits primitives into a
  // common core (mild Zipf law over rank) and a rare tail with a small
  // constant weight, the long tail that rare-component splits need.
  double popularity_exponent = 0.5;
  double rare_fraction = 0.6;
  double rare_weight = 0.001;
  // Coverage floor: every primitive is forced into at least this many
  // classes (when the charset is large enough).
  int min_class_frequency = 2;
  // Relative weights for leaf counts 1..4.
  std::array<double, 4> leaf_count_weights = {0.04, 0.46, 0.38, 0.12};
  // Relative weights for left-right, top-bottom, enclosure, overlay.
  std::array<double, 4> op_weights = {0.36, 0.36, 0.16, 0.12};
};

namespace detail {

using Count = unsigned __int128;

inline Count sat_add(Count a, Count b) {
  const Count cap = static_cast<Count>(UINT64_MAX);
  return std::min(cap, a + b);
}
inline Count sat_mul(Count a, Count b) {
  const Count cap = static_cast<Count>(UINT64_MAX);
  if (a == 0 || b == 0) return 0;
  if (a > cap / b) return cap;
  return a * b;
}

}  // namespace detail

// Number of distinct canonical trees (leaf count <= 4, depth <= 3, ratios on
// the grid, overlay children unordered and distinct) over `primitives`
// leaves. Saturates at UINT64_MAX.
inline std::uint64_t tree_capacity(std::size_t primitives) {
  using detail::Count;
  // exact[L][d]: trees with exactly L leaves and depth <= d.
  Count exact[kMaxLeaves + 1][kMaxDepth + 1] = {};
  for (int d = 0; d <= kMaxDepth; ++d) exact[1][d] = primitives;
  const Count ordered_ops = 3 * kRatioPercents.size();
  for (int d = 1; d <= kMaxDepth; ++d)
    for (int L = 2; L <= kMaxLeaves; ++L) {
      Count total = 0;
      for (int a = 1; a < L; ++a)
        total = detail::sat_add(total, detail::sat_mul(ordered_ops, detail::sat_mul(exact[a][d - 1], exact[L - a][d - 1])));
      for (int a = 1; 2 * a < L; ++a)
        total = detail::sat_add(total, detail::sat_mul(exact[a][d - 1], exact[L - a][d - 1]));
      if (L % 2 == 0) {
        const Count n = exact[L / 2][d - 1];
        total = detail::sat_add(total, n > 0 ? detail::sat_mul(n, n - 1) / 2 : 0);
      }
      exact[L][d] = total;
    }
  Count cap = 0;
  for (int L = 1; L <= kMaxLeaves; ++L) cap = detail::sat_add(cap, exact[L][kMaxDepth]);
  return static_cast<std::uint64_t>(cap);
}

namespace detail {

inline std::size_t pick_weighted(Rng& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform() * cumulative.back();
  return static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
}

template <std::size_t N>
std::vector<double> cumulate(const std::array<double, N>& w) {
  std::vector<double> c(N);
  std::partial_sum(w.begin(), w.end(), c.begin());
  return c;
}

// Random tree shape with `leaves` leaves; leaf primitives are filled from
// `ids` in left-to-right order. Returns false when the draw is not canonical
// (overlay with identical children).
inline bool random_tree(Rng& rng, const std::vector<int>& ids, std::size_t& next, int leaves,
                        const std::vector<double>& op_cum, int id_width, GlyphTree& out) {
  if (leaves == 1) {
    out = GlyphTree::leaf(ids[next++]);
    return true;
  }
  const int a = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(leaves - 1)));
  GlyphTree left, right;
  if (!random_tree(rng, ids, next, a, op_cum, id_width, left)) return false;
  if (!random_tree(rng, ids, next, leaves - a, op_cum, id_width, right)) return false;
  const auto op = static_cast<LayoutOp>(1 + pick_weighted(rng, op_cum));
  const int ratio = kRatioPercents[rng.below(kRatioPercents.size())];
  if (op == LayoutOp::overlay) {
    const std::string sl = serialize(left, id_width), sr = serialize(right, id_width);
    if (sl == sr) return false;
    if (sr < sl) std::swap(left, right);
  }
  out = GlyphTree::node(op, ratio, std::move(left), std::move(right));
  return true;
}

}  // namespace detail

// Distinct glyph classes in canonical order (lexicographic over the postfix
// serialization); class_id equals the position in that order. Every
// primitive of the bank is used by at least one class.
inline std::vector<GlyphSpec> build_charset(const PrimitiveBank& bank, int num_classes, std::uint64_t seed,
                                            const CharsetOptions& opts = {}) {
  if (num_classes < 1) throw InvalidArgument("build_charset: num_classes must be >= 1");
  const std::size_t P = bank.size();
  if (P == 0) throw InvalidArgument("build_charset: empty primitive bank");
  const std::uint64_t cap = tree_capacity(P);
  if (static_cast<std::uint64_t>(num_classes) > cap) throw CapacityExceeded(static_cast<std::size_t>(num_classes), cap);
  if (static_cast<std::size_t>(num_classes) * kMaxLeaves < P)
    throw InvalidArgument("build_charset: " + std::to_string(num_classes) + " classes cannot cover " +
                          std::to_string(P) + " primitives");

  Rng rng(derive_seed(seed, 0x63686172ULL));
  const int id_width = id_width_for(P);

  std::vector<int> rank(P);
  std::iota(rank.begin(), rank.end(), 0);
  for (std::size_t i = P - 1; i > 0; --i) std::swap(rank[i], rank[rng.below(i + 1)]);
  const auto common = static_cast<std::size_t>(std::ceil(static_cast<double>(P) * (1.0 - opts.rare_fraction)));
  std::vector<double> weight(P);
  for (std::size_t r = 0; r < P; ++r)
    weight[rank[r]] = r < std::max<std::size_t>(common, 1) ? std::pow(static_cast<double>(r + 1), -opts.popularity_exponent)
                                                           : opts.rare_weight;
  std::vector<double> prim_cum(P);
  std::partial_sum(weight.begin(), weight.end(), prim_cum.begin());
  const auto leaf_cum = detail::cumulate(opts.leaf_count_weights);
  const auto op_cum = detail::cumulate(opts.op_weights);

  std::set<std::string> seen;
  std::vector<std::pair<std::string, GlyphTree>> found;

  auto try_add = [&](std::vector<int> ids, int leaves) {
    // Shuffle so forced primitives land at random leaf positions.
    for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
    std::size_t next = 0;
    GlyphTree t;
    if (!detail::random_tree(rng, ids, next, leaves, op_cum, id_width, t)) return false;
    std::string key = serialize(t, id_width);
    if (!seen.insert(key).second) return false;
    found.emplace_back(std::move(key), std::move(t));
    return true;
  };
  auto popular_ids = [&](std::vector<int> ids, int leaves) {
    while (static_cast<int>(ids.size()) < leaves) ids.push_back(static_cast<int>(detail::pick_weighted(rng, prim_cum)));
    return ids;
  };

  // Coverage pass: every primitive gets at least one class (and up to
  // min_class_frequency classes when there is room for them).
  const int rounds = std::max(1, std::min(opts.min_class_frequency,
                                          static_cast<int>(static_cast<std::size_t>(num_classes) / P)));
  std::vector<int> uncovered;
  for (int r = 0; r < rounds; ++r) {
    std::vector<int> round(P);
    std::iota(round.begin(), round.end(), 0);
    for (std::size_t i = P - 1; i > 0; --i) std::swap(round[i], round[rng.below(i + 1)]);
    uncovered.insert(uncovered.begin(), round.begin(), round.end());
  }
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * static_cast<std::size_t>(num_classes) + 100000;
  while (!uncovered.empty()) {
    const std::size_t slots = static_cast<std::size_t>(num_classes) - found.size();
    const int need = static_cast<int>((uncovered.size() + slots - 1) / slots);
    int leaves = 1 + static_cast<int>(detail::pick_weighted(rng, leaf_cum));
    leaves = std::max(leaves, need);
    std::vector<int> forced(uncovered.end() - need, uncovered.end());
    if (try_add(popular_ids(forced, leaves), leaves)) uncovered.resize(uncovered.size() - need);
    if (++attempts > max_attempts) throw CapacityExceeded(static_cast<std::size_t>(num_classes), found.size());
  }
  while (static_cast<int>(found.size()) < num_classes) {
    const int leaves = 1 + static_cast<int>(detail::pick_weighted(rng, leaf_cum));
    try_add(popular_ids({}, leaves), leaves);
    if (++attempts > max_attempts) throw CapacityExceeded(static_cast<std::size_t>(num_classes), found.size());
  }

  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<GlyphSpec> out;
  out.reserve(found.size());
  for (auto& [key, tree] : found) out.push_back(make_spec(static_cast<int>(out.size()), std::move(tree)));
  return out;
}

// Number of classes containing each primitive (a class counts once even if
// it uses the primitive twice).
inline std::vector<int> primitive_class_frequency(const std::vector<GlyphSpec>& charset, std::size_t primitives) {
  std::vector<int> freq(primitives, 0);
  for (const auto& g : charset)
    for (int p : g.distinct_components()) {
      if (p < 0 || static_cast<std::size_t>(p) >= primitives) throw InvalidArgument("primitive id out of range");
      ++freq[p];
    }
  return freq;
}

}  // namespace cola::glyph

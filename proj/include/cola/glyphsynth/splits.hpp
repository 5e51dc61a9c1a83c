#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cola/core/errors.hpp"
#include "cola/glyphsynth/charset.hpp"
#include "cola/glyphsynth/glyph_spec.hpp"

namespace cola::glyph {

enum class SplitKind { character_zeroshot, component_zeroshot };

struct SplitManifest {
  std::vector<int> train_classes;
  std::vector<int> test_classes;
  SplitKind kind = SplitKind::character_zeroshot;
  int m = 0;  // character_zeroshot
  int k = 0;  // character_zeroshot
  int n = 0;  // component_zeroshot
  std::uint64_t generator_seed = 0;

  // Canonical file name, e.g. "char_120_80" or "comp_3".
  std::string name() const {
    if (kind == SplitKind::character_zeroshot) return "char_" + std::to_string(m) + "_" + std::to_string(k);
    return "comp_" + std::to_string(n);
  }

  double chance_level() const { return test_classes.empty() ? 0.0 : 1.0 / static_cast<double>(test_classes.size()); }

  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

inline void check_disjoint(const SplitManifest& s) {
  std::set<int> train(s.train_classes.begin(), s.train_classes.end());
  for (int c : s.test_classes)
    if (train.count(c)) throw InvalidArgument("split " + s.name() + ": class " + std::to_string(c) + " is in both train and test");
}

// Train on the first m classes of the canonical order, test on the last k.
inline SplitManifest make_character_zeroshot_split(const std::vector<GlyphSpec>& charset, int m, int k,
                                                   std::uint64_t generator_seed = 0) {
  const int total = static_cast<int>(charset.size());
  if (m < 0 || k < 0 || m + k > total)
    throw InvalidArgument("character split: m + k = " + std::to_string(m + k) + " exceeds charset size " +
                          std::to_string(total));
  SplitManifest s;
  s.kind = SplitKind::character_zeroshot;
  s.m = m;
  s.k = k;
  s.generator_seed = generator_seed;
  for (int i = 0; i < m; ++i) s.train_classes.push_back(charset[i].class_id);
  for (int i = total - k; i < total; ++i) s.test_classes.push_back(charset[i].class_id);
  return s;
}

// Classes using any primitive that appears in fewer than n classes of the
// full charset go to test, all others to train.
inline SplitManifest make_component_zeroshot_split(const std::vector<GlyphSpec>& charset, std::size_t primitives, int n,
                                                   std::uint64_t generator_seed = 0) {
  if (n < 1) throw InvalidArgument("component split: n must be >= 1, got " + std::to_string(n));
  const auto freq = primitive_class_frequency(charset, primitives);
  SplitManifest s;
  s.kind = SplitKind::component_zeroshot;
  s.n = n;
  s.generator_seed = generator_seed;
  for (const auto& g : charset) {
    const auto comps = g.distinct_components();
    const bool rare = std::any_of(comps.begin(), comps.end(), [&](int p) { return freq[p] < n; });
    (rare ? s.test_classes : s.train_classes).push_back(g.class_id);
  }
  if (s.train_classes.empty() || s.test_classes.empty())
    throw DegenerateSplit(s.train_classes.size(), s.test_classes.size());
  return s;
}

// Parses "char:M:K" or "comp:N".
inline SplitManifest make_split_from_spec(const std::string& text, const std::vector<GlyphSpec>& charset,
                                          std::size_t primitives, std::uint64_t generator_seed) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(':', start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw InvalidArgument("split '" + text + "': '" + s + "' is not an integer");
    }
  };
  if (parts.size() == 3 && parts[0] == "char")
    return make_character_zeroshot_split(charset, to_int(parts[1]), to_int(parts[2]), generator_seed);
  if (parts.size() == 2 && parts[0] == "comp")
    return make_component_zeroshot_split(charset, primitives, to_int(parts[1]), generator_seed);
  throw InvalidArgument("split '" + text + "' must look like char:M:K or comp:N");
}

inline nlohmann::json to_json(const SplitManifest& s) {
  nlohmann::json kind;
  if (s.kind == SplitKind::character_zeroshot)
    kind = {{"type", "character_zeroshot"}, {"m", s.m}, {"k", s.k}};
  else
    kind = {{"type", "component_zeroshot"}, {"n", s.n}};
  return {{"train_classes", s.train_classes},
          {"test_classes", s.test_classes},
          {"kind", kind},
          {"generator_seed", s.generator_seed}};
}

inline SplitManifest split_from_json(const nlohmann::json& j) {
  SplitManifest s;
  s.train_classes = j.at("train_classes").get<std::vector<int>>();
  s.test_classes = j.at("test_classes").get<std::vector<int>>();
  s.generator_seed = j.at("generator_seed").get<std::uint64_t>();
  const auto& kind = j.at("kind");
  const auto type = kind.at("type").get<std::string>();
  if (type == "character_zeroshot") {
    s.kind = SplitKind::character_zeroshot;
    s.m = kind.at("m").get<int>();
    s.k = kind.at("k").get<int>();
  } else if (type == "component_zeroshot") {
    s.kind = SplitKind::component_zeroshot;
    s.n = kind.at("n").get<int>();
  } else {
    throw InvalidArgument("unknown split kind '" + type + "'");
  }
  check_disjoint(s);
  return s;
}

}  // namespace cola::glyph

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cola/core/errors.hpp"
#include "cola/core/image.hpp"
#include "cola/core/rng.hpp"
#include "cola/glyphsynth/charset.hpp"
#include "cola/glyphsynth/primitives.hpp"
#include "cola/glyphsynth/render.hpp"
#include "cola/glyphsynth/splits.hpp"

namespace cola::glyph {

struct CorpusConfig {
  int num_classes = 200;
  int num_primitives = 20;
  int canvas = 80;
  int templates_per_class = 10;
  int train_samples_per_class = 50;
  int test_samples_per_class = 20;
  std::uint64_t seed = 0;
  double style_shift = 1.0;
  std::vector<std::string> splits;  // "char:M:K" / "comp:N"
  CharsetOptions charset;
};

inline nlohmann::json to_json(const CorpusConfig& c) {
  return {{"num_classes", c.num_classes},
          {"num_primitives", c.num_primitives},
          {"canvas", c.canvas},
          {"templates_per_class", c.templates_per_class},
          {"train_samples_per_class", c.train_samples_per_class},
          {"test_samples_per_class", c.test_samples_per_class},
          {"seed", c.seed},
          {"style_shift", c.style_shift},
          {"splits", c.splits},
          {"popularity_exponent", c.charset.popularity_exponent},
          {"rare_fraction", c.charset.rare_fraction},
          {"rare_weight", c.charset.rare_weight},
          {"min_class_frequency", c.charset.min_class_frequency}};
}

inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.num_primitives = j.value("num_primitives", c.num_primitives);
  c.canvas = j.value("canvas", c.canvas);
  c.templates_per_class = j.value("templates_per_class", c.templates_per_class);
  c.train_samples_per_class = j.value("train_samples_per_class", c.train_samples_per_class);
  c.test_samples_per_class = j.value("test_samples_per_class", c.test_samples_per_class);
  c.seed = j.value("seed", c.seed);
  c.style_shift = j.value("style_shift", c.style_shift);
  c.splits = j.value("splits", c.splits);
  c.charset.popularity_exponent = j.value("popularity_exponent", c.charset.popularity_exponent);
  c.charset.rare_fraction = j.value("rare_fraction", c.charset.rare_fraction);
  c.charset.rare_weight = j.value("rare_weight", c.charset.rare_weight);
  c.charset.min_class_frequency = j.value("min_class_frequency", c.charset.min_class_frequency);
  return c;
}

struct Corpus {
  CorpusConfig config;
  PrimitiveBank bank;
  std::vector<GlyphSpec> classes;
  std::map<std::string, SplitManifest> splits;
  std::vector<std::vector<Image>> samples;    // [class_id][sample_id]
  std::vector<std::vector<Image>> templates;  // [class_id][n]

  const SplitManifest& split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw InvalidArgument("corpus has no split named '" + name + "'");
    return it->second;
  }
};

// N clean template renderings of one class.
inline std::vector<Image> render_templates(const GlyphSpec& spec, const PrimitiveBank& bank, int N, int canvas) {
  if (N < 1) throw InvalidArgument("render_templates: N must be >= 1");
  std::vector<Image> out;
  for (int n = 0; n < N; ++n) out.push_back(quantize8(render(spec, bank, template_style(n, canvas), canvas)));
  return out;
}

inline std::vector<std::vector<Image>> render_templates(const std::vector<GlyphSpec>& charset, const PrimitiveBank& bank,
                                                        int N, int canvas) {
  std::vector<std::vector<Image>> out;
  for (const auto& g : charset) out.push_back(render_templates(g, bank, N, canvas));
  return out;
}

inline Image render_sample(const GlyphSpec& spec, const PrimitiveBank& bank, int canvas, std::uint64_t corpus_seed,
                           int sample_id, double style_shift = 1.0) {
  const std::uint64_t s = derive_seed(derive_seed(corpus_seed, 0x73616d70ULL + static_cast<std::uint64_t>(spec.class_id)),
                                      static_cast<std::uint64_t>(sample_id));
  Rng rng(s);
  const RenderStyle style = sample_style(rng, canvas, style_shift);
  return quantize8(render(spec, bank, style, canvas, rng.next_u64()));
}

// Builds the whole corpus in memory. Images are snapped to 8 bits so that an
// in-memory corpus and one read back from disk are identical.
inline Corpus generate_corpus(const CorpusConfig& cfg) {
  Corpus c;
  c.config = cfg;
  c.bank = make_primitive_bank(cfg.seed, cfg.num_primitives);
  c.classes = build_charset(c.bank, cfg.num_classes, cfg.seed, cfg.charset);
  std::set<int> train_any;
  for (const auto& text : cfg.splits) {
    auto s = make_split_from_spec(text, c.classes, c.bank.size(), cfg.seed);
    train_any.insert(s.train_classes.begin(), s.train_classes.end());
    c.splits[s.name()] = std::move(s);
  }
  c.templates = render_templates(c.classes, c.bank, cfg.templates_per_class, cfg.canvas);
  for (const auto& g : c.classes) {
    const int count = train_any.count(g.class_id) ? cfg.train_samples_per_class : cfg.test_samples_per_class;
    std::vector<Image> imgs;
    imgs.reserve(count);
    for (int i = 0; i < count; ++i) imgs.push_back(render_sample(g, c.bank, cfg.canvas, cfg.seed, i, cfg.style_shift));
    c.samples.push_back(std::move(imgs));
  }
  return c;
}

namespace detail {

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write '" + p.string() + "'");
  os << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read '" + p.string() + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in '" + p.string() + "': " + e.what());
  }
}

}  // namespace detail

// Layout: classes.json, primitives.json, corpus.json, splits/{name}.json,
// images/{class_id}/{sample_id}.png, templates/{class_id}/{n}.png
inline void write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "splits");
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& g : c.classes) classes.push_back(to_json(g));
  detail::write_json(dir / "classes.json", classes);
  detail::write_json(dir / "primitives.json", to_json(c.bank));
  detail::write_json(dir / "corpus.json", to_json(c.config));
  for (const auto& [name, s] : c.splits) detail::write_json(dir / "splits" / (name + ".json"), to_json(s));
  for (std::size_t cls = 0; cls < c.classes.size(); ++cls) {
    const auto img_dir = dir / "images" / std::to_string(cls);
    const auto tpl_dir = dir / "templates" / std::to_string(cls);
    fs::create_directories(img_dir);
    fs::create_directories(tpl_dir);
    for (std::size_t i = 0; i < c.samples[cls].size(); ++i)
      write_png(img_dir / (std::to_string(i) + ".png"), c.samples[cls][i]);
    for (std::size_t n = 0; n < c.templates[cls].size(); ++n)
      write_png(tpl_dir / (std::to_string(n) + ".png"), c.templates[cls][n]);
  }
}

inline std::vector<Image> read_numbered_pngs(const std::filesystem::path& dir) {
  std::vector<Image> out;
  if (!std::filesystem::exists(dir)) return out;
  for (int i = 0;; ++i) {
    const auto p = dir / (std::to_string(i) + ".png");
    if (!std::filesystem::exists(p)) break;
    out.push_back(read_png(p));
  }
  return out;
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "classes.json")) throw StateError("no corpus at '" + dir.string() + "' (classes.json missing)");
  Corpus c;
  if (fs::exists(dir / "corpus.json")) c.config = corpus_config_from_json(detail::read_json(dir / "corpus.json"));
  c.bank = primitive_bank_from_json(detail::read_json(dir / "primitives.json"));
  for (const auto& j : detail::read_json(dir / "classes.json")) c.classes.push_back(glyph_spec_from_json(j));
  for (std::size_t i = 0; i < c.classes.size(); ++i)
    if (c.classes[i].class_id != static_cast<int>(i)) throw InvalidArgument("classes.json: class ids must be 0..n-1 in order");
  if (fs::exists(dir / "splits"))
    for (const auto& e : fs::directory_iterator(dir / "splits"))
      if (e.path().extension() == ".json") c.splits[e.path().stem().string()] = split_from_json(detail::read_json(e.path()));
  for (std::size_t cls = 0; cls < c.classes.size(); ++cls) {
    c.samples.push_back(read_numbered_pngs(dir / "images" / std::to_string(cls)));
    c.templates.push_back(read_numbered_pngs(dir / "templates" / std::to_string(cls)));
  }
  if (!c.templates.empty() && !c.templates[0].empty()) c.config.canvas = c.templates[0][0].width;
  return c;
}

}  // namespace cola::glyph

#pragma once

#include <filesystem>
#include <numeric>
#include <vector>

#include "cola/evalkit/visualize.hpp"
#include "cola/evalkit/zero_shot.hpp"

namespace cola::evalkit {

struct RetrievalResult {
  std::size_t query;                 // index into the candidate pool
  std::vector<matcher::Ranked> top;  // best first
};

struct CrossStyleResult {
  EvalReport report;
  std::vector<RetrievalResult> retrievals;
  std::vector<RgbImage> retrieval_panels;
  std::vector<RgbImage> decomposition_panels;
};

inline nlohmann::json to_json(const CrossStyleResult& r) {
  nlohmann::json ret = nlohmann::json::array();
  for (const auto& q : r.retrievals) {
    nlohmann::json top = nlohmann::json::array();
    for (const auto& t : q.top) top.push_back({{"index", t.index}, {"score", t.score}});
    ret.push_back({{"query", q.query}, {"top", top}});
  }
  return {{"report", to_json(r.report)}, {"retrievals", ret}};
}

struct CrossStyleOptions {
  int k = 10;
  int num_queries = 4;
  int templates_per_class = 10;
  std::uint64_t seed = 0;
};

// Evaluates a model on a corpus drawn from another primitive bank. Every
// class of `alt` is a candidate; samples are queried against the alt
// templates, and the first samples of the pool act as retrieval queries over
// all alt samples.
template <class T>
CrossStyleResult cross_style_eval(model::ColaModel<T>& m, const glyph::Corpus& alt, const CrossStyleOptions& opt,
                                  const Mat<T>& eps) {
  if (opt.k < 1) throw InvalidArgument("cross_style_eval: k must be >= 1");
  glyph::SplitManifest all;
  all.kind = glyph::SplitKind::character_zeroshot;
  all.m = 0;
  all.k = static_cast<int>(alt.classes.size());
  for (const auto& g : alt.classes) all.test_classes.push_back(g.class_id);

  CrossStyleResult out;
  EvalOptions eo;
  eo.templates_per_class = opt.templates_per_class;
  eo.trials = 1;
  eo.seed = opt.seed;
  out.report = zero_shot_eval(m, alt, all, eo);
  out.report.split_name = "cross_style";
  out.report.candidate_set = "all alt-corpus templates";

  std::vector<const Image*> pool;
  for (const auto& cls : alt.samples)
    for (const auto& img : cls) pool.push_back(&img);
  if (static_cast<std::size_t>(opt.k) > pool.size()) throw InvalidArgument("cross_style_eval: k exceeds the pool");
  std::vector<Mat<T>> lat;
  for (auto& s : m.encode_images(pool, eps)) lat.push_back(std::move(s.mean));

  // Queries spread evenly over the pool so they come from different classes.
  const std::size_t nq = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, opt.num_queries)), pool.size());
  for (std::size_t q = 0; q < nq; ++q) {
    const std::size_t qi = q * pool.size() / std::max<std::size_t>(1, nq);
    RetrievalResult r{qi, matcher::retrieve_topk(lat[qi], lat, static_cast<std::size_t>(opt.k))};
    std::vector<RgbImage> row{gray_to_rgb(*pool[qi])};
    for (const auto& t : r.top) row.push_back(gray_to_rgb(*pool[t.index]));
    out.retrieval_panels.push_back(hconcat(row));
    out.decomposition_panels.push_back(component_maps(m, *pool[qi], eps).panel);
    out.retrievals.push_back(std::move(r));
  }
  return out;
}

inline void write_cross_style(const CrossStyleResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < r.retrieval_panels.size(); ++i) {
    write_png(dir / ("retrieval_" + std::to_string(i) + ".png"), r.retrieval_panels[i]);
    write_png(dir / ("decomposition_" + std::to_string(i) + ".png"), r.decomposition_panels[i]);
  }
}

}  // namespace cola::evalkit

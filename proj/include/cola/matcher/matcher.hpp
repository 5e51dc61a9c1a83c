#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "cola/core/archive.hpp"
#include "cola/model/cola.hpp"

namespace cola::matcher {

template <class T>
struct TemplateBank {
  std::vector<int> class_ids;
  std::vector<std::vector<model::ComponentSet<T>>> latents;  // [class][n]
  std::vector<Mat<T>> centroids;                            // [class], K x D_slot
  Mat<T> eps_used;
  bool sampled = false;  // latents' samples drawn (true) or equal to the means

  std::size_t size() const { return class_ids.size(); }

  std::size_t index_of(int class_id) const {
    for (std::size_t i = 0; i < class_ids.size(); ++i)
      if (class_ids[i] == class_id) return i;
    throw InvalidArgument("class " + std::to_string(class_id) + " is not in the template bank");
  }
};

// Arithmetic mean of a list of equally shaped matrices, accumulated in
// order.
template <class T>
Mat<T> mean_of(const std::vector<model::ComponentSet<T>>& sets) {
  Mat<T> acc = Mat<T>::Zero(sets.front().sample.rows(), sets.front().sample.cols());
  for (const auto& s : sets) acc += s.sample;
  return acc / static_cast<T>(sets.size());
}

// Encodes every template without gradients and forms per-class centroids.
// `templates[i]` are the images of class `class_ids[i]`. With an rng the
// template latents are sampled, otherwise the means are used.
template <class T>
TemplateBank<T> encode_templates(const std::vector<std::vector<Image>>& templates, const std::vector<int>& class_ids,
                                 model::ColaModel<T>& m, const Mat<T>& eps, Rng* rng = nullptr) {
  if (templates.size() != class_ids.size()) throw InvalidArgument("encode_templates: class/template count mismatch");
  TemplateBank<T> bank;
  bank.class_ids = class_ids;
  bank.eps_used = eps;
  bank.sampled = rng != nullptr;
  std::vector<const Image*> all;
  for (std::size_t i = 0; i < templates.size(); ++i) {
    if (templates[i].empty())
      throw InvalidArgument("class " + std::to_string(class_ids[i]) + " has no template images");
    for (const auto& img : templates[i]) all.push_back(&img);
  }
  auto sets = m.encode_images(all, eps, rng);
  std::size_t at = 0;
  for (const auto& tpl : templates) {
    std::vector<model::ComponentSet<T>> cls(sets.begin() + static_cast<std::ptrdiff_t>(at),
                                            sets.begin() + static_cast<std::ptrdiff_t>(at + tpl.size()));
    at += tpl.size();
    bank.centroids.push_back(mean_of(cls));
    bank.latents.push_back(std::move(cls));
  }
  return bank;
}

// Templates of the given classes taken from a corpus.
template <class T>
TemplateBank<T> encode_templates(const glyph::Corpus& corpus, const std::vector<int>& class_ids,
                                 model::ColaModel<T>& m, const Mat<T>& eps, Rng* rng = nullptr) {
  std::vector<std::vector<Image>> tpl;
  for (int c : class_ids) {
    if (c < 0 || static_cast<std::size_t>(c) >= corpus.templates.size())
      throw InvalidArgument("class " + std::to_string(c) + " is not in the corpus");
    tpl.push_back(corpus.templates[static_cast<std::size_t>(c)]);
  }
  return encode_templates(tpl, class_ids, m, eps, rng);
}

struct ClassPosterior {
  Eigen::VectorXd log_probs;
  Eigen::VectorXd probs;
};

template <class T>
double squared_frobenius(const Mat<T>& a, const Mat<T>& b) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    s += d * d;
  }
  return s;
}

// log_probs = log_softmax_i(-||S - centroid_i||_F^2 / (2 sigma^2)), equal
// mixture weights. Distances are computed centroid by centroid in blocks of
// `block`, so blocking never changes a single bit of the result.
template <class T>
ClassPosterior class_posterior(const Mat<T>& S, const std::vector<Mat<T>>& centroids, double sigma,
                               std::size_t block = 256) {
  if (centroids.empty()) throw InvalidArgument("class_posterior: empty class set");
  if (!(sigma > 0)) throw InvalidArgument("class_posterior: sigma must be > 0");
  if (block == 0) block = centroids.size();
  const std::size_t n = centroids.size();
  Eigen::VectorXd logits(static_cast<Eigen::Index>(n));
  const double scale = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t start = 0; start < n; start += block) {
    const std::size_t end = std::min(n, start + block);
    for (std::size_t i = start; i < end; ++i) {
      const auto& c = centroids[i];
      if (c.rows() != S.rows() || c.cols() != S.cols())
        throw ShapeError("class_posterior: latent is " + std::to_string(S.rows()) + "x" + std::to_string(S.cols()) +
                         " but centroid " + std::to_string(i) + " is " + std::to_string(c.rows()) + "x" +
                         std::to_string(c.cols()));
      logits(static_cast<Eigen::Index>(i)) = -scale * squared_frobenius(S, c);
    }
  }
  const double mx = logits.maxCoeff();
  double sum = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(logits(i) - mx);
  const double lse = mx + std::log(sum);
  ClassPosterior p;
  p.log_probs = logits.array() - lse;
  p.probs = p.log_probs.array().exp();
  return p;
}

template <class T>
ClassPosterior class_posterior(const Mat<T>& S, const TemplateBank<T>& bank, double sigma, std::size_t block = 256) {
  return class_posterior(S, bank.centroids, sigma, block);
}

// Index of the largest log-probability; ties go to the lowest class id.
inline std::size_t argmax_class(const ClassPosterior& p, const std::vector<int>& class_ids) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < class_ids.size(); ++i) {
    const double a = p.log_probs(static_cast<Eigen::Index>(i)), b = p.log_probs(static_cast<Eigen::Index>(best));
    if (a > b || (a == b && class_ids[i] < class_ids[best])) best = i;
  }
  return best;
}

template <class T>
int predict_latent(const Mat<T>& S, const TemplateBank<T>& bank, double sigma) {
  if (bank.size() == 0) throw InvalidArgument("predict: empty template bank");
  return bank.class_ids[argmax_class(class_posterior(S, bank, sigma), bank.class_ids)];
}

// Eval-mode prediction (sample = mean) with the bank's eps.
template <class T>
int predict(const Image& image, const TemplateBank<T>& bank, model::ColaModel<T>& m) {
  if (bank.size() == 0) throw InvalidArgument("predict: empty template bank");
  const auto S = m.encode(image, bank.eps_used);
  return predict_latent(S.mean, bank, m.config().sigma);
}

struct Ranked {
  std::size_t index;
  double score;  // negative squared distance
  friend bool operator==(const Ranked&, const Ranked&) = default;
};

// Candidates ordered by ascending squared Frobenius distance to the query
// (ties by index); the first k are returned.
template <class T>
std::vector<Ranked> retrieve_topk(const Mat<T>& query, const std::vector<Mat<T>>& candidates, std::size_t k) {
  if (k > candidates.size())
    throw InvalidArgument("retrieve_topk: k=" + std::to_string(k) + " exceeds " + std::to_string(candidates.size()) +
                          " candidates");
  std::vector<Ranked> all;
  all.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].rows() != query.rows() || candidates[i].cols() != query.cols())
      throw ShapeError("retrieve_topk: candidate " + std::to_string(i) + " has a different shape");
    all.push_back({i, -squared_frobenius(query, candidates[i])});
  }
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Ranked& a, const Ranked& b) { return a.score > b.score || (a.score == b.score && a.index < b.index); });
  all.resize(k);
  return all;
}

// Image form: every image is encoded in eval mode with `eps`.
template <class T>
std::vector<Ranked> retrieve_topk(const Image& query, const std::vector<Image>& candidates, model::ColaModel<T>& m,
                                  const Mat<T>& eps, std::size_t k) {
  if (k > candidates.size())
    throw InvalidArgument("retrieve_topk: k=" + std::to_string(k) + " exceeds " + std::to_string(candidates.size()) +
                          " candidates");
  std::vector<Mat<T>> lat;
  for (auto& s : m.encode_images(candidates, eps)) lat.push_back(std::move(s.mean));
  return retrieve_topk(m.encode(query, eps).mean, lat, k);
}

// Archive with class ids, centroids, per-template latents, eps and the hash
// of the checkpoint that produced them.
template <class T>
Archive export_bank(const TemplateBank<T>& bank, const std::string& checkpoint_hash) {
  Archive a;
  a.meta["kind"] = "cola-template-bank";
  a.meta["checkpoint_version"] = 1;
  a.meta["class_ids"] = bank.class_ids;
  a.meta["checkpoint_hash"] = checkpoint_hash;
  a.meta["sampled"] = bank.sampled;
  std::vector<std::size_t> counts;
  for (const auto& l : bank.latents) counts.push_back(l.size());
  a.meta["templates_per_class"] = counts;
  a.put("eps_used", bank.eps_used);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const std::string c = std::to_string(bank.class_ids[i]);
    a.put("centroid/" + c, bank.centroids[i]);
    for (std::size_t n = 0; n < bank.latents[i].size(); ++n) {
      a.put("latent/" + c + "/" + std::to_string(n) + "/mean", bank.latents[i][n].mean);
      a.put("latent/" + c + "/" + std::to_string(n) + "/sample", bank.latents[i][n].sample);
    }
  }
  return a;
}

template <class T>
TemplateBank<T> import_bank(const Archive& a) {
  if (a.meta.value("kind", std::string()) != "cola-template-bank") throw IoError("archive is not a template bank");
  TemplateBank<T> bank;
  bank.class_ids = a.meta.at("class_ids").get<std::vector<int>>();
  bank.sampled = a.meta.value("sampled", false);
  const auto counts = a.meta.at("templates_per_class").get<std::vector<std::size_t>>();
  bank.eps_used = a.get<T>("eps_used");
  for (std::size_t i = 0; i < bank.class_ids.size(); ++i) {
    const std::string c = std::to_string(bank.class_ids[i]);
    bank.centroids.push_back(a.get<T>("centroid/" + c));
    std::vector<model::ComponentSet<T>> lat;
    for (std::size_t n = 0; n < counts.at(i); ++n) {
      model::ComponentSet<T> s;
      s.mean = a.get<T>("latent/" + c + "/" + std::to_string(n) + "/mean");
      s.sample = a.get<T>("latent/" + c + "/" + std::to_string(n) + "/sample");
      lat.push_back(std::move(s));
    }
    bank.latents.push_back(std::move(lat));
  }
  return bank;
}

}  // namespace cola::matcher

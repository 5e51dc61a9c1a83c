#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cola/glyphsynth/corpus.hpp"
#include "cola/model/cola.hpp"
#include "cola/trainer/loss.hpp"

namespace cola::test {

// Small enough for finite differences and sub-second training steps.
inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.K = 2;
  c.D_slot = 8;
  c.D_feat = 8;
  c.iters = 2;
  c.canvas = 16;
  c.backbone_channels = 4;
  c.backbone_kernel = 3;
  c.sbd_embed = 6;
  c.sbd_hidden = 8;
  c.sbd_layers = 2;
  c.teacher_channels = 5;
  c.teacher_grid = 4;
  c.teacher_hidden = 3;
  c.init_seed = 7;
  return c;
}

// 32x32 corpus with a handful of classes; `canvas` 32 pairs with
// input_downsample 2 on tiny_config.
inline glyph::CorpusConfig tiny_corpus_config() {
  glyph::CorpusConfig c;
  c.num_classes = 24;
  c.num_primitives = 8;
  c.canvas = 32;
  c.templates_per_class = 3;
  c.train_samples_per_class = 4;
  c.test_samples_per_class = 3;
  c.seed = 3;
  c.splits = {"char:16:8"};
  return c;
}

inline model::ModelConfig tiny_corpus_model() {
  auto c = tiny_config();
  c.canvas = 32;
  c.input_downsample = 2;
  return c;
}

template <class T>
Mat<T> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat<T> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(scale * rng.normal());
  return m;
}

inline Image random_image(Rng& rng, int side) {
  Image img(side, side);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return img;
}

// Max relative error between the tape gradient of `f` w.r.t. each input
// and central differences; the denominator is floored at 1e-3.
inline double gradcheck(const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& f,
                        std::vector<Mat<double>> inputs, double h = 1e-6) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  Var<double> out = f(tape, leaves);
  tape.backward(out);
  auto eval = [&]() {
    Tape<double> t(false);
    std::vector<Var<double>> ls;
    for (const auto& m : inputs) ls.push_back(t.constant(m));
    return f(t, ls).scalar();
  };
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Mat<double> analytic = leaves[k].grad();
    if (analytic.size() == 0) analytic = Mat<double>::Zero(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data()[i];
      inputs[k].data()[i] = orig + h;
      const double up = eval();
      inputs[k].data()[i] = orig - h;
      const double down = eval();
      inputs[k].data()[i] = orig;
      const double num = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      worst = std::max(worst, std::abs(a - num) / std::max({1e-3, std::abs(a), std::abs(num)}));
    }
  }
  return worst;
}

// Batch-averaged Monte Carlo ELBO written out from Gaussian densities:
// log N(F; mu_d, sigma^2 I) plus log of the normalized class likelihoods
// N(S; centroid_y, sigma^2 I). `S` is (B*K x D), `mu_d` (B*G x C),
// `centroids` (|C| x K*D), `rows` the label rows.
inline double elbo_mc(const Mat<double>& F, const Mat<double>& mu_d, const Mat<double>& S,
                      const Mat<double>& centroids, std::span<const int> rows, double sigma) {
  const std::size_t B = rows.size();
  const Eigen::Index per_f = F.rows() / static_cast<Eigen::Index>(B);
  const Eigen::Index per_s = S.rows() / static_cast<Eigen::Index>(B);
  const double var = sigma * sigma;
  const double log_norm = -0.5 * std::log(2 * std::numbers::pi * var);
  double total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    double log_f = 0;
    for (Eigen::Index r = 0; r < per_f; ++r)
      for (Eigen::Index c = 0; c < F.cols(); ++c) {
        const double d = F(b * per_f + r, c) - mu_d(b * per_f + r, c);
        log_f += log_norm - d * d / (2 * var);
      }
    std::vector<double> log_dens;
    for (Eigen::Index i = 0; i < centroids.rows(); ++i) {
      double ld = 0;
      Eigen::Index j = 0;
      for (Eigen::Index r = 0; r < per_s; ++r)
        for (Eigen::Index c = 0; c < S.cols(); ++c, ++j) {
          const double d = S(b * per_s + r, c) - centroids(i, j);
          ld += log_norm - d * d / (2 * var);
        }
      log_dens.push_back(ld);
    }
    const double mx = *std::max_element(log_dens.begin(), log_dens.end());
    double z = 0;
    for (double v : log_dens) z += std::exp(v - mx);
    total += log_f + log_dens[static_cast<std::size_t>(rows[b])] - mx - std::log(z);
  }
  return total / static_cast<double>(B);
}

struct GradcheckResult {
  double worst = 0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Every parameter of a double model (eps Gaussian included) against central
// differences of the full objective on a fixed two-image batch. Noise is
// fixed so the loss is a deterministic function of the parameters.
inline GradcheckResult full_loss_gradcheck(const model::ModelConfig& cfg, double lambda = 5.0, double h = 1e-6) {
  model::ColaModel<double> m(cfg);
  Rng rng(31);
  const Eigen::Index B = 2, G = cfg.teacher_positions();
  std::vector<Image> imgs = {random_image(rng, cfg.canvas), random_image(rng, cfg.canvas)};
  const Mat<double> x = model::prepare_batch<double>(imgs, cfg);
  const Mat<double> F = random_mat<double>(rng, B * G, cfg.teacher_channels, 0.5);
  const Mat<double> noise = m.eps_noise(rng);
  trainer::CentroidTable<double> table;
  table.rows = random_mat<double>(rng, 3, cfg.K * cfg.D_slot, 0.5);
  for (int i = 0; i < 3; ++i) table.index[10 + i] = i;
  const std::vector<int> labels = {11, 12};

  auto loss = [&](Tape<double>& tape) {
    Rng sample_rng(77);
    return trainer::compute_loss<double>(tape, m, x, F, labels, table, lambda, m.eps_var(tape, &noise), &sample_rng)
        .total;
  };
  m.params().zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  GradcheckResult res;
  for (auto& [name, p] : m.params()) {
    const Mat<double> analytic = p.grad;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double orig = p.value.data()[i];
      p.value.data()[i] = orig + h;
      Tape<double> t1(false);
      const double up = loss(t1).scalar();
      p.value.data()[i] = orig - h;
      Tape<double> t2(false);
      const double down = loss(t2).scalar();
      p.value.data()[i] = orig;
      const double num = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      const double err = std::abs(a - num) / std::max({1e-3, std::abs(a), std::abs(num)});
      if (err > res.worst) {
        res.worst = err;
        res.worst_param = name;
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace cola::test

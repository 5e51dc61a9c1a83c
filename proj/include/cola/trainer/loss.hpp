#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "cola/matcher/matcher.hpp"
#include "cola/model/cola.hpp"

namespace cola::trainer {

struct LossReport {
  double total = 0;
  double recon = 0;
  double pred = 0;
  double kl_input = 0;
  double kl_temp = 0;
};

inline nlohmann::json to_json(const LossReport& r) {
  return {{"total", r.total}, {"recon", r.recon}, {"pred", r.pred}, {"kl_input", r.kl_input}, {"kl_temp", r.kl_temp}};
}

template <class T>
struct LossResult {
  Var<T> total;  // differentiable objective
  Var<T> recon;
  Var<T> pred;
  Var<T> S;      // sampled components (B*K x D_slot)
  Var<T> mu_d;   // decoded features (B*G x C)
  LossReport report;
};

// Centroids of a template bank stacked as (|C| x K*D_slot), plus the class
// id -> row lookup used for labels.
template <class T>
struct CentroidTable {
  Mat<T> rows;
  std::unordered_map<int, int> index;

  static CentroidTable from(const matcher::TemplateBank<T>& bank) {
    CentroidTable t;
    if (bank.size() == 0) throw InvalidArgument("loss: empty template bank");
    const auto& c0 = bank.centroids.front();
    t.rows.resize(static_cast<Eigen::Index>(bank.size()), c0.size());
    for (std::size_t i = 0; i < bank.size(); ++i) {
      t.rows.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
          bank.centroids[i].data(), bank.centroids[i].size());
      t.index[bank.class_ids[i]] = static_cast<int>(i);
    }
    return t;
  }

  std::vector<int> labels_to_rows(std::span<const int> labels) const {
    std::vector<int> out;
    out.reserve(labels.size());
    for (int y : labels) {
      auto it = index.find(y);
      if (it == index.end()) throw InvalidArgument("label " + std::to_string(y) + " is not in the template bank");
      out.push_back(it->second);
    }
    return out;
  }
};

// Templates encoded on the tape instead of the detached bank (used to show
// that detaching changes the gradient). Images grouped per class, same
// class order as `class_ids`.
template <class T>
struct LiveTemplates {
  std::vector<int> class_ids;
  std::vector<std::vector<const Image*>> images;
};

// total = recon + lambda * pred with
//   recon = sum over feature entries of (F - mu_d)^2, averaged over the batch
//   pred  = mean over the batch of -log pi_y (class posterior at sigma)
// `x` holds the prepared batch, `F` the teacher features of the batch, `eps`
// the shared slot initialisation. A null rng uses the component means.
template <class T>
LossResult<T> compute_loss(Tape<T>& tape, model::ColaModel<T>& m, const Mat<T>& x, const Mat<T>& F,
                           std::span<const int> labels, const CentroidTable<T>& table, double lambda,
                           const Var<T>& eps, Rng* rng, const LiveTemplates<T>* live = nullptr) {
  const auto& cfg = m.config();
  const Eigen::Index B = static_cast<Eigen::Index>(labels.size());
  if (B == 0) throw InvalidArgument("loss: empty batch");
  if (lambda < 0) throw InvalidArgument("loss: lambda must be >= 0");
  const Eigen::Index KD = static_cast<Eigen::Index>(cfg.K) * cfg.D_slot;

  std::vector<int> rows;
  Var<T> centroids;
  if (live) {
    std::unordered_map<int, int> idx;
    for (std::size_t i = 0; i < live->class_ids.size(); ++i) idx[live->class_ids[i]] = static_cast<int>(i);
    for (int y : labels) {
      auto it = idx.find(y);
      if (it == idx.end()) throw InvalidArgument("label " + std::to_string(y) + " is not in the template bank");
      rows.push_back(it->second);
    }
    std::vector<const Image*> all;
    const std::size_t n = live->images.front().size();
    for (const auto& cls : live->images) {
      if (cls.size() != n) throw InvalidArgument("live templates need the same count per class");
      all.insert(all.end(), cls.begin(), cls.end());
    }
    const Eigen::Index TB = static_cast<Eigen::Index>(all.size());
    auto te = m.encode(tape, tape.constant(model::prepare_batch<T>(all, cfg)), TB, eps);
    centroids = ops::block_mean_rows(ops::reshape(te.mean, TB, KD), static_cast<Eigen::Index>(n));
  } else {
    rows = table.labels_to_rows(labels);
    centroids = tape.constant(table.rows);
  }

  LossResult<T> r;
  auto enc = m.encode(tape, tape.constant(x), B, eps);
  r.S = m.sample(tape, enc.mean, rng);
  auto dec = m.decode(tape, r.S);
  r.mu_d = dec.mu_d;
  if (F.rows() != dec.mu_d.rows() || F.cols() != dec.mu_d.cols())
    throw ShapeError("loss: teacher features do not match the decoder output");
  r.recon = ops::scale(ops::sum_squares(ops::sub(dec.mu_d, tape.constant(F))), T(1) / static_cast<T>(B));

  const T inv2s2 = static_cast<T>(1.0 / (2.0 * cfg.sigma * cfg.sigma));
  Var<T> logits = ops::scale(ops::sq_dist_rows(ops::reshape(r.S, B, KD), centroids), -inv2s2);
  r.pred = ops::nll_mean(ops::log_softmax_rows(logits), std::span<const int>(rows));
  r.total = ops::axpy(r.recon, static_cast<T>(lambda), r.pred);

  r.report.recon = static_cast<double>(r.recon.scalar());
  r.report.pred = static_cast<double>(r.pred.scalar());
  r.report.total = r.report.recon + lambda * r.report.pred;
  // The generative and variational encoders are the same network, so both
  // KL regularizers vanish identically.
  r.report.kl_input = 0.0;
  r.report.kl_temp = 0.0;
  return r;
}

}  // namespace cola::trainer

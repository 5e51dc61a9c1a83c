#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "cola/core/adam.hpp"
#include "cola/glyphsynth/corpus.hpp"
#include "cola/model/input.hpp"
#include "cola/model/layers.hpp"

namespace cola::model {

struct TeacherTrainConfig {
  int steps = 1500;
  int batch_size = 8;
  double lr = 3e-4;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TeacherTrainConfig& c) {
  return {{"steps", c.steps}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"seed", c.seed}};
}

inline TeacherTrainConfig teacher_config_from_json(const nlohmann::json& j, TeacherTrainConfig c = {}) {
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  return c;
}

// Compact convolutional teacher: conv (full resolution), average pooling
// down to the teacher grid, three more convs. A classification head on the
// pooled features exists only while training.
template <class T>
class Teacher {
 public:
  Teacher() = default;
  explicit Teacher(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(cfg.init_seed, 0x7465616368ULL));
    const int h = cfg.teacher_hidden;
    convs_.push_back(Conv<T>::make(params_, rng, "teacher.conv1", 1, h, 3, 1));
    convs_.push_back(Conv<T>::make(params_, rng, "teacher.conv2", h, 2 * h, 3, 1));
    convs_.push_back(Conv<T>::make(params_, rng, "teacher.conv3", 2 * h, cfg.teacher_channels, 3, 1));
    convs_.push_back(Conv<T>::make(params_, rng, "teacher.conv4", cfg.teacher_channels, cfg.teacher_channels, 3, 1));
  }

  const ModelConfig& config() const { return cfg_; }
  bool trained() const { return trained_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const std::vector<int>& train_classes() const { return train_classes_; }
  double head_accuracy() const { return head_accuracy_; }

  // (B*S*S x 1) input -> (B*G x C) features.
  Var<T> forward(Tape<T>& tape, const Var<T>& x, Eigen::Index batch) {
    const int side = cfg_.model_side(), g = cfg_.teacher_grid;
    Var<T> h = ops::relu(convs_[0](tape, params_, x, batch, side, side));
    h = ops::avg_pool(h, batch, side, side, side / g);
    h = ops::relu(convs_[1](tape, params_, h, batch, g, g));
    h = ops::relu(convs_[2](tape, params_, h, batch, g, g));
    return convs_[3](tape, params_, h, batch, g, g);
  }

  // Reconstruction target for already prepared inputs; never records
  // gradients into the teacher.
  Mat<T> features(const Mat<T>& x, Eigen::Index batch) {
    if (!trained_) throw StateError("teacher has not been trained");
    Tape<T> tape(false);
    return forward(tape, tape.constant(x), batch).value();
  }

  Mat<T> features(const Image& img) { return features(prepare_batch<T>(std::vector<const Image*>{&img}, cfg_), 1); }

  // Marks the encoder frozen and drops the head.
  void freeze(std::vector<int> train_classes, double head_accuracy) {
    std::vector<std::string> head;
    for (const auto& [name, _] : params_)
      if (name.rfind("teacher.head", 0) == 0) head.push_back(name);
    for (const auto& name : head) params_.erase(name);
    params_.set_trainable(false);
    trained_ = true;
    train_classes_ = std::move(train_classes);
    head_accuracy_ = head_accuracy;
  }

  void restore(ParamStore<T> params, std::vector<int> train_classes, double head_accuracy) {
    params_ = std::move(params);
    params_.set_trainable(false);
    trained_ = true;
    train_classes_ = std::move(train_classes);
    head_accuracy_ = head_accuracy;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  std::vector<Conv<T>> convs_;
  bool trained_ = false;
  std::vector<int> train_classes_;
  double head_accuracy_ = 0.0;
};

// Trains the teacher encoder plus a transient linear head on the train
// classes of `split` (samples and templates), then freezes it. The head's
// accuracy on the training pool is recorded before it is discarded.
template <class T>
Teacher<T> train_teacher(const glyph::Corpus& corpus, const glyph::SplitManifest& split, const ModelConfig& cfg,
                         const TeacherTrainConfig& tc) {
  if (split.train_classes.empty()) throw InvalidArgument("train_teacher: split has no training classes");
  if (tc.steps < 0 || tc.batch_size < 1) throw InvalidArgument("train_teacher: bad steps or batch size");
  Teacher<T> teacher(cfg);
  auto& ps = teacher.params();
  Rng rng(derive_seed(tc.seed, 0x7465616368ULL));
  const int classes = static_cast<int>(split.train_classes.size());
  auto head = Dense<T>::make(ps, rng, "teacher.head", cfg.teacher_channels, classes);

  std::vector<std::pair<const Image*, int>> pool;
  for (int i = 0; i < classes; ++i) {
    const int cls = split.train_classes[i];
    for (const auto& img : corpus.samples.at(cls)) pool.emplace_back(&img, i);
    for (const auto& img : corpus.templates.at(cls)) pool.emplace_back(&img, i);
  }
  if (pool.empty()) throw InvalidArgument("train_teacher: no images for the training classes");

  const Eigen::Index G = cfg.teacher_positions();
  Adam<T> opt;
  for (int step = 0; step < tc.steps; ++step) {
    std::vector<const Image*> imgs;
    std::vector<int> labels;
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto& [img, y] = pool[rng.below(pool.size())];
      imgs.push_back(img);
      labels.push_back(y);
    }
    Tape<T> tape;
    const Eigen::Index B = static_cast<Eigen::Index>(imgs.size());
    Var<T> f = teacher.forward(tape, tape.constant(prepare_batch<T>(imgs, cfg)), B);
    Var<T> logits = head(tape, ps, ops::block_mean_rows(f, G));
    Var<T> loss = ops::nll_mean(ops::log_softmax_rows(logits), std::span<const int>(labels));
    ps.zero_grad();
    tape.backward(loss);
    opt.step(ps, tc.lr);
  }

  // Head accuracy on (up to 2000 images of) the training pool.
  std::size_t correct = 0, seen = 0;
  const std::size_t stride = std::max<std::size_t>(1, pool.size() / 2000);
  std::vector<const Image*> imgs;
  std::vector<int> labels;
  auto flush = [&] {
    if (imgs.empty()) return;
    Tape<T> tape(false);
    const Eigen::Index B = static_cast<Eigen::Index>(imgs.size());
    Var<T> f = teacher.forward(tape, tape.constant(prepare_batch<T>(imgs, cfg)), B);
    Var<T> logits = head(tape, ps, ops::block_mean_rows(f, G));
    for (Eigen::Index i = 0; i < B; ++i) {
      Eigen::Index arg = 0;
      logits.value().row(i).maxCoeff(&arg);
      correct += arg == labels[static_cast<std::size_t>(i)];
      ++seen;
    }
    imgs.clear();
    labels.clear();
  };
  for (std::size_t i = 0; i < pool.size(); i += stride) {
    imgs.push_back(pool[i].first);
    labels.push_back(pool[i].second);
    if (imgs.size() == 64) flush();
  }
  flush();
  teacher.freeze(split.train_classes, seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0);
  return teacher;
}

}  // namespace cola::model

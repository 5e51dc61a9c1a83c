#pragma once

#include <optional>
#include <vector>

#include "cola/model/backbone.hpp"
#include "cola/model/decoder.hpp"
#include "cola/model/input.hpp"
#include "cola/model/slot_attention.hpp"
#include "cola/model/teacher.hpp"

namespace cola::model {

// K latent components of one image.
template <class T>
struct ComponentSet {
  Mat<T> mean;       // K x D_slot
  Mat<T> sample;     // K x D_slot
  Mat<T> attention;  // K x M
};

// sample = mean + sigma * N(0, I); in eval mode sample = mean.
template <class T>
ComponentSet<T> sample_components(const Mat<T>& mean, double sigma, Rng* rng, bool eval = false) {
  if (!(sigma > 0)) throw InvalidArgument("sample_components: sigma must be > 0");
  ComponentSet<T> s;
  s.mean = mean;
  s.sample = mean;
  if (!eval) {
    if (!rng) throw InvalidArgument("sample_components: sampling needs an rng");
    for (Eigen::Index i = 0; i < s.sample.size(); ++i) s.sample.data()[i] += static_cast<T>(sigma * rng->normal());
  }
  return s;
}

template <class T>
struct EncodeVars {
  Var<T> features;   // H, (B*M x D_feat)
  Var<T> mean;       // (B*K x D_slot)
  Var<T> attention;  // (B*K x M)
};

template <class T>
class ColaModel {
 public:
  ColaModel() = default;
  explicit ColaModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(cfg.init_seed, 0x636f6c61ULL));
    backbone_ = Backbone<T>::make(params_, rng, cfg_);
    slots_ = SlotAttention<T>::make(params_, rng, cfg_);
    decoder_ = Decoder<T>::make(params_, rng, cfg_);
    const double bound = std::sqrt(6.0 / (1.0 + cfg_.D_slot));
    params_.add("eps.mu", uniform_init<T>(rng, cfg_.K, cfg_.D_slot, bound));
    params_.add("eps.log_sigma",
                Mat<T>::Constant(cfg_.K, cfg_.D_slot, static_cast<T>(std::log(cfg_.eps_init_sigma))));
    teacher_ = Teacher<T>(cfg_);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  Teacher<T>& teacher() { return teacher_; }
  const Teacher<T>& teacher() const { return teacher_; }
  void set_teacher(Teacher<T> t) { teacher_ = std::move(t); }
  int positions() const { return backbone_.grid * backbone_.grid; }
  int grid_side() const { return backbone_.grid; }

  // 0: backbone, slot attention and the eps Gaussian; 1: decoder.
  static int param_group(const std::string& name) { return name.rfind("decoder.", 0) == 0 ? 1 : 0; }

  Mat<T> eps_mean() const { return params_.at("eps.mu").value; }

  Mat<T> eps_noise(Rng& rng) const {
    Mat<T> n(cfg_.K, cfg_.D_slot);
    for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = static_cast<T>(rng.normal());
    return n;
  }

  // eps = mu + exp(log_sigma) * noise, or mu when noise is null.
  Mat<T> eps_value(const Mat<T>* noise) const {
    if (!noise) return eps_mean();
    return eps_mean() + (params_.at("eps.log_sigma").value.array().exp() * noise->array()).matrix();
  }

  Var<T> eps_var(Tape<T>& tape, const Mat<T>* noise) {
    Var<T> mu = tape.param(params_.at("eps.mu"));
    if (!noise) return mu;
    return ops::add(mu, ops::mul(ops::exp(tape.param(params_.at("eps.log_sigma"))), tape.constant(*noise)));
  }

  Var<T> backbone(Tape<T>& tape, const Var<T>& x, Eigen::Index batch) { return backbone_(tape, params_, x, batch); }

  SlotAttentionResult<T> slot_attention(Tape<T>& tape, const Var<T>& H, const Var<T>& eps, Eigen::Index batch,
                                        const SlotAttentionHooks<T>* hooks = nullptr) {
    return slots_(tape, params_, H, eps, batch, hooks);
  }

  EncodeVars<T> encode(Tape<T>& tape, const Var<T>& x, Eigen::Index batch, const Var<T>& eps,
                       const SlotAttentionHooks<T>* hooks = nullptr) {
    EncodeVars<T> e;
    e.features = backbone(tape, x, batch);
    auto r = slot_attention(tape, e.features, eps, batch, hooks);
    e.mean = r.mu;
    e.attention = r.attention;
    return e;
  }

  // Reparameterized sample of N(mean, sigma^2 I); null rng gives the mean.
  Var<T> sample(Tape<T>& tape, const Var<T>& mean, Rng* rng) {
    if (!rng) return mean;
    Mat<T> noise(mean.rows(), mean.cols());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<T>(cfg_.sigma * rng->normal());
    return ops::add(mean, tape.constant(std::move(noise)));
  }

  DecodedVars<T> decode(Tape<T>& tape, const Var<T>& S) { return decoder_(tape, params_, S); }

  // Gradient-free encoding of many images in chunks. With rng the sample is
  // drawn, otherwise sample = mean.
  std::vector<ComponentSet<T>> encode_images(const std::vector<const Image*>& images, const Mat<T>& eps,
                                             Rng* rng = nullptr, std::size_t chunk = 64) {
    std::vector<ComponentSet<T>> out;
    out.reserve(images.size());
    const Eigen::Index K = cfg_.K;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
      const std::size_t end = std::min(images.size(), start + chunk);
      std::vector<const Image*> part(images.begin() + start, images.begin() + end);
      const Eigen::Index B = static_cast<Eigen::Index>(part.size());
      Tape<T> tape(false);
      auto e = encode(tape, tape.constant(prepare_batch<T>(part, cfg_)), B, tape.constant(eps));
      for (Eigen::Index b = 0; b < B; ++b) {
        Mat<T> mean = e.mean.value().middleRows(b * K, K);
        auto cs = sample_components<T>(mean, cfg_.sigma, rng, rng == nullptr);
        cs.attention = e.attention.value().middleRows(b * K, K);
        out.push_back(std::move(cs));
      }
    }
    return out;
  }

  std::vector<ComponentSet<T>> encode_images(const std::vector<Image>& images, const Mat<T>& eps, Rng* rng = nullptr) {
    std::vector<const Image*> ptrs;
    for (const auto& i : images) ptrs.push_back(&i);
    return encode_images(ptrs, eps, rng);
  }

  ComponentSet<T> encode(const Image& image, const Mat<T>& eps, Rng* rng = nullptr) {
    return encode_images(std::vector<const Image*>{&image}, eps, rng).front();
  }

  Mat<T> decode_mean(const Mat<T>& S) {
    Tape<T> tape(false);
    return decode(tape, tape.constant(S)).mu_d.value();
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  Backbone<T> backbone_;
  SlotAttention<T> slots_;
  Decoder<T> decoder_;
  Teacher<T> teacher_;
};

}  // namespace cola::model

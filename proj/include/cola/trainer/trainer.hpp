#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "cola/core/adam.hpp"
#include "cola/glyphsynth/corpus.hpp"
#include "cola/model/checkpoint.hpp"
#include "cola/trainer/loss.hpp"

namespace cola::trainer {

struct TrainConfig {
  double lambda = 0.01;
  int batch_size = 32;
  long total_steps = 30000;
  long phase1_steps = -1;  // < 0: 20% of total_steps
  long warmup_steps = 1000;
  long halve_every_steps = 10000;
  double lr_backbone_peak = 1e-4;
  double lr_decoder_peak = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  std::uint64_t seed = 0;
  bool sample_eps = true;        // draw eps once per epoch (else use its mean)
  bool sample_templates = true;  // template latents sampled when the bank is re-encoded
  bool template_inputs = true;   // train-class templates join the input pool
  long log_every = 50;
  long checkpoint_every = 0;     // 0: only at the end

  long phase_switch() const { return phase1_steps >= 0 ? phase1_steps : total_steps / 5; }

  void validate() const {
    if (lambda < 0) throw InvalidArgument("lambda must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (total_steps < 0 || warmup_steps < 0) throw InvalidArgument("step counts must be >= 0");
    if (!(lr_backbone_peak > 0) || !(lr_decoder_peak > 0)) throw InvalidArgument("learning rates must be > 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"phase1_steps", c.phase1_steps},
          {"warmup_steps", c.warmup_steps},
          {"halve_every_steps", c.halve_every_steps},
          {"lr_backbone_peak", c.lr_backbone_peak},
          {"lr_decoder_peak", c.lr_decoder_peak},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"seed", c.seed},
          {"sample_eps", c.sample_eps},
          {"sample_templates", c.sample_templates},
          {"template_inputs", c.template_inputs},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.lambda = j.value("lambda", c.lambda);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.phase1_steps = j.value("phase1_steps", c.phase1_steps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.halve_every_steps = j.value("halve_every_steps", c.halve_every_steps);
  c.lr_backbone_peak = j.value("lr_backbone_peak", c.lr_backbone_peak);
  c.lr_decoder_peak = j.value("lr_decoder_peak", c.lr_decoder_peak);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.seed = j.value("seed", c.seed);
  c.sample_eps = j.value("sample_eps", c.sample_eps);
  c.sample_templates = j.value("sample_templates", c.sample_templates);
  c.template_inputs = j.value("template_inputs", c.template_inputs);
  c.log_every = j.value("log_every", c.log_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  return c;
}

// Linear warmup 0 -> peak over warmup_steps, then halving every
// halve_every steps (never when halve_every <= 0).
inline double lr_schedule(long step, double peak, long warmup_steps, long halve_every) {
  if (step < 0) throw InvalidArgument("lr_schedule: step must be >= 0");
  if (warmup_steps > 0 && step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (halve_every <= 0) return peak;
  return peak * std::pow(0.5, static_cast<double>((step - warmup_steps) / halve_every));
}

// FNV-1a over the corpus' classes, split-independent config and 8-bit
// pixels.
inline std::string corpus_hash(const glyph::Corpus& c) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
  };
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& g : c.classes) classes.push_back(glyph::to_json(g));
  const std::string s = classes.dump() + glyph::to_json(c.bank).dump();
  feed(s.data(), s.size());
  std::vector<unsigned char> px;
  auto add = [&](const Image& img) {
    px.resize(img.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(std::lround(img.pixels[i] * 255.0f));
    feed(px.data(), px.size());
  };
  for (const auto& cls : c.samples)
    for (const auto& img : cls) add(img);
  for (const auto& cls : c.templates)
    for (const auto& img : cls) add(img);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

template <class T>
struct TrainState {
  model::ColaModel<T> model;
  Adam<T> optimizer;
  long step = 0;
  Rng rng;
  Mat<T> eps_noise;               // current epoch's eps noise (empty: eps mean)
  matcher::TemplateBank<T> bank;  // current epoch's training-charset bank
  std::vector<int> train_classes;
  TrainConfig config;
  std::string split_name;
  std::string corpus_hash;
  long phase_switch_step = 0;
  double wallclock = 0;  // seconds spent training so far
};

template <class T>
struct StepRecord {
  long step = 0;
  LossReport loss;
  double lr_backbone = 0, lr_decoder = 0;
  double wallclock = 0;
  int phase = 1;
};

template <class T>
nlohmann::json to_json(const StepRecord<T>& r) {
  return {{"step", r.step},
          {"total", r.loss.total},
          {"recon", r.loss.recon},
          {"pred", r.loss.pred},
          {"kl_input", r.loss.kl_input},
          {"kl_temp", r.loss.kl_temp},
          {"lambda_phase", r.phase},
          {"lr_backbone", r.lr_backbone},
          {"lr_decoder", r.lr_decoder},
          {"wallclock", r.wallclock}};
}

template <class T>
struct TrainHooks {
  std::function<void(const StepRecord<T>&)> on_step;          // every step
  std::function<void(const TrainState<T>&)> on_checkpoint;   // every checkpoint_every steps and at the end
  std::function<bool()> should_stop;                         // checked between steps
};

// Training-set images (samples, then templates if enabled) of the split's
// train classes.
struct PoolEntry {
  const Image* image;
  int label;
};

inline std::vector<PoolEntry> training_pool(const glyph::Corpus& corpus, const std::vector<int>& classes,
                                            bool with_templates) {
  std::vector<PoolEntry> pool;
  for (int c : classes) {
    for (const auto& img : corpus.samples.at(static_cast<std::size_t>(c))) pool.push_back({&img, c});
    if (with_templates)
      for (const auto& img : corpus.templates.at(static_cast<std::size_t>(c))) pool.push_back({&img, c});
  }
  return pool;
}

template <class T>
TrainState<T> init_training(model::ColaModel<T> m, const glyph::Corpus& corpus, const glyph::SplitManifest& split,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (!m.teacher().trained()) throw StateError("training needs a trained teacher (run train-teacher first)");
  if (split.train_classes.empty()) throw InvalidArgument("split " + split.name() + " has no training classes");
  for (int c : split.train_classes) {
    const auto& tc = m.teacher().train_classes();
    if (std::find(tc.begin(), tc.end(), c) == tc.end())
      throw StateError("teacher was not trained on class " + std::to_string(c) + " of split " + split.name());
  }
  TrainState<T> s{std::move(m), Adam<T>(AdamOptions{cfg.adam_beta1, cfg.adam_beta2, 1e-8}), 0,
                  Rng(derive_seed(cfg.seed, 0x747261696eULL)), {}, {}, split.train_classes, cfg, split.name(),
                  corpus_hash(corpus), cfg.phase_switch(), 0.0};
  return s;
}

template <class T>
void begin_epoch(TrainState<T>& s, const glyph::Corpus& corpus) {
  auto& m = s.model;
  if (s.config.sample_eps)
    s.eps_noise = m.eps_noise(s.rng);
  else
    s.eps_noise.resize(0, 0);
  const Mat<T> eps = m.eps_value(s.eps_noise.size() ? &s.eps_noise : nullptr);
  s.bank = matcher::encode_templates(corpus, s.train_classes, m, eps, s.config.sample_templates ? &s.rng : nullptr);
}

// Runs until total_steps (or should_stop). Resumable: a state restored from a
// checkpoint continues bit-identically.
template <class T>
void run_training(TrainState<T>& s, const glyph::Corpus& corpus, const TrainHooks<T>& hooks = {}) {
  auto& m = s.model;
  const auto& cfg = s.config;
  const auto pool = training_pool(corpus, s.train_classes, cfg.template_inputs);
  const long per_epoch = std::max<long>(1, static_cast<long>(pool.size()) / cfg.batch_size);
  const auto t0 = std::chrono::steady_clock::now();
  const double wall0 = s.wallclock;
  std::vector<std::size_t> perm;
  long perm_epoch = -1;

  while (s.step < cfg.total_steps) {
    if (hooks.should_stop && hooks.should_stop()) break;
    const long epoch = s.step / per_epoch, pos = s.step % per_epoch;
    if (pos == 0 || s.bank.size() == 0) begin_epoch(s, corpus);
    if (perm_epoch != epoch) {
      perm.resize(pool.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng shuffle(derive_seed(cfg.seed, 0x65706f6368ULL + static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[shuffle.below(i + 1)]);
      perm_epoch = epoch;
    }
    std::vector<const Image*> imgs;
    std::vector<int> labels;
    for (long b = 0; b < cfg.batch_size; ++b) {
      const auto& e = pool[perm[static_cast<std::size_t>((pos * cfg.batch_size + b) % static_cast<long>(pool.size()))]];
      imgs.push_back(e.image);
      labels.push_back(e.label);
    }
    const Mat<T> x = model::prepare_batch<T>(imgs, m.config());
    const Mat<T> F = m.teacher().features(x, static_cast<Eigen::Index>(imgs.size()));
    const auto table = CentroidTable<T>::from(s.bank);
    const int phase = s.step < s.phase_switch_step ? 1 : 2;
    const double lambda = phase == 1 ? 0.0 : cfg.lambda;

    Tape<T> tape;
    Var<T> eps = m.eps_var(tape, s.eps_noise.size() ? &s.eps_noise : nullptr);
    auto r = compute_loss(tape, m, x, F, std::span<const int>(labels), table, lambda, eps, &s.rng);
    if (!std::isfinite(r.report.total)) throw NumericError("non-finite training loss", static_cast<int>(s.step));
    m.params().zero_grad();
    tape.backward(r.total);
    const double lr_b = lr_schedule(s.step, cfg.lr_backbone_peak, cfg.warmup_steps, cfg.halve_every_steps);
    const double lr_d = lr_schedule(s.step, cfg.lr_decoder_peak, cfg.warmup_steps, cfg.halve_every_steps);
    s.optimizer.step(m.params(), {lr_b, lr_d}, &model::ColaModel<T>::param_group);
    ++s.step;
    s.wallclock = wall0 + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (hooks.on_step) {
      StepRecord<T> rec;
      rec.step = s.step;
      rec.loss = r.report;
      rec.lr_backbone = lr_b;
      rec.lr_decoder = lr_d;
      rec.wallclock = s.wallclock;
      rec.phase = phase;
      hooks.on_step(rec);
    }
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && s.step % cfg.checkpoint_every == 0 &&
        s.step < cfg.total_steps)
      hooks.on_checkpoint(s);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(s);
}

// Archive of everything needed to continue training bit-identically.
template <class T>
Archive save_state(const TrainState<T>& s) {
  Archive a;
  model::put_model(a, s.model);
  a.meta["kind"] = "cola-checkpoint";
  a.meta["trained_classes"] = s.train_classes;
  a.meta["train"] = {{"step", s.step},
                     {"adam_steps", s.optimizer.steps()},
                     {"rng_state", s.rng.state()},
                     {"config", to_json(s.config)},
                     {"split", s.split_name},
                     {"corpus_hash", s.corpus_hash},
                     {"phase_switch_step", s.phase_switch_step},
                     {"wallclock", s.wallclock},
                     {"bank_sampled", s.bank.sampled}};
  for (const auto& [name, slot] : s.optimizer.slots()) {
    a.put("optim/m/" + name, slot.m);
    a.put("optim/v/" + name, slot.v);
  }
  if (s.eps_noise.size()) a.put("train/eps_noise", s.eps_noise);
  if (s.bank.size()) {
    a.put("train/bank_eps", s.bank.eps_used);
    for (std::size_t i = 0; i < s.bank.size(); ++i)
      a.put("train/centroid/" + std::to_string(s.bank.class_ids[i]), s.bank.centroids[i]);
  }
  return a;
}

template <class T>
TrainState<T> load_state(const Archive& a) {
  if (!a.meta.contains("train")) throw StateError("archive is not a training checkpoint");
  const auto& tj = a.meta.at("train");
  TrainConfig cfg = train_config_from_json(tj.at("config"));
  TrainState<T> s{model::load_model<T>(a), Adam<T>(AdamOptions{cfg.adam_beta1, cfg.adam_beta2, 1e-8}),
                  tj.at("step").get<long>(), Rng(), {}, {}, a.meta.at("trained_classes").get<std::vector<int>>(),
                  cfg, tj.at("split").get<std::string>(), tj.at("corpus_hash").get<std::string>(),
                  tj.at("phase_switch_step").get<long>(), tj.value("wallclock", 0.0)};
  s.rng.set_state(tj.at("rng_state").get<std::string>());
  s.optimizer.set_steps(tj.at("adam_steps").get<long long>());
  for (const auto& name : a.names("optim/m/")) {
    const std::string p = name.substr(8);
    auto& slot = s.optimizer.slots()[p];
    slot.m = a.get<T>(name);
    slot.v = a.get<T>("optim/v/" + p);
  }
  if (a.has("train/eps_noise")) s.eps_noise = a.get<T>("train/eps_noise");
  if (a.has("train/bank_eps")) {
    s.bank.eps_used = a.get<T>("train/bank_eps");
    s.bank.sampled = tj.value("bank_sampled", false);
    for (int c : s.train_classes) {
      s.bank.class_ids.push_back(c);
      s.bank.centroids.push_back(a.get<T>("train/centroid/" + std::to_string(c)));
    }
  }
  return s;
}

// Classes a checkpoint has seen during training (CoLa and teacher).
inline std::vector<int> trained_classes_of(const Archive& a) {
  std::vector<int> out;
  if (a.meta.contains("trained_classes")) out = a.meta.at("trained_classes").get<std::vector<int>>();
  if (a.meta.contains("teacher")) {
    auto t = a.meta.at("teacher").value("train_classes", std::vector<int>{});
    out.insert(out.end(), t.begin(), t.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace cola::trainer

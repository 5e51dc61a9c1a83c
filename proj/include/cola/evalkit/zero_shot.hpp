#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "cola/glyphsynth/corpus.hpp"
#include "cola/matcher/matcher.hpp"

namespace cola::evalkit {

struct EvalReport {
  std::string split_name;
  double top1_accuracy = 0;  // mean over trials
  std::map<int, double> per_class_accuracy;  // pooled over trials
  std::size_t n_samples = 0;                 // per trial
  double chance_level = 0;
  std::uint64_t seed = 0;
  std::vector<double> trials;
  bool sampled = false;
  int templates_per_class = 0;
  std::string candidate_set = "test-charset templates only";

  double trial_std() const {
    if (trials.size() < 2) return 0.0;
    double m = 0, v = 0;
    for (double t : trials) m += t;
    m /= static_cast<double>(trials.size());
    for (double t : trials) v += (t - m) * (t - m);
    return std::sqrt(v / static_cast<double>(trials.size() - 1));
  }

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [c, a] : r.per_class_accuracy) per[std::to_string(c)] = a;
  return {{"split_name", r.split_name},
          {"top1_accuracy", r.top1_accuracy},
          {"top1_std", r.trial_std()},
          {"per_class_accuracy", per},
          {"n_samples", r.n_samples},
          {"chance_level", r.chance_level},
          {"seed", r.seed},
          {"trials", r.trials},
          {"sampled", r.sampled},
          {"templates_per_class", r.templates_per_class},
          {"candidate_set", r.candidate_set}};
}

struct EvalOptions {
  int templates_per_class = 10;
  int trials = 3;
  bool sampled = false;  // fresh eps and sampled latents per trial
  std::uint64_t seed = 0;
  std::vector<int> trained_classes;  // classes the model has seen; must not meet the test set
};

inline void check_zero_shot(const glyph::SplitManifest& split, const std::vector<int>& trained_classes) {
  std::set<int> seen(trained_classes.begin(), trained_classes.end());
  for (int c : split.test_classes)
    if (seen.count(c))
      throw ZeroShotViolation("split " + split.name() + ": test class " + std::to_string(c) +
                              " was used to train the model");
}

// Matches every test sample against the test charset's templates only.
template <class T>
EvalReport zero_shot_eval(model::ColaModel<T>& m, const glyph::Corpus& corpus, const glyph::SplitManifest& split,
                          const EvalOptions& opt) {
  if (opt.trials < 1) throw InvalidArgument("zero_shot_eval: trials must be >= 1");
  if (opt.templates_per_class < 1) throw InvalidArgument("zero_shot_eval: N must be >= 1");
  if (split.test_classes.empty()) throw InvalidArgument("zero_shot_eval: split has no test classes");
  check_zero_shot(split, opt.trained_classes);

  std::vector<std::vector<Image>> tpl;
  std::vector<const Image*> samples;
  std::vector<int> labels;
  for (int c : split.test_classes) {
    const auto& t = corpus.templates.at(static_cast<std::size_t>(c));
    if (t.empty()) throw InvalidArgument("test class " + std::to_string(c) + " has no templates");
    const std::size_t n = std::min<std::size_t>(t.size(), static_cast<std::size_t>(opt.templates_per_class));
    tpl.emplace_back(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(n));
    for (const auto& img : corpus.samples.at(static_cast<std::size_t>(c))) {
      samples.push_back(&img);
      labels.push_back(c);
    }
  }

  EvalReport rep;
  rep.split_name = split.name();
  rep.chance_level = split.chance_level();
  rep.seed = opt.seed;
  rep.sampled = opt.sampled;
  rep.templates_per_class = opt.templates_per_class;
  rep.n_samples = samples.size();
  std::map<int, std::pair<std::size_t, std::size_t>> per;  // class -> (correct, total)
  for (int t = 0; t < opt.trials; ++t) {
    Rng rng(derive_seed(opt.seed, 0x6576616cULL + static_cast<std::uint64_t>(t)));
    Mat<T> noise;
    if (opt.sampled) noise = m.eps_noise(rng);
    const Mat<T> eps = m.eps_value(opt.sampled ? &noise : nullptr);
    auto bank = matcher::encode_templates(tpl, split.test_classes, m, eps, opt.sampled ? &rng : nullptr);
    auto lat = m.encode_images(samples, eps, opt.sampled ? &rng : nullptr);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const int pred = matcher::predict_latent(lat[i].sample, bank, m.config().sigma);
      const bool ok = pred == labels[i];
      correct += ok;
      auto& pc = per[labels[i]];
      pc.first += ok;
      ++pc.second;
    }
    rep.trials.push_back(samples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples.size()));
  }
  double sum = 0;
  for (double a : rep.trials) sum += a;
  rep.top1_accuracy = sum / static_cast<double>(rep.trials.size());
  for (const auto& [c, ct] : per)
    rep.per_class_accuracy[c] = ct.second ? static_cast<double>(ct.first) / static_cast<double>(ct.second) : 0.0;
  return rep;
}

}  // namespace cola::evalkit

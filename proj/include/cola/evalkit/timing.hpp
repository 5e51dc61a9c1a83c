#pragma once

#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include "cola/matcher/matcher.hpp"

namespace cola::evalkit {

struct TimingReport {
  int batch_size = 0;
  int num_batches = 0;
  double avg_ms_per_batch = 0;
  std::vector<double> batch_ms;
  std::string hardware_note;
};

inline nlohmann::json to_json(const TimingReport& r) {
  return {{"batch_size", r.batch_size},
          {"num_batches", r.num_batches},
          {"avg_ms_per_batch", r.avg_ms_per_batch},
          {"batch_ms", r.batch_ms},
          {"hardware_note", r.hardware_note}};
}

inline std::string hardware_note() {
  std::string note = std::to_string(std::thread::hardware_concurrency()) + " hw threads";
#if defined(__AVX512F__)
  note += ", AVX-512";
#elif defined(__AVX2__)
  note += ", AVX2";
#endif
  note += ", single-threaded inference";
  return note;
}

// Per-batch inference time (encode + posterior + argmax) over `images`, taken
// cyclically. Three warm-up batches run first and are not counted.
template <class T>
TimingReport timing_harness(model::ColaModel<T>& m, const matcher::TemplateBank<T>& bank,
                            const std::vector<const Image*>& images, int num_batches, int batch_size = 32) {
  if (num_batches < 1) throw InvalidArgument("timing_harness: need at least one batch");
  if (batch_size < 1) throw InvalidArgument("timing_harness: batch_size must be >= 1");
  if (images.empty()) throw InvalidArgument("timing_harness: no images");
  if (bank.size() == 0) throw InvalidArgument("timing_harness: empty template bank");
  std::size_t at = 0;
  auto run_batch = [&] {
    std::vector<const Image*> batch;
    for (int b = 0; b < batch_size; ++b) batch.push_back(images[at++ % images.size()]);
    std::size_t sink = 0;
    for (const auto& s : m.encode_images(batch, bank.eps_used, nullptr, static_cast<std::size_t>(batch_size)))
      sink += static_cast<std::size_t>(matcher::predict_latent(s.mean, bank, m.config().sigma));
    return sink;
  };
  for (int w = 0; w < 3; ++w) run_batch();
  TimingReport r;
  r.batch_size = batch_size;
  r.num_batches = num_batches;
  double total = 0;
  for (int i = 0; i < num_batches; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_batch();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.batch_ms.push_back(ms);
    total += ms;
  }
  r.avg_ms_per_batch = total / num_batches;
  r.hardware_note = hardware_note();
  return r;
}

}  // namespace cola::evalkit

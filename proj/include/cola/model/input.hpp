#pragma once

#include <vector>

#include "cola/core/autograd.hpp"
#include "cola/core/image.hpp"
#include "cola/model/config.hpp"

namespace cola::model {

// Stacks images into NHWC activations (B*side*side x 1) after the model's
// input downsampling. Every image must be canvas x canvas.
template <class T>
Mat<T> prepare_batch(const std::vector<const Image*>& images, const ModelConfig& cfg) {
  const int side = cfg.model_side();
  Mat<T> x(static_cast<Eigen::Index>(images.size()) * side * side, 1);
  Eigen::Index r = 0;
  for (const Image* img : images) {
    if (img->width != cfg.canvas || img->height != cfg.canvas)
      throw ShapeError("expected a " + std::to_string(cfg.canvas) + "x" + std::to_string(cfg.canvas) + " image, got " +
                       std::to_string(img->width) + "x" + std::to_string(img->height));
    const Image small = cfg.input_downsample > 1 ? downsample(*img, cfg.input_downsample) : *img;
    for (float v : small.pixels) x(r++, 0) = static_cast<T>(v);
  }
  return x;
}

template <class T>
Mat<T> prepare_batch(const std::vector<Image>& images, const ModelConfig& cfg) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& i : images) ptrs.push_back(&i);
  return prepare_batch<T>(ptrs, cfg);
}

}  // namespace cola::model

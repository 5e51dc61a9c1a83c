#pragma once

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "cola/core/errors.hpp"

namespace cola::model {

struct ModelConfig {
  int K = 3;
  int D_slot = 128;
  int D_feat = 192;
  int iters = 3;
  double sigma = std::sqrt(2.0) / 2.0;
  int canvas = 80;

  // Input images are area-downsampled by this factor before the backbone.
  int input_downsample = 1;
  int backbone_channels = 192;
  int backbone_kernel = 5;
  bool residual_mlp = false;

  int sbd_embed = 192;
  int sbd_hidden = 1024;
  int sbd_layers = 3;

  int teacher_channels = 1024;
  int teacher_grid = 16;
  int teacher_hidden = 64;

  double eps_init_sigma = 1.0;
  unsigned long long init_seed = 0;

  int model_side() const { return canvas / input_downsample; }
  int grid_side() const { return (model_side() + 1) / 2; }
  int positions() const { return grid_side() * grid_side(); }
  int teacher_positions() const { return teacher_grid * teacher_grid; }

  void validate() const {
    if (K < 1) throw InvalidArgument("K must be >= 1");
    if (iters < 1) throw InvalidArgument("iters must be >= 1");
    if (!(sigma > 0)) throw InvalidArgument("sigma must be > 0");
    if (D_slot < 1 || D_feat < 1 || backbone_channels < 1) throw InvalidArgument("widths must be positive");
    if (input_downsample < 1 || canvas % input_downsample != 0)
      throw InvalidArgument("input_downsample must divide canvas");
    if (model_side() < 4) throw InvalidArgument("model input too small");
    if (backbone_kernel < 1 || backbone_kernel % 2 == 0) throw InvalidArgument("backbone_kernel must be odd");
    if (teacher_grid < 1 || model_side() % teacher_grid != 0)
      throw InvalidArgument("teacher_grid must divide the model input side");
    if (sbd_layers < 1 || sbd_hidden < 1 || sbd_embed < 1) throw InvalidArgument("bad decoder widths");
    if (teacher_channels < 1 || teacher_hidden < 1) throw InvalidArgument("bad teacher widths");
  }
};

// Paper hyperparameters verbatim (80x80 input, 16x16x1024 teacher grid).
inline ModelConfig paper_preset() { return ModelConfig{}; }

// Reduced widths for single-CPU runs.
inline ModelConfig desk_preset() {
  ModelConfig c;
  c.D_feat = 64;
  c.input_downsample = 2;
  c.backbone_channels = 32;
  c.sbd_embed = 64;
  c.sbd_hidden = 128;
  c.teacher_channels = 128;
  c.teacher_grid = 10;
  c.teacher_hidden = 64;
  return c;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"K", c.K},
          {"D_slot", c.D_slot},
          {"D_feat", c.D_feat},
          {"iters", c.iters},
          {"sigma", c.sigma},
          {"canvas", c.canvas},
          {"input_downsample", c.input_downsample},
          {"backbone_channels", c.backbone_channels},
          {"backbone_kernel", c.backbone_kernel},
          {"residual_mlp", c.residual_mlp},
          {"sbd_embed", c.sbd_embed},
          {"sbd_hidden", c.sbd_hidden},
          {"sbd_layers", c.sbd_layers},
          {"teacher_channels", c.teacher_channels},
          {"teacher_grid", c.teacher_grid},
          {"teacher_hidden", c.teacher_hidden},
          {"eps_init_sigma", c.eps_init_sigma},
          {"init_seed", c.init_seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  c.K = j.value("K", c.K);
  c.D_slot = j.value("D_slot", c.D_slot);
  c.D_feat = j.value("D_feat", c.D_feat);
  c.iters = j.value("iters", c.iters);
  c.sigma = j.value("sigma", c.sigma);
  c.canvas = j.value("canvas", c.canvas);
  c.input_downsample = j.value("input_downsample", c.input_downsample);
  c.backbone_channels = j.value("backbone_channels", c.backbone_channels);
  c.backbone_kernel = j.value("backbone_kernel", c.backbone_kernel);
  c.residual_mlp = j.value("residual_mlp", c.residual_mlp);
  c.sbd_embed = j.value("sbd_embed", c.sbd_embed);
  c.sbd_hidden = j.value("sbd_hidden", c.sbd_hidden);
  c.sbd_layers = j.value("sbd_layers", c.sbd_layers);
  c.teacher_channels = j.value("teacher_channels", c.teacher_channels);
  c.teacher_grid = j.value("teacher_grid", c.teacher_grid);
  c.teacher_hidden = j.value("teacher_hidden", c.teacher_hidden);
  c.eps_init_sigma = j.value("eps_init_sigma", c.eps_init_sigma);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

}  // namespace cola::model

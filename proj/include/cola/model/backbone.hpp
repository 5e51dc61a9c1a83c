#pragma once

#include "cola/model/config.hpp"
#include "cola/model/layers.hpp"

namespace cola::model {

// Cartesian grid features (x, y, 1 - x, 1 - y) for a side x side grid,
// row-major positions.
template <class T>
Mat<T> cartesian_grid(int side) {
  Mat<T> g(side * side, 4);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const T fx = side > 1 ? T(x) / T(side - 1) : T(0);
      const T fy = side > 1 ? T(y) / T(side - 1) : T(0);
      g.row(y * side + x) << fx, fy, T(1) - fx, T(1) - fy;
    }
  return g;
}

// Conv stack (first layer stride 2) + positional embedding + layer norm +
// two fully connected layers. Output: (B*M x D_feat).
template <class T>
struct Backbone {
  std::vector<Conv<T>> convs;
  Dense<T> pos;
  Norm<T> norm;
  Dense<T> fc1, fc2;
  int side = 0, grid = 0;

  static Backbone make(ParamStore<T>& ps, Rng& rng, const ModelConfig& c) {
    Backbone b;
    b.side = c.model_side();
    const int ch = c.backbone_channels;
    b.convs.push_back(Conv<T>::make(ps, rng, "backbone.conv1", 1, ch, c.backbone_kernel, 2));
    for (int i = 2; i <= 4; ++i)
      b.convs.push_back(Conv<T>::make(ps, rng, "backbone.conv" + std::to_string(i), ch, ch, c.backbone_kernel, 1));
    b.grid = static_cast<int>(b.convs[0].geometry(1, b.side, b.side).out_height());
    b.pos = Dense<T>::make(ps, rng, "backbone.pos", 4, ch);
    b.norm = Norm<T>::make(ps, "backbone.norm", ch);
    b.fc1 = Dense<T>::make(ps, rng, "backbone.fc1", ch, c.D_feat);
    b.fc2 = Dense<T>::make(ps, rng, "backbone.fc2", c.D_feat, c.D_feat);
    return b;
  }

  Var<T> operator()(Tape<T>& tape, ParamStore<T>& ps, const Var<T>& x, Eigen::Index batch) const {
    if (x.rows() != batch * side * side || x.cols() != 1)
      throw ShapeError("backbone: expected " + std::to_string(batch) + " images of " + std::to_string(side) + "x" +
                       std::to_string(side));
    Var<T> h = ops::relu(convs[0](tape, ps, x, batch, side, side));
    for (std::size_t i = 1; i < convs.size(); ++i) {
      h = convs[i](tape, ps, h, batch, grid, grid);
      if (i + 1 < convs.size()) h = ops::relu(h);
    }
    Var<T> table = pos(tape, ps, tape.constant(cartesian_grid<T>(grid)));
    h = norm(tape, ps, ops::add_tiled(h, table));
    return fc2(tape, ps, ops::relu(fc1(tape, ps, h)));
  }
};

}  // namespace cola::model

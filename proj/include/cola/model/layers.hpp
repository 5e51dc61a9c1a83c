#pragma once

#include <cmath>
#include <string>

#include "cola/core/autograd.hpp"
#include "cola/core/ops.hpp"
#include "cola/core/rng.hpp"

namespace cola::model {

template <class T>
Mat<T> uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  return m;
}

// Fully connected layer: parameters "<name>.w" (in x out) and "<name>.b".
template <class T>
struct Dense {
  std::string name;
  bool bias = true;

  static Dense make(ParamStore<T>& ps, Rng& rng, const std::string& name, int in, int out, bool bias = true) {
    const double bound = std::sqrt(6.0 / (in + out));
    ps.add(name + ".w", uniform_init<T>(rng, in, out, bound));
    if (bias) ps.add(name + ".b", Mat<T>::Zero(1, out));
    return {name, bias};
  }

  Var<T> operator()(Tape<T>& tape, ParamStore<T>& ps, const Var<T>& x) const {
    if (!bias) return ops::matmul(x, tape.param(ps.at(name + ".w")));
    return ops::linear(x, tape.param(ps.at(name + ".w")), tape.param(ps.at(name + ".b")));
  }
};

template <class T>
struct Conv {
  std::string name;
  int in = 1, out = 1, kernel = 3, stride = 1;

  static Conv make(ParamStore<T>& ps, Rng& rng, const std::string& name, int in, int out, int kernel, int stride) {
    const double bound = std::sqrt(6.0 / (kernel * kernel * in));
    ps.add(name + ".w", uniform_init<T>(rng, kernel * kernel * in, out, bound));
    ps.add(name + ".b", Mat<T>::Zero(1, out));
    return {name, in, out, kernel, stride};
  }

  ops::ConvGeometry geometry(Eigen::Index batch, Eigen::Index h, Eigen::Index w) const {
    ops::ConvGeometry g;
    g.batch = batch;
    g.height = h;
    g.width = w;
    g.in_channels = in;
    g.kernel = kernel;
    g.stride = stride;
    g.padding = kernel / 2;
    return g;
  }

  Var<T> operator()(Tape<T>& tape, ParamStore<T>& ps, const Var<T>& x, Eigen::Index batch, Eigen::Index h,
                    Eigen::Index w) const {
    return ops::conv2d(x, tape.param(ps.at(name + ".w")), tape.param(ps.at(name + ".b")), geometry(batch, h, w));
  }
};

template <class T>
struct Norm {
  std::string name;

  static Norm make(ParamStore<T>& ps, const std::string& name, int width) {
    ps.add(name + ".gamma", Mat<T>::Ones(1, width));
    ps.add(name + ".beta", Mat<T>::Zero(1, width));
    return {name};
  }

  Var<T> operator()(Tape<T>& tape, ParamStore<T>& ps, const Var<T>& x) const {
    return ops::layer_norm(x, tape.param(ps.at(name + ".gamma")), tape.param(ps.at(name + ".beta")));
  }
};

// Images (row-major, one per row of `pixels`) to NHWC activations with one
// channel: (B*side*side x 1).
template <class T>
Mat<T> images_to_nhwc(const Mat<T>& pixels) {
  return Eigen::Map<const Mat<T>>(pixels.data(), pixels.size(), 1);
}

}  // namespace cola::model

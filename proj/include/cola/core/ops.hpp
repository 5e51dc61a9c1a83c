#pragma once

// Differentiable operations on Var<T>. Activations are stored row-major with
// one row per spatial position (or per slot) and channels along columns;
// batched tensors stack per-item row blocks vertically.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cola/core/autograd.hpp"

namespace cola::ops {

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
}

}  // namespace detail

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + detail::shape_str(a.rows(), a.cols()) + " x " +
                     detail::shape_str(b.rows(), b.cols()));
  Mat<T> out;
  out.noalias() = a.value() * b.value();
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return a.tape()->record(std::move(out), {a, b}, [na, nb](const Mat<T>& g) {
    if (na->requires_grad) na->accumulate(g * nb->value.transpose());
    if (nb->requires_grad) nb->accumulate(na->value.transpose() * g);
  });
}

// x * w + b, with b a 1 x out row broadcast over rows.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw ShapeError("linear: x" + detail::shape_str(x.rows(), x.cols()) + " w" +
                     detail::shape_str(w.rows(), w.cols()) + " b" +
                     detail::shape_str(b.rows(), b.cols()));
  Mat<T> out;
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  Node<T>* nx = x.node();
  Node<T>* nw = w.node();
  Node<T>* nbias = b.node();
  return x.tape()->record(std::move(out), {x, w, b}, [nx, nw, nbias](const Mat<T>& g) {
    if (nx->requires_grad) nx->accumulate(g * nw->value.transpose());
    if (nw->requires_grad) nw->accumulate(nx->value.transpose() * g);
    if (nbias->requires_grad) nbias->accumulate(g.colwise().sum());
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return a.tape()->record(a.value() + b.value(), {a, b}, [na, nb](const Mat<T>& g) {
    if (na->requires_grad) na->accumulate(g);
    if (nb->requires_grad) nb->accumulate(g);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return a.tape()->record(a.value() - b.value(), {a, b}, [na, nb](const Mat<T>& g) {
    if (na->requires_grad) na->accumulate(g);
    if (nb->requires_grad) nb->accumulate(-g);
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [na, nb](const Mat<T>& g) {
    if (na->requires_grad) na->accumulate(g.cwiseProduct(nb->value));
    if (nb->requires_grad) nb->accumulate(g.cwiseProduct(na->value));
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Node<T>* na = a.node();
  return a.tape()->record(a.value() * s, {a}, [na, s](const Mat<T>& g) { na->accumulate(g * s); });
}

// 1 - a
template <class T>
Var<T> one_minus(const Var<T>& a) {
  Node<T>* na = a.node();
  Mat<T> out = (-a.value().array() + T(1)).matrix();
  return a.tape()->record(std::move(out), {a}, [na](const Mat<T>& g) { na->accumulate(-g); });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Node<T>* na = a.node();
  Mat<T> out = a.value().cwiseMax(T(0));
  return a.tape()->record(std::move(out), {a}, [na](const Mat<T>& g) {
    na->accumulate((na->value.array() > T(0)).select(g.array(), T(0)).matrix());
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Mat<T> out = (T(1) / ((-a.value().array()).exp() + T(1))).matrix();
  Node<T>* na = a.node();
  auto rec = a.tape()->record(std::move(out), {a}, [](const Mat<T>&) {});
  if (rec.requires_grad()) {
    Node<T>* no = rec.node();
    no->backward = [na, no](const Mat<T>& g) {
      na->accumulate((g.array() * no->value.array() * (T(1) - no->value.array())).matrix());
    };
  }
  return rec;
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  Mat<T> out = a.value().array().tanh().matrix();
  Node<T>* na = a.node();
  auto rec = a.tape()->record(std::move(out), {a}, [](const Mat<T>&) {});
  if (rec.requires_grad()) {
    Node<T>* no = rec.node();
    no->backward = [na, no](const Mat<T>& g) {
      na->accumulate((g.array() * (T(1) - no->value.array().square())).matrix());
    };
  }
  return rec;
}

template <class T>
Var<T> exp(const Var<T>& a) {
  Mat<T> out = a.value().array().exp().matrix();
  Node<T>* na = a.node();
  auto rec = a.tape()->record(std::move(out), {a}, [](const Mat<T>&) {});
  if (rec.requires_grad()) {
    Node<T>* no = rec.node();
    no->backward = [na, no](const Mat<T>& g) { na->accumulate(g.cwiseProduct(no->value)); };
  }
  return rec;
}

// Adds a (period x C) table to every block of `period` rows of x.
template <class T>
Var<T> add_tiled(const Var<T>& x, const Var<T>& table) {
  const Eigen::Index period = table.rows();
  if (table.cols() != x.cols() || period == 0 || x.rows() % period != 0)
    throw ShapeError("add_tiled: x" + detail::shape_str(x.rows(), x.cols()) + " table" +
                     detail::shape_str(table.rows(), table.cols()));
  Mat<T> out = x.value();
  const Eigen::Index blocks = x.rows() / period;
  for (Eigen::Index b = 0; b < blocks; ++b) out.middleRows(b * period, period) += table.value();
  Node<T>* nx = x.node();
  Node<T>* nt = table.node();
  return x.tape()->record(std::move(out), {x, table}, [nx, nt, period, blocks](const Mat<T>& g) {
    if (nx->requires_grad) nx->accumulate(g);
    if (nt->requires_grad) {
      nt->ensure_grad();
      for (Eigen::Index b = 0; b < blocks; ++b) nt->grad += g.middleRows(b * period, period);
    }
  });
}

// Stacks `times` copies of x vertically.
template <class T>
Var<T> tile_rows(const Var<T>& x, Eigen::Index times) {
  const Eigen::Index r = x.rows();
  Mat<T> out(r * times, x.cols());
  for (Eigen::Index b = 0; b < times; ++b) out.middleRows(b * r, r) = x.value();
  Node<T>* nx = x.node();
  return x.tape()->record(std::move(out), {x}, [nx, r, times](const Mat<T>& g) {
    nx->ensure_grad();
    for (Eigen::Index b = 0; b < times; ++b) nx->grad += g.middleRows(b * r, r);
  });
}

// Repeats every row of x `times` times in place: row i becomes rows
// [i*times, (i+1)*times).
template <class T>
Var<T> repeat_rows(const Var<T>& x, Eigen::Index times) {
  const Eigen::Index r = x.rows();
  Mat<T> out(r * times, x.cols());
  for (Eigen::Index i = 0; i < r; ++i)
    out.middleRows(i * times, times) = x.value().row(i).replicate(times, 1);
  Node<T>* nx = x.node();
  return x.tape()->record(std::move(out), {x}, [nx, r, times](const Mat<T>& g) {
    nx->ensure_grad();
    for (Eigen::Index i = 0; i < r; ++i) nx->grad.row(i) += g.middleRows(i * times, times).colwise().sum();
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
  Mat<T> out = x.value().middleCols(start, count);
  Node<T>* nx = x.node();
  return x.tape()->record(std::move(out), {x}, [nx, start, count](const Mat<T>& g) {
    nx->ensure_grad();
    nx->grad.middleCols(start, count) += g;
  });
}

// Row-major reinterpretation; element order is unchanged.
template <class T>
Var<T> reshape(const Var<T>& x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.rows() * x.cols()) throw ShapeError("reshape: element count mismatch");
  Mat<T> out = Eigen::Map<const Mat<T>>(x.value().data(), rows, cols);
  Node<T>* nx = x.node();
  const Eigen::Index r0 = x.rows();
  const Eigen::Index c0 = x.cols();
  return x.tape()->record(std::move(out), {x}, [nx, r0, c0](const Mat<T>& g) {
    nx->accumulate(Eigen::Map<const Mat<T>>(g.data(), r0, c0));
  });
}

// Row-wise layer normalization with affine gamma/beta (1 x C each).
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  if (gamma.cols() != c || beta.cols() != c) throw ShapeError("layer_norm: affine width mismatch");
  Mat<T> xhat(n, c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.value().row(i).mean();
    const T var = (x.value().row(i).array() - mean).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mean) * inv_std(i);
  }
  Mat<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  Node<T>* nx = x.node();
  Node<T>* ng = gamma.node();
  Node<T>* nb = beta.node();
  return x.tape()->record(std::move(out), {x, gamma, beta},
                          [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std), c](const Mat<T>& g) {
                            if (ng->requires_grad) ng->accumulate(g.cwiseProduct(xhat).colwise().sum());
                            if (nb->requires_grad) nb->accumulate(g.colwise().sum());
                            if (nx->requires_grad) {
                              Mat<T> gx = (g.array().rowwise() * ng->value.row(0).array()).matrix();
                              Mat<T> dx(gx.rows(), c);
                              for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                                const T m1 = gx.row(i).mean();
                                const T m2 = gx.row(i).cwiseProduct(xhat.row(i)).mean();
                                dx.row(i) = (gx.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                              }
                              nx->accumulate(dx);
                            }
                          });
}

// Softmax over the rows of each block of `block` consecutive rows, taken
// independently for every column. With attention logits laid out as
// (batch*K) x M this is the softmax over slots.
template <class T>
Var<T> block_col_softmax(const Var<T>& x, Eigen::Index block) {
  if (block <= 0 || x.rows() % block != 0) throw ShapeError("block_col_softmax: bad block size");
  const Eigen::Index blocks = x.rows() / block;
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < blocks; ++b) {
    auto in = x.value().middleRows(b * block, block);
    auto o = out.middleRows(b * block, block);
    Eigen::Matrix<T, 1, Eigen::Dynamic> mx = in.colwise().maxCoeff();
    o = (in.rowwise() - mx).array().exp().matrix();
    Eigen::Matrix<T, 1, Eigen::Dynamic> s = o.colwise().sum();
    o.array().rowwise() /= s.array();
  }
  Node<T>* nx = x.node();
  auto rec = x.tape()->record(std::move(out), {x}, [](const Mat<T>&) {});
  if (rec.requires_grad()) {
    Node<T>* no = rec.node();
    no->backward = [nx, no, block, blocks](const Mat<T>& g) {
      nx->ensure_grad();
      for (Eigen::Index b = 0; b < blocks; ++b) {
        auto y = no->value.middleRows(b * block, block);
        auto gy = g.middleRows(b * block, block);
        Eigen::Matrix<T, 1, Eigen::Dynamic> dot = y.cwiseProduct(gy).colwise().sum();
        nx->grad.middleRows(b * block, block).array() += y.array() * (gy.rowwise() - dot).array();
      }
    };
  }
  return rec;
}

// Divides every row by its sum.
template <class T>
Var<T> row_normalize(const Var<T>& x) {
  Eigen::Matrix<T, Eigen::Dynamic, 1> s = x.value().rowwise().sum();
  Mat<T> out = (x.value().array().colwise() / s.array()).matrix();
  Node<T>* nx = x.node();
  auto rec = x.tape()->record(std::move(out), {x}, [](const Mat<T>&) {});
  if (rec.requires_grad()) {
    Node<T>* no = rec.node();
    no->backward = [nx, no, s = std::move(s)](const Mat<T>& g) {
      Eigen::Matrix<T, Eigen::Dynamic, 1> dot = g.cwiseProduct(no->value).rowwise().sum();
      nx->accumulate(((g.colwise() - dot).array().colwise() / s.array()).matrix());
    };
  }
  return rec;
}

// Per-item product: a is (B*r x n), b is (B*n x c); returns (B*r x c).
template <class T>
Var<T> block_matmul(const Var<T>& a, const Var<T>& b, Eigen::Index batch) {
  if (batch <= 0 || a.rows() % batch != 0 || b.rows() % batch != 0 || a.cols() != b.rows() / batch)
    throw ShapeError("block_matmul: incompatible shapes");
  const Eigen::Index r = a.rows() / batch;
  const Eigen::Index n = a.cols();
  Mat<T> out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < batch; ++i)
    out.middleRows(i * r, r).noalias() = a.value().middleRows(i * r, r) * b.value().middleRows(i * n, n);
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return a.tape()->record(std::move(out), {a, b}, [na, nb, batch, r, n](const Mat<T>& g) {
    if (na->requires_grad) na->ensure_grad();
    if (nb->requires_grad) nb->ensure_grad();
    for (Eigen::Index i = 0; i < batch; ++i) {
      auto gi = g.middleRows(i * r, r);
      if (na->requires_grad)
        na->grad.middleRows(i * r, r).noalias() += gi * nb->value.middleRows(i * n, n).transpose();
      if (nb->requires_grad)
        nb->grad.middleRows(i * n, n).noalias() += na->value.middleRows(i * r, r).transpose() * gi;
    }
  });
}

// Per-item a * b^T: a is (B*r x d), b is (B*n x d); returns (B*r x n).
template <class T>
Var<T> block_matmul_nt(const Var<T>& a, const Var<T>& b, Eigen::Index batch) {
  if (batch <= 0 || a.rows() % batch != 0 || b.rows() % batch != 0 || a.cols() != b.cols())
    throw ShapeError("block_matmul_nt: incompatible shapes");
  const Eigen::Index r = a.rows() / batch;
  const Eigen::Index n = b.rows() / batch;
  Mat<T> out(a.rows(), n);
  for (Eigen::Index i = 0; i < batch; ++i)
    out.middleRows(i * r, r).noalias() =
        a.value().middleRows(i * r, r) * b.value().middleRows(i * n, n).transpose();
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return a.tape()->record(std::move(out), {a, b}, [na, nb, batch, r, n](const Mat<T>& g) {
    if (na->requires_grad) na->ensure_grad();
    if (nb->requires_grad) nb->ensure_grad();
    for (Eigen::Index i = 0; i < batch; ++i) {
      auto gi = g.middleRows(i * r, r);
      if (na->requires_grad) na->grad.middleRows(i * r, r).noalias() += gi * nb->value.middleRows(i * n, n);
      if (nb->requires_grad)
        nb->grad.middleRows(i * n, n).noalias() += gi.transpose() * na->value.middleRows(i * r, r);
    }
  });
}

// Softmax across the `slots` entries sharing (item, position) in a column
// vector laid out as [item][slot][position].
template <class T>
Var<T> slot_softmax(const Var<T>& logits, Eigen::Index slots, Eigen::Index positions) {
  if (logits.cols() != 1 || logits.rows() % (slots * positions) != 0)
    throw ShapeError("slot_softmax: expected column of item*slots*positions");
  const Eigen::Index items = logits.rows() / (slots * positions);
  Mat<T> out(logits.rows(), 1);
  const auto& in = logits.value();
  for (Eigen::Index b = 0; b < items; ++b) {
    for (Eigen::Index p = 0; p < positions; ++p) {
      T mx = -std::numeric_limits<T>::infinity();
      for (Eigen::Index k = 0; k < slots; ++k) mx = std::max(mx, in((b * slots + k) * positions + p, 0));
      T s = 0;
      for (Eigen::Index k = 0; k < slots; ++k) {
        const Eigen::Index idx = (b * slots + k) * positions + p;
        out(idx, 0) = std::exp(in(idx, 0) - mx);
        s += out(idx, 0);
      }
      for (Eigen::Index k = 0; k < slots; ++k) out((b * slots + k) * positions + p, 0) /= s;
    }
  }
  Node<T>* nl = logits.node();
  auto rec = logits.tape()->record(std::move(out), {logits}, [](const Mat<T>&) {});
  if (rec.requires_grad()) {
    Node<T>* no = rec.node();
    no->backward = [nl, no, items, slots, positions](const Mat<T>& g) {
      nl->ensure_grad();
      for (Eigen::Index b = 0; b < items; ++b) {
        for (Eigen::Index p = 0; p < positions; ++p) {
          T dot = 0;
          for (Eigen::Index k = 0; k < slots; ++k) {
            const Eigen::Index idx = (b * slots + k) * positions + p;
            dot += g(idx, 0) * no->value(idx, 0);
          }
          for (Eigen::Index k = 0; k < slots; ++k) {
            const Eigen::Index idx = (b * slots + k) * positions + p;
            nl->grad(idx, 0) += no->value(idx, 0) * (g(idx, 0) - dot);
          }
        }
      }
    };
  }
  return rec;
}

// out[item, p, :] = sum_k masks[item, k, p] * features[item, k, p, :]
template <class T>
Var<T> masked_slot_sum(const Var<T>& masks, const Var<T>& features, Eigen::Index slots, Eigen::Index positions) {
  if (masks.cols() != 1 || masks.rows() != features.rows() || masks.rows() % (slots * positions) != 0)
    throw ShapeError("masked_slot_sum: incompatible shapes");
  const Eigen::Index items = masks.rows() / (slots * positions);
  const Eigen::Index c = features.cols();
  Mat<T> out = Mat<T>::Zero(items * positions, c);
  for (Eigen::Index b = 0; b < items; ++b)
    for (Eigen::Index k = 0; k < slots; ++k) {
      const Eigen::Index base = (b * slots + k) * positions;
      out.middleRows(b * positions, positions).array() +=
          features.value().middleRows(base, positions).array().colwise() *
          masks.value().middleRows(base, positions).col(0).array();
    }
  Node<T>* nm = masks.node();
  Node<T>* nf = features.node();
  return masks.tape()->record(std::move(out), {masks, features},
                              [nm, nf, items, slots, positions](const Mat<T>& g) {
                                if (nm->requires_grad) nm->ensure_grad();
                                if (nf->requires_grad) nf->ensure_grad();
                                for (Eigen::Index b = 0; b < items; ++b)
                                  for (Eigen::Index k = 0; k < slots; ++k) {
                                    const Eigen::Index base = (b * slots + k) * positions;
                                    auto gb = g.middleRows(b * positions, positions);
                                    if (nm->requires_grad)
                                      nm->grad.middleRows(base, positions).col(0) +=
                                          gb.cwiseProduct(nf->value.middleRows(base, positions)).rowwise().sum();
                                    if (nf->requires_grad)
                                      nf->grad.middleRows(base, positions).array() +=
                                          gb.array().colwise() * nm->value.middleRows(base, positions).col(0).array();
                                  }
                              });
}

// Geometry of a batched NHWC convolution.
struct ConvGeometry {
  Eigen::Index batch = 1;
  Eigen::Index height = 0;
  Eigen::Index width = 0;
  Eigen::Index in_channels = 1;
  Eigen::Index kernel = 3;
  Eigen::Index stride = 1;
  Eigen::Index padding = 1;

  Eigen::Index out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  Eigen::Index out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  Eigen::Index patch() const { return kernel * kernel * in_channels; }
};

namespace detail {

// Writes the patch matrix into `cols`, reusing its storage.
template <class T>
void im2col_into(const Mat<T>& x, const ConvGeometry& g, Mat<T>& cols) {
  const Eigen::Index oh = g.out_height(), ow = g.out_width(), C = g.in_channels;
  cols.resize(g.batch * oh * ow, g.patch());
  for (Eigen::Index b = 0; b < g.batch; ++b)
    for (Eigen::Index oy = 0; oy < oh; ++oy)
      for (Eigen::Index ox = 0; ox < ow; ++ox) {
        T* row = cols.data() + ((b * oh + oy) * ow + ox) * g.patch();
        for (Eigen::Index ky = 0; ky < g.kernel; ++ky) {
          const Eigen::Index iy = oy * g.stride - g.padding + ky;
          T* dst = row + ky * g.kernel * C;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.kernel * C, T(0));
            continue;
          }
          for (Eigen::Index kx = 0; kx < g.kernel; ++kx) {
            const Eigen::Index ix = ox * g.stride - g.padding + kx;
            if (ix < 0 || ix >= g.width) {
              std::fill(dst + kx * C, dst + (kx + 1) * C, T(0));
              continue;
            }
            const T* src = x.data() + ((b * g.height + iy) * g.width + ix) * C;
            std::copy(src, src + C, dst + kx * C);
          }
        }
      }
}

template <class T>
Mat<T> im2col(const Mat<T>& x, const ConvGeometry& g) {
  Mat<T> cols;
  im2col_into(x, g, cols);
  return cols;
}

template <class T>
Mat<T>& conv_workspace(int which) {
  thread_local Mat<T> ws[2];
  return ws[which];
}

template <class T>
void col2im_add(const Mat<T>& cols, const ConvGeometry& g, Mat<T>& dx) {
  const Eigen::Index oh = g.out_height(), ow = g.out_width(), C = g.in_channels;
  for (Eigen::Index b = 0; b < g.batch; ++b)
    for (Eigen::Index oy = 0; oy < oh; ++oy)
      for (Eigen::Index ox = 0; ox < ow; ++ox) {
        const T* row = cols.data() + ((b * oh + oy) * ow + ox) * g.patch();
        for (Eigen::Index ky = 0; ky < g.kernel; ++ky) {
          const Eigen::Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Eigen::Index kx = 0; kx < g.kernel; ++kx) {
            const Eigen::Index ix = ox * g.stride - g.padding + kx;
            if (ix < 0 || ix >= g.width) continue;
            T* dst = dx.data() + ((b * g.height + iy) * g.width + ix) * C;
            const T* src = row + (ky * g.kernel + kx) * C;
            for (Eigen::Index c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
      }
}

}  // namespace detail

// 2-D convolution on NHWC activations stored as (B*H*W x C_in).
// Weight is (kernel*kernel*C_in x C_out) in (ky, kx, c) order, bias 1 x C_out.
// The patch matrix is rebuilt during backward (in a reused per-thread
// workspace) instead of being kept alive.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, const ConvGeometry& geo) {
  if (x.rows() != geo.batch * geo.height * geo.width || x.cols() != geo.in_channels)
    throw ShapeError("conv2d: input " + detail::shape_str(x.rows(), x.cols()) + " does not match geometry");
  if (w.rows() != geo.patch() || b.rows() != 1 || b.cols() != w.cols())
    throw ShapeError("conv2d: weight " + detail::shape_str(w.rows(), w.cols()) + " does not match geometry");
  Mat<T> out;
  {
    Mat<T>& cols = detail::conv_workspace<T>(0);
    detail::im2col_into(x.value(), geo, cols);
    out.noalias() = cols * w.value();
  }
  out.rowwise() += b.value().row(0);
  Node<T>* nx = x.node();
  Node<T>* nw = w.node();
  Node<T>* nb = b.node();
  return x.tape()->record(std::move(out), {x, w, b}, [nx, nw, nb, geo](const Mat<T>& g) {
    if (nb->requires_grad) nb->accumulate(g.colwise().sum());
    if (nw->requires_grad) {
      Mat<T>& cols = detail::conv_workspace<T>(0);
      detail::im2col_into(nx->value, geo, cols);
      nw->ensure_grad();
      nw->grad.noalias() += cols.transpose() * g;
    }
    if (nx->requires_grad) {
      Mat<T>& dcols = detail::conv_workspace<T>(1);
      dcols.noalias() = g * nw->value.transpose();
      nx->ensure_grad();
      detail::col2im_add(dcols, geo, nx->grad);
    }
  });
}

// Average pooling with a square window equal to its stride.
template <class T>
Var<T> avg_pool(const Var<T>& x, Eigen::Index batch, Eigen::Index height, Eigen::Index width, Eigen::Index factor) {
  if (x.rows() != batch * height * width || height % factor != 0 || width % factor != 0)
    throw ShapeError("avg_pool: bad geometry");
  const Eigen::Index oh = height / factor, ow = width / factor, C = x.cols();
  const T inv = T(1) / T(factor * factor);
  Mat<T> out = Mat<T>::Zero(batch * oh * ow, C);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index y = 0; y < height; ++y)
      for (Eigen::Index xx = 0; xx < width; ++xx)
        out.row((b * oh + y / factor) * ow + xx / factor) += x.value().row((b * height + y) * width + xx) * inv;
  Node<T>* nx = x.node();
  return x.tape()->record(std::move(out), {x}, [nx, batch, height, width, factor, oh, ow, inv](const Mat<T>& g) {
    nx->ensure_grad();
    for (Eigen::Index b = 0; b < batch; ++b)
      for (Eigen::Index y = 0; y < height; ++y)
        for (Eigen::Index xx = 0; xx < width; ++xx)
          nx->grad.row((b * height + y) * width + xx) += g.row((b * oh + y / factor) * ow + xx / factor) * inv;
  });
}

// Mean over each block of `block` rows: (B*block x C) -> (B x C).
template <class T>
Var<T> block_mean_rows(const Var<T>& x, Eigen::Index block) {
  if (block <= 0 || x.rows() % block != 0) throw ShapeError("block_mean_rows: bad block size");
  const Eigen::Index items = x.rows() / block;
  Mat<T> out(items, x.cols());
  for (Eigen::Index b = 0; b < items; ++b) out.row(b) = x.value().middleRows(b * block, block).colwise().mean();
  Node<T>* nx = x.node();
  return x.tape()->record(std::move(out), {x}, [nx, block, items](const Mat<T>& g) {
    nx->ensure_grad();
    for (Eigen::Index b = 0; b < items; ++b)
      nx->grad.middleRows(b * block, block).rowwise() += g.row(b) / T(block);
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  Mat<T> out(1, 1);
  out(0, 0) = x.value().sum();
  Node<T>* nx = x.node();
  return x.tape()->record(std::move(out), {x}, [nx](const Mat<T>& g) {
    nx->ensure_grad();
    nx->grad.array() += g(0, 0);
  });
}

template <class T>
Var<T> sum_squares(const Var<T>& x) {
  Mat<T> out(1, 1);
  out(0, 0) = x.value().squaredNorm();
  Node<T>* nx = x.node();
  return x.tape()->record(std::move(out), {x}, [nx](const Mat<T>& g) { nx->accumulate(nx->value * (T(2) * g(0, 0))); });
}

// d(i, c) = ||a_i - b_c||^2 for rows a_i of a and b_c of b.
template <class T>
Var<T> sq_dist_rows(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.cols()) throw ShapeError("sq_dist_rows: width mismatch");
  Mat<T> out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index c = 0; c < b.rows(); ++c) out(i, c) = (a.value().row(i) - b.value().row(c)).squaredNorm();
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return a.tape()->record(std::move(out), {a, b}, [na, nb](const Mat<T>& g) {
    if (na->requires_grad) {
      Mat<T> ga = (na->value.array().colwise() * g.rowwise().sum().array()).matrix();
      ga.noalias() -= g * nb->value;
      na->accumulate(ga * T(2));
    }
    if (nb->requires_grad) {
      Mat<T> gb = (nb->value.array().colwise() * g.colwise().sum().transpose().array()).matrix();
      gb.noalias() -= g.transpose() * na->value;
      nb->accumulate(gb * T(2));
    }
  });
}

template <class T>
Var<T> log_softmax_rows(const Var<T>& x) {
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T mx = x.value().row(i).maxCoeff();
    const T lse = mx + std::log((x.value().row(i).array() - mx).exp().sum());
    out.row(i) = x.value().row(i).array() - lse;
  }
  Node<T>* nx = x.node();
  auto rec = x.tape()->record(std::move(out), {x}, [](const Mat<T>&) {});
  if (rec.requires_grad()) {
    Node<T>* no = rec.node();
    no->backward = [nx, no](const Mat<T>& g) {
      Mat<T> p = no->value.array().exp().matrix();
      Eigen::Matrix<T, Eigen::Dynamic, 1> gs = g.rowwise().sum();
      nx->accumulate(g - (p.array().colwise() * gs.array()).matrix());
    };
  }
  return rec;
}

// Mean over rows of -x(i, labels[i]).
template <class T>
Var<T> nll_mean(const Var<T>& log_probs, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != log_probs.rows()) throw ShapeError("nll_mean: label count");
  std::vector<int> idx(labels.begin(), labels.end());
  T acc = 0;
  for (Eigen::Index i = 0; i < log_probs.rows(); ++i) {
    if (idx[i] < 0 || idx[i] >= log_probs.cols()) throw InvalidArgument("nll_mean: label out of range");
    acc -= log_probs.value()(i, idx[i]);
  }
  Mat<T> out(1, 1);
  out(0, 0) = acc / T(log_probs.rows());
  Node<T>* nx = log_probs.node();
  return log_probs.tape()->record(std::move(out), {log_probs}, [nx, idx = std::move(idx)](const Mat<T>& g) {
    nx->ensure_grad();
    const T s = g(0, 0) / T(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) nx->grad(static_cast<Eigen::Index>(i), idx[i]) -= s;
  });
}

// a + s * b for scalars.
template <class T>
Var<T> axpy(const Var<T>& a, T s, const Var<T>& b) {
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  Mat<T> out = a.value() + s * b.value();
  return a.tape()->record(std::move(out), {a, b}, [na, nb, s](const Mat<T>& g) {
    if (na->requires_grad) na->accumulate(g);
    if (nb->requires_grad) nb->accumulate(g * s);
  });
}

}  // namespace cola::ops

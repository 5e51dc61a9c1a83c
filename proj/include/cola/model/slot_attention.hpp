#pragma once

#include <cmath>
#include <functional>

#include "cola/model/config.hpp"
#include "cola/model/layers.hpp"

namespace cola::model {

// Replacement projections / update used by test harnesses. Any empty
// member falls back to the learned layer.
template <class T>
struct SlotAttentionHooks {
  std::function<Var<T>(const Var<T>&)> f_q, f_k, f_v;
  std::function<Var<T>(const Var<T>& mu, const Var<T>& update)> update;
};

template <class T>
struct SlotAttentionResult {
  Var<T> mu;         // (B*K x D_slot)
  Var<T> attention;  // (B*K x M), final iteration, columns of each block sum to 1
};

template <class T>
struct SlotAttention {
  int K = 3, D = 128, iters = 3;
  bool residual = false;
  Norm<T> norm_in, norm_slots, norm_mlp;
  Dense<T> f_q, f_k, f_v, gru_x, gru_h, mlp1, mlp2;

  static SlotAttention make(ParamStore<T>& ps, Rng& rng, const ModelConfig& c) {
    SlotAttention s;
    s.K = c.K;
    s.D = c.D_slot;
    s.iters = c.iters;
    s.residual = c.residual_mlp;
    s.norm_in = Norm<T>::make(ps, "slots.norm_in", c.D_feat);
    s.norm_slots = Norm<T>::make(ps, "slots.norm_slots", c.D_slot);
    s.f_q = Dense<T>::make(ps, rng, "slots.q", c.D_slot, c.D_slot, false);
    s.f_k = Dense<T>::make(ps, rng, "slots.k", c.D_feat, c.D_slot, false);
    s.f_v = Dense<T>::make(ps, rng, "slots.v", c.D_feat, c.D_slot, false);
    s.gru_x = Dense<T>::make(ps, rng, "slots.gru_x", c.D_slot, 3 * c.D_slot);
    s.gru_h = Dense<T>::make(ps, rng, "slots.gru_h", c.D_slot, 3 * c.D_slot);
    if (s.residual) {
      s.norm_mlp = Norm<T>::make(ps, "slots.norm_mlp", c.D_slot);
      s.mlp1 = Dense<T>::make(ps, rng, "slots.mlp1", c.D_slot, 2 * c.D_slot);
      s.mlp2 = Dense<T>::make(ps, rng, "slots.mlp2", 2 * c.D_slot, c.D_slot);
    }
    return s;
  }

  Var<T> gru(Tape<T>& tape, ParamStore<T>& ps, const Var<T>& h, const Var<T>& x) const {
    Var<T> gx = gru_x(tape, ps, x);
    Var<T> gh = gru_h(tape, ps, h);
    const Eigen::Index d = h.cols();
    Var<T> r = ops::sigmoid(ops::add(ops::slice_cols(gx, 0, d), ops::slice_cols(gh, 0, d)));
    Var<T> z = ops::sigmoid(ops::add(ops::slice_cols(gx, d, d), ops::slice_cols(gh, d, d)));
    Var<T> n = ops::tanh(ops::add(ops::slice_cols(gx, 2 * d, d), ops::mul(r, ops::slice_cols(gh, 2 * d, d))));
    return ops::add(ops::mul(ops::one_minus(z), n), ops::mul(z, h));
  }

  // H: (B*M x D_feat); eps: (K x D_slot) shared by every item.
  SlotAttentionResult<T> operator()(Tape<T>& tape, ParamStore<T>& ps, const Var<T>& H, const Var<T>& eps,
                                    Eigen::Index batch, const SlotAttentionHooks<T>* hooks = nullptr) const {
    if (eps.rows() != K) throw ShapeError("slot attention: eps has " + std::to_string(eps.rows()) + " rows, K=" +
                                          std::to_string(K));
    if (batch <= 0 || H.rows() % batch != 0) throw ShapeError("slot attention: feature rows not divisible by batch");
    auto use = [&](const std::function<Var<T>(const Var<T>&)>* hook, auto&& fallback, const Var<T>& x) {
      return hook && *hook ? (*hook)(x) : fallback(x);
    };
    const bool hq = hooks && hooks->f_q, hk = hooks && hooks->f_k, hv = hooks && hooks->f_v;
    Var<T> inputs = hk && hv ? H : norm_in(tape, ps, H);
    Var<T> k = use(hk ? &hooks->f_k : nullptr, [&](const Var<T>& x) { return f_k(tape, ps, x); }, inputs);
    Var<T> v = use(hv ? &hooks->f_v : nullptr, [&](const Var<T>& x) { return f_v(tape, ps, x); }, inputs);
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(k.cols()));

    Var<T> mu = ops::tile_rows(eps, batch);
    Var<T> attn;
    for (int it = 0; it < iters; ++it) {
      Var<T> q = use(hq ? &hooks->f_q : nullptr,
                     [&](const Var<T>& x) { return f_q(tape, ps, norm_slots(tape, ps, x)); }, mu);
      Var<T> logits = ops::scale(ops::block_matmul_nt(q, k, batch), inv_sqrt_d);
      attn = ops::block_col_softmax(logits, K);
      Var<T> w = ops::row_normalize(attn);
      Var<T> upd = ops::block_matmul(w, v, batch);
      mu = hooks && hooks->update ? hooks->update(mu, upd) : gru(tape, ps, mu, upd);
      if (residual) mu = ops::add(mu, mlp2(tape, ps, ops::relu(mlp1(tape, ps, norm_mlp(tape, ps, mu)))));
      if (!mu.value().allFinite() || !attn.value().allFinite())
        throw NumericError("slot attention produced non-finite values", it);
    }
    return {mu, attn};
  }
};

}  // namespace cola::model

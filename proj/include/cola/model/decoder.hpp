#pragma once

#include "cola/model/config.hpp"
#include "cola/model/layers.hpp"

namespace cola::model {

template <class T>
struct DecodedVars {
  Var<T> logits;    // (B*K*G x 1)
  Var<T> masks;     // (B*K*G x 1), softmax over K at every position
  Var<T> features;  // (B*K*G x C)
  Var<T> mu_d;      // (B*G x C)
};

// Spatial broadcast decoder applied to every slot, followed by mask-weighted
// composition and a bias-free linear layer.
template <class T>
struct Decoder {
  int K = 3, G = 1, C = 1;
  Dense<T> in;
  std::vector<Dense<T>> hidden;
  Dense<T> out, compose;

  static Decoder make(ParamStore<T>& ps, Rng& rng, const ModelConfig& c) {
    Decoder d;
    d.K = c.K;
    d.G = c.teacher_positions();
    d.C = c.teacher_channels;
    d.in = Dense<T>::make(ps, rng, "decoder.in", c.D_slot, c.sbd_embed);
    ps.add("decoder.pos", uniform_init<T>(rng, d.G, c.sbd_embed, 0.1));
    int width = c.sbd_embed;
    for (int i = 0; i < c.sbd_layers; ++i) {
      d.hidden.push_back(Dense<T>::make(ps, rng, "decoder.fc" + std::to_string(i + 1), width, c.sbd_hidden));
      width = c.sbd_hidden;
    }
    d.out = Dense<T>::make(ps, rng, "decoder.out", width, c.teacher_channels + 1);
    d.compose = Dense<T>::make(ps, rng, "decoder.compose", c.teacher_channels, c.teacher_channels, false);
    return d;
  }

  // S: (B*K x D_slot).
  DecodedVars<T> operator()(Tape<T>& tape, ParamStore<T>& ps, const Var<T>& S) const {
    if (S.rows() % K != 0) throw ShapeError("decoder: slot rows not divisible by K");
    Var<T> h = ops::repeat_rows(in(tape, ps, S), G);
    h = ops::add_tiled(h, tape.param(ps.at("decoder.pos")));
    for (const auto& layer : hidden) h = ops::relu(layer(tape, ps, h));
    Var<T> o = out(tape, ps, h);
    DecodedVars<T> r;
    r.logits = ops::slice_cols(o, 0, 1);
    r.features = ops::slice_cols(o, 1, C);
    r.masks = ops::slot_softmax(r.logits, K, G);
    r.mu_d = compose(tape, ps, ops::masked_slot_sum(r.masks, r.features, K, G));
    return r;
  }
};

}  // namespace cola::model

#pragma once

// Policy network internals, templated on the scalar so the same code runs in
// float for training and in double for finite-difference checks.

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "trackkit/errors.hpp"
#include "trackkit/rng.hpp"

namespace trackkit {

enum class FusionMode { Early, Hybrid, Late };

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Early: return "early";
    case FusionMode::Hybrid: return "hybrid";
    case FusionMode::Late: return "late";
  }
  return "?";
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "early") return FusionMode::Early;
  if (s == "hybrid") return FusionMode::Hybrid;
  if (s == "late") return FusionMode::Late;
  throw ConfigError("unknown fusion mode: " + s);
}

constexpr int kActionAxes = 6;    // rot x,y,z then trans x,y,z
constexpr int kActionClasses = 11;

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Logits = Eigen::Matrix<S, kActionAxes, kActionClasses>;

template <typename S>
struct Dense {
  MatX<S> W;  // out x in
  VecX<S> b;  // out

  void resize(int out, int in) {
    W.setZero(out, in);
    b.setZero(out);
  }
};

// Shared per-point MLP, coordinate-wise max over points on top.
template <typename S>
struct Encoder {
  Dense<S> l1, l2, l3;
};

// Segmentation head: per-point hidden layer fed by the point feature and the
// global state (equivalent to one dense layer over their concatenation).
template <typename S>
struct SegHead {
  MatX<S> w_point;  // hidden x point_feature_dim
  MatX<S> w_state;  // hidden x state_dim
  VecX<S> b1;       // hidden
  MatX<S> w_out;    // 1 x hidden
  VecX<S> b_out;    // 1
};

template <typename S>
struct HeadSet {
  Dense<S> t1, t2;          // trunk
  Dense<S> rot, trans;      // 33 logits each
  Dense<S> value;           // scalar
  SegHead<S> seg;
};

struct PolicyShape {
  FusionMode mode = FusionMode::Hybrid;
  std::array<int, 3> encoder_widths{64, 128, 256};
  std::array<int, 2> trunk_widths{256, 128};
  int seg_hidden = 64;

  int feature_dim() const { return encoder_widths[2]; }
  int n_encoders() const { return mode == FusionMode::Early ? 1 : 2; }
  int n_heads() const { return mode == FusionMode::Late ? 2 : 1; }
  int state_dim() const { return mode == FusionMode::Hybrid ? 4 * feature_dim() : 2 * feature_dim(); }
  int point_feature_dim() const {
    return mode == FusionMode::Hybrid ? 2 * feature_dim() : feature_dim();
  }
  bool operator==(const PolicyShape&) const = default;
};

template <typename S>
struct Policy {
  PolicyShape shape;
  std::vector<Encoder<S>> encoders;  // [reg, ref] or just one for early fusion
  std::vector<HeadSet<S>> heads;     // two for late fusion

  void allocate(const PolicyShape& sh) {
    shape = sh;
    encoders.assign(static_cast<std::size_t>(sh.n_encoders()), Encoder<S>{});
    for (auto& e : encoders) {
      e.l1.resize(sh.encoder_widths[0], 3);
      e.l2.resize(sh.encoder_widths[1], sh.encoder_widths[0]);
      e.l3.resize(sh.encoder_widths[2], sh.encoder_widths[1]);
    }
    heads.assign(static_cast<std::size_t>(sh.n_heads()), HeadSet<S>{});
    for (auto& h : heads) {
      h.t1.resize(sh.trunk_widths[0], sh.state_dim());
      h.t2.resize(sh.trunk_widths[1], sh.trunk_widths[0]);
      h.rot.resize(3 * kActionClasses, sh.trunk_widths[1]);
      h.trans.resize(3 * kActionClasses, sh.trunk_widths[1]);
      h.value.resize(1, sh.trunk_widths[1]);
      h.seg.w_point.setZero(sh.seg_hidden, sh.point_feature_dim());
      h.seg.w_state.setZero(sh.seg_hidden, sh.state_dim());
      h.seg.b1.setZero(sh.seg_hidden);
      h.seg.w_out.setZero(1, sh.seg_hidden);
      h.seg.b_out.setZero(1);
    }
  }

  void set_zero() {
    for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    for (std::size_t e = 0; e < encoders.size(); ++e) {
      const std::string p = "enc" + std::to_string(e) + ".";
      f(p + "l1.W", encoders[e].l1.W);
      f(p + "l1.b", encoders[e].l1.b);
      f(p + "l2.W", encoders[e].l2.W);
      f(p + "l2.b", encoders[e].l2.b);
      f(p + "l3.W", encoders[e].l3.W);
      f(p + "l3.b", encoders[e].l3.b);
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const std::string p = "head" + std::to_string(h) + ".";
      f(p + "t1.W", heads[h].t1.W);
      f(p + "t1.b", heads[h].t1.b);
      f(p + "t2.W", heads[h].t2.W);
      f(p + "t2.b", heads[h].t2.b);
      f(p + "rot.W", heads[h].rot.W);
      f(p + "rot.b", heads[h].rot.b);
      f(p + "trans.W", heads[h].trans.W);
      f(p + "trans.b", heads[h].trans.b);
      f(p + "value.W", heads[h].value.W);
      f(p + "value.b", heads[h].value.b);
      f(p + "seg.w_point", heads[h].seg.w_point);
      f(p + "seg.w_state", heads[h].seg.w_state);
      f(p + "seg.b1", heads[h].seg.b1);
      f(p + "seg.w_out", heads[h].seg.w_out);
      f(p + "seg.b_out", heads[h].seg.b_out);
    }
  }

  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<Policy*>(this)->for_each_tensor(
        [&](const std::string& name, auto& t) { f(name, std::as_const(t)); });
  }
};

// He-style init, seeded per tensor name so layouts do not influence streams.
template <typename S>
void init_policy(Policy<S>& p, const PolicyShape& shape, std::uint64_t seed) {
  p.allocate(shape);
  p.for_each_tensor([&](const std::string& name, auto& t) {
    if (name.ends_with(".b") || name.ends_with("b1") || name.ends_with("b_out")) return;
    Rng rng(seed ^ fnv1a64(name));
    const double scale = std::sqrt(2.0 / static_cast<double>(t.cols()));
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        t(r, c) = static_cast<S>(scale * rng.normal());
      }
    }
  });
}

template <typename S>
struct TensorView {
  std::string name;
  S* data;
  Eigen::Index rows, cols;
  Eigen::Index size() const { return rows * cols; }
};

template <typename S>
std::vector<TensorView<S>> tensor_views(Policy<S>& p) {
  std::vector<TensorView<S>> out;
  p.for_each_tensor([&](const std::string& name, auto& t) {
    out.push_back({name, t.data(), t.rows(), t.cols()});
  });
  return out;
}

// ---- forward / backward ----

// Normalized clouds entering one forward pass. `moving` is the observation
// under the accumulated update; `prev` and `model` are the per-frame targets.
template <typename S>
struct PolicyInput {
  MatX<S> moving;  // N x 3
  MatX<S> prev;    // M x 3
  MatX<S> model;   // K x 3
};

template <typename S>
struct EncoderTape {
  MatX<S> Z1, H1, Z2, H2, Z3, F;  // pre/post activations, F: N x D
  VecX<S> g;                      // max-pooled feature
  std::vector<int> arg;           // source row per channel
};

template <typename S>
void encoder_forward(const Encoder<S>& enc, const MatX<S>& X, EncoderTape<S>& tape) {
  tape.Z1.noalias() = X * enc.l1.W.transpose();
  tape.Z1.rowwise() += enc.l1.b.transpose();
  tape.H1 = tape.Z1.cwiseMax(S(0));
  tape.Z2.noalias() = tape.H1 * enc.l2.W.transpose();
  tape.Z2.rowwise() += enc.l2.b.transpose();
  tape.H2 = tape.Z2.cwiseMax(S(0));
  tape.Z3.noalias() = tape.H2 * enc.l3.W.transpose();
  tape.Z3.rowwise() += enc.l3.b.transpose();
  tape.F = tape.Z3.cwiseMax(S(0));

  const Eigen::Index d = tape.F.cols();
  tape.g.resize(d);
  tape.arg.assign(static_cast<std::size_t>(d), 0);
  for (Eigen::Index c = 0; c < d; ++c) {
    Eigen::Index best = 0;
    tape.g(c) = tape.F.col(c).maxCoeff(&best);
    tape.arg[static_cast<std::size_t>(c)] = static_cast<int>(best);
  }
}

// dg: gradient on the pooled feature; dF_extra: additional per-point feature
// gradient (segmentation path), may be null.
template <typename S>
void encoder_backward(const Encoder<S>& enc, const MatX<S>& X, const EncoderTape<S>& tape,
                      const VecX<S>& dg, const MatX<S>* dF_extra, Encoder<S>& grad) {
  MatX<S> dF;
  if (dF_extra) {
    dF = *dF_extra;
  } else {
    dF.setZero(tape.F.rows(), tape.F.cols());
  }
  for (Eigen::Index c = 0; c < tape.F.cols(); ++c) {
    dF(tape.arg[static_cast<std::size_t>(c)], c) += dg(c);
  }

  MatX<S> dZ3 = ((tape.Z3.array() > S(0)).template cast<S>() * dF.array()).matrix();
  grad.l3.W.noalias() += dZ3.transpose() * tape.H2;
  grad.l3.b.noalias() += dZ3.colwise().sum().transpose();
  MatX<S> dH2 = dZ3 * enc.l3.W;

  MatX<S> dZ2 = ((tape.Z2.array() > S(0)).template cast<S>() * dH2.array()).matrix();
  grad.l2.W.noalias() += dZ2.transpose() * tape.H1;
  grad.l2.b.noalias() += dZ2.colwise().sum().transpose();
  MatX<S> dH1 = dZ2 * enc.l2.W;

  MatX<S> dZ1 = ((tape.Z1.array() > S(0)).template cast<S>() * dH1.array()).matrix();
  grad.l1.W.noalias() += dZ1.transpose() * X;
  grad.l1.b.noalias() += dZ1.colwise().sum().transpose();
}

template <typename S>
struct HeadTape {
  VecX<S> state;
  VecX<S> z1, h1, z2, h2;
  Logits<S> logits;
  S value;
  // segmentation
  MatX<S> seg_pre;     // N x hidden, pre-activation
  VecX<S> seg_logits;  // N
};

template <typename S>
void head_forward(const HeadSet<S>& head, const VecX<S>& state, const MatX<S>& point_features,
                  HeadTape<S>& tape) {
  tape.state = state;
  tape.z1.noalias() = head.t1.W * state;
  tape.z1 += head.t1.b;
  tape.h1 = tape.z1.cwiseMax(S(0));
  tape.z2.noalias() = head.t2.W * tape.h1;
  tape.z2 += head.t2.b;
  tape.h2 = tape.z2.cwiseMax(S(0));

  VecX<S> rot = head.rot.W * tape.h2 + head.rot.b;
  VecX<S> trans = head.trans.W * tape.h2 + head.trans.b;
  for (int axis = 0; axis < 3; ++axis) {
    for (int k = 0; k < kActionClasses; ++k) {
      tape.logits(axis, k) = rot(axis * kActionClasses + k);
      tape.logits(axis + 3, k) = trans(axis * kActionClasses + k);
    }
  }
  tape.value = (head.value.W * tape.h2 + head.value.b)(0);

  tape.seg_pre.noalias() = point_features * head.seg.w_point.transpose();
  const VecX<S> seg_bias = head.seg.w_state * state + head.seg.b1;
  tape.seg_pre.rowwise() += seg_bias.transpose();
  const MatX<S> seg_h = tape.seg_pre.cwiseMax(S(0));
  tape.seg_logits.noalias() = seg_h * head.seg.w_out.transpose();
  tape.seg_logits.array() += head.seg.b_out(0);
}

// Accumulates parameter gradients; returns gradients w.r.t. state and the
// per-point features so callers can continue into the encoders.
template <typename S>
void head_backward(const HeadSet<S>& head, const MatX<S>& point_features, const HeadTape<S>& tape,
                   const Logits<S>& dlogits, S dvalue, const VecX<S>& dseg_logits,
                   HeadSet<S>& grad, VecX<S>& dstate, MatX<S>& dpoint_features) {
  VecX<S> drot(3 * kActionClasses), dtrans(3 * kActionClasses);
  for (int axis = 0; axis < 3; ++axis) {
    for (int k = 0; k < kActionClasses; ++k) {
      drot(axis * kActionClasses + k) = dlogits(axis, k);
      dtrans(axis * kActionClasses + k) = dlogits(axis + 3, k);
    }
  }

  VecX<S> dh2 = head.rot.W.transpose() * drot + head.trans.W.transpose() * dtrans +
                head.value.W.transpose() * VecX<S>::Constant(1, dvalue);
  grad.rot.W.noalias() += drot * tape.h2.transpose();
  grad.rot.b += drot;
  grad.trans.W.noalias() += dtrans * tape.h2.transpose();
  grad.trans.b += dtrans;
  grad.value.W.noalias() += dvalue * tape.h2.transpose();
  grad.value.b(0) += dvalue;

  // segmentation path
  const MatX<S> seg_h = tape.seg_pre.cwiseMax(S(0));
  grad.seg.w_out.noalias() += dseg_logits.transpose() * seg_h;
  grad.seg.b_out(0) += dseg_logits.sum();
  MatX<S> dseg_h = dseg_logits * head.seg.w_out;  // N x hidden
  MatX<S> dseg_pre = ((tape.seg_pre.array() > S(0)).template cast<S>() * dseg_h.array()).matrix();
  grad.seg.w_point.noalias() += dseg_pre.transpose() * point_features;
  const VecX<S> dseg_bias = dseg_pre.colwise().sum().transpose();
  grad.seg.w_state.noalias() += dseg_bias * tape.state.transpose();
  grad.seg.b1 += dseg_bias;
  dpoint_features.noalias() = dseg_pre * head.seg.w_point;
  dstate.noalias() = head.seg.w_state.transpose() * dseg_bias;

  // trunk
  VecX<S> dz2 = ((tape.z2.array() > S(0)).template cast<S>() * dh2.array()).matrix();
  grad.t2.W.noalias() += dz2 * tape.h1.transpose();
  grad.t2.b += dz2;
  VecX<S> dh1 = head.t2.W.transpose() * dz2;
  VecX<S> dz1 = ((tape.z1.array() > S(0)).template cast<S>() * dh1.array()).matrix();
  grad.t1.W.noalias() += dz1 * tape.state.transpose();
  grad.t1.b += dz1;
  dstate.noalias() += head.t1.W.transpose() * dz1;
}

template <typename S>
struct ForwardTape {
  // moving cloud through each encoder; targets per encoder (early: merged
  // target through the single encoder).
  std::vector<EncoderTape<S>> moving;
  std::vector<EncoderTape<S>> target;
  MatX<S> merged_target;            // early fusion input (prev over model)
  MatX<S> point_features;           // moving-cloud features fed to seg heads
  std::vector<HeadTape<S>> head;
  std::vector<VecX<S>> states;

  Logits<S> logits;   // merged
  S value = S(0);     // merged
  VecX<S> seg_logits; // merged, per moving point
};

// Embeds the per-frame target clouds (previous segment and posed model).
// These do not change across the iterations of one frame, so callers may run
// this once and then call policy_forward_moving per iteration.
template <typename S>
void policy_forward_targets(const Policy<S>& p, const PolicyInput<S>& in, ForwardTape<S>& tape) {
  tape.target.assign(p.encoders.size(), EncoderTape<S>{});
  if (p.shape.mode == FusionMode::Early) {
    tape.merged_target.resize(in.prev.rows() + in.model.rows(), 3);
    tape.merged_target << in.prev, in.model;
    encoder_forward(p.encoders[0], tape.merged_target, tape.target[0]);
  } else {
    encoder_forward(p.encoders[0], in.prev, tape.target[0]);
    encoder_forward(p.encoders[1], in.model, tape.target[1]);
  }
}

// Embeds the moving cloud and evaluates the heads; requires target tapes.
template <typename S>
void policy_forward_moving(const Policy<S>& p, const PolicyInput<S>& in, ForwardTape<S>& tape) {
  const auto& sh = p.shape;
  const int d = sh.feature_dim();

  tape.moving.assign(p.encoders.size(), EncoderTape<S>{});
  for (std::size_t e = 0; e < p.encoders.size(); ++e) {
    encoder_forward(p.encoders[e], in.moving, tape.moving[e]);
  }

  tape.states.clear();
  switch (sh.mode) {
    case FusionMode::Early: {
      VecX<S> s(2 * d);
      s << tape.moving[0].g, tape.target[0].g;
      tape.states.push_back(std::move(s));
      tape.point_features = tape.moving[0].F;
      break;
    }
    case FusionMode::Hybrid: {
      VecX<S> s(4 * d);
      s << tape.moving[0].g, tape.target[0].g, tape.moving[1].g, tape.target[1].g;
      tape.states.push_back(std::move(s));
      tape.point_features.resize(in.moving.rows(), 2 * d);
      tape.point_features << tape.moving[0].F, tape.moving[1].F;
      break;
    }
    case FusionMode::Late: {
      VecX<S> s0(2 * d), s1(2 * d);
      s0 << tape.moving[0].g, tape.target[0].g;
      s1 << tape.moving[1].g, tape.target[1].g;
      tape.states.push_back(std::move(s0));
      tape.states.push_back(std::move(s1));
      break;
    }
  }

  tape.head.assign(p.heads.size(), HeadTape<S>{});
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    const MatX<S>& pf = sh.mode == FusionMode::Late ? tape.moving[h].F : tape.point_features;
    head_forward(p.heads[h], tape.states[h], pf, tape.head[h]);
  }

  if (sh.mode == FusionMode::Late) {
    tape.logits = S(0.5) * (tape.head[0].logits + tape.head[1].logits);
    tape.value = S(0.5) * (tape.head[0].value + tape.head[1].value);
    tape.seg_logits = S(0.5) * (tape.head[0].seg_logits + tape.head[1].seg_logits);
  } else {
    tape.logits = tape.head[0].logits;
    tape.value = tape.head[0].value;
    tape.seg_logits = tape.head[0].seg_logits;
  }
}

template <typename S>
void policy_forward_full(const Policy<S>& p, const PolicyInput<S>& in, ForwardTape<S>& tape) {
  policy_forward_targets(p, in, tape);
  policy_forward_moving(p, in, tape);
}

template <typename S>
void policy_backward_full(const Policy<S>& p, const PolicyInput<S>& in, const ForwardTape<S>& tape,
                          const Logits<S>& dlogits, S dvalue, const VecX<S>& dseg_logits,
                          Policy<S>& grad) {
  const auto& sh = p.shape;
  const int d = sh.feature_dim();
  const std::size_t n_heads = p.heads.size();

  std::vector<VecX<S>> dstates(n_heads);
  std::vector<MatX<S>> dpf(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const S w = n_heads == 2 ? S(0.5) : S(1);
    const MatX<S>& pf = sh.mode == FusionMode::Late ? tape.moving[h].F : tape.point_features;
    const Logits<S> dl = w * dlogits;
    const VecX<S> ds = w * dseg_logits;
    head_backward(p.heads[h], pf, tape.head[h], dl, w * dvalue, ds, grad.heads[h], dstates[h],
                  dpf[h]);
  }

  switch (sh.mode) {
    case FusionMode::Early: {
      const VecX<S> dg_mov = dstates[0].segment(0, d);
      const VecX<S> dg_tgt = dstates[0].segment(d, d);
      encoder_backward(p.encoders[0], in.moving, tape.moving[0], dg_mov, &dpf[0],
                       grad.encoders[0]);
      encoder_backward<S>(p.encoders[0], tape.merged_target, tape.target[0], dg_tgt, nullptr,
                          grad.encoders[0]);
      break;
    }
    case FusionMode::Hybrid: {
      const VecX<S> dg_mov0 = dstates[0].segment(0, d);
      const VecX<S> dg_tgt0 = dstates[0].segment(d, d);
      const VecX<S> dg_mov1 = dstates[0].segment(2 * d, d);
      const VecX<S> dg_tgt1 = dstates[0].segment(3 * d, d);
      const MatX<S> dpf0 = dpf[0].leftCols(d);
      const MatX<S> dpf1 = dpf[0].rightCols(d);
      encoder_backward(p.encoders[0], in.moving, tape.moving[0], dg_mov0, &dpf0,
                       grad.encoders[0]);
      encoder_backward(p.encoders[1], in.moving, tape.moving[1], dg_mov1, &dpf1,
                       grad.encoders[1]);
      encoder_backward<S>(p.encoders[0], in.prev, tape.target[0], dg_tgt0, nullptr,
                          grad.encoders[0]);
      encoder_backward<S>(p.encoders[1], in.model, tape.target[1], dg_tgt1, nullptr,
                          grad.encoders[1]);
      break;
    }
    case FusionMode::Late: {
      for (std::size_t h = 0; h < 2; ++h) {
        const VecX<S> dg_mov = dstates[h].segment(0, d);
        const VecX<S> dg_tgt = dstates[h].segment(d, d);
        encoder_backward(p.encoders[h], in.moving, tape.moving[h], dg_mov, &dpf[h],
                         grad.encoders[h]);
        const MatX<S>& tgt_in = h == 0 ? in.prev : in.model;
        encoder_backward<S>(p.encoders[h], tgt_in, tape.target[h], dg_tgt, nullptr,
                            grad.encoders[h]);
      }
      break;
    }
  }
}

// Per-axis log-softmax; numerically stable.
template <typename S>
Logits<S> log_softmax_rows(const Logits<S>& logits) {
  Logits<S> out;
  for (int a = 0; a < kActionAxes; ++a) {
    const S m = logits.row(a).maxCoeff();
    S sum = S(0);
    for (int k = 0; k < kActionClasses; ++k) sum += std::exp(logits(a, k) - m);
    const S lse = m + std::log(sum);
    for (int k = 0; k < kActionClasses; ++k) out(a, k) = logits(a, k) - lse;
  }
  return out;
}

}  // namespace trackkit

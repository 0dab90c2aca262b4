#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trackkit/agent.hpp"
#include "trackkit/io.hpp"
#include "trackkit/scenegen.hpp"

namespace trackkit {

// Three-valued alignment reward on consecutive Chamfer distances: +0.5 for
// improving, -0.1 for pausing, -0.6 for diverging. `eps` widens the equality
// case, which is measure-zero otherwise.
double step_reward(double d_i, double d_prev, double eps);

// The same reward applied to consecutive frames' final distances; input of
// length k yields k-1 rewards (the first frame has none).
std::vector<double> frame_reward(const std::vector<double>& final_chamfers, double eps);

// Per axis, the signed class minimizing |residual - step|; ties prefer the
// smaller magnitude.
Action expert_action(const Vec3& rot_residual, const Vec3& trans_residual,
                     const StepTable& steps);

// Follows the expert from a synthetic initial residual; returns the residual
// after `iterations` steps. Used to bound expert quality.
PoseResidual simulate_expert_refinement(const PoseResidual& initial, int iterations,
                                        const StepTable& steps);

struct TrainConfig {
  int epochs = 60;
  int trajectory_frames = 10;     // alignment frames per trajectory
  int iterations_per_frame = 10;
  double resample_fraction = 0.2; // fraction of all frames rolled out per epoch
  int buffer_capacity = 128;

  int batch_step = 32;            // records per update from the step buffer
  int batch_frame = 16;           // records per update from the frame buffer
  int updates_per_trajectory = 1;

  double bc_weight = 1.0;
  double ppo_weight = 0.5;
  double ppo_clip = 0.2;
  double value_coeff = 0.5;
  double entropy_coeff = 0.01;
  double seg_weight = 1.0;
  double gamma = 0.99;
  double learning_rate = 1e-3;
  double rms_decay = 0.99;
  double reward_eps = 1e-9;
  std::string reward_source = "ref";  // ref | reg | sum
  int segment_points = 512;
  double fg_fraction = 0.8;
  int ring_dilation = 15;
  int checkpoint_every = 1;

  void validate() const;
};

// One alignment step as seen by the learner. Records from the same frame
// share the target clouds through `frame_ctx`.
struct FrameSnapshot {
  MatX<float> prev;   // normalized previous segment
  MatX<float> model;  // normalized model points under the incoming pose
};

struct StepRecord {
  std::shared_ptr<const FrameSnapshot> frame_ctx;
  MatX<float> moving;               // normalized observation under the update
  std::vector<std::uint8_t> labels; // foreground flags for the moving points
  Action action;                    // taken (sampled during rollouts)
  Action expert;
  std::array<float, kActionAxes> log_prob{};  // of the taken action
  float value = 0.f;
  float reward = 0.f;
  float ret = 0.f;                  // discounted return, filled at episode end
  double chamfer_before = 0.0;
  double chamfer_after = 0.0;
  int frame_index = 0;
  int step_index = 0;
};

// FIFO ring of records.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {}

  void push(StepRecord record);
  int size() const { return static_cast<int>(records_.size()); }
  int capacity() const { return capacity_; }
  const StepRecord& at(int i) const { return records_[static_cast<std::size_t>(i)]; }

 private:
  int capacity_;
  std::deque<StepRecord> records_;
};

// ---- losses ----

// Mean cross-entropy over the six axes; gradient accumulated into dlogits.
template <typename S>
S bc_loss_logits(const Logits<S>& logits, const Action& expert, Logits<S>* dlogits, S weight) {
  const Logits<S> lp = log_softmax_rows(logits);
  S loss = S(0);
  for (int a = 0; a < kActionAxes; ++a) {
    loss -= lp(a, expert.cls[static_cast<std::size_t>(a)]);
  }
  loss /= S(kActionAxes);
  if (dlogits) {
    const S w = weight / S(kActionAxes);
    for (int a = 0; a < kActionAxes; ++a) {
      for (int k = 0; k < kActionClasses; ++k) {
        const S p = std::exp(lp(a, k));
        const S target = k == expert.cls[static_cast<std::size_t>(a)] ? S(1) : S(0);
        (*dlogits)(a, k) += w * (p - target);
      }
    }
  }
  return loss;
}

// Batch form over action fields (diagnostic / test surface).
struct BcBatchResult {
  double loss = 0.0;
  std::vector<Logits<float>> dlogits;
};
BcBatchResult bc_loss(const std::vector<ActionField>& fields, const std::vector<Action>& experts);

struct PpoCoeffs {
  double clip = 0.2;
  double value_coeff = 0.5;
  double entropy_coeff = 0.01;
};

template <typename S>
struct PpoTermsOut {
  S policy_loss = S(0);   // minus clipped surrogate, mean over axes
  S value_loss = S(0);    // (v - G)^2
  S entropy = S(0);       // mean per-axis entropy
  S loss = S(0);          // policy + c_v * value - c_e * entropy
};

// Clipped-surrogate PPO terms for one record. Gradients (scaled by `weight`)
// are accumulated into dlogits / dvalue.
template <typename S>
PpoTermsOut<S> ppo_terms(const Logits<S>& logits, S value, const Action& taken,
                         const std::array<S, kActionAxes>& log_prob_old, S advantage, S ret,
                         const PpoCoeffs& co, Logits<S>* dlogits, S* dvalue, S weight) {
  PpoTermsOut<S> out;
  const Logits<S> lp = log_softmax_rows(logits);
  const S lo = S(1) - S(co.clip), hi = S(1) + S(co.clip);

  for (int a = 0; a < kActionAxes; ++a) {
    const int k_taken = taken.cls[static_cast<std::size_t>(a)];
    const S ratio = std::exp(lp(a, k_taken) - log_prob_old[static_cast<std::size_t>(a)]);
    const S unclipped = ratio * advantage;
    const S clipped = std::clamp(ratio, lo, hi) * advantage;
    const S surrogate = std::min(unclipped, clipped);
    out.policy_loss -= surrogate / S(kActionAxes);

    // d surrogate / d logp(taken): ratio*A on the active unclipped branch.
    S dsurr_dlp = S(0);
    if (unclipped <= clipped) {
      dsurr_dlp = ratio * advantage;
    } else if (ratio > lo && ratio < hi) {
      dsurr_dlp = ratio * advantage;
    }

    // entropy of this axis
    S h = S(0);
    for (int k = 0; k < kActionClasses; ++k) h -= std::exp(lp(a, k)) * lp(a, k);
    out.entropy += h / S(kActionAxes);

    if (dlogits) {
      const S w_pol = -weight * dsurr_dlp / S(kActionAxes);
      const S w_ent = -weight * S(co.entropy_coeff) / S(kActionAxes);
      for (int k = 0; k < kActionClasses; ++k) {
        const S p = std::exp(lp(a, k));
        const S onehot = k == k_taken ? S(1) : S(0);
        // policy term: dlogp(taken)/dlogit_k = onehot - p
        (*dlogits)(a, k) += w_pol * (onehot - p);
        // entropy term: dH/dlogit_k = -p*(lp + H)
        (*dlogits)(a, k) += w_ent * (-p * (lp(a, k) + h));
      }
    }
  }

  out.value_loss = (value - ret) * (value - ret);
  if (dvalue) *dvalue += weight * S(co.value_coeff) * S(2) * (value - ret);
  out.loss = out.policy_loss + S(co.value_coeff) * out.value_loss - S(co.entropy_coeff) * out.entropy;
  return out;
}

// Binary cross-entropy on segmentation logits vs {0,1} labels (mean over
// points); gradient scaled by `weight`.
template <typename S>
S seg_bce_logits(const VecX<S>& seg_logits, const std::vector<std::uint8_t>& labels,
                 VecX<S>* dlogits, S weight) {
  const auto n = seg_logits.size();
  if (n == 0 || labels.size() != static_cast<std::size_t>(n)) return S(0);
  S loss = S(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S z = seg_logits(i);
    const S y = labels[static_cast<std::size_t>(i)] ? S(1) : S(0);
    // log(1+exp(-|z|)) + max(z,0) - y*z is the stable BCE-with-logits
    loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, S(0)) - y * z;
    if (dlogits) {
      const S sig = S(1) / (S(1) + std::exp(-z));
      (*dlogits)(i) += weight * (sig - y) / S(n);
    }
  }
  return loss / S(n);
}

// ---- optimizer ----

// Momentum-free adaptive step: per-parameter RMS scaling.
class RmsProp {
 public:
  RmsProp() = default;
  RmsProp(const PolicyF& params, double lr, double decay, double eps = 1e-8);

  void step(PolicyF& params, PolicyF& grads);

  void serialize(ByteWriter& w) const;
  void deserialize(ByteReader& r, const PolicyF& params);

  double learning_rate = 1e-3;
  double decay = 0.99;
  double eps = 1e-8;

 private:
  PolicyF second_moment_;
  bool initialized_ = false;
};

struct PpoDiagnostics {
  int batch = 0;
  bool no_op = false;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

// One PPO gradient step on a minibatch from `buffer` (spec surface; the
// trainer uses the combined update below).
PpoDiagnostics ppo_update(const ReplayBuffer& buffer, PolicyF& params, RmsProp& opt,
                          const TrainConfig& config, Rng& rng);

// ---- trainer ----

struct EpochMetrics {
  int epoch = 0;
  double bc_loss = 0.0;
  double ppo_loss = 0.0;
  double mean_step_reward = 0.0;
  double mean_frame_reward = 0.0;
  double expert_match_rate = 0.0;
};

class Trainer {
 public:
  Trainer(const Dataset& dataset, const PolicyShape& shape, const StepTable& steps,
          const TrainConfig& config, std::uint64_t seed);

  EpochMetrics run_epoch();
  int epoch() const { return epoch_; }
  const PolicyF& params() const { return params_; }
  const ReplayBuffer& step_buffer() const { return step_buffer_; }
  const ReplayBuffer& frame_buffer() const { return frame_buffer_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  struct Rollout;
  void rollout_trajectory(int seq_index, const std::string& object_id, int start,
                          std::uint64_t traj_seed, EpochMetrics& metrics);
  void combined_update(Rng& rng, EpochMetrics& metrics);

  const Dataset& dataset_;
  StepTable steps_;
  TrainConfig config_;
  std::uint64_t seed_;
  int epoch_ = 0;
  PolicyF params_;
  RmsProp opt_;
  ReplayBuffer step_buffer_;
  ReplayBuffer frame_buffer_;
  // per-epoch accumulators
  long long update_count_ = 0;
  long long step_reward_count_ = 0;
  long long frame_reward_count_ = 0;
  long long match_axes_ = 0;
  long long total_axes_ = 0;
};

struct TrainResult {
  PolicyF params;
  std::vector<EpochMetrics> metrics;
};

// Full training loop. When `out_dir` is non-empty: appends train_log.csv,
// writes per-epoch weights checkpoints and trainer_state.bin (resumable).
TrainResult train(const Dataset& dataset, const PolicyShape& shape, const StepTable& steps,
                  const TrainConfig& config, std::uint64_t seed,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_state = std::nullopt);

}  // namespace trackkit

#include "trackkit/training.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "trackkit/kdtree.hpp"
#include "trackkit/threading.hpp"

namespace trackkit {

double step_reward(double d_i, double d_prev, double eps) {
  if (d_i < d_prev - eps) return 0.5;
  if (d_i > d_prev + eps) return -0.6;
  return -0.1;
}

std::vector<double> frame_reward(const std::vector<double>& final_chamfers, double eps) {
  std::vector<double> out;
  if (final_chamfers.size() < 2) return out;
  out.reserve(final_chamfers.size() - 1);
  for (std::size_t i = 1; i < final_chamfers.size(); ++i) {
    out.push_back(step_reward(final_chamfers[i], final_chamfers[i - 1], eps));
  }
  return out;
}

namespace {

int nearest_class(double residual, const StepTable& steps) {
  int best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kActionClasses; ++k) {
    const double step = steps.step_of(k);
    const double err = std::abs(residual - step);
    // ties prefer the smaller magnitude
    if (err < best_err ||
        (err == best_err && std::abs(step) < std::abs(steps.step_of(best)))) {
      best_err = err;
      best = k;
    }
  }
  return best;
}

}  // namespace

Action expert_action(const Vec3& rot_residual, const Vec3& trans_residual,
                     const StepTable& steps) {
  Action a;
  for (int i = 0; i < 3; ++i) {
    a.cls[static_cast<std::size_t>(i)] = nearest_class(rot_residual[i], steps);
    a.cls[static_cast<std::size_t>(i + 3)] = nearest_class(trans_residual[i], steps);
  }
  return a;
}

PoseResidual simulate_expert_refinement(const PoseResidual& initial, int iterations,
                                        const StepTable& steps) {
  RigidTransform delta;
  delta.rotation = Quat(rotation_from_euler_xyz(initial.rotation_xyz)).normalized();
  delta.translation = initial.translation;
  const RigidTransform gt = RigidTransform::identity();
  RigidTransform est = invert(delta);  // residual(gt, est) == initial
  for (int i = 0; i < iterations; ++i) {
    const PoseResidual res = residual_saturating(gt, est);
    const Action a = expert_action(res.rotation_xyz, res.translation, steps);
    est = apply_action(est, a, steps);
  }
  return residual_saturating(gt, est);
}

void TrainConfig::validate() const {
  if (epochs < 1 || trajectory_frames < 1 || iterations_per_frame < 1) {
    throw ConfigError("training: epochs, trajectory_frames, iterations_per_frame must be >= 1");
  }
  if (buffer_capacity < 1) throw ConfigError("training: buffer capacity must be >= 1");
  if (!(ppo_clip > 0.0 && ppo_clip < 1.0)) throw ConfigError("training: clip must be in (0,1)");
  if (!(resample_fraction > 0.0 && resample_fraction <= 1.0)) {
    throw ConfigError("training: resample_fraction must be in (0,1]");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("training: gamma must be in (0,1]");
  if (!(learning_rate > 0.0)) throw ConfigError("training: learning rate must be positive");
  if (reward_source != "ref" && reward_source != "reg" && reward_source != "sum") {
    throw ConfigError("training: reward_source must be ref, reg or sum");
  }
  if (segment_points < kMinSegmentPoints) {
    throw ConfigError("training: segment_points too small");
  }
}

void ReplayBuffer::push(StepRecord record) {
  records_.push_back(std::move(record));
  while (static_cast<int>(records_.size()) > capacity_) records_.pop_front();
}

BcBatchResult bc_loss(const std::vector<ActionField>& fields, const std::vector<Action>& experts) {
  if (fields.size() != experts.size()) throw NumericError("bc_loss: size mismatch");
  BcBatchResult out;
  if (fields.empty()) return out;
  out.dlogits.assign(fields.size(), Logits<float>::Zero());
  const float w = 1.0f / static_cast<float>(fields.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    sum += bc_loss_logits<float>(fields[i].logits, experts[i], &out.dlogits[i], w);
  }
  out.loss = sum / static_cast<double>(fields.size());
  return out;
}

RmsProp::RmsProp(const PolicyF& params, double lr, double decay_, double eps_)
    : learning_rate(lr), decay(decay_), eps(eps_) {
  second_moment_.allocate(params.shape);
  initialized_ = true;
}

void RmsProp::step(PolicyF& params, PolicyF& grads) {
  if (!initialized_) throw NumericError("optimizer used before initialization");
  auto pv = tensor_views(params);
  auto gv = tensor_views(grads);
  auto sv = tensor_views(second_moment_);
  const float lr = static_cast<float>(learning_rate);
  const float d = static_cast<float>(decay);
  const float e = static_cast<float>(eps);
  for (std::size_t t = 0; t < pv.size(); ++t) {
    float* p = pv[t].data;
    const float* g = gv[t].data;
    float* s = sv[t].data;
    const Eigen::Index n = pv[t].size();
    for (Eigen::Index i = 0; i < n; ++i) {
      s[i] = d * s[i] + (1.0f - d) * g[i] * g[i];
      p[i] -= lr * g[i] / (std::sqrt(s[i]) + e);
    }
  }
}

void RmsProp::serialize(ByteWriter& w) const {
  w.put(learning_rate);
  w.put(decay);
  w.put(eps);
  auto sv = tensor_views(const_cast<PolicyF&>(second_moment_));
  for (const auto& v : sv) w.put_bytes(v.data, static_cast<std::size_t>(v.size()) * sizeof(float));
}

void RmsProp::deserialize(ByteReader& r, const PolicyF& params) {
  learning_rate = r.get<double>();
  decay = r.get<double>();
  eps = r.get<double>();
  second_moment_.allocate(params.shape);
  auto sv = tensor_views(second_moment_);
  for (auto& v : sv) r.take(v.data, static_cast<std::size_t>(v.size()) * sizeof(float));
  initialized_ = true;
}

namespace {

// Gradient of the combined objective for one record, accumulated into `grad`.
struct RecordLosses {
  double bc = 0.0;
  double ppo = 0.0;
  double seg = 0.0;
};

RecordLosses record_gradient(const PolicyF& params, const StepRecord& rec,
                             const TrainConfig& cfg, float inv_batch, bool with_bc,
                             PolicyF& grad) {
  PolicyInput<float> in{rec.moving, rec.frame_ctx->prev, rec.frame_ctx->model};
  ForwardTape<float> tape;
  policy_forward_full(params, in, tape);

  Logits<float> dlogits = Logits<float>::Zero();
  float dvalue = 0.f;
  VecX<float> dseg = VecX<float>::Zero(tape.seg_logits.size());

  RecordLosses losses;
  if (with_bc && cfg.bc_weight > 0.0) {
    losses.bc = bc_loss_logits<float>(tape.logits, rec.expert, &dlogits,
                                      static_cast<float>(cfg.bc_weight) * inv_batch);
  }
  if (cfg.ppo_weight > 0.0) {
    PpoCoeffs co{cfg.ppo_clip, cfg.value_coeff, cfg.entropy_coeff};
    const float adv = rec.ret - rec.value;
    const auto terms =
        ppo_terms<float>(tape.logits, tape.value, rec.action, rec.log_prob, adv, rec.ret, co,
                         &dlogits, &dvalue, static_cast<float>(cfg.ppo_weight) * inv_batch);
    losses.ppo = terms.loss;
  }
  if (with_bc && cfg.seg_weight > 0.0 && !rec.labels.empty()) {
    losses.seg = seg_bce_logits<float>(tape.seg_logits, rec.labels, &dseg,
                                       static_cast<float>(cfg.seg_weight) * inv_batch);
  }
  policy_backward_full(params, in, tape, dlogits, dvalue, dseg, grad);
  return losses;
}

std::vector<const StepRecord*> sample_batch(const ReplayBuffer& buffer, int want, Rng& rng) {
  std::vector<const StepRecord*> out;
  const int n = buffer.size();
  if (n == 0 || want <= 0) return out;
  if (n <= want) {
    for (int i = 0; i < n; ++i) out.push_back(&buffer.at(i));
    return out;
  }
  for (const int i : rng.sample_without_replacement(n, want)) out.push_back(&buffer.at(i));
  return out;
}

// Per-record gradients computed in parallel, reduced in index order so the
// result is independent of the thread count.
RecordLosses accumulate_gradients(const PolicyF& params,
                                  const std::vector<const StepRecord*>& batch,
                                  const TrainConfig& cfg, bool with_bc, PolicyF& grad_total) {
  const int b = static_cast<int>(batch.size());
  const float inv_batch = 1.0f / static_cast<float>(b);
  std::vector<PolicyF> grads(static_cast<std::size_t>(b));
  std::vector<RecordLosses> losses(static_cast<std::size_t>(b));
  parallel_for(b, [&](int i) {
    grads[static_cast<std::size_t>(i)].allocate(params.shape);
    losses[static_cast<std::size_t>(i)] =
        record_gradient(params, *batch[static_cast<std::size_t>(i)], cfg, inv_batch, with_bc,
                        grads[static_cast<std::size_t>(i)]);
  });
  auto total_views = tensor_views(grad_total);
  RecordLosses sum;
  for (int i = 0; i < b; ++i) {
    auto views = tensor_views(grads[static_cast<std::size_t>(i)]);
    for (std::size_t t = 0; t < views.size(); ++t) {
      Eigen::Map<Eigen::VectorXf> dst(total_views[t].data, total_views[t].size());
      Eigen::Map<const Eigen::VectorXf> src(views[t].data, views[t].size());
      dst += src;
    }
    sum.bc += losses[static_cast<std::size_t>(i)].bc;
    sum.ppo += losses[static_cast<std::size_t>(i)].ppo;
    sum.seg += losses[static_cast<std::size_t>(i)].seg;
  }
  sum.bc /= b;
  sum.ppo /= b;
  sum.seg /= b;
  return sum;
}

}  // namespace

PpoDiagnostics ppo_update(const ReplayBuffer& buffer, PolicyF& params, RmsProp& opt,
                          const TrainConfig& config, Rng& rng) {
  PpoDiagnostics diag;
  if (buffer.size() == 0) {
    diag.no_op = true;
    return diag;
  }
  const auto batch = sample_batch(buffer, config.batch_step, rng);
  diag.batch = static_cast<int>(batch.size());

  PolicyF grad;
  grad.allocate(params.shape);
  TrainConfig ppo_only = config;
  ppo_only.ppo_weight = 1.0;
  const auto losses = accumulate_gradients(params, batch, ppo_only, /*with_bc=*/false, grad);
  diag.policy_loss = losses.ppo;
  opt.step(params, grad);
  return diag;
}

// ---- trainer ----

Trainer::Trainer(const Dataset& dataset, const PolicyShape& shape, const StepTable& steps,
                 const TrainConfig& config, std::uint64_t seed)
    : dataset_(dataset),
      steps_(steps),
      config_(config),
      seed_(seed),
      step_buffer_(config.buffer_capacity),
      frame_buffer_(config.buffer_capacity) {
  config_.validate();
  steps_.validate();
  init_policy(params_, shape, Rng::substream(seed, "init").next_u64());
  opt_ = RmsProp(params_, config_.learning_rate, config_.rms_decay);
}

struct Trainer::Rollout {
  std::vector<StepRecord> step_records;
  std::vector<StepRecord> frame_finals;
  std::vector<double> final_chamfers;
};

namespace {

// Subsampled (strided) model points for the network input; full resolution
// stays in use for Chamfer and metrics.
MatX<float> strided_points(const PointCloud& pc, int max_points) {
  const int n = pc.size();
  const int m = std::min(n, max_points);
  MatX<float> out(m, 3);
  for (int i = 0; i < m; ++i) {
    const auto& p = pc.points[static_cast<std::size_t>(i * n / m)];
    out(i, 0) = static_cast<float>(p.x());
    out(i, 1) = static_cast<float>(p.y());
    out(i, 2) = static_cast<float>(p.z());
  }
  return out;
}

PointCloud label_subset(const PointCloud& pc, bool foreground) {
  PointCloud out;
  if (!pc.has_labels()) return pc;
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    if ((pc.labels[i] != 0) == foreground) out.points.push_back(pc.points[i]);
  }
  if (out.points.empty()) return pc;  // degenerate; fall back to everything
  return out;
}

}  // namespace

void Trainer::rollout_trajectory(int seq_index, const std::string& object_id, int start,
                                 std::uint64_t traj_seed, EpochMetrics& metrics) {
  const SequenceMeta& meta = dataset_.sequences[static_cast<std::size_t>(seq_index)];
  const ObjectModel& model = dataset_.model(object_id);
  Rng rng(traj_seed);

  ObservationFrame frame;
  PointCloud prev_cam;
  RigidTransform pose;
  try {
    frame = load_frame(meta, start);
    prev_cam = augment_segment(frame, meta.intrinsics, object_id, config_.segment_points,
                               config_.fg_fraction, config_.ring_dilation, rng.next_u64());
  } catch (const LostSegmentError&) {
    return;  // seed frame unusable; trajectory skipped
  }
  pose = meta.gt_poses[static_cast<std::size_t>(start)].at(object_id);

  Rollout rollout;
  long long match_axes = 0, total_axes = 0;
  double reward_sum = 0.0;
  long long reward_count = 0;

  for (int t = 1; t <= config_.trajectory_frames; ++t) {
    const int f = start + t;
    PointCloud seg_cam;
    try {
      frame = load_frame(meta, f);
      seg_cam = augment_segment(frame, meta.intrinsics, object_id, config_.segment_points,
                                config_.fg_fraction, config_.ring_dilation, rng.next_u64());
    } catch (const LostSegmentError&) {
      break;  // object vanished; stop the trajectory here
    }
    const RigidTransform gt = meta.gt_poses[static_cast<std::size_t>(f)].at(object_id);

    NormalizationFrame nf;
    nf.center = apply(pose, model.sample_centroid());
    nf.scale = model.diameter;

    PointCloud active = nf.normalize(seg_cam);
    const PointCloud prev_n = nf.normalize(prev_cam);
    const PointCloud model_n = model_points_normalized(model, nf, pose);

    auto ctx = std::make_shared<FrameSnapshot>();
    ctx->prev = strided_points(prev_n, config_.segment_points);
    ctx->model = strided_points(model_n, config_.segment_points);

    // Target update in the normalized frame: maps the observation onto the
    // object under the incoming pose estimate.
    const RigidTransform u_gt =
        compose(nf.normalize_pose(pose), invert(nf.normalize_pose(gt)));

    // Reward Chamfer uses labeled foreground points against the full-res
    // model cloud; trees are static per frame, queries move with the update.
    const PointCloud fg_n = label_subset(active, true);
    KdTree3 tree_model(model_n.points);
    KdTree3 tree_fg(fg_n.points);
    KdTree3 tree_prev;
    PointCloud prev_fg;
    if (config_.reward_source != "ref") {
      prev_fg = label_subset(prev_n, true);
      tree_prev.build(prev_fg.points);
    }

    auto reward_chamfer = [&](const RigidTransform& u) {
      const RigidTransform u_inv = invert(u);
      double d = 0.0;
      if (config_.reward_source != "reg") {
        double a = 0.0;
        for (const Vec3& p : fg_n.points) a += tree_model.nearest(apply(u, p)).distance;
        double b = 0.0;
        for (const Vec3& m : model_n.points) b += tree_fg.nearest(apply(u_inv, m)).distance;
        d += a / fg_n.size() + b / model_n.size();
      }
      if (config_.reward_source != "ref") {
        double a = 0.0;
        for (const Vec3& p : fg_n.points) a += tree_prev.nearest(apply(u, p)).distance;
        double b = 0.0;
        for (const Vec3& m : prev_fg.points) b += tree_fg.nearest(apply(u_inv, m)).distance;
        d += a / fg_n.size() + b / prev_fg.size();
      }
      return d;
    };

    RigidTransform u;  // identity
    double d_prev = reward_chamfer(u);

    ForwardTape<float> tape;
    PolicyInput<float> in;
    in.prev = ctx->prev;
    in.model = ctx->model;
    policy_forward_targets(params_, in, tape);

    std::vector<StepRecord> records;
    records.reserve(static_cast<std::size_t>(config_.iterations_per_frame));
    for (int i = 0; i < config_.iterations_per_frame; ++i) {
      const PointCloud moving = apply(u, active);
      in.moving = cloud_matrix<float>(moving);
      policy_forward_moving(params_, in, tape);

      const Logits<float> lp = log_softmax_rows(tape.logits);
      ActionField field;
      field.logits = tape.logits;
      const Action action = select_action(field, SelectMode::Sample, rng.next_u64());
      const PoseResidual res = residual_saturating(u_gt, u);
      const Action expert = expert_action(res.rotation_xyz, res.translation, steps_);

      for (int ax = 0; ax < kActionAxes; ++ax) {
        int best = 0;
        for (int k = 1; k < kActionClasses; ++k) {
          if (tape.logits(ax, k) > tape.logits(ax, best)) best = k;
        }
        match_axes += best == expert.cls[static_cast<std::size_t>(ax)];
        ++total_axes;
      }

      u = apply_action(u, action, steps_);
      const double d_i = reward_chamfer(u);
      const double r = step_reward(d_i, d_prev, config_.reward_eps);
      reward_sum += r;
      ++reward_count;

      StepRecord rec;
      rec.frame_ctx = ctx;
      rec.moving = std::move(in.moving);
      rec.labels = active.labels;
      rec.action = action;
      rec.expert = expert;
      for (int ax = 0; ax < kActionAxes; ++ax) {
        rec.log_prob[static_cast<std::size_t>(ax)] =
            lp(ax, action.cls[static_cast<std::size_t>(ax)]);
      }
      rec.value = tape.value;
      rec.reward = static_cast<float>(r);
      rec.chamfer_before = d_prev;
      rec.chamfer_after = d_i;
      rec.frame_index = f;
      rec.step_index = i;
      records.push_back(std::move(rec));
      d_prev = d_i;

      if (i + 1 < config_.iterations_per_frame) {
        std::vector<float> scores(static_cast<std::size_t>(tape.seg_logits.size()));
        for (Eigen::Index k = 0; k < tape.seg_logits.size(); ++k) {
          scores[static_cast<std::size_t>(k)] =
              1.0f / (1.0f + std::exp(-tape.seg_logits(k)));
        }
        active = segment_filter(active, scores);
      }
    }

    // step-level discounted returns within the frame
    float g = 0.f;
    for (int i = static_cast<int>(records.size()) - 1; i >= 0; --i) {
      g = records[static_cast<std::size_t>(i)].reward + static_cast<float>(config_.gamma) * g;
      records[static_cast<std::size_t>(i)].ret = g;
    }
    rollout.frame_finals.push_back(records.back());
    rollout.final_chamfers.push_back(d_prev);
    for (auto& rec : records) rollout.step_records.push_back(std::move(rec));

    const RigidTransform u_cam = nf.denormalize_update(u);
    pose = compose(invert(u_cam), pose);
    prev_cam = seg_cam;
  }

  // frame-level rewards and returns over the trajectory
  const auto frame_rewards = frame_reward(rollout.final_chamfers, config_.reward_eps);
  if (!frame_rewards.empty()) {
    std::vector<float> returns(frame_rewards.size());
    float g = 0.f;
    for (int i = static_cast<int>(frame_rewards.size()) - 1; i >= 0; --i) {
      g = static_cast<float>(frame_rewards[static_cast<std::size_t>(i)]) +
          static_cast<float>(config_.gamma) * g;
      returns[static_cast<std::size_t>(i)] = g;
    }
    for (std::size_t j = 0; j < frame_rewards.size(); ++j) {
      StepRecord rec = rollout.frame_finals[j + 1];
      rec.reward = static_cast<float>(frame_rewards[j]);
      rec.ret = returns[j];
      frame_buffer_.push(std::move(rec));
    }
    double s = 0.0;
    for (const double r : frame_rewards) s += r;
    metrics.mean_frame_reward += s;
    frame_reward_count_ += static_cast<long long>(frame_rewards.size());
  }
  for (auto& rec : rollout.step_records) step_buffer_.push(std::move(rec));

  metrics.mean_step_reward += reward_sum;
  step_reward_count_ += reward_count;
  match_axes_ += match_axes;
  total_axes_ += total_axes;
}

void Trainer::combined_update(Rng& rng, EpochMetrics& metrics) {
  auto batch = sample_batch(step_buffer_, config_.batch_step, rng);
  const auto frame_batch = sample_batch(frame_buffer_, config_.batch_frame, rng);
  batch.insert(batch.end(), frame_batch.begin(), frame_batch.end());
  if (batch.empty()) return;

  PolicyF grad;
  grad.allocate(params_.shape);
  const auto losses = accumulate_gradients(params_, batch, config_, /*with_bc=*/true, grad);
  opt_.step(params_, grad);

  metrics.bc_loss += losses.bc;
  metrics.ppo_loss += losses.ppo;
  ++update_count_;
}

EpochMetrics Trainer::run_epoch() {
  EpochMetrics metrics;
  metrics.epoch = epoch_;
  update_count_ = 0;
  step_reward_count_ = 0;
  frame_reward_count_ = 0;
  match_axes_ = 0;
  total_axes_ = 0;

  Rng rng = Rng::substream(seed_, "epoch" + std::to_string(epoch_));

  // candidate trajectory starts: (sequence, object, start)
  struct Candidate {
    int seq;
    int obj;
    int start;
  };
  std::vector<Candidate> candidates;
  long long total_frames = 0;
  for (int s = 0; s < static_cast<int>(dataset_.sequences.size()); ++s) {
    const auto& meta = dataset_.sequences[static_cast<std::size_t>(s)];
    if (!meta.has_gt) throw DataError("training requires ground-truth poses");
    total_frames += meta.n_frames;
    const int max_start = meta.n_frames - (config_.trajectory_frames + 1);
    for (int o = 0; o < static_cast<int>(meta.object_ids.size()); ++o) {
      for (int st = 0; st <= max_start; ++st) candidates.push_back({s, o, st});
    }
  }
  if (candidates.empty()) throw DataError("dataset too short for the trajectory length");

  const int n_traj = std::max<int>(
      1, static_cast<int>(std::llround(static_cast<double>(total_frames) *
                                       config_.resample_fraction / config_.trajectory_frames)));

  std::vector<Candidate> picks;
  if (static_cast<int>(candidates.size()) >= n_traj) {
    for (const int i : rng.sample_without_replacement(static_cast<int>(candidates.size()), n_traj)) {
      picks.push_back(candidates[static_cast<std::size_t>(i)]);
    }
  } else {
    for (int i = 0; i < n_traj; ++i) {
      picks.push_back(candidates[rng.uniform_below(candidates.size())]);
    }
  }

  for (const auto& pick : picks) {
    const auto& meta = dataset_.sequences[static_cast<std::size_t>(pick.seq)];
    rollout_trajectory(pick.seq, meta.object_ids[static_cast<std::size_t>(pick.obj)], pick.start,
                       rng.next_u64(), metrics);
    for (int u = 0; u < config_.updates_per_trajectory; ++u) combined_update(rng, metrics);
  }

  if (update_count_ > 0) {
    metrics.bc_loss /= static_cast<double>(update_count_);
    metrics.ppo_loss /= static_cast<double>(update_count_);
  }
  if (step_reward_count_ > 0) metrics.mean_step_reward /= static_cast<double>(step_reward_count_);
  if (frame_reward_count_ > 0) {
    metrics.mean_frame_reward /= static_cast<double>(frame_reward_count_);
  }
  if (total_axes_ > 0) {
    metrics.expert_match_rate =
        static_cast<double>(match_axes_) / static_cast<double>(total_axes_);
  }
  ++epoch_;
  return metrics;
}

// ---- checkpointing ----

namespace {
constexpr std::uint32_t kCheckpointMagic = 0x4B434B54;  // "TKCK"
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  ByteWriter w;
  w.put(kCheckpointMagic);
  w.put<std::uint32_t>(1);
  w.put<std::int32_t>(epoch_);
  w.put(seed_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params_.shape.mode));
  for (const int v : params_.shape.encoder_widths) w.put<std::int32_t>(v);
  for (const int v : params_.shape.trunk_widths) w.put<std::int32_t>(v);
  w.put<std::int32_t>(params_.shape.seg_hidden);

  auto pv = tensor_views(const_cast<PolicyF&>(params_));
  for (const auto& v : pv) w.put_bytes(v.data, static_cast<std::size_t>(v.size()) * sizeof(float));
  opt_.serialize(w);

  // replay buffers with shared frame contexts
  auto write_matrix = [&w](const MatX<float>& m) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    w.put_bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
  };

  std::map<const FrameSnapshot*, std::uint32_t> ctx_ids;
  std::vector<const FrameSnapshot*> ctxs;
  auto collect = [&](const ReplayBuffer& buf) {
    for (int i = 0; i < buf.size(); ++i) {
      const FrameSnapshot* c = buf.at(i).frame_ctx.get();
      if (ctx_ids.emplace(c, static_cast<std::uint32_t>(ctxs.size())).second) ctxs.push_back(c);
    }
  };
  collect(step_buffer_);
  collect(frame_buffer_);

  w.put<std::uint32_t>(static_cast<std::uint32_t>(ctxs.size()));
  for (const FrameSnapshot* c : ctxs) {
    write_matrix(c->prev);
    write_matrix(c->model);
  }

  auto write_buffer = [&](const ReplayBuffer& buf) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(buf.size()));
    for (int i = 0; i < buf.size(); ++i) {
      const StepRecord& r = buf.at(i);
      w.put<std::uint32_t>(ctx_ids.at(r.frame_ctx.get()));
      write_matrix(r.moving);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(r.labels.size()));
      w.put_bytes(r.labels.data(), r.labels.size());
      for (const int c : r.action.cls) w.put<std::int32_t>(c);
      for (const int c : r.expert.cls) w.put<std::int32_t>(c);
      for (const float v : r.log_prob) w.put(v);
      w.put(r.value);
      w.put(r.reward);
      w.put(r.ret);
      w.put(r.chamfer_before);
      w.put(r.chamfer_after);
      w.put<std::int32_t>(r.frame_index);
      w.put<std::int32_t>(r.step_index);
    }
  };
  write_buffer(step_buffer_);
  write_buffer(frame_buffer_);

  atomic_write_file(path, w.bytes());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.get<std::uint32_t>() != kCheckpointMagic) {
    throw DataError("not a trainer checkpoint: " + path.string());
  }
  if (r.get<std::uint32_t>() != 1) throw DataError("unsupported checkpoint version");
  epoch_ = r.get<std::int32_t>();
  const auto seed = r.get<std::uint64_t>();
  if (seed != seed_) throw DataError("checkpoint was produced with a different seed");

  PolicyShape shape;
  shape.mode = static_cast<FusionMode>(r.get<std::uint32_t>());
  for (int& v : shape.encoder_widths) v = r.get<std::int32_t>();
  for (int& v : shape.trunk_widths) v = r.get<std::int32_t>();
  shape.seg_hidden = r.get<std::int32_t>();
  if (!(shape == params_.shape)) {
    throw DataError("checkpoint network shape does not match the configuration");
  }

  auto pv = tensor_views(params_);
  for (auto& v : pv) r.take(v.data, static_cast<std::size_t>(v.size()) * sizeof(float));
  opt_.deserialize(r, params_);

  auto read_matrix = [&r](MatX<float>& m) {
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    m.resize(rows, cols);
    r.take(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
  };

  const auto n_ctx = r.get<std::uint32_t>();
  std::vector<std::shared_ptr<FrameSnapshot>> ctxs;
  ctxs.reserve(n_ctx);
  for (std::uint32_t i = 0; i < n_ctx; ++i) {
    auto c = std::make_shared<FrameSnapshot>();
    read_matrix(c->prev);
    read_matrix(c->model);
    ctxs.push_back(std::move(c));
  }

  auto read_buffer = [&](ReplayBuffer& buf) {
    buf = ReplayBuffer(config_.buffer_capacity);
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      StepRecord rec;
      rec.frame_ctx = ctxs.at(r.get<std::uint32_t>());
      read_matrix(rec.moving);
      const auto nl = r.get<std::uint32_t>();
      rec.labels.resize(nl);
      r.take(rec.labels.data(), nl);
      for (int& c : rec.action.cls) c = r.get<std::int32_t>();
      for (int& c : rec.expert.cls) c = r.get<std::int32_t>();
      for (float& v : rec.log_prob) v = r.get<float>();
      rec.value = r.get<float>();
      rec.reward = r.get<float>();
      rec.ret = r.get<float>();
      rec.chamfer_before = r.get<double>();
      rec.chamfer_after = r.get<double>();
      rec.frame_index = r.get<std::int32_t>();
      rec.step_index = r.get<std::int32_t>();
      buf.push(std::move(rec));
    }
  };
  read_buffer(step_buffer_);
  read_buffer(frame_buffer_);
}

TrainResult train(const Dataset& dataset, const PolicyShape& shape, const StepTable& steps,
                  const TrainConfig& config, std::uint64_t seed,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_state) {
  Trainer trainer(dataset, shape, steps, config, seed);
  if (resume_state) trainer.load_checkpoint(*resume_state);

  const bool persist = !out_dir.empty();
  std::filesystem::path log_path;
  if (persist) {
    std::filesystem::create_directories(out_dir);
    log_path = out_dir / "train_log.csv";
    if (!std::filesystem::exists(log_path)) {
      atomic_write_file(log_path,
                        std::string("epoch,bc_loss,ppo_loss,mean_step_reward,mean_frame_reward,"
                                    "expert_match_rate\n"));
    }
  }

  TrainResult result;
  while (trainer.epoch() < config.epochs) {
    const EpochMetrics m = trainer.run_epoch();
    result.metrics.push_back(m);
    if (persist) {
      std::ostringstream row;
      row << m.epoch << ',' << fmt_double(m.bc_loss) << ',' << fmt_double(m.ppo_loss) << ','
          << fmt_double(m.mean_step_reward) << ',' << fmt_double(m.mean_frame_reward) << ','
          << fmt_double(m.expert_match_rate) << '\n';
      std::ofstream log(log_path, std::ios::app);
      log << row.str();
      if (m.epoch % config.checkpoint_every == 0 || trainer.epoch() == config.epochs) {
        char name[48];
        std::snprintf(name, sizeof(name), "weights_epoch_%03d.bin", m.epoch);
        save_weights(out_dir / name, trainer.params());
        trainer.save_checkpoint(out_dir / "trainer_state.bin");
      }
    }
  }
  if (persist) save_weights(out_dir / "weights.bin", trainer.params());
  result.params = trainer.params();
  return result;
}

}  // namespace trackkit

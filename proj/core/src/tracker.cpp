#include "trackkit/tracker.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "trackkit/eval.hpp"
#include "trackkit/io.hpp"
#include "trackkit/render.hpp"
#include "trackkit/threading.hpp"
#include "trackkit/training.hpp"

namespace trackkit {

void TrackerConfig::validate() const {
  if (iterations < 1) throw ConfigError("tracker: iterations must be >= 1");
  if (tau < 0.0 || theta_vis < 0.0 || theta_step < 0.0) {
    throw ConfigError("tracker: thresholds must be >= 0");
  }
  if (step_buffer_frames < 1) throw ConfigError("tracker: step buffer length must be >= 1");
  if (segment_points < 1) throw ConfigError("tracker: segment_points must be >= 1");
  if (reinit_policy != "never" && reinit_policy != "every-n" && reinit_policy != "auto") {
    throw ConfigError("tracker: reinit_policy must be never, every-n or auto");
  }
  if (reinit_policy == "every-n" && reinit_every < 1) {
    throw ConfigError("tracker: reinit_every must be >= 1");
  }
}

std::string to_string(ReinitCause cause) {
  switch (cause) {
    case ReinitCause::Visibility: return "visibility";
    case ReinitCause::Stepsize: return "stepsize";
    case ReinitCause::LostSegment: return "lost-segment";
    case ReinitCause::Scheduled: return "scheduled";
  }
  return "?";
}

ReinitCause reinit_cause_from_string(const std::string& s) {
  if (s == "visibility") return ReinitCause::Visibility;
  if (s == "stepsize") return ReinitCause::Stepsize;
  if (s == "lost-segment") return ReinitCause::LostSegment;
  if (s == "scheduled") return ReinitCause::Scheduled;
  throw DataError("unknown reinit cause: " + s);
}

std::string to_string(TrackPolicy p) {
  switch (p) {
    case TrackPolicy::Agent: return "agent";
    case TrackPolicy::Expert: return "expert";
    case TrackPolicy::Icp: return "icp";
  }
  return "?";
}

TrackPolicy track_policy_from_string(const std::string& s) {
  if (s == "agent") return TrackPolicy::Agent;
  if (s == "expert") return TrackPolicy::Expert;
  if (s == "icp") return TrackPolicy::Icp;
  throw ConfigError("unknown tracking policy: " + s);
}

double TrackerState::step_buffer_mean() const {
  if (step_magnitudes.empty()) return 0.0;
  double s = 0.0;
  for (const double v : step_magnitudes) s += v;
  return s / static_cast<double>(step_magnitudes.size());
}

ReinitDecision should_reinit(const TrackerState& state, double visibility, int frame_index,
                             const TrackerConfig& config) {
  ReinitDecision out;
  if (config.reinit_policy == "never") return out;
  if (config.reinit_policy == "every-n") {
    if (frame_index > 0 && frame_index % config.reinit_every == 0) {
      out.reinit = true;
      out.cause = ReinitCause::Scheduled;
    }
    return out;
  }
  if (visibility < config.theta_vis) {
    out.reinit = true;
    out.cause = ReinitCause::Visibility;
    return out;
  }
  if (!state.step_magnitudes.empty() && state.step_buffer_mean() > config.theta_step) {
    out.reinit = true;
    out.cause = ReinitCause::Stepsize;
  }
  return out;
}

Tracker::Tracker(const ObjectModel& model, const CameraIntrinsics& intrinsics,
                 const TrackerConfig& config, const StepTable& steps, TrackPolicy policy,
                 const PolicyF* params)
    : model_(model),
      intrinsics_(intrinsics),
      config_(config),
      steps_(steps),
      policy_(policy),
      params_(params) {
  config_.validate();
  steps_.validate();
  if (policy_ == TrackPolicy::Agent && params_ == nullptr) {
    throw ConfigError("agent policy requires weights");
  }
  if (policy_ == TrackPolicy::Icp) model_tree_.build(model.sample_points);
}

void Tracker::reinitialize(const DepthImage& observed, const RigidTransform& oracle_pose,
                           std::uint64_t seed) {
  state_.pose = oracle_pose;
  state_.step_magnitudes.clear();
  try {
    const DepthImage rendered = rasterize(model_.mesh, oracle_pose, intrinsics_);
    const MaskImage mask = dilate(mask_of(rendered), config_.mask_dilation);
    state_.prev_segment =
        extract_segment(observed, mask, intrinsics_, config_.segment_points, seed);
  } catch (const LostSegmentError&) {
    state_.prev_segment = PointCloud{};  // nothing visible under the oracle pose
  }
}

Tracker::AlignResult Tracker::align_agent(const PointCloud& segment_cam,
                                          const RigidTransform* gt_pose) {
  NormalizationFrame nf;
  nf.center = apply(state_.pose, model_.sample_centroid());
  nf.scale = model_.diameter;

  PointCloud active = nf.normalize(segment_cam);
  const PointCloud model_n = model_points_normalized(model_, nf, state_.pose);

  RigidTransform u_gt;
  if (policy_ == TrackPolicy::Expert) {
    if (gt_pose == nullptr) throw ConfigError("expert policy requires ground-truth poses");
    u_gt = compose(nf.normalize_pose(state_.pose), invert(nf.normalize_pose(*gt_pose)));
  }

  ForwardTape<float> tape;
  PolicyInput<float> in;
  if (policy_ == TrackPolicy::Agent) {
    PointCloud prev_n;
    if (state_.prev_segment.size() > 0) {
      prev_n = nf.normalize(state_.prev_segment);
    } else {
      prev_n = model_n;  // no reference segment; fall back to the model cloud
    }
    in.prev = cloud_matrix<float>(prev_n);
    in.model = cloud_matrix<float>(model_n);
    policy_forward_targets(*params_, in, tape);
  }

  RigidTransform u;
  Action last_action = Action::stop();
  double expected_mag = 0.0;
  for (int i = 0; i < config_.iterations; ++i) {
    Action action;
    if (policy_ == TrackPolicy::Expert) {
      const PoseResidual res = residual_saturating(u_gt, u);
      action = expert_action(res.rotation_xyz, res.translation, steps_);
    } else {
      const PointCloud moving = apply(u, active);
      in.moving = cloud_matrix<float>(moving);
      policy_forward_moving(*params_, in, tape);
      ActionField field;
      field.logits = tape.logits;
      action = select_action(field, SelectMode::Greedy);

      if (i + 1 < config_.iterations) {
        std::vector<float> scores(static_cast<std::size_t>(tape.seg_logits.size()));
        for (Eigen::Index k = 0; k < tape.seg_logits.size(); ++k) {
          scores[static_cast<std::size_t>(k)] = 1.0f / (1.0f + std::exp(-tape.seg_logits(k)));
        }
        active = segment_filter(active, scores);
      } else if (config_.expected_stepsize) {
        const auto probs = field.probabilities();
        for (int ax = 0; ax < kActionAxes; ++ax) {
          double e = 0.0;
          for (int k = 0; k < kActionClasses; ++k) {
            e += static_cast<double>(probs(ax, k)) * std::abs(steps_.step_of(k));
          }
          expected_mag += e / kActionAxes;
        }
      }
    }
    u = apply_action(u, action, steps_);
    last_action = action;
  }

  AlignResult out;
  const RigidTransform u_cam = nf.denormalize_update(u);
  out.pose = compose(invert(u_cam), state_.pose);
  if (config_.expected_stepsize && policy_ == TrackPolicy::Agent) {
    out.mean_final_step = expected_mag;
  } else {
    double mag = 0.0;
    for (int ax = 0; ax < kActionAxes; ++ax) {
      mag += std::abs(steps_.step_of(last_action.cls[static_cast<std::size_t>(ax)]));
    }
    out.mean_final_step = mag / kActionAxes;
  }
  return out;
}

Tracker::AlignResult Tracker::align_icp(const PointCloud& segment_cam) {
  const IcpResult icp = icp_refine(segment_cam, model_, model_tree_, state_.pose,
                                   config_.icp_iterations, config_.icp_tolerance);
  AlignResult out;
  out.pose = icp.pose;
  out.mean_final_step = 0.0;  // no action distribution; stepsize trigger stays silent
  return out;
}

FrameDiagnostics Tracker::track_frame(const DepthImage& observed, int frame_index,
                                      const RigidTransform* gt_pose, std::uint64_t seed) {
  FrameDiagnostics diag;
  diag.frame = frame_index;

  const DepthImage rendered = rasterize(model_.mesh, state_.pose, intrinsics_);
  diag.visibility = visibility_ratio(rendered, observed, config_.tau);

  PointCloud segment_cam;
  bool lost = false;
  try {
    const MaskImage mask = dilate(mask_of(rendered), config_.mask_dilation);
    segment_cam = extract_segment(observed, mask, intrinsics_, config_.segment_points, seed);
  } catch (const LostSegmentError&) {
    lost = true;
  }
  diag.lost_segment = lost;

  if (!lost) {
    const AlignResult aligned =
        policy_ == TrackPolicy::Icp ? align_icp(segment_cam) : align_agent(segment_cam, gt_pose);
    state_.pose = aligned.pose;
    diag.mean_final_step = aligned.mean_final_step;
    state_.step_magnitudes.push_back(aligned.mean_final_step);
    while (static_cast<int>(state_.step_magnitudes.size()) > config_.step_buffer_frames) {
      state_.step_magnitudes.pop_front();
    }
    state_.prev_segment = segment_cam;
  }

  ReinitDecision decision = should_reinit(state_, diag.visibility, frame_index, config_);
  if (lost && config_.reinit_policy != "never") {
    decision.reinit = true;
    decision.cause = ReinitCause::LostSegment;
  }

  if (decision.reinit && config_.reinit_policy != "never") {
    if (gt_pose == nullptr) {
      throw ConfigError("reinitialization requires an oracle pose; run with reinit_policy=never");
    }
    ReinitEvent event;
    event.frame = frame_index;
    event.cause = decision.cause;
    event.visibility = diag.visibility;
    event.mean_step = state_.step_buffer_mean();
    state_.events.push_back(event);
    state_.reinit_count += 1;
    reinitialize(observed, *gt_pose, fnv1a64("reinit") ^ seed);
    diag.reinit = true;
    diag.cause = decision.cause;
  }

  diag.pose = state_.pose;
  if (gt_pose != nullptr) {
    diag.add = add_error(model_.sample_points, *gt_pose, state_.pose);
    diag.adi = adi_error(model_.sample_points, *gt_pose, state_.pose);
  }
  return diag;
}

RigidTransform umeyama_rigid(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size() || src.size() < 3) {
    throw NumericError("rigid fit needs >= 3 paired points");
  }
  Vec3 src_mean = Vec3::Zero(), dst_mean = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    src_mean += src[i];
    dst_mean += dst[i];
  }
  src_mean /= static_cast<double>(src.size());
  dst_mean /= static_cast<double>(dst.size());

  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    h += (src[i] - src_mean) * (dst[i] - dst_mean).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();

  RigidTransform out;
  out.rotation = Quat(r).normalized();
  out.translation = dst_mean - r * src_mean;
  return out;
}

IcpResult icp_refine(const PointCloud& segment_cam, const ObjectModel& model,
                     const KdTree3& model_tree, const RigidTransform& init, int max_iterations,
                     double tolerance) {
  if (segment_cam.size() < 3) throw LostSegmentError("icp: fewer than 3 segment points");

  IcpResult result;
  result.pose = init;
  double prev_error = std::numeric_limits<double>::infinity();

  for (int it = 0; it < max_iterations; ++it) {
    const RigidTransform inv_pose = invert(result.pose);
    std::vector<Vec3> matched_model(segment_cam.points.size());
    double error = 0.0;
    for (std::size_t i = 0; i < segment_cam.points.size(); ++i) {
      const Vec3 q = apply(inv_pose, segment_cam.points[i]);
      const auto hit = model_tree.nearest(q);
      matched_model[i] = model.sample_points[static_cast<std::size_t>(hit.index)];
      error += hit.distance;
    }
    error /= static_cast<double>(segment_cam.points.size());
    result.error_history.push_back(error);
    result.iterations = it + 1;

    // correspondences fixed: exact least-squares update of the posed model
    std::vector<Vec3> posed(matched_model.size());
    for (std::size_t i = 0; i < matched_model.size(); ++i) {
      posed[i] = apply(result.pose, matched_model[i]);
    }
    const RigidTransform delta = umeyama_rigid(posed, segment_cam.points);
    result.pose = compose(delta, result.pose);

    if (std::abs(prev_error - error) < tolerance) break;
    prev_error = error;
  }
  result.final_error = result.error_history.empty() ? 0.0 : result.error_history.back();
  return result;
}

// ---- whole-run driver ----

namespace {

std::string trace_file_name(const std::string& seq, const std::string& obj) {
  return "trace_" + seq + "_" + obj + ".csv";
}

}  // namespace

TrackRunSummary run_tracking(const Dataset& dataset, TrackPolicy policy, const PolicyF* params,
                             const TrackerConfig& config, const StepTable& steps,
                             std::uint64_t seed, const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  const bool needs_gt = policy == TrackPolicy::Expert || config.reinit_policy != "never";
  for (const auto& meta : dataset.sequences) {
    if (!meta.has_gt) {
      if (policy == TrackPolicy::Expert) {
        throw ConfigError("expert policy requires ground-truth poses; sequence " + meta.id +
                          " has none");
      }
      throw DataError("tracking requires ground-truth initialization; sequence " + meta.id +
                      " has no poses");
    }
  }
  (void)needs_gt;

  struct Job {
    const SequenceMeta* meta;
    std::string object;
  };
  std::vector<Job> jobs;
  for (const auto& meta : dataset.sequences) {
    for (const auto& obj : meta.object_ids) jobs.push_back({&meta, obj});
  }

  struct JobOutput {
    std::string trace;
    std::vector<std::string> event_rows;
    int frames = 0;
    int reinits = 0;
    std::string trace_file;
  };
  std::vector<JobOutput> outputs(jobs.size());

  parallel_for(static_cast<int>(jobs.size()), [&](int ji) {
    const Job& job = jobs[static_cast<std::size_t>(ji)];
    const SequenceMeta& meta = *job.meta;
    const ObjectModel& model = dataset.model(job.object);
    Rng rng = Rng::substream(seed, "track/" + meta.id + "/" + job.object);

    Tracker tracker(model, meta.intrinsics, config, steps, policy, params);

    std::ostringstream trace;
    trace << "frame,qw,qx,qy,qz,tx,ty,tz,add,adi,visibility,mean_final_step,reinit,cause\n";

    const DepthImage first = load_depth(meta, 0);
    const RigidTransform gt0 = meta.gt_poses[0].at(job.object);
    tracker.reinitialize(first, gt0, rng.next_u64());
    {
      const RigidTransform p = tracker.state().pose.canonical();
      trace << 0 << ',' << fmt_double(p.rotation.w()) << ',' << fmt_double(p.rotation.x()) << ','
            << fmt_double(p.rotation.y()) << ',' << fmt_double(p.rotation.z()) << ','
            << fmt_double(p.translation.x()) << ',' << fmt_double(p.translation.y()) << ','
            << fmt_double(p.translation.z()) << ",0,0,1,0,0,\n";
    }

    JobOutput& out = outputs[static_cast<std::size_t>(ji)];
    out.frames = meta.n_frames;
    for (int f = 1; f < meta.n_frames; ++f) {
      const DepthImage observed = load_depth(meta, f);
      const RigidTransform gt = meta.gt_poses[static_cast<std::size_t>(f)].at(job.object);
      const FrameDiagnostics diag = tracker.track_frame(observed, f, &gt, rng.next_u64());

      const RigidTransform p = diag.pose.canonical();
      trace << f << ',' << fmt_double(p.rotation.w()) << ',' << fmt_double(p.rotation.x()) << ','
            << fmt_double(p.rotation.y()) << ',' << fmt_double(p.rotation.z()) << ','
            << fmt_double(p.translation.x()) << ',' << fmt_double(p.translation.y()) << ','
            << fmt_double(p.translation.z()) << ',' << fmt_double(diag.add) << ','
            << fmt_double(diag.adi) << ',' << fmt_double(diag.visibility) << ','
            << fmt_double(diag.mean_final_step) << ',' << (diag.reinit ? 1 : 0) << ','
            << (diag.reinit ? to_string(diag.cause) : "") << '\n';
    }

    for (const auto& event : tracker.state().events) {
      std::ostringstream row;
      row << meta.id << ',' << job.object << ',' << event.frame << ',' << to_string(event.cause)
          << ',' << fmt_double(event.visibility) << ',' << fmt_double(event.mean_step);
      out.event_rows.push_back(row.str());
    }
    out.reinits = tracker.state().reinit_count;
    out.trace = trace.str();
    out.trace_file = trace_file_name(meta.id, job.object);
  });

  TrackRunSummary summary;
  std::ostringstream events;
  events << "sequence,object,frame,cause,visibility,mean_step\n";
  for (const auto& out : outputs) {
    atomic_write_file(out_dir / out.trace_file, out.trace);
    summary.trace_files.push_back(out.trace_file);
    summary.total_frames += out.frames;
    summary.total_reinits += out.reinits;
    for (const auto& row : out.event_rows) events << row << '\n';
  }
  atomic_write_file(out_dir / "events.csv", events.str());

  nlohmann::json run;
  run["policy"] = to_string(policy);
  run["total_frames"] = summary.total_frames;
  run["total_reinits"] = summary.total_reinits;
  run["traces"] = summary.trace_files;
  atomic_write_file(out_dir / "run.json", run.dump(1));
  return summary;
}

}  // namespace trackkit

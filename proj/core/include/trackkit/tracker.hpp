#pragma once

#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trackkit/agent.hpp"
#include "trackkit/kdtree.hpp"
#include "trackkit/scenegen.hpp"

namespace trackkit {

struct TrackerConfig {
  int iterations = 10;            // alignment iterations per frame
  double tau = 0.02;              // visibility inlier margin, meters
  double theta_vis = 0.3;         // reinit when visibility drops below
  double theta_step = 0.01;       // reinit when buffered mean stepsize exceeds
  int step_buffer_frames = 5;     // K
  int mask_dilation = 5;          // px added to the propagated mask
  int segment_points = 512;
  std::string reinit_policy = "auto";  // never | every-n | auto
  int reinit_every = 30;               // n for every-n
  bool expected_stepsize = false;      // expectation under the softmax instead
                                       // of the greedy magnitude
  int icp_iterations = 30;
  double icp_tolerance = 1e-8;

  void validate() const;
};

enum class ReinitCause { Visibility, Stepsize, LostSegment, Scheduled };
std::string to_string(ReinitCause cause);
ReinitCause reinit_cause_from_string(const std::string& s);

struct ReinitEvent {
  int frame = 0;
  ReinitCause cause = ReinitCause::Visibility;
  double visibility = 0.0;
  double mean_step = 0.0;
};

struct TrackerState {
  RigidTransform pose;
  PointCloud prev_segment;             // camera frame
  std::deque<double> step_magnitudes;  // last K final-iteration mean |step|
  int reinit_count = 0;
  std::vector<ReinitEvent> events;

  double step_buffer_mean() const;
};

// Trigger decision from the current visibility and the stepsize buffer.
struct ReinitDecision {
  bool reinit = false;
  ReinitCause cause = ReinitCause::Visibility;
};
ReinitDecision should_reinit(const TrackerState& state, double visibility, int frame_index,
                             const TrackerConfig& config);

struct FrameDiagnostics {
  int frame = 0;
  RigidTransform pose;
  double visibility = 0.0;
  double mean_final_step = 0.0;
  bool lost_segment = false;
  bool reinit = false;
  ReinitCause cause = ReinitCause::Visibility;
  double add = 0.0;
  double adi = 0.0;
};

enum class TrackPolicy { Agent, Expert, Icp };
std::string to_string(TrackPolicy p);
TrackPolicy track_policy_from_string(const std::string& s);

// Tracks one object through a sequence of depth frames.
class Tracker {
 public:
  Tracker(const ObjectModel& model, const CameraIntrinsics& intrinsics,
          const TrackerConfig& config, const StepTable& steps, TrackPolicy policy,
          const PolicyF* params);

  // Sets the pose from the oracle and re-extracts the reference segment;
  // used for the initial frame and for every reinitialization.
  void reinitialize(const DepthImage& observed, const RigidTransform& oracle_pose,
                    std::uint64_t seed);

  // One tracking step. `gt_pose` feeds the expert policy, oracle
  // reinitialization and the error metrics; it may be null for the agent/icp
  // policies with reinit_policy "never".
  FrameDiagnostics track_frame(const DepthImage& observed, int frame_index,
                               const RigidTransform* gt_pose, std::uint64_t seed);

  const TrackerState& state() const { return state_; }
  TrackerState& mutable_state() { return state_; }

 private:
  struct AlignResult {
    RigidTransform pose;
    double mean_final_step = 0.0;
  };
  AlignResult align_agent(const PointCloud& segment_cam, const RigidTransform* gt_pose);
  AlignResult align_icp(const PointCloud& segment_cam);

  const ObjectModel& model_;
  CameraIntrinsics intrinsics_;
  TrackerConfig config_;
  StepTable steps_;
  TrackPolicy policy_;
  const PolicyF* params_;
  KdTree3 model_tree_;  // object-frame samples, shared by ICP iterations
  TrackerState state_;
};

// Exact least-squares rigid motion mapping src onto dst for fixed
// correspondences (cross-covariance SVD).
RigidTransform umeyama_rigid(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

struct IcpResult {
  RigidTransform pose;
  int iterations = 0;
  double final_error = 0.0;            // mean segment->model distance, meters
  std::vector<double> error_history;   // one entry per iteration
};

// Point-to-point ICP of a camera-frame segment onto the model under `init`.
IcpResult icp_refine(const PointCloud& segment_cam, const ObjectModel& model,
                     const KdTree3& model_tree, const RigidTransform& init, int max_iterations,
                     double tolerance);

// ---- whole-run driver ----

// Tracks every object of every sequence, writing per-object trace CSVs,
// events.csv and run.json into out_dir.
struct TrackRunSummary {
  int total_frames = 0;
  int total_reinits = 0;
  std::vector<std::string> trace_files;
};
TrackRunSummary run_tracking(const Dataset& dataset, TrackPolicy policy, const PolicyF* params,
                             const TrackerConfig& config, const StepTable& steps,
                             std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace trackkit

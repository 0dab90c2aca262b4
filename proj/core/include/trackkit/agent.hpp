#pragma once

#include <array>
#include <filesystem>
#include <optional>

#include "trackkit/agent_net.hpp"
#include "trackkit/geometry.hpp"

namespace trackkit {

// Signed per-axis stepsizes. Classes run from the most negative step to the
// most positive; class 5 is the zero ("stop") action.
struct StepTable {
  std::array<double, 5> magnitudes{0.00066, 0.002, 0.006, 0.018, 0.054};

  static constexpr int kStopClass = kActionClasses / 2;

  // Signed step for a class index in [0, 10].
  double step_of(int cls) const;
  void validate() const;  // strictly increasing positive magnitudes
};

struct Action {
  std::array<int, kActionAxes> cls{};  // class index per axis

  static Action stop() {
    Action a;
    a.cls.fill(StepTable::kStopClass);
    return a;
  }
  bool operator==(const Action&) const = default;
};

// Output of one policy evaluation: per-axis action logits, value baseline,
// per-point foreground scores (sigmoid probabilities).
struct ActionField {
  Logits<float> logits = Logits<float>::Zero();
  float value = 0.f;
  std::vector<float> seg_scores;

  Eigen::Matrix<float, kActionAxes, kActionClasses> probabilities() const;
};

enum class SelectMode { Greedy, Sample };

// Greedy: per-axis argmax, ties to the lower class index. Sample: per-axis
// categorical draw, deterministic per seed.
Action select_action(const ActionField& field, SelectMode mode, std::uint64_t seed = 0);

// Left-composes the step update: rotation Rx(s1)Ry(s2)Rz(s3) about the
// normalized-frame origin plus translation (s4,s5,s6).
RigidTransform apply_action(const RigidTransform& pose, const Action& action,
                            const StepTable& steps);

// Drops points scored below 0.5. Filtering is skipped when fewer than
// kMinSegmentPoints would survive.
constexpr int kMinSegmentPoints = 32;
PointCloud segment_filter(const PointCloud& pc, const std::vector<float>& seg_scores);

using PolicyF = Policy<float>;
using PolicyD = Policy<double>;

// Public ops on point clouds (the hot path uses the templated internals).
Eigen::VectorXf embed(const Encoder<float>& encoder, const PointCloud& pc);
std::vector<Eigen::VectorXf> build_state(const PolicyF& policy, const PointCloud& moving,
                                         const PointCloud& prev, const PointCloud& model);
ActionField policy_forward(const PolicyF& policy, const PointCloud& moving,
                           const PointCloud& prev, const PointCloud& model);

template <typename S>
MatX<S> cloud_matrix(const PointCloud& pc) {
  MatX<S> m(pc.size(), 3);
  for (int i = 0; i < pc.size(); ++i) {
    m(i, 0) = static_cast<S>(pc.points[static_cast<std::size_t>(i)].x());
    m(i, 1) = static_cast<S>(pc.points[static_cast<std::size_t>(i)].y());
    m(i, 2) = static_cast<S>(pc.points[static_cast<std::size_t>(i)].z());
  }
  return m;
}

// Versioned binary weights: header (magic, version, fusion mode, widths),
// then named tensors as shape + row-major little-endian f32. Round trips are
// bit-exact.
void save_weights(const std::filesystem::path& path, const PolicyF& policy);
PolicyF load_weights(const std::filesystem::path& path);

template <typename To, typename From>
Policy<To> cast_policy(const Policy<From>& p) {
  Policy<To> out;
  out.allocate(p.shape);
  auto src = tensor_views(const_cast<Policy<From>&>(p));
  auto dst = tensor_views(out);
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (Eigen::Index k = 0; k < src[i].size(); ++k) {
      dst[i].data[k] = static_cast<To>(src[i].data[k]);
    }
  }
  return out;
}

}  // namespace trackkit

#include "trackkit/agent.hpp"

#include <cmath>

#include "trackkit/io.hpp"

namespace trackkit {

double StepTable::step_of(int cls) const {
  if (cls < 0 || cls >= kActionClasses) throw NumericError("action class out of range");
  if (cls == kStopClass) return 0.0;
  if (cls < kStopClass) return -magnitudes[static_cast<std::size_t>(kStopClass - 1 - cls)];
  return magnitudes[static_cast<std::size_t>(cls - kStopClass - 1)];
}

void StepTable::validate() const {
  double prev = 0.0;
  for (const double m : magnitudes) {
    if (!(m > prev)) throw ConfigError("stepsizes must be strictly increasing and positive");
    prev = m;
  }
}

Eigen::Matrix<float, kActionAxes, kActionClasses> ActionField::probabilities() const {
  const auto lp = log_softmax_rows(logits);
  return lp.array().exp().matrix();
}

Action select_action(const ActionField& field, SelectMode mode, std::uint64_t seed) {
  Action a;
  if (mode == SelectMode::Greedy) {
    for (int axis = 0; axis < kActionAxes; ++axis) {
      int best = 0;
      for (int k = 1; k < kActionClasses; ++k) {
        if (field.logits(axis, k) > field.logits(axis, best)) best = k;
      }
      a.cls[static_cast<std::size_t>(axis)] = best;
    }
    return a;
  }
  Rng rng(seed);
  const auto probs = field.probabilities();
  for (int axis = 0; axis < kActionAxes; ++axis) {
    const double u = rng.uniform();
    double cum = 0.0;
    int chosen = kActionClasses - 1;
    for (int k = 0; k < kActionClasses; ++k) {
      cum += static_cast<double>(probs(axis, k));
      if (u < cum) {
        chosen = k;
        break;
      }
    }
    a.cls[static_cast<std::size_t>(axis)] = chosen;
  }
  return a;
}

RigidTransform apply_action(const RigidTransform& pose, const Action& action,
                            const StepTable& steps) {
  const Vec3 rot(steps.step_of(action.cls[0]), steps.step_of(action.cls[1]),
                 steps.step_of(action.cls[2]));
  RigidTransform update;
  update.rotation = Quat(rotation_from_euler_xyz(rot)).normalized();
  update.translation =
      Vec3(steps.step_of(action.cls[3]), steps.step_of(action.cls[4]), steps.step_of(action.cls[5]));
  return compose(update, pose);
}

PointCloud segment_filter(const PointCloud& pc, const std::vector<float>& seg_scores) {
  if (seg_scores.size() != pc.points.size()) {
    throw NumericError("segment_filter: score count does not match point count");
  }
  int survivors = 0;
  for (const float s : seg_scores) survivors += s >= 0.5f;
  if (survivors < kMinSegmentPoints) return pc;

  PointCloud out;
  out.points.reserve(static_cast<std::size_t>(survivors));
  if (pc.has_labels()) out.labels.reserve(static_cast<std::size_t>(survivors));
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    if (seg_scores[i] >= 0.5f) {
      out.points.push_back(pc.points[i]);
      if (pc.has_labels()) out.labels.push_back(pc.labels[i]);
    }
  }
  return out;
}

Eigen::VectorXf embed(const Encoder<float>& encoder, const PointCloud& pc) {
  EncoderTape<float> tape;
  encoder_forward(encoder, cloud_matrix<float>(pc), tape);
  return tape.g;
}

std::vector<Eigen::VectorXf> build_state(const PolicyF& policy, const PointCloud& moving,
                                         const PointCloud& prev, const PointCloud& model) {
  PolicyInput<float> in{cloud_matrix<float>(moving), cloud_matrix<float>(prev),
                        cloud_matrix<float>(model)};
  ForwardTape<float> tape;
  policy_forward_full(policy, in, tape);
  return tape.states;
}

ActionField policy_forward(const PolicyF& policy, const PointCloud& moving,
                           const PointCloud& prev, const PointCloud& model) {
  PolicyInput<float> in{cloud_matrix<float>(moving), cloud_matrix<float>(prev),
                        cloud_matrix<float>(model)};
  ForwardTape<float> tape;
  policy_forward_full(policy, in, tape);
  ActionField field;
  field.logits = tape.logits;
  field.value = tape.value;
  field.seg_scores.resize(static_cast<std::size_t>(tape.seg_logits.size()));
  for (Eigen::Index i = 0; i < tape.seg_logits.size(); ++i) {
    field.seg_scores[static_cast<std::size_t>(i)] =
        1.0f / (1.0f + std::exp(-tape.seg_logits(i)));
  }
  return field;
}

namespace {
constexpr std::uint32_t kWeightsMagic = 0x31574B54;  // "TKW1"
constexpr std::uint32_t kWeightsVersion = 1;
}  // namespace

void save_weights(const std::filesystem::path& path, const PolicyF& policy) {
  ByteWriter w;
  w.put(kWeightsMagic);
  w.put(kWeightsVersion);
  w.put(static_cast<std::uint32_t>(policy.shape.mode));
  for (const int v : policy.shape.encoder_widths) w.put(static_cast<std::int32_t>(v));
  for (const int v : policy.shape.trunk_widths) w.put(static_cast<std::int32_t>(v));
  w.put(static_cast<std::int32_t>(policy.shape.seg_hidden));

  auto views = tensor_views(const_cast<PolicyF&>(policy));
  w.put(static_cast<std::uint32_t>(views.size()));
  for (const auto& v : views) {
    w.put_string(v.name);
    w.put(static_cast<std::uint32_t>(v.rows));
    w.put(static_cast<std::uint32_t>(v.cols));
    // column-major in memory, row-major on disk
    for (Eigen::Index r = 0; r < v.rows; ++r) {
      for (Eigen::Index c = 0; c < v.cols; ++c) {
        w.put<float>(v.data[c * v.rows + r]);
      }
    }
  }
  atomic_write_file(path, w.bytes());
}

PolicyF load_weights(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.get<std::uint32_t>() != kWeightsMagic) throw DataError("not a weights file: " + path.string());
  if (r.get<std::uint32_t>() != kWeightsVersion) {
    throw DataError("unsupported weights version: " + path.string());
  }
  PolicyShape shape;
  shape.mode = static_cast<FusionMode>(r.get<std::uint32_t>());
  for (int& v : shape.encoder_widths) v = r.get<std::int32_t>();
  for (int& v : shape.trunk_widths) v = r.get<std::int32_t>();
  shape.seg_hidden = r.get<std::int32_t>();

  PolicyF policy;
  policy.allocate(shape);
  auto views = tensor_views(policy);
  const auto count = r.get<std::uint32_t>();
  if (count != views.size()) throw DataError("weights tensor count mismatch: " + path.string());
  for (auto& v : views) {
    const std::string name = r.get_string();
    if (name != v.name) throw DataError("weights tensor order mismatch at " + name);
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (rows != static_cast<std::uint32_t>(v.rows) || cols != static_cast<std::uint32_t>(v.cols)) {
      throw DataError("weights tensor shape mismatch at " + name);
    }
    for (Eigen::Index rr = 0; rr < v.rows; ++rr) {
      for (Eigen::Index cc = 0; cc < v.cols; ++cc) {
        v.data[cc * v.rows + rr] = r.get<float>();
      }
    }
  }
  return policy;
}

}  // namespace trackkit

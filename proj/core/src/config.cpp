#include "trackkit/config.hpp"

#include <functional>
#include <map>

#include "trackkit/io.hpp"

namespace trackkit {

using nlohmann::json;

PolicyShape AgentConfig::shape() const {
  PolicyShape s;
  s.mode = fusion_mode_from_string(fusion);
  s.encoder_widths = encoder_widths;
  s.trunk_widths = trunk_widths;
  s.seg_hidden = seg_hidden;
  return s;
}

StepTable AgentConfig::steps() const {
  StepTable t;
  t.magnitudes = step_magnitudes;
  t.validate();
  return t;
}

namespace {

using FieldMap = std::map<std::string, std::function<void(const json&)>>;

void parse_strict(const json& j, const std::string& section, const FieldMap& fields) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) {
      throw ConfigError("unknown config key: " + (section.empty() ? key : section + "." + key));
    }
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for " + section + "." + key + ": " + e.what());
    }
  }
}

template <typename T, std::size_t N>
void read_array(const json& v, std::array<T, N>& out) {
  if (!v.is_array() || v.size() != N) {
    throw ConfigError("expected an array of " + std::to_string(N) + " entries");
  }
  for (std::size_t i = 0; i < N; ++i) out[i] = v[i].get<T>();
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  FieldMap top;
  top["seed"] = [&](const json& v) { c.seed = v.get<std::uint64_t>(); };
  top["scenegen"] = [&](const json& v) {
    auto& s = c.scenegen;
    parse_strict(v, "scenegen",
                 {{"image_width", [&](const json& x) { s.image_width = x.get<int>(); }},
                  {"image_height", [&](const json& x) { s.image_height = x.get<int>(); }},
                  {"focal", [&](const json& x) { s.focal = x.get<double>(); }},
                  {"train_sequences", [&](const json& x) { s.train_sequences = x.get<int>(); }},
                  {"train_frames", [&](const json& x) { s.train_frames = x.get<int>(); }},
                  {"test_sequences", [&](const json& x) { s.test_sequences = x.get<int>(); }},
                  {"test_frames", [&](const json& x) { s.test_frames = x.get<int>(); }},
                  {"min_objects", [&](const json& x) { s.min_objects = x.get<int>(); }},
                  {"max_objects", [&](const json& x) { s.max_objects = x.get<int>(); }},
                  {"model_samples", [&](const json& x) { s.model_samples = x.get<int>(); }},
                  {"max_step_rot", [&](const json& x) { s.max_step_rot = x.get<double>(); }},
                  {"max_step_trans", [&](const json& x) { s.max_step_trans = x.get<double>(); }},
                  {"noise_sigma", [&](const json& x) { s.noise_sigma = x.get<double>(); }},
                  {"train_occluder", [&](const json& x) { s.train_occluder = x.get<std::string>(); }},
                  {"include_ground", [&](const json& x) { s.include_ground = x.get<bool>(); }},
                  {"segment_points", [&](const json& x) { s.segment_points = x.get<int>(); }},
                  {"fg_fraction", [&](const json& x) { s.fg_fraction = x.get<double>(); }},
                  {"ring_dilation", [&](const json& x) { s.ring_dilation = x.get<int>(); }}});
  };
  top["agent"] = [&](const json& v) {
    auto& a = c.agent;
    parse_strict(v, "agent",
                 {{"fusion", [&](const json& x) { a.fusion = x.get<std::string>(); }},
                  {"encoder_widths", [&](const json& x) { read_array(x, a.encoder_widths); }},
                  {"trunk_widths", [&](const json& x) { read_array(x, a.trunk_widths); }},
                  {"seg_hidden", [&](const json& x) { a.seg_hidden = x.get<int>(); }},
                  {"step_magnitudes", [&](const json& x) { read_array(x, a.step_magnitudes); }}});
  };
  top["training"] = [&](const json& v) {
    auto& t = c.training;
    parse_strict(
        v, "training",
        {{"epochs", [&](const json& x) { t.epochs = x.get<int>(); }},
         {"trajectory_frames", [&](const json& x) { t.trajectory_frames = x.get<int>(); }},
         {"iterations_per_frame", [&](const json& x) { t.iterations_per_frame = x.get<int>(); }},
         {"resample_fraction", [&](const json& x) { t.resample_fraction = x.get<double>(); }},
         {"buffer_capacity", [&](const json& x) { t.buffer_capacity = x.get<int>(); }},
         {"batch_step", [&](const json& x) { t.batch_step = x.get<int>(); }},
         {"batch_frame", [&](const json& x) { t.batch_frame = x.get<int>(); }},
         {"updates_per_trajectory",
          [&](const json& x) { t.updates_per_trajectory = x.get<int>(); }},
         {"bc_weight", [&](const json& x) { t.bc_weight = x.get<double>(); }},
         {"ppo_weight", [&](const json& x) { t.ppo_weight = x.get<double>(); }},
         {"ppo_clip", [&](const json& x) { t.ppo_clip = x.get<double>(); }},
         {"value_coeff", [&](const json& x) { t.value_coeff = x.get<double>(); }},
         {"entropy_coeff", [&](const json& x) { t.entropy_coeff = x.get<double>(); }},
         {"seg_weight", [&](const json& x) { t.seg_weight = x.get<double>(); }},
         {"gamma", [&](const json& x) { t.gamma = x.get<double>(); }},
         {"learning_rate", [&](const json& x) { t.learning_rate = x.get<double>(); }},
         {"rms_decay", [&](const json& x) { t.rms_decay = x.get<double>(); }},
         {"reward_eps", [&](const json& x) { t.reward_eps = x.get<double>(); }},
         {"reward_source", [&](const json& x) { t.reward_source = x.get<std::string>(); }},
         {"segment_points", [&](const json& x) { t.segment_points = x.get<int>(); }},
         {"fg_fraction", [&](const json& x) { t.fg_fraction = x.get<double>(); }},
         {"ring_dilation", [&](const json& x) { t.ring_dilation = x.get<int>(); }},
         {"checkpoint_every", [&](const json& x) { t.checkpoint_every = x.get<int>(); }}});
  };
  top["tracker"] = [&](const json& v) {
    auto& t = c.tracker;
    parse_strict(
        v, "tracker",
        {{"iterations", [&](const json& x) { t.iterations = x.get<int>(); }},
         {"tau", [&](const json& x) { t.tau = x.get<double>(); }},
         {"theta_vis", [&](const json& x) { t.theta_vis = x.get<double>(); }},
         {"theta_step", [&](const json& x) { t.theta_step = x.get<double>(); }},
         {"step_buffer_frames", [&](const json& x) { t.step_buffer_frames = x.get<int>(); }},
         {"mask_dilation", [&](const json& x) { t.mask_dilation = x.get<int>(); }},
         {"segment_points", [&](const json& x) { t.segment_points = x.get<int>(); }},
         {"reinit_policy", [&](const json& x) { t.reinit_policy = x.get<std::string>(); }},
         {"reinit_every", [&](const json& x) { t.reinit_every = x.get<int>(); }},
         {"expected_stepsize", [&](const json& x) { t.expected_stepsize = x.get<bool>(); }},
         {"icp_iterations", [&](const json& x) { t.icp_iterations = x.get<int>(); }},
         {"icp_tolerance", [&](const json& x) { t.icp_tolerance = x.get<double>(); }}});
  };
  top["eval"] = [&](const json& v) {
    auto& e = c.eval;
    parse_strict(v, "eval",
                 {{"max_threshold", [&](const json& x) { e.max_threshold = x.get<double>(); }},
                  {"n_thresholds", [&](const json& x) { e.n_thresholds = x.get<int>(); }}});
  };
  parse_strict(j, "", top);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json run_config_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["scenegen"] = {{"image_width", c.scenegen.image_width},
                   {"image_height", c.scenegen.image_height},
                   {"focal", c.scenegen.focal},
                   {"train_sequences", c.scenegen.train_sequences},
                   {"train_frames", c.scenegen.train_frames},
                   {"test_sequences", c.scenegen.test_sequences},
                   {"test_frames", c.scenegen.test_frames},
                   {"min_objects", c.scenegen.min_objects},
                   {"max_objects", c.scenegen.max_objects},
                   {"model_samples", c.scenegen.model_samples},
                   {"max_step_rot", c.scenegen.max_step_rot},
                   {"max_step_trans", c.scenegen.max_step_trans},
                   {"noise_sigma", c.scenegen.noise_sigma},
                   {"train_occluder", c.scenegen.train_occluder},
                   {"include_ground", c.scenegen.include_ground},
                   {"segment_points", c.scenegen.segment_points},
                   {"fg_fraction", c.scenegen.fg_fraction},
                   {"ring_dilation", c.scenegen.ring_dilation}};
  j["agent"] = {{"fusion", c.agent.fusion},
                {"encoder_widths", c.agent.encoder_widths},
                {"trunk_widths", c.agent.trunk_widths},
                {"seg_hidden", c.agent.seg_hidden},
                {"step_magnitudes", c.agent.step_magnitudes}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"trajectory_frames", c.training.trajectory_frames},
                   {"iterations_per_frame", c.training.iterations_per_frame},
                   {"resample_fraction", c.training.resample_fraction},
                   {"buffer_capacity", c.training.buffer_capacity},
                   {"batch_step", c.training.batch_step},
                   {"batch_frame", c.training.batch_frame},
                   {"updates_per_trajectory", c.training.updates_per_trajectory},
                   {"bc_weight", c.training.bc_weight},
                   {"ppo_weight", c.training.ppo_weight},
                   {"ppo_clip", c.training.ppo_clip},
                   {"value_coeff", c.training.value_coeff},
                   {"entropy_coeff", c.training.entropy_coeff},
                   {"seg_weight", c.training.seg_weight},
                   {"gamma", c.training.gamma},
                   {"learning_rate", c.training.learning_rate},
                   {"rms_decay", c.training.rms_decay},
                   {"reward_eps", c.training.reward_eps},
                   {"reward_source", c.training.reward_source},
                   {"segment_points", c.training.segment_points},
                   {"fg_fraction", c.training.fg_fraction},
                   {"ring_dilation", c.training.ring_dilation},
                   {"checkpoint_every", c.training.checkpoint_every}};
  j["tracker"] = {{"iterations", c.tracker.iterations},
                  {"tau", c.tracker.tau},
                  {"theta_vis", c.tracker.theta_vis},
                  {"theta_step", c.tracker.theta_step},
                  {"step_buffer_frames", c.tracker.step_buffer_frames},
                  {"mask_dilation", c.tracker.mask_dilation},
                  {"segment_points", c.tracker.segment_points},
                  {"reinit_policy", c.tracker.reinit_policy},
                  {"reinit_every", c.tracker.reinit_every},
                  {"expected_stepsize", c.tracker.expected_stepsize},
                  {"icp_iterations", c.tracker.icp_iterations},
                  {"icp_tolerance", c.tracker.icp_tolerance}};
  j["eval"] = {{"max_threshold", c.eval.max_threshold},
               {"n_thresholds", c.eval.n_thresholds}};
  return j;
}

void write_resolved_config(const std::filesystem::path& path, const RunConfig& config) {
  atomic_write_file(path, run_config_json(config).dump(1));
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must look like section.key=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &doc;
  std::size_t begin = 0;
  for (;;) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (key.empty()) throw ConfigError("bad override path: " + path);
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::exception&) {
        parsed = value;  // plain string
      }
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    begin = dot + 1;
  }
}

}  // namespace trackkit

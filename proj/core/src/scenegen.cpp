#include "trackkit/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "trackkit/errors.hpp"
#include "trackkit/io.hpp"
#include "trackkit/rng.hpp"

namespace trackkit {

using nlohmann::json;

CameraIntrinsics SceneGenConfig::intrinsics() const {
  CameraIntrinsics k;
  k.fx = focal;
  k.fy = focal;
  k.cx = image_width / 2.0;
  k.cy = image_height / 2.0;
  k.width = image_width;
  k.height = image_height;
  return k;
}

std::vector<ObjectModel> default_model_pool(int samples) {
  struct Spec {
    PrimitiveKind kind;
    std::vector<double> dims;
    const char* id;
  };
  const std::vector<Spec> specs = {
      {PrimitiveKind::Box, {0.06, 0.09, 0.12}, "box_a"},
      {PrimitiveKind::Box, {0.14, 0.10, 0.04}, "box_b"},
      {PrimitiveKind::Cylinder, {0.035, 0.11}, "cyl_a"},
      {PrimitiveKind::Cylinder, {0.030, 0.16}, "cyl_b"},
      {PrimitiveKind::LBlock, {0.10, 0.08, 0.05, 0.04}, "lblock_a"},
      {PrimitiveKind::LBlock, {0.12, 0.06, 0.07, 0.03}, "lblock_b"},
      {PrimitiveKind::Stack, {0.10, 0.08, 0.05, 0.05, 0.05, 0.06}, "stack_a"},
      {PrimitiveKind::Stack, {0.12, 0.10, 0.03, 0.06, 0.04, 0.08}, "stack_b"},
  };
  std::vector<ObjectModel> pool;
  pool.reserve(specs.size());
  for (const auto& s : specs) {
    pool.push_back(make_primitive(s.kind, s.dims, samples, fnv1a64(std::string(s.id)), s.id));
  }
  return pool;
}

std::vector<RigidTransform> make_trajectory(int n_frames, std::uint64_t seed, double max_step_rot,
                                            double max_step_trans) {
  if (n_frames < 2) throw ConfigError("trajectory needs at least 2 frames");
  Rng rng(seed);
  std::vector<RigidTransform> poses;
  poses.reserve(static_cast<std::size_t>(n_frames));
  poses.push_back(RigidTransform::identity());
  for (int i = 1; i < n_frames; ++i) {
    double axis[3];
    rng.unit_vector(axis);
    const double angle = max_step_rot * rng.uniform();
    double dir[3];
    rng.unit_vector(dir);
    const double dist = max_step_trans * rng.uniform();
    RigidTransform delta;
    delta.rotation = Quat(Eigen::AngleAxisd(angle, Vec3(axis[0], axis[1], axis[2])));
    delta.translation = dist * Vec3(dir[0], dir[1], dir[2]);
    poses.push_back(compose(delta, poses.back()));
  }
  return poses;
}

namespace {

TriangleMesh desk_mesh() {
  // Slanted desk filling the view behind the objects (objects stay at
  // z <= 1.27, the desk starts at z = 1.32).
  TriangleMesh m;
  m.vertices = {Vec3(-0.9, -0.6, 1.75), Vec3(0.9, -0.6, 1.75), Vec3(0.9, 0.6, 1.32),
                Vec3(-0.9, 0.6, 1.32)};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

TriangleMesh slab_mesh(double sx, double sy, double sz) {
  // Thin closed box used for occluders.
  TriangleMesh m;
  const double x = sx / 2, y = sy / 2, z = sz / 2;
  m.vertices = {Vec3(-x, -y, -z), Vec3(x, -y, -z), Vec3(x, y, -z), Vec3(-x, y, -z),
                Vec3(-x, -y, z),  Vec3(x, -y, z),  Vec3(x, y, z),  Vec3(-x, y, z)};
  m.triangles = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                 {2, 3, 7}, {2, 7, 6}, {1, 2, 6}, {1, 6, 5}, {3, 0, 4}, {3, 4, 7}};
  return m;
}

constexpr std::int32_t kGroundId = 1000;
constexpr std::int32_t kOccluderId = 1001;

}  // namespace

ObservationFrame synthesize_frame(const std::vector<const ObjectModel*>& models,
                                  const std::vector<RigidTransform>& poses,
                                  const CameraIntrinsics& intrinsics, double noise_sigma,
                                  const std::optional<OccluderState>& occluder,
                                  const TriangleMesh* ground, std::uint64_t noise_seed) {
  if (models.size() != poses.size()) throw ConfigError("synthesize_frame: models/poses mismatch");
  intrinsics.validate();

  DepthImage clean(intrinsics.width, intrinsics.height);
  std::vector<std::int32_t> owner(clean.depth.size(), -1);
  for (std::size_t i = 0; i < models.size(); ++i) {
    rasterize_into(clean, &owner, static_cast<std::int32_t>(i), models[i]->mesh, poses[i],
                   intrinsics);
  }
  if (ground) {
    rasterize_into(clean, &owner, kGroundId, *ground, RigidTransform::identity(), intrinsics);
  }
  if (occluder) {
    rasterize_into(clean, &owner, kOccluderId, occluder->mesh, occluder->pose, intrinsics);
  }

  ObservationFrame frame;
  frame.depth = clean;
  for (std::size_t i = 0; i < models.size(); ++i) {
    MaskImage mask(intrinsics.width, intrinsics.height);
    int count = 0;
    for (std::size_t p = 0; p < owner.size(); ++p) {
      if (owner[p] == static_cast<std::int32_t>(i)) {
        mask.bits[p] = 1;
        ++count;
      }
    }
    frame.gt_poses[models[i]->id] = poses[i];
    frame.gt_masks[models[i]->id] = std::move(mask);
    if (count == 0) frame.missing.push_back(models[i]->id);
  }

  if (noise_sigma > 0.0) {
    Rng rng(noise_seed);
    for (auto& d : frame.depth.depth) {
      if (d > 0.f) {
        d = std::max(0.0f, d + static_cast<float>(noise_sigma * rng.normal()));
      }
    }
  }
  return frame;
}

PointCloud augment_segment(const ObservationFrame& frame, const CameraIntrinsics& intrinsics,
                           const std::string& object_id, int n_points, double fg_fraction,
                           int ring_dilation, std::uint64_t seed) {
  if (n_points < 1) throw ConfigError("augment_segment: n_points must be >= 1");
  if (fg_fraction < 0.0 || fg_fraction > 1.0) {
    throw ConfigError("augment_segment: fg_fraction must be in [0,1]");
  }
  const auto it = frame.gt_masks.find(object_id);
  if (it == frame.gt_masks.end()) throw DataError("augment_segment: unknown object " + object_id);
  const MaskImage& mask = it->second;

  std::vector<int> fg, bg;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) && frame.depth.at(x, y) > 0.f) fg.push_back(y * mask.width + x);
    }
  }
  if (fg.empty()) throw LostSegmentError("augment_segment: mask is empty");

  const MaskImage ring = dilate(mask, ring_dilation);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (ring.at(x, y) && !mask.at(x, y) && frame.depth.at(x, y) > 0.f) {
        bg.push_back(y * mask.width + x);
      }
    }
  }

  int n_fg = static_cast<int>(std::floor(fg_fraction * n_points));
  int n_bg = n_points - n_fg;
  if (bg.empty()) {  // nothing around the object; fill with foreground
    n_fg = n_points;
    n_bg = 0;
  }

  Rng rng(seed);
  auto draw = [&rng](const std::vector<int>& src, int count) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    if (count <= static_cast<int>(src.size())) {
      for (const int i : rng.sample_without_replacement(static_cast<int>(src.size()), count)) {
        out.push_back(src[static_cast<std::size_t>(i)]);
      }
    } else {
      for (int i = 0; i < count; ++i) {
        out.push_back(src[rng.uniform_below(src.size())]);
      }
    }
    return out;
  };

  PointCloud pc;
  pc.points.reserve(static_cast<std::size_t>(n_points));
  pc.labels.reserve(static_cast<std::size_t>(n_points));
  for (const int lin : draw(fg, n_fg)) {
    const int x = lin % mask.width, y = lin / mask.width;
    pc.points.push_back(backproject(x, y, frame.depth.at(x, y), intrinsics));
    pc.labels.push_back(1);
  }
  if (n_bg > 0) {
    for (const int lin : draw(bg, n_bg)) {
      const int x = lin % mask.width, y = lin / mask.width;
      pc.points.push_back(backproject(x, y, frame.depth.at(x, y), intrinsics));
      pc.labels.push_back(0);
    }
  }
  return pc;
}

namespace {

// Reflects v into [lo, hi]; steps are small relative to the interval.
double reflect(double v, double lo, double hi) {
  if (v < lo) return 2 * lo - v;
  if (v > hi) return 2 * hi - v;
  return v;
}

}  // namespace

SceneSequence generate_sequence(const std::string& id, const SceneGenConfig& config,
                                const std::vector<ObjectModel>& pool, int n_frames,
                                int n_objects_hint, bool with_occluder,
                                std::uint64_t sequence_seed) {
  SceneSequence seq;
  seq.id = id;
  seq.intrinsics = config.intrinsics();

  Rng rng(sequence_seed);
  const int n_objects = std::min<int>(n_objects_hint, static_cast<int>(pool.size()));

  // Distinct models, well-separated start positions.
  std::vector<int> model_idx =
      rng.sample_without_replacement(static_cast<int>(pool.size()), n_objects);
  std::vector<const ObjectModel*> models;
  for (const int mi : model_idx) {
    models.push_back(&pool[static_cast<std::size_t>(mi)]);
    seq.object_ids.push_back(pool[static_cast<std::size_t>(mi)].id);
  }

  std::vector<Vec3> starts;
  for (int i = 0; i < n_objects; ++i) {
    for (int attempt = 0;; ++attempt) {
      const Vec3 c(rng.uniform(-0.22, 0.22), rng.uniform(-0.06, 0.16), rng.uniform(0.95, 1.22));
      bool ok = true;
      for (const Vec3& other : starts) {
        if ((c - other).norm() < 0.17) ok = false;
      }
      if (ok || attempt > 200) {
        starts.push_back(c);
        break;
      }
    }
  }

  // Per-object pose walks (orientation unconstrained, position reflected
  // into a box around the start so objects stay in view).
  std::vector<std::vector<RigidTransform>> tracks(static_cast<std::size_t>(n_objects));
  for (int i = 0; i < n_objects; ++i) {
    double axis[3];
    rng.unit_vector(axis);
    const double angle = rng.uniform(0.0, M_PI);
    RigidTransform pose;
    pose.rotation = Quat(Eigen::AngleAxisd(angle, Vec3(axis[0], axis[1], axis[2])));
    pose.translation = starts[static_cast<std::size_t>(i)];
    auto& track = tracks[static_cast<std::size_t>(i)];
    track.push_back(pose);
    for (int f = 1; f < n_frames; ++f) {
      double raxis[3];
      rng.unit_vector(raxis);
      const double rangle = config.max_step_rot * rng.uniform();
      double tdir[3];
      rng.unit_vector(tdir);
      const double tdist = config.max_step_trans * rng.uniform();

      RigidTransform next;
      next.rotation =
          (Quat(Eigen::AngleAxisd(rangle, Vec3(raxis[0], raxis[1], raxis[2]))) * pose.rotation)
              .normalized();
      Vec3 t = pose.translation + tdist * Vec3(tdir[0], tdir[1], tdir[2]);
      const Vec3& s = starts[static_cast<std::size_t>(i)];
      t.x() = reflect(t.x(), s.x() - 0.10, s.x() + 0.10);
      t.y() = reflect(t.y(), s.y() - 0.08, s.y() + 0.08);
      t.z() = reflect(t.z(), std::max(0.85, s.z() - 0.08), std::min(1.27, s.z() + 0.08));
      next.translation = t;
      track.push_back(next);
      pose = next;
    }
  }

  const TriangleMesh desk = desk_mesh();
  const TriangleMesh slab = slab_mesh(0.05, 0.4, 0.02);
  const double sweep_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double sweep_period = rng.uniform(35.0, 55.0);

  for (int f = 0; f < n_frames; ++f) {
    std::vector<RigidTransform> poses;
    for (int i = 0; i < n_objects; ++i) {
      poses.push_back(tracks[static_cast<std::size_t>(i)][static_cast<std::size_t>(f)]);
    }
    std::optional<OccluderState> occ;
    if (with_occluder) {
      OccluderState state;
      state.mesh = slab;
      state.pose.translation =
          Vec3(0.30 * std::sin(2.0 * M_PI * f / sweep_period + sweep_phase), 0.05, 0.62);
      occ = std::move(state);
    }
    const std::uint64_t noise_seed = rng.next_u64();
    seq.frames.push_back(synthesize_frame(models, poses, seq.intrinsics, config.noise_sigma, occ,
                                          config.include_ground ? &desk : nullptr, noise_seed));
  }
  return seq;
}

// ---- dataset io ----

namespace {

json pose_to_json(const RigidTransform& t) {
  const Mat4 m = t.matrix();
  json arr = json::array();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) arr.push_back(m(r, c));
  }
  return arr;
}

RigidTransform pose_from_json(const json& arr) {
  if (!arr.is_array() || arr.size() != 16) throw DataError("pose must be a 16-element array");
  Mat4 m;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m(r, c) = arr[static_cast<std::size_t>(r * 4 + c)].get<double>();
  }
  return RigidTransform::from_matrix(m);
}

json vec3_list_to_json(const std::vector<Vec3>& pts) {
  json arr = json::array();
  for (const Vec3& p : pts) arr.push_back(json::array({p.x(), p.y(), p.z()}));
  return arr;
}

std::vector<Vec3> vec3_list_from_json(const json& arr) {
  std::vector<Vec3> out;
  out.reserve(arr.size());
  for (const auto& e : arr) {
    out.emplace_back(e[0].get<double>(), e[1].get<double>(), e[2].get<double>());
  }
  return out;
}

std::string frame_name(const char* prefix, int frame) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04d", prefix, frame);
  return buf;
}

}  // namespace

void save_model_json(const std::filesystem::path& path, const ObjectModel& model) {
  json j;
  j["id"] = model.id;
  j["vertices"] = vec3_list_to_json(model.mesh.vertices);
  json tris = json::array();
  for (const auto& t : model.mesh.triangles) tris.push_back(json::array({t[0], t[1], t[2]}));
  j["triangles"] = tris;
  j["samples"] = vec3_list_to_json(model.sample_points);
  j["diameter"] = model.diameter;
  atomic_write_file(path, j.dump(1));
}

ObjectModel load_model_json(const std::filesystem::path& path) {
  json j = json::parse(read_file_text(path));
  ObjectModel m;
  m.id = j.at("id").get<std::string>();
  m.mesh.vertices = vec3_list_from_json(j.at("vertices"));
  for (const auto& t : j.at("triangles")) {
    m.mesh.triangles.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  }
  m.sample_points = vec3_list_from_json(j.at("samples"));
  m.diameter = j.at("diameter").get<double>();
  return m;
}

void save_sequence(const std::filesystem::path& dir, const SceneSequence& seq) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json meta;
  meta["sequence"] = seq.id;
  meta["intrinsics"] = {{"fx", seq.intrinsics.fx},       {"fy", seq.intrinsics.fy},
                        {"cx", seq.intrinsics.cx},       {"cy", seq.intrinsics.cy},
                        {"width", seq.intrinsics.width}, {"height", seq.intrinsics.height}};
  meta["object_ids"] = seq.object_ids;
  json frames = json::array();
  for (const auto& frame : seq.frames) {
    json fj;
    json poses;
    for (const auto& [obj, pose] : frame.gt_poses) poses[obj] = pose_to_json(pose);
    fj["poses"] = poses;
    fj["missing"] = frame.missing;
    frames.push_back(fj);
  }
  meta["frames"] = frames;
  atomic_write_file(dir / "meta.json", meta.dump(1));

  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& frame = seq.frames[f];
    atomic_write_file(dir / (frame_name("depth_", static_cast<int>(f)) + ".bin"),
                      frame.depth.depth.data(), frame.depth.depth.size() * sizeof(float));
    for (const auto& [obj, mask] : frame.gt_masks) {
      atomic_write_file(dir / (frame_name("mask_", static_cast<int>(f)) + "_" + obj + ".bin"),
                        mask.bits.data(), mask.bits.size());
    }
  }
}

DepthImage load_depth(const SequenceMeta& meta, int frame) {
  const auto path = meta.dir / (frame_name("depth_", frame) + ".bin");
  const auto bytes = read_file_bytes(path);
  DepthImage img(meta.intrinsics.width, meta.intrinsics.height);
  if (bytes.size() != img.depth.size() * sizeof(float)) {
    throw DataError("depth file has unexpected size: " + path.string());
  }
  std::memcpy(img.depth.data(), bytes.data(), bytes.size());
  return img;
}

MaskImage load_mask(const SequenceMeta& meta, int frame, const std::string& object_id) {
  const auto path = meta.dir / (frame_name("mask_", frame) + "_" + object_id + ".bin");
  const auto bytes = read_file_bytes(path);
  MaskImage mask(meta.intrinsics.width, meta.intrinsics.height);
  if (bytes.size() != mask.bits.size()) {
    throw DataError("mask file has unexpected size: " + path.string());
  }
  std::copy(bytes.begin(), bytes.end(), mask.bits.begin());
  return mask;
}

ObservationFrame load_frame(const SequenceMeta& meta, int frame) {
  ObservationFrame out;
  out.depth = load_depth(meta, frame);
  for (const auto& obj : meta.object_ids) {
    out.gt_masks[obj] = load_mask(meta, frame, obj);
    if (meta.has_gt) out.gt_poses[obj] = meta.gt_poses[static_cast<std::size_t>(frame)].at(obj);
  }
  if (frame < static_cast<int>(meta.missing.size())) {
    out.missing = meta.missing[static_cast<std::size_t>(frame)];
  }
  return out;
}

void write_manifest(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root).generic_string();
    if (rel == "manifest.json") continue;
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(file_checksum(entry.path())));
    files[rel] = hex;
  }
  json j;
  j["files"] = files;
  atomic_write_file(root / "manifest.json", j.dump(1));
}

Dataset load_dataset(const std::filesystem::path& root, bool verify) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw DataError("dataset not found: " + root.string());

  if (verify) {
    const auto manifest_path = root / "manifest.json";
    if (!fs::exists(manifest_path)) throw DataError("missing manifest: " + manifest_path.string());
    const json manifest = json::parse(read_file_text(manifest_path));
    for (const auto& [rel, checksum] : manifest.at("files").items()) {
      const auto path = root / rel;
      if (!fs::exists(path)) throw DataError("manifest names a missing file: " + rel);
      char hex[24];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(file_checksum(path)));
      if (checksum.get<std::string>() != hex) {
        throw DataError("checksum mismatch for " + rel);
      }
    }
  }

  Dataset ds;
  ds.root = root;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_regular_file()) {
      const auto name = entry.path().filename().string();
      if (name.rfind("model_", 0) == 0 && entry.path().extension() == ".json") {
        ObjectModel m = load_model_json(entry.path());
        ds.models.emplace(m.id, std::move(m));
      }
    }
  }

  std::vector<fs::path> seq_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) {
      seq_dirs.push_back(entry.path());
    }
  }
  std::sort(seq_dirs.begin(), seq_dirs.end());

  for (const auto& dir : seq_dirs) {
    const json meta = json::parse(read_file_text(dir / "meta.json"));
    SequenceMeta sm;
    sm.id = meta.at("sequence").get<std::string>();
    sm.dir = dir;
    const auto& intr = meta.at("intrinsics");
    sm.intrinsics.fx = intr.at("fx").get<double>();
    sm.intrinsics.fy = intr.at("fy").get<double>();
    sm.intrinsics.cx = intr.at("cx").get<double>();
    sm.intrinsics.cy = intr.at("cy").get<double>();
    sm.intrinsics.width = intr.at("width").get<int>();
    sm.intrinsics.height = intr.at("height").get<int>();
    sm.object_ids = meta.at("object_ids").get<std::vector<std::string>>();
    const auto& frames = meta.at("frames");
    sm.n_frames = static_cast<int>(frames.size());
    sm.has_gt = true;
    for (const auto& fj : frames) {
      std::map<std::string, RigidTransform> poses;
      if (fj.contains("poses") && !fj.at("poses").empty()) {
        for (const auto& [obj, pj] : fj.at("poses").items()) poses[obj] = pose_from_json(pj);
      }
      if (poses.size() != sm.object_ids.size()) sm.has_gt = false;
      sm.gt_poses.push_back(std::move(poses));
      sm.missing.push_back(fj.contains("missing")
                               ? fj.at("missing").get<std::vector<std::string>>()
                               : std::vector<std::string>{});
    }
    ds.sequences.push_back(std::move(sm));
  }
  if (ds.sequences.empty()) throw DataError("dataset has no sequences: " + root.string());
  return ds;
}

void generate_dataset_split(const SceneGenConfig& config, const std::vector<ObjectModel>& pool,
                            const std::string& split, std::uint64_t root_seed,
                            const std::filesystem::path& out_dir) {
  const bool is_train = split == "train";
  if (!is_train && split != "test_clean" && split != "test_occluded") {
    throw ConfigError("unknown dataset split: " + split);
  }
  SceneGenConfig cfg = config;
  if (split == "test_clean") cfg.noise_sigma = 0.0;

  const int n_sequences = is_train ? config.train_sequences : config.test_sequences;
  const int n_frames = is_train ? config.train_frames : config.test_frames;
  const int span = config.max_objects - config.min_objects + 1;

  std::filesystem::create_directories(out_dir);
  for (const auto& model : pool) {
    save_model_json(out_dir / ("model_" + model.id + ".json"), model);
  }

  for (int i = 0; i < n_sequences; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04d", i);
    bool with_occluder = false;
    if (is_train) {
      if (config.train_occluder == "all") with_occluder = true;
      if (config.train_occluder == "alternate") with_occluder = i % 2 == 1;
    } else {
      with_occluder = split == "test_occluded";
    }
    // test variants share the substream, so geometry and motion match
    const std::string stream = std::string("data/") + (is_train ? "train/" : "test/") + name;
    const int n_objects =
        is_train ? config.min_objects + i % span : 1 + i % 2;
    const SceneSequence seq =
        generate_sequence(name, cfg, pool, n_frames, n_objects, with_occluder,
                          Rng::substream(root_seed, stream).next_u64());
    save_sequence(out_dir / name, seq);
  }
  write_manifest(out_dir);
}

const SequenceMeta* Dataset::find_sequence(const std::string& id) const {
  for (const auto& s : sequences) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

const ObjectModel& Dataset::model(const std::string& id) const {
  const auto it = models.find(id);
  if (it == models.end()) throw DataError("dataset has no model " + id);
  return it->second;
}

}  // namespace trackkit

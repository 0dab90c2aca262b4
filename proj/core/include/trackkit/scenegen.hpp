#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trackkit/model.hpp"
#include "trackkit/render.hpp"

namespace trackkit {

struct ObservationFrame {
  DepthImage depth;
  std::map<std::string, RigidTransform> gt_poses;  // camera frame
  std::map<std::string, MaskImage> gt_masks;       // from the un-noised render
  std::vector<std::string> missing;                // objects without visible pixels
};

struct SceneSequence {
  std::string id;
  CameraIntrinsics intrinsics;
  std::vector<std::string> object_ids;
  std::vector<ObservationFrame> frames;
};

// Generation knobs for the synthetic desk-scale dataset.
struct SceneGenConfig {
  int image_width = 160;
  int image_height = 120;
  double focal = 140.0;  // fx = fy, principal point at the image center

  int train_sequences = 24;
  int train_frames = 60;
  int test_sequences = 4;
  int test_frames = 120;
  int min_objects = 1;
  int max_objects = 3;

  int model_samples = 1024;

  double max_step_rot = 0.04;    // rad per frame
  double max_step_trans = 0.008; // meters per frame

  double noise_sigma = 0.002;    // meters
  // occluder slab sweeps for the training split: none | all | alternate
  std::string train_occluder = "alternate";
  bool include_ground = true;    // desk plane behind the objects

  int segment_points = 512;      // default per-segment point budget
  double fg_fraction = 0.8;
  int ring_dilation = 15;        // pixels, background ring width

  CameraIntrinsics intrinsics() const;
};

// Fixed pool of desk-scale primitives; sampling is seeded per object id.
std::vector<ObjectModel> default_model_pool(int samples);

// Smooth random walk from identity: per-frame rotation and translation delta
// magnitudes are capped, deterministic per seed.
std::vector<RigidTransform> make_trajectory(int n_frames, std::uint64_t seed, double max_step_rot,
                                            double max_step_trans);

struct OccluderState {
  TriangleMesh mesh;
  RigidTransform pose;
};

// Z-buffer render of all models (plus optional extras) with additive,
// clamped Gaussian depth noise; ground-truth masks come from the clean
// render. Models fully outside the frustum are flagged, not fatal.
ObservationFrame synthesize_frame(const std::vector<const ObjectModel*>& models,
                                  const std::vector<RigidTransform>& poses,
                                  const CameraIntrinsics& intrinsics, double noise_sigma,
                                  const std::optional<OccluderState>& occluder,
                                  const TriangleMesh* ground, std::uint64_t noise_seed);

// n_points backprojected from the frame: floor(fg_fraction*n) from inside the
// object's ground-truth mask (label 1), the rest from a dilated ring around
// it (label 0). Pixels short of the request are drawn with replacement.
PointCloud augment_segment(const ObservationFrame& frame, const CameraIntrinsics& intrinsics,
                           const std::string& object_id, int n_points, double fg_fraction,
                           int ring_dilation, std::uint64_t seed);

// Full sequence generation; `sequence_seed` drives object choice, placement,
// trajectories, occluder phase and sensor noise.
SceneSequence generate_sequence(const std::string& id, const SceneGenConfig& config,
                                const std::vector<ObjectModel>& pool, int n_frames,
                                int n_objects_hint, bool with_occluder,
                                std::uint64_t sequence_seed);

// ---- dataset on disk ----
//
// root/
//   manifest.json                 checksums of every data file
//   model_<id>.json               mesh + samples + diameter
//   <sequence>/meta.json          intrinsics, object ids, per-frame 4x4 poses
//   <sequence>/depth_%04d.bin     width*height little-endian f32, meters
//   <sequence>/mask_%04d_<obj>.bin width*height bytes

struct SequenceMeta {
  std::string id;
  std::filesystem::path dir;
  CameraIntrinsics intrinsics;
  std::vector<std::string> object_ids;
  int n_frames = 0;
  bool has_gt = false;
  // gt_poses[frame][object]; empty when has_gt is false.
  std::vector<std::map<std::string, RigidTransform>> gt_poses;
  std::vector<std::vector<std::string>> missing;
};

struct Dataset {
  std::filesystem::path root;
  std::map<std::string, ObjectModel> models;
  std::vector<SequenceMeta> sequences;

  const SequenceMeta* find_sequence(const std::string& id) const;
  const ObjectModel& model(const std::string& id) const;
};

void save_model_json(const std::filesystem::path& path, const ObjectModel& model);
ObjectModel load_model_json(const std::filesystem::path& path);

void save_sequence(const std::filesystem::path& dir, const SceneSequence& seq);

DepthImage load_depth(const SequenceMeta& meta, int frame);
MaskImage load_mask(const SequenceMeta& meta, int frame, const std::string& object_id);
ObservationFrame load_frame(const SequenceMeta& meta, int frame);

// Writes manifest.json with a checksum per data file under root.
void write_manifest(const std::filesystem::path& root);

// Loads the index (models + sequence metadata). Verifies the manifest unless
// `verify` is false; missing or mismatching files raise DataError.
Dataset load_dataset(const std::filesystem::path& root, bool verify = true);

// One named split under out_dir: "train" follows config.train_occluder and
// config.noise_sigma; "test_clean" is noise- and occluder-free; "test_occluded"
// keeps noise and sweeps the occluder in every sequence. The two test splits
// share scene geometry and trajectories.
void generate_dataset_split(const SceneGenConfig& config, const std::vector<ObjectModel>& pool,
                            const std::string& split, std::uint64_t root_seed,
                            const std::filesystem::path& out_dir);

}  // namespace trackkit

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "trackkit/geometry.hpp"
#include "trackkit/scenegen.hpp"

namespace trackkit {

// Mean distance between corresponding model points under the two poses.
double add_error(const std::vector<Vec3>& model_points, const RigidTransform& gt,
                 const RigidTransform& est);

// Mean distance from each ground-truth-posed point to its nearest
// estimated-posed point; tolerates geometric symmetry.
double adi_error(const std::vector<Vec3>& model_points, const RigidTransform& gt,
                 const RigidTransform& est);

// Mean recall over n equally spaced thresholds t_k = k*max/n, counting
// errors strictly below each threshold, in percent.
double auc_recall(const std::vector<double>& errors, double max_threshold = 0.10,
                  int n_thresholds = 100);

struct PoseErrorRecord {
  std::string sequence;
  std::string object;
  int frame = 0;
  double add = 0.0;
  double adi = 0.0;
  bool reinit = false;
};

struct ObjectReport {
  std::string object;
  int frames = 0;
  double add_auc = 0.0;
  double adi_auc = 0.0;
  int reinits = 0;
};

struct EvalReport {
  std::vector<ObjectReport> per_object;
  double aggregate_add_auc = 0.0;
  double aggregate_adi_auc = 0.0;
  int total_frames = 0;
  int total_reinits = 0;
  std::vector<std::string> missing;  // frames listed as "<seq>/<obj>:<frame>"
  std::string policy;
};

// Parses one trace CSV produced by run_tracking.
std::vector<PoseErrorRecord> load_trace(const std::filesystem::path& path,
                                        const std::string& sequence, const std::string& object);

// Aggregates a tracking run against the dataset: per-object and pooled
// ADD/ADI AUCs plus reinitialization accounting. Frames absent from the
// traces are listed, never silently dropped.
EvalReport evaluate_run(const std::filesystem::path& traces_dir, const Dataset& dataset,
                        double max_threshold = 0.10, int n_thresholds = 100);

std::string report_table(const EvalReport& report);
void write_report_json(const std::filesystem::path& path, const EvalReport& report);

}  // namespace trackkit

#include "trackkit/eval.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "trackkit/errors.hpp"
#include "trackkit/io.hpp"
#include "trackkit/kdtree.hpp"

namespace trackkit {

double add_error(const std::vector<Vec3>& model_points, const RigidTransform& gt,
                 const RigidTransform& est) {
  if (model_points.empty()) throw NumericError("add_error: no model points");
  const Mat3 rg = gt.rotation.toRotationMatrix();
  const Mat3 re = est.rotation.toRotationMatrix();
  double sum = 0.0;
  for (const Vec3& x : model_points) {
    sum += ((rg * x + gt.translation) - (re * x + est.translation)).norm();
  }
  return sum / static_cast<double>(model_points.size());
}

double adi_error(const std::vector<Vec3>& model_points, const RigidTransform& gt,
                 const RigidTransform& est) {
  if (model_points.empty()) throw NumericError("adi_error: no model points");
  const Mat3 re = est.rotation.toRotationMatrix();
  std::vector<Vec3> est_pts(model_points.size());
  for (std::size_t i = 0; i < model_points.size(); ++i) {
    est_pts[i] = re * model_points[i] + est.translation;
  }
  KdTree3 tree(est_pts);
  const Mat3 rg = gt.rotation.toRotationMatrix();
  double sum = 0.0;
  for (const Vec3& x : model_points) {
    sum += tree.nearest(rg * x + gt.translation).distance;
  }
  return sum / static_cast<double>(model_points.size());
}

double auc_recall(const std::vector<double>& errors, double max_threshold, int n_thresholds) {
  if (errors.empty()) throw NumericError("auc_recall: no errors");
  if (n_thresholds < 1 || !(max_threshold > 0.0)) {
    throw ConfigError("auc_recall: bad threshold grid");
  }
  double recall_sum = 0.0;
  for (int k = 1; k <= n_thresholds; ++k) {
    const double t = max_threshold * static_cast<double>(k) / static_cast<double>(n_thresholds);
    long long accepted = 0;
    for (const double e : errors) accepted += e < t;
    recall_sum += static_cast<double>(accepted) / static_cast<double>(errors.size());
  }
  return 100.0 * recall_sum / static_cast<double>(n_thresholds);
}

std::vector<PoseErrorRecord> load_trace(const std::filesystem::path& path,
                                        const std::string& sequence, const std::string& object) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trace: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty trace: " + path.string());

  std::vector<PoseErrorRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 13) throw DataError("malformed trace row in " + path.string());
    PoseErrorRecord rec;
    rec.sequence = sequence;
    rec.object = object;
    rec.frame = std::stoi(cells[0]);
    rec.add = std::stod(cells[8]);
    rec.adi = std::stod(cells[9]);
    rec.reinit = cells[12] == "1";
    if (rec.add < 0.0 || rec.adi < 0.0) throw NumericError("negative pose error in trace");
    if (rec.adi > rec.add + 1e-12) {
      throw NumericError("ADI exceeds ADD in trace " + path.string());
    }
    out.push_back(rec);
  }
  return out;
}

EvalReport evaluate_run(const std::filesystem::path& traces_dir, const Dataset& dataset,
                        double max_threshold, int n_thresholds) {
  namespace fs = std::filesystem;
  EvalReport report;

  struct PerObject {
    std::vector<double> add, adi;
    int reinits = 0;
    int frames = 0;
  };
  std::map<std::string, PerObject> objects;
  std::vector<double> all_add, all_adi;

  for (const auto& meta : dataset.sequences) {
    for (const auto& obj : meta.object_ids) {
      const fs::path trace = traces_dir / ("trace_" + meta.id + "_" + obj + ".csv");
      if (!fs::exists(trace)) {
        for (int f = 0; f < meta.n_frames; ++f) {
          report.missing.push_back(meta.id + "/" + obj + ":" + std::to_string(f));
        }
        continue;
      }
      const auto records = load_trace(trace, meta.id, obj);
      std::vector<bool> seen(static_cast<std::size_t>(meta.n_frames), false);
      auto& agg = objects[obj];
      for (const auto& rec : records) {
        if (rec.frame >= 0 && rec.frame < meta.n_frames) seen[static_cast<std::size_t>(rec.frame)] = true;
        agg.add.push_back(rec.add);
        agg.adi.push_back(rec.adi);
        agg.reinits += rec.reinit ? 1 : 0;
        agg.frames += 1;
        all_add.push_back(rec.add);
        all_adi.push_back(rec.adi);
      }
      for (int f = 0; f < meta.n_frames; ++f) {
        if (!seen[static_cast<std::size_t>(f)]) {
          report.missing.push_back(meta.id + "/" + obj + ":" + std::to_string(f));
        }
      }
    }
  }

  for (const auto& [obj, agg] : objects) {
    ObjectReport r;
    r.object = obj;
    r.frames = agg.frames;
    r.add_auc = auc_recall(agg.add, max_threshold, n_thresholds);
    r.adi_auc = auc_recall(agg.adi, max_threshold, n_thresholds);
    r.reinits = agg.reinits;
    report.per_object.push_back(r);
    report.total_frames += agg.frames;
    report.total_reinits += agg.reinits;
  }
  if (all_add.empty()) throw DataError("no trace rows found under " + traces_dir.string());
  report.aggregate_add_auc = auc_recall(all_add, max_threshold, n_thresholds);
  report.aggregate_adi_auc = auc_recall(all_adi, max_threshold, n_thresholds);

  const fs::path run_json = traces_dir / "run.json";
  if (fs::exists(run_json)) {
    const auto j = nlohmann::json::parse(read_file_text(run_json));
    if (j.contains("policy")) report.policy = j["policy"].get<std::string>();
  }
  return report;
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  char line[128];
  out << "object                 frames   ADD-AUC   ADI-AUC   reinits\n";
  for (const auto& r : report.per_object) {
    std::snprintf(line, sizeof(line), "%-22s %6d   %7.2f   %7.2f   %7d\n", r.object.c_str(),
                  r.frames, r.add_auc, r.adi_auc, r.reinits);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-22s %6d   %7.2f   %7.2f   %7d\n", "ALL", report.total_frames,
                report.aggregate_add_auc, report.aggregate_adi_auc, report.total_reinits);
  out << line;
  if (!report.missing.empty()) {
    out << "missing frames: " << report.missing.size() << '\n';
  }
  return out.str();
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::json j;
  j["aggregate"] = {{"add_auc", report.aggregate_add_auc},
                    {"adi_auc", report.aggregate_adi_auc},
                    {"frames", report.total_frames},
                    {"reinits", report.total_reinits}};
  nlohmann::json per = nlohmann::json::array();
  for (const auto& r : report.per_object) {
    per.push_back({{"object", r.object},
                   {"frames", r.frames},
                   {"add_auc", r.add_auc},
                   {"adi_auc", r.adi_auc},
                   {"reinits", r.reinits}});
  }
  j["per_object"] = per;
  j["missing"] = report.missing;
  if (!report.policy.empty()) j["policy"] = report.policy;
  atomic_write_file(path, j.dump(1));
}

}  // namespace trackkit

#include "trackkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "trackkit/errors.hpp"

namespace trackkit {

namespace {

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

// Builds meshes from quads/triangles while deduplicating vertices, so that
// shared corners end up as shared indices and the closed-mesh check holds.
class MeshBuilder {
 public:
  int vertex(const Vec3& v) {
    const Key k{llround(v.x()), llround(v.y()), llround(v.z())};
    auto it = index_.find(k);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(mesh_.vertices.size());
    mesh_.vertices.push_back(v);
    index_.emplace(k, id);
    return id;
  }

  void tri(const Vec3& a, const Vec3& b, const Vec3& c) {
    mesh_.triangles.push_back({vertex(a), vertex(b), vertex(c)});
  }

  // Counterclockwise as seen from the outward normal side.
  void quad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    tri(a, b, c);
    tri(a, c, d);
  }

  TriangleMesh take() { return std::move(mesh_); }

 private:
  using Key = std::array<long long, 3>;
  static long long llround(double v) { return static_cast<long long>(std::llround(v * 1e9)); }

  TriangleMesh mesh_;
  std::map<Key, int> index_;
};

void append_box(MeshBuilder& mb, const Vec3& lo, const Vec3& hi) {
  const Vec3 v000(lo.x(), lo.y(), lo.z()), v100(hi.x(), lo.y(), lo.z());
  const Vec3 v010(lo.x(), hi.y(), lo.z()), v110(hi.x(), hi.y(), lo.z());
  const Vec3 v001(lo.x(), lo.y(), hi.z()), v101(hi.x(), lo.y(), hi.z());
  const Vec3 v011(lo.x(), hi.y(), hi.z()), v111(hi.x(), hi.y(), hi.z());
  mb.quad(v000, v010, v110, v100);  // z = lo (normal -z)
  mb.quad(v001, v101, v111, v011);  // z = hi (+z)
  mb.quad(v000, v100, v101, v001);  // y = lo (-y)
  mb.quad(v010, v011, v111, v110);  // y = hi (+y)
  mb.quad(v000, v001, v011, v010);  // x = lo (-x)
  mb.quad(v100, v110, v111, v101);  // x = hi (+x)
}

TriangleMesh box_mesh(double sx, double sy, double sz) {
  MeshBuilder mb;
  append_box(mb, Vec3(-sx / 2, -sy / 2, -sz / 2), Vec3(sx / 2, sy / 2, sz / 2));
  return mb.take();
}

TriangleMesh cylinder_mesh(double radius, double height, int segments) {
  MeshBuilder mb;
  const double h2 = height / 2.0;
  const Vec3 top_center(0, 0, h2), bot_center(0, 0, -h2);
  for (int i = 0; i < segments; ++i) {
    const double a0 = 2.0 * M_PI * i / segments;
    const double a1 = 2.0 * M_PI * ((i + 1) % segments) / segments;
    const Vec3 b0(radius * std::cos(a0), radius * std::sin(a0), -h2);
    const Vec3 b1(radius * std::cos(a1), radius * std::sin(a1), -h2);
    const Vec3 t0(b0.x(), b0.y(), h2), t1(b1.x(), b1.y(), h2);
    mb.quad(b0, b1, t1, t0);       // side, outward
    mb.tri(top_center, t0, t1);    // top cap (+z)
    mb.tri(bot_center, b1, b0);    // bottom cap (-z)
  }
  return mb.take();
}

// L-shaped footprint extruded along z. The footprint is the full sx-by-sy
// rectangle minus the corner opposite the origin, leaving two legs of width
// `arm`. Faces are split at the inner corner so no T-junctions appear.
TriangleMesh lblock_mesh(double sx, double sy, double sz, double arm) {
  MeshBuilder mb;
  const Vec3 shift(-sx / 2, -sy / 2, -sz / 2);
  auto at = [&](double x, double y, double z) -> Vec3 { return Vec3(x, y, z) + shift; };

  const double a = arm;
  // Footprint quads: bottom leg split at x=a, plus the vertical leg.
  const std::array<std::array<double, 4>, 3> cells = {{
      {0, 0, a, a},    // x0,y0,x1,y1
      {a, 0, sx, a},
      {0, a, a, sy},
  }};
  for (const auto& c : cells) {
    mb.quad(at(c[0], c[1], 0), at(c[0], c[3], 0), at(c[2], c[3], 0), at(c[2], c[1], 0));   // -z
    mb.quad(at(c[0], c[1], sz), at(c[2], c[1], sz), at(c[2], c[3], sz), at(c[0], c[3], sz));  // +z
  }
  // Walls along the boundary, counterclockwise in the footprint plane.
  const std::array<std::array<double, 4>, 8> edges = {{
      {0, 0, a, 0}, {a, 0, sx, 0},     // south
      {sx, 0, sx, a},                  // east
      {sx, a, a, a},                   // inner step, facing +y
      {a, a, a, sy},                   // inner step, facing +x
      {a, sy, 0, sy},                  // north of vertical leg
      {0, sy, 0, a}, {0, a, 0, 0},     // west
  }};
  for (const auto& e : edges) {
    mb.quad(at(e[0], e[1], 0), at(e[2], e[3], 0), at(e[2], e[3], sz), at(e[0], e[1], sz));
  }
  return mb.take();
}

TriangleMesh stack_mesh(double sx, double sy, double sz, double tx, double ty, double tz) {
  // Two closed boxes; the top box sinks slightly into the base so no faces
  // are coplanar.
  const double sink = std::min(0.001, tz / 10.0);
  MeshBuilder mb;
  append_box(mb, Vec3(-sx / 2, -sy / 2, 0), Vec3(sx / 2, sy / 2, sz));
  append_box(mb, Vec3(-tx / 2, -ty / 2, sz - sink), Vec3(tx / 2, ty / 2, sz - sink + tz));
  TriangleMesh mesh = mb.take();
  const Vec3 shift(0, 0, -(sz + tz - sink) / 2.0);
  for (Vec3& v : mesh.vertices) v += shift;
  return mesh;
}

}  // namespace

double TriangleMesh::area() const {
  double sum = 0.0;
  for (const auto& t : triangles) {
    sum += triangle_area(vertices[static_cast<std::size_t>(t[0])],
                         vertices[static_cast<std::size_t>(t[1])],
                         vertices[static_cast<std::size_t>(t[2])]);
  }
  return sum;
}

bool TriangleMesh::is_closed() const {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : triangles) {
    for (int e = 0; e < 3; ++e) {
      const int a = t[static_cast<std::size_t>(e)];
      const int b = t[static_cast<std::size_t>((e + 1) % 3)];
      if (a == b) return false;
      if (++directed[{a, b}] > 1) return false;  // non-manifold or doubled face
    }
  }
  for (const auto& [edge, count] : directed) {
    (void)count;
    if (directed.find({edge.second, edge.first}) == directed.end()) return false;
  }
  return true;
}

Vec3 ObjectModel::sample_centroid() const {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : sample_points) c += p;
  return c / static_cast<double>(sample_points.size());
}

PointCloud ObjectModel::sample_cloud() const {
  PointCloud pc;
  pc.points = sample_points;
  return pc;
}

PrimitiveKind primitive_kind_from_string(const std::string& s) {
  if (s == "box") return PrimitiveKind::Box;
  if (s == "cylinder") return PrimitiveKind::Cylinder;
  if (s == "l-block" || s == "lblock") return PrimitiveKind::LBlock;
  if (s == "stack") return PrimitiveKind::Stack;
  throw ConfigError("unknown primitive kind: " + s);
}

std::string to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Box: return "box";
    case PrimitiveKind::Cylinder: return "cylinder";
    case PrimitiveKind::LBlock: return "l-block";
    case PrimitiveKind::Stack: return "stack";
  }
  return "?";
}

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int count, Rng& rng) {
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    total += triangle_area(mesh.vertices[static_cast<std::size_t>(t[0])],
                           mesh.vertices[static_cast<std::size_t>(t[1])],
                           mesh.vertices[static_cast<std::size_t>(t[2])]);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw NumericError("mesh has zero surface area");

  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const auto idx = std::min<std::size_t>(
        static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
    const auto& t = mesh.triangles[idx];
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(t[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(t[2])];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    out.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
  }
  return out;
}

double compute_diameter(const std::vector<Vec3>& samples, const std::vector<Vec3>& vertices) {
  std::vector<Vec3> all;
  all.reserve(samples.size() + vertices.size());
  all.insert(all.end(), samples.begin(), samples.end());
  all.insert(all.end(), vertices.begin(), vertices.end());
  double best = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      best = std::max(best, (all[i] - all[j]).squaredNorm());
    }
  }
  return std::sqrt(best);
}

ObjectModel make_primitive(PrimitiveKind kind, const std::vector<double>& dims, int samples,
                           std::uint64_t seed, const std::string& id) {
  auto need = [&](std::size_t n) {
    if (dims.size() != n) {
      throw ConfigError("primitive " + to_string(kind) + " expects " + std::to_string(n) +
                        " dims, got " + std::to_string(dims.size()));
    }
  };
  for (double d : dims) {
    if (!(d > 0.0) || !std::isfinite(d)) throw ConfigError("primitive dims must be positive");
  }
  if (samples < 1) throw ConfigError("sample count must be >= 1");

  ObjectModel model;
  std::ostringstream default_id;
  default_id << to_string(kind);
  for (double d : dims) default_id << "_" << d;

  switch (kind) {
    case PrimitiveKind::Box:
      need(3);
      model.mesh = box_mesh(dims[0], dims[1], dims[2]);
      break;
    case PrimitiveKind::Cylinder:
      need(2);
      model.mesh = cylinder_mesh(dims[0], dims[1], 48);
      break;
    case PrimitiveKind::LBlock:
      need(4);
      if (!(dims[3] < dims[0] && dims[3] < dims[1])) {
        throw ConfigError("l-block arm must be smaller than the footprint");
      }
      model.mesh = lblock_mesh(dims[0], dims[1], dims[2], dims[3]);
      break;
    case PrimitiveKind::Stack:
      need(6);
      if (!(dims[3] <= dims[0] && dims[4] <= dims[1])) {
        throw ConfigError("stack top box must not overhang the base");
      }
      model.mesh = stack_mesh(dims[0], dims[1], dims[2], dims[3], dims[4], dims[5]);
      break;
  }

  model.id = id.empty() ? default_id.str() : id;
  Rng rng(seed);
  model.sample_points = sample_surface(model.mesh, samples, rng);
  model.diameter = compute_diameter(model.sample_points, model.mesh.vertices);
  return model;
}

namespace {

// Ericson, Real-Time Collision Detection: closest point on triangle.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

}  // namespace

PointCloud model_points_normalized(const ObjectModel& model, const NormalizationFrame& frame,
                                   const RigidTransform& pose_cam) {
  const RigidTransform pose_n = frame.normalize_pose(pose_cam);
  const Mat3 r = pose_n.rotation.toRotationMatrix();
  PointCloud out;
  out.points.reserve(model.sample_points.size());
  for (const Vec3& x : model.sample_points) {
    out.points.push_back(r * (x / frame.scale) + pose_n.translation);
  }
  return out;
}

double point_mesh_distance(const Vec3& p, const TriangleMesh& mesh) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles) {
    const Vec3 q = closest_point_on_triangle(p, mesh.vertices[static_cast<std::size_t>(t[0])],
                                             mesh.vertices[static_cast<std::size_t>(t[1])],
                                             mesh.vertices[static_cast<std::size_t>(t[2])]);
    best = std::min(best, (p - q).squaredNorm());
  }
  return std::sqrt(best);
}

}  // namespace trackkit

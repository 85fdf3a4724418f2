#include "onsurf/patch_encoding.hpp"

#include <unsupported/Eigen/AutoDiff>

namespace onsurf {
namespace {

// Rotation taking unit vector v onto +Z by the shortest arc.
template <class T>
Eigen::Matrix<T, 3, 3> align_to_z(const Eigen::Matrix<T, 3, 1>& v) {
  using std::sqrt;
  Eigen::Matrix<T, 3, 3> r = Eigen::Matrix<T, 3, 3>::Identity();
  const T len = sqrt(v.squaredNorm());
  if (!(len > T(0))) return r;
  const Eigen::Matrix<T, 3, 1> u = v / len;
  const T c = u.z();
  if (c < T(-1.0 + 1e-12)) {
    r(1, 1) = T(-1);
    r(2, 2) = T(-1);
    return r;
  }
  // w = u x z
  const Eigen::Matrix<T, 3, 1> w(u.y(), -u.x(), T(0));
  Eigen::Matrix<T, 3, 3> k;
  k << T(0), -w.z(), w.y(), w.z(), T(0), -w.x(), -w.y(), w.x(), T(0);
  r += k + (k * k) / (T(1) + c);
  return r;
}

template <class T>
void encode(const Eigen::Matrix<T, 3, 1>& probe, std::vector<Eigen::Matrix<T, 3, 1>> rel, PatchNormalization n,
            T* out) {
  Eigen::Matrix<T, 3, 1> p = probe;
  if (n.rotate && !rel.empty()) {
    const auto r = align_to_z<T>(rel[0]);
    for (auto& q : rel) q = r * q;
    p = r * p;
  }
  std::size_t o = 0;
  if (!n.translate) {
    for (int d = 0; d < 3; ++d) out[o++] = p[d];
  }
  for (const auto& q : rel) {
    for (int d = 0; d < 3; ++d) out[o++] = n.translate ? q[d] : q[d] + p[d];
  }
}

}  // namespace

std::string to_string(PatchNormalization n) {
  if (n.translate && n.rotate) return "trans_rot";
  if (n.translate) return "trans";
  if (n.rotate) return "rot";
  return "none";
}

PatchNormalization patch_normalization_from_string(const std::string& name) {
  if (name == "trans") return {true, false};
  if (name == "trans_rot") return {true, true};
  if (name == "rot") return {false, true};
  if (name == "none") return {false, false};
  throw InvalidInput("unknown patch normalization '" + name + "' (expected trans, rot, trans_rot or none)");
}

std::size_t encoded_patch_dim(std::size_t k, PatchNormalization n) { return 3 * k + (n.translate ? 0 : 3); }

void encode_patch(const KnnIndex& index, const Point3& probe, const LocalPatch& patch, PatchNormalization n,
                  double* out) {
  if (n.translate && !n.rotate) {
    // Relative coordinates exactly as extract_patch computed them.
    for (std::size_t i = 0; i < patch.k(); ++i)
      for (int d = 0; d < 3; ++d) out[3 * i + d] = patch.neighbors[i][d];
    return;
  }
  (void)index;
  encode<double>(probe, patch.neighbors, n, out);
}

void encode_relative_patch(const Point3& probe, const std::vector<Vec3>& relative, PatchNormalization n,
                           double* out) {
  encode<double>(probe, relative, n, out);
}

Vec3 encoded_patch_pullback(const KnnIndex& index, const Point3& probe, const LocalPatch& patch,
                            PatchNormalization n, const double* d_input) {
  const std::size_t dim = encoded_patch_dim(patch.k(), n);
  if (n.translate && !n.rotate) {
    Vec3 g = Vec3::Zero();
    for (std::size_t i = 0; i < patch.k(); ++i) g -= Vec3(d_input[3 * i], d_input[3 * i + 1], d_input[3 * i + 2]);
    return g;
  }
  using Dual = Eigen::AutoDiffScalar<Eigen::Vector3d>;
  Eigen::Matrix<Dual, 3, 1> p;
  for (int d = 0; d < 3; ++d) p[d] = Dual(probe[d], 3, d);
  std::vector<Eigen::Matrix<Dual, 3, 1>> rel(patch.k());
  for (std::size_t i = 0; i < patch.k(); ++i) {
    const Point3& t = index.point(patch.indices[i]);
    for (int d = 0; d < 3; ++d) rel[i][d] = Dual(t[d]) - p[d];
  }
  std::vector<Dual> out(dim);
  encode<Dual>(p, std::move(rel), n, out.data());
  Vec3 g = Vec3::Zero();
  for (std::size_t i = 0; i < dim; ++i) g += d_input[i] * out[i].derivatives();
  return g;
}

}  // namespace onsurf

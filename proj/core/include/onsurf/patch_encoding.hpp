#pragma once

#include <string>

#include "onsurf/patch.hpp"

namespace onsurf {

// How a probe and its neighbors are turned into the prior network's input.
// translate: neighbors relative to the probe; otherwise the absolute probe is
// prepended and neighbors stay absolute. rotate: the frame is turned so the
// direction from the probe to its nearest neighbor is +Z.
struct PatchNormalization {
  bool translate = true;
  bool rotate = false;

  friend bool operator==(const PatchNormalization&, const PatchNormalization&) = default;
};

// "trans", "rot", "trans_rot", "none".
std::string to_string(PatchNormalization n);
PatchNormalization patch_normalization_from_string(const std::string& name);

std::size_t encoded_patch_dim(std::size_t k, PatchNormalization n);

// Writes the network input for `probe` to out[0, encoded_patch_dim).
// `patch` must come from extract_patch(index, probe, k).
void encode_patch(const KnnIndex& index, const Point3& probe, const LocalPatch& patch, PatchNormalization n,
                  double* out);

// Same encoding from the probe and its neighbors relative to it.
void encode_relative_patch(const Point3& probe, const std::vector<Vec3>& relative, PatchNormalization n,
                           double* out);

// Given dL/d(input), returns dL/d(probe) with the neighbor selection held fixed.
Vec3 encoded_patch_pullback(const KnnIndex& index, const Point3& probe, const LocalPatch& patch,
                            PatchNormalization n, const double* d_input);

}  // namespace onsurf

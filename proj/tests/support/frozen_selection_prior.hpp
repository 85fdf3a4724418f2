#pragma once

#include <mutex>
#include <optional>

#include "onsurf/fitter.hpp"
#include "onsurf/patch.hpp"

namespace onsurf::testing {

// Learned prior whose neighbor selection is captured on the first evaluate()
// call and reused afterwards, column by column. Finite differences through
// this prior see the loss with the selection held constant, the same
// linearization the analytic gradient uses.
class FrozenSelectionPrior final : public SurfacePrior {
 public:
  FrozenSelectionPrior(const PriorModel& prior, const PointCloud& cloud) : prior_(prior), index_(cloud) {}

  void evaluate(const MatrixX& points, VectorX& values, MatrixX& gradients) const override {
    std::lock_guard lock(mutex_);
    const auto n = points.cols();
    if (!selection_) {
      selection_.emplace();
      for (Eigen::Index j = 0; j < n; ++j) selection_->push_back(extract_patch(index_, points.col(j), prior_.k).indices);
    }
    if (static_cast<std::size_t>(n) != selection_->size()) throw ContractViolation("frozen prior: column count changed");
    const auto dim = static_cast<Eigen::Index>(prior_.network.arch.input_dim);
    MatrixX inputs(dim, n);
    std::vector<LocalPatch> patches(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      const Point3 p = points.col(j);
      LocalPatch& patch = patches[static_cast<std::size_t>(j)];
      patch.indices = (*selection_)[static_cast<std::size_t>(j)];
      for (auto id : patch.indices) {
        patch.neighbors.push_back(index_.point(id) - p);
        patch.distances.push_back(patch.neighbors.back().norm());
      }
      encode_patch(index_, p, patch, prior_.normalization, inputs.col(j).data());
    }
    const ForwardTape tape = forward_tape(prior_.network, inputs, true);
    values = tape.output;
    gradients.resize(3, n);
    for (Eigen::Index j = 0; j < n; ++j)
      gradients.col(j) = encoded_patch_pullback(index_, points.col(j), patches[static_cast<std::size_t>(j)],
                                                prior_.normalization, tape.input_grad.col(j).data());
  }

  std::string name() const override { return "frozen-selection"; }

 private:
  const PriorModel& prior_;
  KnnIndex index_;
  mutable std::mutex mutex_;
  mutable std::optional<std::vector<std::vector<std::uint32_t>>> selection_;
};

}  // namespace onsurf::testing

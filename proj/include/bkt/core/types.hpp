#pragma once

#include <Eigen/Core>

#include <compare>
#include <cstddef>
#include <functional>
#include <string>

namespace bkt {

/// Upper bound on state/observation dimension. Small vectors live on the stack.
inline constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

using StateVec = Vec;
using ObsVec = Vec;
using ParamVec = Vec;

/// Model label, 1-based as in the model bank {1, ..., L}.
class ModelId {
 public:
  constexpr ModelId() = default;
  constexpr explicit ModelId(int index) : index_(index) {}

  static constexpr ModelId from_zero_based(int i) { return ModelId(i + 1); }

  constexpr int index() const { return index_; }
  constexpr int zero_based() const { return index_ - 1; }

  friend constexpr auto operator<=>(ModelId, ModelId) = default;

 private:
  int index_ = 1;
};

}  // namespace bkt

template <>
struct std::hash<bkt::ModelId> {
  std::size_t operator()(bkt::ModelId id) const noexcept { return std::hash<int>{}(id.index()); }
};

#pragma once

#include <vector>

#include "rectflow/tensor.hpp"

namespace rectflow {

// A conditional velocity field v(x, t, c) evaluated on a batch.
// x is [n x d]; t holds one entry per row (or a single shared entry);
// cond is [n x condition_dim] or null for unconditional fields.
class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual Tensor velocity(const Tensor& x, const std::vector<double>& t,
                          const Tensor* cond) const = 0;
};

}  // namespace rectflow

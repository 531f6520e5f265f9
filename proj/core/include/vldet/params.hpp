#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "vldet/graph.hpp"
#include "vldet/rng.hpp"
#include "vldet/tensor.hpp"

namespace vldet {

struct Parameter {
  std::string name;
  Var node;
  bool trainable = true;
};

// Owns every learnable tensor under a unique slash-separated name.
// Insertion order is the canonical iteration order for optimizers and
// serialization, so runs are reproducible.
class Registry {
 public:
  Var add(const std::string& name, Tensor init);
  std::shared_ptr<Parameter> find(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::shared_ptr<Parameter>>& all() const {
    return params_;
  }
  std::size_t size() const { return params_.size(); }
  void zero_grads();

 private:
  std::vector<std::shared_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

Tensor init_normal(std::vector<std::size_t> shape, Rng& rng,
                   double stddev = 0.02);
Tensor init_zeros(std::vector<std::size_t> shape);
Tensor init_ones(std::vector<std::size_t> shape);

}  // namespace vldet

#include "vldet/params.hpp"

#include <stdexcept>
#include <utility>

namespace vldet {

Var Registry::add(const std::string& name, Tensor init) {
  if (index_.count(name) != 0) {
    throw std::invalid_argument("Registry: duplicate parameter '" + name +
                                "'");
  }
  auto p = std::make_shared<Parameter>();
  p->name = name;
  p->node = make_leaf(std::move(init), true);
  index_[name] = params_.size();
  params_.push_back(p);
  return p->node;
}

std::shared_ptr<Parameter> Registry::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("Registry: unknown parameter '" + name + "'");
  }
  return params_[it->second];
}

bool Registry::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

void Registry::zero_grads() {
  for (const auto& p : params_) p->node->zero_grad();
}

Tensor init_normal(std::vector<std::size_t> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * stddev;
  return t;
}

Tensor init_zeros(std::vector<std::size_t> shape) {
  return Tensor::zeros(std::move(shape));
}

Tensor init_ones(std::vector<std::size_t> shape) {
  return Tensor::full(std::move(shape), 1.0);
}

}  // namespace vldet

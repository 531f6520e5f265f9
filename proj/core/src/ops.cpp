#include "vldet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

#include "vldet/threading.hpp"

namespace vldet {

namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    fail(op, "expected rank-" + std::to_string(rank) + " input, got shape " +
                 t.shape_str());
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> bw) {
  auto out = std::make_shared<Node>();
  out->value = std::move(value);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      out->requires_grad = true;
      break;
    }
  }
  if (out->requires_grad) {
    out->parents = std::move(parents);
    out->backward_fn = std::move(bw);
  }
  return out;
}

bool preq(const Node& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

Tensor& pgrad(Node& self, std::size_t i) {
  return self.parents[i]->ensure_grad();
}

const Tensor& pval(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

}  // namespace

void matmul_raw(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  const std::size_t row_blocks = (m + kMr - 1) / kMr;
  parallel_for(row_blocks, [&](std::size_t blk0, std::size_t blk1) {
    for (std::size_t blk = blk0; blk < blk1; ++blk) {
      const std::size_t i0 = blk * kMr;
      const std::size_t ib = std::min(kMr, m - i0);
      for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
        const std::size_t jb = std::min(kNr, n - j0);
        double acc[kMr][kNr] = {};
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = b + p * n + j0;
          for (std::size_t i = 0; i < ib; ++i) {
            const double av = a[(i0 + i) * k + p];
            for (std::size_t j = 0; j < jb; ++j) acc[i][j] += av * brow[j];
          }
        }
        for (std::size_t i = 0; i < ib; ++i) {
          double* crow = c + (i0 + i) * n + j0;
          for (std::size_t j = 0; j < jb; ++j) crow[j] += acc[i][j];
        }
      }
    }
  });
}

void matmul_nt_raw(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t n, std::size_t k, bool accumulate) {
  parallel_for(m, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const double* arow = a + i * n;
      double* crow = c + i * k;
      for (std::size_t j = 0; j < k; ++j) {
        const double* brow = b + j * n;
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
        std::size_t p = 0;
        for (; p + 4 <= n; p += 4) {
          s0 += arow[p] * brow[p];
          s1 += arow[p + 1] * brow[p + 1];
          s2 += arow[p + 2] * brow[p + 2];
          s3 += arow[p + 3] * brow[p + 3];
        }
        double s = (s0 + s1) + (s2 + s3);
        for (; p < n; ++p) s += arow[p] * brow[p];
        crow[j] = accumulate ? crow[j] + s : s;
      }
    }
  });
}

void matmul_tn_raw(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  parallel_for(
      n,
      [&](std::size_t n0, std::size_t n1) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = a + i * k;
          const double* brow = b + i * n;
          for (std::size_t j = 0; j < k; ++j) {
            const double av = arow[j];
            double* crow = c + j * n;
            for (std::size_t p = n0; p < n1; ++p) crow[p] += av * brow[p];
          }
        }
      },
      16);
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a->value, b->value);
  Tensor out(a->value.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = self.grad();
    for (std::size_t pi = 0; pi < 2; ++pi) {
      if (!preq(self, pi)) continue;
      Tensor& pg = pgrad(self, pi);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a->value, b->value);
  Tensor out(a->value.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = self.grad();
    if (preq(self, 0)) {
      Tensor& pg = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
    if (preq(self, 1)) {
      Tensor& pg = pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a->value, b->value);
  Tensor out(a->value.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& g = self.grad();
    if (preq(self, 0)) {
      Tensor& pg = pgrad(self, 0);
      const Tensor& bv = pval(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * bv[i];
    }
    if (preq(self, 1)) {
      Tensor& pg = pgrad(self, 1);
      const Tensor& av = pval(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * c;
  return make_op(std::move(out), {a}, [c](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * c;
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
  return make_op(std::move(out), {a}, [](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
  });
}

Var add_row_bias(const Var& x, const Var& b) {
  require_rank("add_row_bias", x->value, 2);
  require_rank("add_row_bias", b->value, 1);
  const std::size_t rows = x->value.dim(0);
  const std::size_t cols = x->value.dim(1);
  if (b->value.dim(0) != cols) {
    fail("add_row_bias",
         "bias " + b->value.shape_str() + " vs input " + x->value.shape_str());
  }
  Tensor out(x->value.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = x->value.at(r, c) + b->value[c];
    }
  }
  return make_op(std::move(out), {x, b}, [rows, cols](Node& self) {
    const Tensor& g = self.grad();
    if (preq(self, 0)) {
      Tensor& pg = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
    if (preq(self, 1)) {
      Tensor& pg = pgrad(self, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) pg[c] += g.at(r, c);
      }
    }
  });
}

Var add_tensor_const(const Var& x, const Tensor& t) {
  require_same_shape("add_tensor_const", x->value, t);
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] + t[i];
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
  });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
  if (shape_product(shape) != x->value.size()) {
    fail("reshape", "cannot view " + x->value.shape_str() + " as " +
                        shape_to_string(shape));
  }
  std::vector<double> vals(x->value.data(), x->value.data() + x->value.size());
  Tensor out = Tensor::from_values(std::move(shape), std::move(vals));
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
  });
}

Var transpose(const Var& x) {
  require_rank("transpose", x->value, 2);
  const std::size_t rows = x->value.dim(0);
  const std::size_t cols = x->value.dim(1);
  Tensor out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(c, r) = x->value.at(r, c);
  }
  return make_op(std::move(out), {x}, [rows, cols](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) pg.at(r, c) += g.at(c, r);
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail("concat_rows", "no inputs");
  require_rank("concat_rows", parts[0]->value, 2);
  const std::size_t cols = parts[0]->value.dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank("concat_rows", p->value, 2);
    if (p->value.dim(1) != cols) {
      fail("concat_rows", "column mismatch " + p->value.shape_str() + " vs " +
                              parts[0]->value.shape_str());
    }
    rows += p->value.dim(0);
  }
  Tensor out({rows, cols});
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + r * cols, p->value.data(),
                p->value.size() * sizeof(double));
    r += p->value.dim(0);
  }
  return make_op(std::move(out), parts, [](Node& self) {
    const Tensor& g = self.grad();
    const std::size_t cols = g.dim(1);
    std::size_t r = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      const std::size_t pr = pval(self, pi).dim(0);
      if (preq(self, pi)) {
        Tensor& pg = pgrad(self, pi);
        for (std::size_t i = 0; i < pr * cols; ++i) {
          pg[i] += g[r * cols + i];
        }
      }
      r += pr;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail("concat_cols", "no inputs");
  require_rank("concat_cols", parts[0]->value, 2);
  const std::size_t rows = parts[0]->value.dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", p->value, 2);
    if (p->value.dim(0) != rows) {
      fail("concat_cols", "row mismatch " + p->value.shape_str() + " vs " +
                              parts[0]->value.shape_str());
    }
    cols += p->value.dim(1);
  }
  Tensor out({rows, cols});
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p->value.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::memcpy(out.data() + r * cols + c0, p->value.data() + r * pc,
                  pc * sizeof(double));
    }
    c0 += pc;
  }
  return make_op(std::move(out), parts, [rows](Node& self) {
    const Tensor& g = self.grad();
    const std::size_t cols = g.dim(1);
    std::size_t c0 = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      const std::size_t pc = pval(self, pi).dim(1);
      if (preq(self, pi)) {
        Tensor& pg = pgrad(self, pi);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < pc; ++c) {
            pg.at(r, c) += g[r * cols + c0 + c];
          }
        }
      }
      c0 += pc;
    }
  });
}

Var slice_rows(const Var& x, std::size_t r0, std::size_t r1) {
  require_rank("slice_rows", x->value, 2);
  if (r0 >= r1 || r1 > x->value.dim(0)) {
    fail("slice_rows", "range [" + std::to_string(r0) + "," +
                           std::to_string(r1) + ") on " +
                           x->value.shape_str());
  }
  const std::size_t cols = x->value.dim(1);
  Tensor out({r1 - r0, cols});
  std::memcpy(out.data(), x->value.data() + r0 * cols,
              out.size() * sizeof(double));
  return make_op(std::move(out), {x}, [r0, cols](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) pg[r0 * cols + i] += g[i];
  });
}

Var slice_cols(const Var& x, std::size_t c0, std::size_t c1) {
  require_rank("slice_cols", x->value, 2);
  if (c0 >= c1 || c1 > x->value.dim(1)) {
    fail("slice_cols", "range [" + std::to_string(c0) + "," +
                           std::to_string(c1) + ") on " +
                           x->value.shape_str());
  }
  const std::size_t rows = x->value.dim(0);
  const std::size_t w = c1 - c0;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(out.data() + r * w, x->value.data() + r * x->value.dim(1) + c0,
                w * sizeof(double));
  }
  return make_op(std::move(out), {x}, [c0](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    const std::size_t rows = g.dim(0), w = g.dim(1), cols = pg.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        pg[r * cols + c0 + c] += g.at(r, c);
      }
    }
  });
}

Var gather_rows(const Var& table, const std::vector<std::size_t>& ids) {
  require_rank("gather_rows", table->value, 2);
  if (ids.empty()) fail("gather_rows", "no indices");
  const std::size_t rows = table->value.dim(0);
  const std::size_t cols = table->value.dim(1);
  for (std::size_t id : ids) {
    if (id >= rows) {
      fail("gather_rows", "index " + std::to_string(id) + " out of range for " +
                              table->value.shape_str());
    }
  }
  Tensor out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(out.data() + i * cols, table->value.data() + ids[i] * cols,
                cols * sizeof(double));
  }
  return make_op(std::move(out), {table}, [ids, cols](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) {
        pg[ids[i] * cols + c] += g.at(i, c);
      }
    }
  });
}

Var sum_all(const Var& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  return make_op(Tensor::from_values({1}, {s}), {x}, [](Node& self) {
    const double g = self.grad()[0];
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g;
  });
}

Var mean_all(const Var& x) {
  double s = 0.0;
  const std::size_t n = x->value.size();
  for (std::size_t i = 0; i < n; ++i) s += x->value[i];
  return make_op(Tensor::from_values({1}, {s / static_cast<double>(n)}), {x},
                 [n](Node& self) {
                   const double g = self.grad()[0] / static_cast<double>(n);
                   Tensor& pg = pgrad(self, 0);
                   for (std::size_t i = 0; i < n; ++i) pg[i] += g;
                 });
}

Var mean_rows(const Var& x) {
  require_rank("mean_rows", x->value, 2);
  const std::size_t rows = x->value.dim(0);
  const std::size_t cols = x->value.dim(1);
  Tensor out({1, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += x->value.at(r, c);
  }
  for (std::size_t c = 0; c < cols; ++c) out[c] /= static_cast<double>(rows);
  return make_op(std::move(out), {x}, [rows, cols](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) pg.at(r, c) += g[c] * inv;
    }
  });
}

Var masked_mean_rows(const Var& x, const std::vector<bool>& keep) {
  require_rank("masked_mean_rows", x->value, 2);
  const std::size_t rows = x->value.dim(0);
  const std::size_t cols = x->value.dim(1);
  if (keep.size() != rows) {
    fail("masked_mean_rows", "mask size " + std::to_string(keep.size()) +
                                 " vs input " + x->value.shape_str());
  }
  std::size_t n = 0;
  for (bool k : keep) n += k ? 1 : 0;
  if (n == 0) fail("masked_mean_rows", "mask keeps no rows");
  Tensor out({1, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    if (!keep[r]) continue;
    for (std::size_t c = 0; c < cols; ++c) out[c] += x->value.at(r, c);
  }
  for (std::size_t c = 0; c < cols; ++c) out[c] /= static_cast<double>(n);
  return make_op(std::move(out), {x}, [keep, n, cols](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < keep.size(); ++r) {
      if (!keep[r]) continue;
      for (std::size_t c = 0; c < cols; ++c) pg.at(r, c) += g[c] * inv;
    }
  });
}

Var mean_cols(const Var& x) {
  require_rank("mean_cols", x->value, 2);
  const std::size_t rows = x->value.dim(0);
  const std::size_t cols = x->value.dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x->value.at(r, c);
    out[r] = s / static_cast<double>(cols);
  }
  return make_op(std::move(out), {x}, [rows, cols](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    const double inv = 1.0 / static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) pg.at(r, c) += g[r] * inv;
    }
  });
}

Var diag(const Var& x) {
  require_rank("diag", x->value, 2);
  if (x->value.dim(0) != x->value.dim(1)) {
    fail("diag", "expected square input, got " + x->value.shape_str());
  }
  const std::size_t m = x->value.dim(0);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) out[i] = x->value.at(i, i);
  return make_op(std::move(out), {x}, [m](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < m; ++i) pg.at(i, i) += g[i];
  });
}

Var dot(const Var& a, const Var& b) {
  require_rank("dot", a->value, 1);
  require_same_shape("dot", a->value, b->value);
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) {
    s += a->value[i] * b->value[i];
  }
  return make_op(Tensor::from_values({1}, {s}), {a, b}, [](Node& self) {
    const double g = self.grad()[0];
    if (preq(self, 0)) {
      Tensor& pg = pgrad(self, 0);
      const Tensor& bv = pval(self, 1);
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g * bv[i];
    }
    if (preq(self, 1)) {
      Tensor& pg = pgrad(self, 1);
      const Tensor& av = pval(self, 0);
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g * av[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a->value, 2);
  require_rank("matmul", b->value, 2);
  if (a->value.dim(1) != b->value.dim(0)) {
    fail("matmul", "inner dims " + a->value.shape_str() + " vs " +
                       b->value.shape_str());
  }
  const std::size_t m = a->value.dim(0);
  const std::size_t k = a->value.dim(1);
  const std::size_t n = b->value.dim(1);
  Tensor out({m, n});
  matmul_raw(a->value.data(), b->value.data(), out.data(), m, k, n, false);
  return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
    const Tensor& g = self.grad();
    if (preq(self, 0)) {
      matmul_nt_raw(g.data(), pval(self, 1).data(), pgrad(self, 0).data(), m,
                    n, k, true);
    }
    if (preq(self, 1)) {
      matmul_tn_raw(pval(self, 0).data(), g.data(), pgrad(self, 1).data(), m,
                    k, n, true);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  return add_row_bias(matmul(x, w), b);
}

Var relu(const Var& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x->value[i] > 0.0 ? x->value[i] : 0.0;
  }
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& g = self.grad();
    const Tensor& xv = pval(self, 0);
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) pg[i] += g[i];
    }
  });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x->value[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& g = self.grad();
    const Tensor& xv = pval(self, 0);
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      pg[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x->value[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& g = self.grad();
    const Tensor& y = self.value;
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      pg[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var softmax_rows(const Var& x) {
  require_rank("softmax_rows", x->value, 2);
  const std::size_t rows = x->value.dim(0);
  const std::size_t cols = x->value.dim(1);
  Tensor out(x->value.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = x->value.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, x->value.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = std::exp(x->value.at(r, c) - m);
      z += out.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= z;
  }
  return make_op(std::move(out), {x}, [rows, cols](Node& self) {
    const Tensor& g = self.grad();
    const Tensor& y = self.value;
    Tensor& pg = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      double gy = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gy += g.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) {
        pg.at(r, c) += y.at(r, c) * (g.at(r, c) - gy);
      }
    }
  });
}

Var logsumexp_rows(const Var& x) {
  require_rank("logsumexp_rows", x->value, 2);
  const std::size_t rows = x->value.dim(0);
  const std::size_t cols = x->value.dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double m = x->value.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, x->value.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      z += std::exp(x->value.at(r, c) - m);
    }
    out[r] = m + std::log(z);
  }
  return make_op(std::move(out), {x}, [rows, cols](Node& self) {
    const Tensor& g = self.grad();
    const Tensor& y = self.value;
    const Tensor& xv = pval(self, 0);
    Tensor& pg = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        pg.at(r, c) += g[r] * std::exp(xv.at(r, c) - y[r]);
      }
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps) {
  require_rank("layer_norm_rows", x->value, 2);
  require_rank("layer_norm_rows", gamma->value, 1);
  require_rank("layer_norm_rows", beta->value, 1);
  const std::size_t rows = x->value.dim(0);
  const std::size_t cols = x->value.dim(1);
  if (gamma->value.dim(0) != cols || beta->value.dim(0) != cols) {
    fail("layer_norm_rows", "scale/shift " + gamma->value.shape_str() + "/" +
                                beta->value.shape_str() + " vs input " +
                                x->value.shape_str());
  }
  Tensor out(x->value.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x->value.at(r, c);
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = x->value.at(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (x->value.at(r, c) - mu) * inv;
      out.at(r, c) = gamma->value[c] * xh + beta->value[c];
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [rows, cols,
                                                    eps](Node& self) {
    const Tensor& g = self.grad();
    const Tensor& xv = pval(self, 0);
    const Tensor& gam = pval(self, 1);
    std::vector<double> xhat(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      double mu = 0.0;
      for (std::size_t c = 0; c < cols; ++c) mu += xv.at(r, c);
      mu /= static_cast<double>(cols);
      double var = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = xv.at(r, c) - mu;
        var += d * d;
      }
      var /= static_cast<double>(cols);
      const double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t c = 0; c < cols; ++c) {
        xhat[c] = (xv.at(r, c) - mu) * inv;
      }
      if (preq(self, 1)) {
        Tensor& pg = pgrad(self, 1);
        for (std::size_t c = 0; c < cols; ++c) pg[c] += g.at(r, c) * xhat[c];
      }
      if (preq(self, 2)) {
        Tensor& pg = pgrad(self, 2);
        for (std::size_t c = 0; c < cols; ++c) pg[c] += g.at(r, c);
      }
      if (preq(self, 0)) {
        Tensor& pg = pgrad(self, 0);
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double dxh = g.at(r, c) * gam[c];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xhat[c];
        }
        mean_dxh /= static_cast<double>(cols);
        mean_dxh_xh /= static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) {
          const double dxh = g.at(r, c) * gam[c];
          pg.at(r, c) += inv * (dxh - mean_dxh - xhat[c] * mean_dxh_xh);
        }
      }
    }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  if (x->value.rank() != 1 && x->value.rank() != 2) {
    fail("l2_normalize_rows", "expected rank-1 or rank-2, got " +
                                  x->value.shape_str());
  }
  const std::size_t rows = x->value.rank() == 2 ? x->value.dim(0) : 1;
  const std::size_t cols =
      x->value.rank() == 2 ? x->value.dim(1) : x->value.dim(0);
  Tensor out(x->value.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x->value.data() + r * cols;
    double* yr = out.data() + r * cols;
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += xr[c] * xr[c];
    const double n = std::sqrt(sq);
    if (n < eps) {
      for (std::size_t c = 0; c < cols; ++c) yr[c] = 0.0;
    } else {
      for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] / n;
    }
  }
  return make_op(std::move(out), {x}, [rows, cols, eps](Node& self) {
    const Tensor& g = self.grad();
    const Tensor& xv = pval(self, 0);
    const Tensor& y = self.value;
    Tensor& pg = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = xv.data() + r * cols;
      const double* yr = y.data() + r * cols;
      const double* gr = g.data() + r * cols;
      double* pgr = pg.data() + r * cols;
      double sq = 0.0;
      for (std::size_t c = 0; c < cols; ++c) sq += xr[c] * xr[c];
      const double n = std::sqrt(sq);
      if (n < eps) continue;
      double gy = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gy += gr[c] * yr[c];
      for (std::size_t c = 0; c < cols; ++c) {
        pgr[c] += (gr[c] - yr[c] * gy) / n;
      }
    }
  });
}

namespace {

struct ConvDims {
  std::size_t h, w, cin, kh, kw, cout, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const char* op, const Tensor& x, const Tensor& w,
                   const Tensor& b, int stride, int pad) {
  require_rank(op, x, 3);
  if (w.rank() != 4) {
    fail(op, "expected rank-4 kernel, got " + w.shape_str());
  }
  require_rank(op, b, 1);
  if (stride < 1) fail(op, "stride must be positive");
  if (pad < 0) fail(op, "pad must be non-negative");
  ConvDims d{};
  d.h = x.dim(0);
  d.w = x.dim(1);
  d.cin = x.dim(2);
  d.kh = w.shape()[0];
  d.kw = w.shape()[1];
  d.cout = w.shape()[3];
  d.stride = stride;
  d.pad = pad;
  if (w.shape()[2] != d.cin) {
    fail(op, "kernel " + w.shape_str() + " vs input " + x.shape_str());
  }
  if (b.dim(0) != d.cout) {
    fail(op, "bias " + b.shape_str() + " vs kernel " + w.shape_str());
  }
  const std::size_t hp = d.h + 2 * static_cast<std::size_t>(pad);
  const std::size_t wp = d.w + 2 * static_cast<std::size_t>(pad);
  if (hp < d.kh || wp < d.kw) {
    fail(op, "kernel " + w.shape_str() + " larger than padded input " +
                 x.shape_str());
  }
  d.ho = (hp - d.kh) / static_cast<std::size_t>(stride) + 1;
  d.wo = (wp - d.kw) / static_cast<std::size_t>(stride) + 1;
  return d;
}

// col: [ho*wo, kh*kw*cin], taps outside the padded input contribute zero.
void im2col(const Tensor& x, const ConvDims& d, double* col) {
  const std::size_t patch = d.kh * d.kw * d.cin;
  parallel_for(d.ho * d.wo, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const std::size_t oy = r / d.wo;
      const std::size_t ox = r % d.wo;
      double* row = col + r * patch;
      for (std::size_t dy = 0; dy < d.kh; ++dy) {
        const long iy = static_cast<long>(oy) * d.stride - d.pad +
                        static_cast<long>(dy);
        for (std::size_t dx = 0; dx < d.kw; ++dx) {
          const long ix = static_cast<long>(ox) * d.stride - d.pad +
                          static_cast<long>(dx);
          double* dst = row + (dy * d.kw + dx) * d.cin;
          if (iy < 0 || iy >= static_cast<long>(d.h) || ix < 0 ||
              ix >= static_cast<long>(d.w)) {
            std::fill(dst, dst + d.cin, 0.0);
          } else {
            const double* src = x.data() + (static_cast<std::size_t>(iy) *
                                                d.w +
                                            static_cast<std::size_t>(ix)) *
                                               d.cin;
            std::memcpy(dst, src, d.cin * sizeof(double));
          }
        }
      }
    }
  });
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const ConvDims d =
      conv_dims("conv2d", x->value, w->value, b->value, stride, pad);
  const std::size_t patch = d.kh * d.kw * d.cin;
  const std::size_t out_rows = d.ho * d.wo;
  std::vector<double> col(out_rows * patch);
  im2col(x->value, d, col.data());
  Tensor out({d.ho, d.wo, d.cout});
  for (std::size_t r = 0; r < out_rows; ++r) {
    std::memcpy(out.data() + r * d.cout, b->value.data(),
                d.cout * sizeof(double));
  }
  matmul_raw(col.data(), w->value.data(), out.data(), out_rows, patch, d.cout,
             true);
  return make_op(std::move(out), {x, w, b}, [d, patch,
                                             out_rows](Node& self) {
    const Tensor& g = self.grad();
    if (preq(self, 2)) {
      Tensor& pg = pgrad(self, 2);
      for (std::size_t r = 0; r < out_rows; ++r) {
        for (std::size_t c = 0; c < d.cout; ++c) {
          pg[c] += g[r * d.cout + c];
        }
      }
    }
    if (preq(self, 1)) {
      std::vector<double> col(out_rows * patch);
      im2col(pval(self, 0), d, col.data());
      matmul_tn_raw(col.data(), g.data(), pgrad(self, 1).data(), out_rows,
                    patch, d.cout, true);
    }
    if (preq(self, 0)) {
      std::vector<double> dcol(out_rows * patch);
      matmul_nt_raw(g.data(), pval(self, 1).data(), dcol.data(), out_rows,
                    d.cout, patch, false);
      Tensor& pg = pgrad(self, 0);
      for (std::size_t r = 0; r < out_rows; ++r) {
        const std::size_t oy = r / d.wo;
        const std::size_t ox = r % d.wo;
        const double* row = dcol.data() + r * patch;
        for (std::size_t dy = 0; dy < d.kh; ++dy) {
          const long iy = static_cast<long>(oy) * d.stride - d.pad +
                          static_cast<long>(dy);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t dx = 0; dx < d.kw; ++dx) {
            const long ix = static_cast<long>(ox) * d.stride - d.pad +
                            static_cast<long>(dx);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            const double* src = row + (dy * d.kw + dx) * d.cin;
            double* dst = pg.data() + (static_cast<std::size_t>(iy) * d.w +
                                       static_cast<std::size_t>(ix)) *
                                          d.cin;
            for (std::size_t c = 0; c < d.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  });
}

namespace {

// w is [k,k,cin,cout]; returns [cin, k*k*cout].
std::vector<double> deconv_weight_rows(const Tensor& w) {
  const std::size_t k = w.shape()[0];
  const std::size_t cin = w.shape()[2];
  const std::size_t cout = w.shape()[3];
  std::vector<double> wm(cin * k * k * cout);
  for (std::size_t dy = 0; dy < k; ++dy) {
    for (std::size_t dx = 0; dx < k; ++dx) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* src = w.data() + ((dy * k + dx) * cin + ci) * cout;
        double* dst =
            wm.data() + ci * (k * k * cout) + (dy * k + dx) * cout;
        std::memcpy(dst, src, cout * sizeof(double));
      }
    }
  }
  return wm;
}

}  // namespace

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride) {
  require_rank("conv_transpose2d", x->value, 3);
  if (w->value.rank() != 4 || w->value.shape()[0] != w->value.shape()[1]) {
    fail("conv_transpose2d", "expected square rank-4 kernel, got " +
                                 w->value.shape_str());
  }
  require_rank("conv_transpose2d", b->value, 1);
  if (stride < 1) fail("conv_transpose2d", "stride must be positive");
  const std::size_t h = x->value.dim(0);
  const std::size_t wd = x->value.dim(1);
  const std::size_t cin = x->value.dim(2);
  const std::size_t k = w->value.shape()[0];
  const std::size_t cout = w->value.shape()[3];
  if (w->value.shape()[2] != cin) {
    fail("conv_transpose2d", "kernel " + w->value.shape_str() + " vs input " +
                                 x->value.shape_str());
  }
  if (b->value.dim(0) != cout) {
    fail("conv_transpose2d", "bias " + b->value.shape_str() + " vs kernel " +
                                 w->value.shape_str());
  }
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t ho = (h - 1) * s + k;
  const std::size_t wo = (wd - 1) * s + k;

  const std::vector<double> wm = deconv_weight_rows(w->value);
  const std::size_t cells = h * wd;
  const std::size_t taps = k * k * cout;
  std::vector<double> p(cells * taps);
  matmul_raw(x->value.data(), wm.data(), p.data(), cells, cin, taps, false);

  Tensor out({ho, wo, cout});
  for (std::size_t cell = 0; cell < ho * wo; ++cell) {
    std::memcpy(out.data() + cell * cout, b->value.data(),
                cout * sizeof(double));
  }
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < wd; ++j) {
      const double* prow = p.data() + (i * wd + j) * taps;
      for (std::size_t dy = 0; dy < k; ++dy) {
        for (std::size_t dx = 0; dx < k; ++dx) {
          double* dst =
              out.data() + ((i * s + dy) * wo + (j * s + dx)) * cout;
          const double* src = prow + (dy * k + dx) * cout;
          for (std::size_t c = 0; c < cout; ++c) dst[c] += src[c];
        }
      }
    }
  }
  return make_op(
      std::move(out), {x, w, b},
      [h, wd, cin, k, cout, s, ho, wo, cells, taps](Node& self) {
        const Tensor& g = self.grad();
        if (preq(self, 2)) {
          Tensor& pg = pgrad(self, 2);
          for (std::size_t cell = 0; cell < ho * wo; ++cell) {
            for (std::size_t c = 0; c < cout; ++c) {
              pg[c] += g[cell * cout + c];
            }
          }
        }
        if (!preq(self, 0) && !preq(self, 1)) return;
        std::vector<double> dp(cells * taps);
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < wd; ++j) {
            double* drow = dp.data() + (i * wd + j) * taps;
            for (std::size_t dy = 0; dy < k; ++dy) {
              for (std::size_t dx = 0; dx < k; ++dx) {
                const double* src =
                    g.data() + ((i * s + dy) * wo + (j * s + dx)) * cout;
                std::memcpy(drow + (dy * k + dx) * cout, src,
                            cout * sizeof(double));
              }
            }
          }
        }
        if (preq(self, 0)) {
          const std::vector<double> wm = deconv_weight_rows(pval(self, 1));
          matmul_nt_raw(dp.data(), wm.data(), pgrad(self, 0).data(), cells,
                        taps, cin, true);
        }
        if (preq(self, 1)) {
          std::vector<double> dwm(cin * taps);
          matmul_tn_raw(pval(self, 0).data(), dp.data(), dwm.data(), cells,
                        cin, taps, false);
          Tensor& pg = pgrad(self, 1);
          for (std::size_t dy = 0; dy < k; ++dy) {
            for (std::size_t dx = 0; dx < k; ++dx) {
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* src =
                    dwm.data() + ci * taps + (dy * k + dx) * cout;
                double* dst =
                    pg.data() + ((dy * k + dx) * cin + ci) * cout;
                for (std::size_t c = 0; c < cout; ++c) dst[c] += src[c];
              }
            }
          }
        }
      });
}

Var maxpool2d(const Var& x) {
  require_rank("maxpool2d", x->value, 3);
  const std::size_t h = x->value.dim(0);
  const std::size_t w = x->value.dim(1);
  const std::size_t ch = x->value.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    fail("maxpool2d", "spatial dims must be even, got " +
                          x->value.shape_str());
  }
  const std::size_t ho = h / 2;
  const std::size_t wo = w / 2;
  Tensor out({ho, wo, ch});
  auto arg = std::make_shared<std::vector<std::uint32_t>>(out.size());
  for (std::size_t oy = 0; oy < ho; ++oy) {
    for (std::size_t ox = 0; ox < wo; ++ox) {
      for (std::size_t c = 0; c < ch; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                ((oy * 2 + dy) * w + (ox * 2 + dx)) * ch + c;
            const double v = x->value[idx];
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (oy * wo + ox) * ch + c;
        out[o] = best;
        (*arg)[o] = static_cast<std::uint32_t>(best_idx);
      }
    }
  }
  return make_op(std::move(out), {x}, [arg](Node& self) {
    const Tensor& g = self.grad();
    Tensor& pg = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) pg[(*arg)[i]] += g[i];
  });
}

Var cosine_similarity(const Var& v, const Var& l) {
  require_rank("cosine_similarity", v->value, 1);
  require_same_shape("cosine_similarity", v->value, l->value);
  return dot(l2_normalize_rows(v), l2_normalize_rows(l));
}

Var cosine_matrix(const Var& a, const Var& b) {
  require_rank("cosine_matrix", a->value, 2);
  require_rank("cosine_matrix", b->value, 2);
  if (a->value.dim(1) != b->value.dim(1)) {
    fail("cosine_matrix", "feature dims " + a->value.shape_str() + " vs " +
                              b->value.shape_str());
  }
  return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
}

Var smooth_l1(const Var& pred, const Var& target, double beta) {
  require_same_shape("smooth_l1", pred->value, target->value);
  if (!(beta > 0.0)) fail("smooth_l1", "beta must be positive");
  Tensor out(pred->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = pred->value[i] - target->value[i];
    const double a = std::abs(d);
    out[i] = a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  return make_op(std::move(out), {pred, target}, [beta](Node& self) {
    const Tensor& g = self.grad();
    const Tensor& pv = pval(self, 0);
    const Tensor& tv = pval(self, 1);
    Tensor* gp = preq(self, 0) ? &pgrad(self, 0) : nullptr;
    Tensor* gt = preq(self, 1) ? &pgrad(self, 1) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = pv[i] - tv[i];
      const double q =
          std::abs(d) < beta ? d / beta : (d > 0.0 ? 1.0 : -1.0);
      if (gp != nullptr) (*gp)[i] += q * g[i];
      if (gt != nullptr) (*gt)[i] -= q * g[i];
    }
  });
}

Var bce_with_logits_mean(const Var& logits, const Tensor& targets) {
  require_same_shape("bce_with_logits_mean", logits->value, targets);
  const std::size_t n = logits->value.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = logits->value[i];
    const double y = targets[i];
    acc += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
  }
  Tensor yv = targets;
  return make_op(Tensor::from_values({1}, {acc / static_cast<double>(n)}),
                 {logits}, [yv = std::move(yv), n](Node& self) {
                   const double g = self.grad()[0] / static_cast<double>(n);
                   const Tensor& sv = pval(self, 0);
                   Tensor& pg = pgrad(self, 0);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double s = sv[i];
                     double sig;
                     if (s >= 0.0) {
                       sig = 1.0 / (1.0 + std::exp(-s));
                     } else {
                       const double e = std::exp(s);
                       sig = e / (1.0 + e);
                     }
                     pg[i] += g * (sig - yv[i]);
                   }
                 });
}

Var softmax_cross_entropy_mean(const Var& logits,
                               const std::vector<std::size_t>& targets) {
  require_rank("softmax_cross_entropy_mean", logits->value, 2);
  const std::size_t rows = logits->value.dim(0);
  const std::size_t cols = logits->value.dim(1);
  if (targets.size() != rows) {
    fail("softmax_cross_entropy_mean",
         "targets " + std::to_string(targets.size()) + " vs logits " +
             logits->value.shape_str());
  }
  for (std::size_t t : targets) {
    if (t >= cols) {
      fail("softmax_cross_entropy_mean",
           "class " + std::to_string(t) + " out of range for " +
               logits->value.shape_str());
    }
  }
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double m = logits->value.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) {
      m = std::max(m, logits->value.at(r, c));
    }
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      z += std::exp(logits->value.at(r, c) - m);
    }
    acc += m + std::log(z) - logits->value.at(r, targets[r]);
  }
  return make_op(
      Tensor::from_values({1}, {acc / static_cast<double>(rows)}), {logits},
      [targets, rows, cols](Node& self) {
        const double g = self.grad()[0] / static_cast<double>(rows);
        const Tensor& sv = pval(self, 0);
        Tensor& pg = pgrad(self, 0);
        for (std::size_t r = 0; r < rows; ++r) {
          double m = sv.at(r, 0);
          for (std::size_t c = 1; c < cols; ++c) m = std::max(m, sv.at(r, c));
          double z = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            z += std::exp(sv.at(r, c) - m);
          }
          for (std::size_t c = 0; c < cols; ++c) {
            double p = std::exp(sv.at(r, c) - m) / z;
            if (c == targets[r]) p -= 1.0;
            pg.at(r, c) += g * p;
          }
        }
      });
}

Var scaled_dot_product_attention(const Var& q, const Var& k, const Var& v,
                                 std::size_t heads, const Tensor* mask) {
  require_rank("attention", q->value, 2);
  require_rank("attention", k->value, 2);
  require_rank("attention", v->value, 2);
  const std::size_t d = q->value.dim(1);
  if (k->value.dim(1) != d || v->value.dim(1) != d) {
    fail("attention", "feature dims " + q->value.shape_str() + "/" +
                          k->value.shape_str() + "/" + v->value.shape_str());
  }
  if (k->value.dim(0) != v->value.dim(0)) {
    fail("attention", "key/value rows " + k->value.shape_str() + " vs " +
                          v->value.shape_str());
  }
  if (heads == 0 || d % heads != 0) {
    fail("attention", "feature dim " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) +
                          " heads");
  }
  if (mask != nullptr) {
    if (mask->rank() != 2 || mask->dim(0) != q->value.dim(0) ||
        mask->dim(1) != k->value.dim(0)) {
      fail("attention", "mask " + mask->shape_str() + " vs scores [" +
                            std::to_string(q->value.dim(0)) + "," +
                            std::to_string(k->value.dim(0)) + "]");
    }
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var s = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask != nullptr) s = add_tensor_const(s, *mask);
    outs.push_back(matmul(softmax_rows(s), vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

Var custom_op(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backward) {
  return make_op(std::move(value), std::move(parents), std::move(backward));
}

}  // namespace vldet

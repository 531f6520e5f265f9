#pragma once

#include <cstddef>
#include <vector>

#include "vldet/graph.hpp"

namespace vldet {

// Differentiable op library. Every op checks shapes up front and throws
// std::invalid_argument naming the op and the offending shapes. Outputs
// require grad iff any input does; backward closures skip grad-free parents.

// arithmetic
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var add_row_bias(const Var& x, const Var& b);       // x:[R,C] b:[C]
Var add_tensor_const(const Var& x, const Tensor& t);

// shape
Var reshape(const Var& x, std::vector<std::size_t> shape);
Var transpose(const Var& x);                        // [R,C] -> [C,R]
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& x, std::size_t r0, std::size_t r1);
Var slice_cols(const Var& x, std::size_t c0, std::size_t c1);
Var gather_rows(const Var& table, const std::vector<std::size_t>& ids);

// reductions
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var mean_rows(const Var& x);                        // [R,C] -> [1,C]
Var masked_mean_rows(const Var& x, const std::vector<bool>& keep);
Var mean_cols(const Var& x);                        // [R,C] -> [R]
Var diag(const Var& x);                             // [M,M] -> [M]
Var dot(const Var& a, const Var& b);                // [n],[n] -> [1]

// linear algebra
Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b);

// activations / normalization
Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var softmax_rows(const Var& x);
Var logsumexp_rows(const Var& x);                   // [R,C] -> [R]
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps = 1e-5);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

// spatial ops on [H,W,C] maps
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride);
Var maxpool2d(const Var& x);                        // kernel 2, stride 2

// similarity and losses
Var cosine_similarity(const Var& v, const Var& l);  // [n],[n] -> [1]
Var cosine_matrix(const Var& a, const Var& b);      // [R,C],[S,C] -> [R,S]
Var smooth_l1(const Var& pred, const Var& target, double beta);
Var bce_with_logits_mean(const Var& logits, const Tensor& targets);
Var softmax_cross_entropy_mean(const Var& logits,
                               const std::vector<std::size_t>& targets);

// composite multi-head scaled dot-product attention over token matrices.
// q:[Tq,D] k,v:[Tk,D]; optional additive mask [Tq,Tk].
Var scaled_dot_product_attention(const Var& q, const Var& k, const Var& v,
                                 std::size_t heads,
                                 const Tensor* mask = nullptr);

// Node from a precomputed value with a hand-written backward closure, for
// domain ops defined outside this library. The closure reads self.grad()
// and must accumulate (+=) into parents that require gradients.
Var custom_op(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backward);

// Raw row-major kernels, exposed for benchmarks and oracles.
// C[M,N] (+)= A[M,K] * B[K,N]
void matmul_raw(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n, bool accumulate);
// C[M,K] (+)= A[M,N] * B[K,N]^T
void matmul_nt_raw(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t n, std::size_t k, bool accumulate);
// C[K,N] (+)= A[M,K]^T * B[M,N]
void matmul_tn_raw(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n, bool accumulate);

}  // namespace vldet

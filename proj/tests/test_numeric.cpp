#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "test_util.hpp"
#include "vldet/gradcheck.hpp"
#include "vldet/graph.hpp"
#include "vldet/ops.hpp"
#include "vldet/rng.hpp"
#include "vldet/tensor.hpp"
#include "vldet/threading.hpp"

using testutil::randn;
using namespace vldet;

namespace {

Var weighted(const Var& x, const Tensor& w) {
  return sum_all(mul(x, make_constant(w)));
}

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
  Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
  EXPECT_DOUBLE_EQ(t.at(0, 1), 2.0);
  Tensor u = Tensor::zeros({2, 2, 2});
  u.at(1, 0, 1) = 7.0;
  EXPECT_DOUBLE_EQ(u[(1 * 2 + 0) * 2 + 1], 7.0);
  EXPECT_THROW(Tensor({3, 0}), std::invalid_argument);
  EXPECT_THROW(Tensor::from_values({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, VldtRoundTripF64) {
  Rng rng(11);
  for (const auto& shape :
       std::vector<std::vector<std::size_t>>{{5}, {3, 4}, {2, 3, 4}}) {
    const Tensor t = randn(rng, shape);
    std::stringstream ss;
    write_vldt(ss, t);
    const Tensor u = read_vldt(ss);
    ASSERT_TRUE(u.same_shape(t));
    EXPECT_EQ(u.dtype(), DType::F64);
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_EQ(t[i], u[i]) << "element " << i;
    }
  }
}

TEST(Tensor, VldtF32TagRoundsValues) {
  Rng rng(12);
  Tensor t = randn(rng, {4, 3});
  t.set_dtype(DType::F32);
  std::stringstream ss;
  write_vldt(ss, t);
  const Tensor u = read_vldt(ss);
  EXPECT_EQ(u.dtype(), DType::F32);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(u[i], static_cast<double>(static_cast<float>(t[i])));
  }
  // second trip is exact: values already representable in f32
  std::stringstream ss2;
  write_vldt(ss2, u);
  const Tensor w = read_vldt(ss2);
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_EQ(u[i], w[i]);
}

TEST(Tensor, VldtRejectsGarbage) {
  std::stringstream empty;
  EXPECT_THROW(read_vldt(empty), std::runtime_error);
  std::stringstream bad("not a tensor at all");
  EXPECT_THROW(read_vldt(bad), std::runtime_error);
  Rng rng(13);
  const Tensor t = randn(rng, {4, 4});
  std::stringstream ss;
  write_vldt(ss, t);
  const std::string full = ss.str();
  std::stringstream trunc(full.substr(0, full.size() / 2));
  EXPECT_THROW(read_vldt(trunc), std::runtime_error);
}

TEST(Tensor, VldtFileRoundTrip) {
  testutil::TempDir dir("vldt");
  Rng rng(14);
  const Tensor t = randn(rng, {6, 2});
  save_vldt(dir.file("a.vldt"), t);
  const Tensor u = load_vldt(dir.file("a.vldt"));
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i], u[i]);
  // rewriting a loaded tensor is byte-identical
  save_vldt(dir.file("b.vldt"), u);
  EXPECT_EQ(testutil::read_file(dir.file("a.vldt")),
            testutil::read_file(dir.file("b.vldt")));
  EXPECT_THROW(load_vldt(dir.file("missing.vldt")), std::runtime_error);
}

TEST(Hashing, Fnv1aReferenceVectors) {
  EXPECT_EQ(fnv1a64("", 0), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a", 1), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a64("foobar", 6), 0x85944171f73967e8ull);
}

TEST(Hashing, HashFileMatchesContentHash) {
  testutil::TempDir dir("hash");
  const std::string payload = "some bytes\nmore bytes";
  {
    std::ofstream f(dir.file("x.bin"), std::ios::binary);
    f << payload;
  }
  EXPECT_EQ(hash_file(dir.file("x.bin")),
            fnv1a64(payload.data(), payload.size()));
}

TEST(Random, DeterministicStreams) {
  Rng a(99), b(99), c(100);
  bool any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    any_diff = any_diff || (x != c.next_u64());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Random, SerializeMidStreamResumes) {
  Rng a(7);
  for (int i = 0; i < 17; ++i) a.normal();  // leaves a Box-Muller spare armed
  const std::string state = a.serialize();
  Rng b = Rng::deserialize(state);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(a.normal(), b.normal());
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
  EXPECT_THROW(Rng::deserialize("corrupt"), std::runtime_error);
}

TEST(Random, UniformBoundsAndIntRange) {
  Rng rng(21);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) hits[rng.uniform_int(7)]++;
  for (int k = 0; k < 7; ++k) EXPECT_GT(hits[k], 700);  // ~1000 expected
}

TEST(Random, ShuffleIsPermutation) {
  Rng rng(22);
  std::vector<int> v(40);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> orig = v;
  rng.shuffle(v);
  EXPECT_NE(v, orig);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, orig);
}

TEST(Random, NormalMoments) {
  Rng rng(23);
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sq / n, 1.0, 0.03);
}

TEST(Random, DeriveSeedSeparatesStreams) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
}

TEST(Threading, ParallelForCoversEachIndexOnce) {
  const std::size_t n = 1000;
  std::vector<std::atomic<int>> counts(n);
  for (auto& c : counts) c.store(0);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) counts[i].fetch_add(1);
  });
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(counts[i].load(), 1);
}

TEST(Threading, NestedCallsRunInline) {
  const std::size_t n = 64;
  std::vector<std::atomic<int>> counts(n * n);
  for (auto& c : counts) c.store(0);
  parallel_for(n, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      parallel_for(n, [&, i](std::size_t b2, std::size_t e2) {
        for (std::size_t j = b2; j < e2; ++j) counts[i * n + j].fetch_add(1);
      });
    }
  });
  for (std::size_t i = 0; i < n * n; ++i) EXPECT_EQ(counts[i].load(), 1);
  parallel_for(0, [](std::size_t, std::size_t) { FAIL(); });
}

TEST(Graph, BackwardAccumulatesThroughSharedNodes) {
  const Var x = make_leaf(Tensor::from_values({2}, {3.0, -1.0}), true);
  const Var y = sum_all(add(x, x));
  backward(y);
  ASSERT_TRUE(x->has_grad());
  EXPECT_DOUBLE_EQ(x->grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x->grad()[1], 2.0);
  const Var c = make_constant(Tensor::from_values({2}, {1.0, 1.0}));
  const Var z = sum_all(mul(x, c));
  backward(z);
  EXPECT_FALSE(c->has_grad());
}

TEST(Graph, CustomOpForwardAndBackward) {
  const Var x = make_leaf(Tensor::from_values({3}, {1.0, 2.0, 3.0}), true);
  Tensor doubled = x->value;
  for (std::size_t i = 0; i < doubled.size(); ++i) doubled[i] *= 2.0;
  const Var y = custom_op(doubled, {x}, [x](Node& self) {
    Tensor& gx = x->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * self.grad()[i];
  });
  const Var loss = sum_all(y);
  backward(loss);
  EXPECT_DOUBLE_EQ(y->value[1], 4.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x->grad()[i], 2.0);
}

TEST(Ops, MatmulMatchesNaive) {
  Rng rng(31);
  const Tensor a = randn(rng, {4, 6});
  const Tensor b = randn(rng, {6, 5});
  const Var c = matmul(make_constant(a), make_constant(b));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 6; ++k) acc += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c->value.at(i, j), acc, 1e-12);
    }
  }
}

TEST(Ops, RawKernelsMatchNaive) {
  Rng rng(32);
  const std::size_t m = 3, k = 4, n = 5;
  const Tensor a = randn(rng, {m, k});
  const Tensor bt = randn(rng, {n, k});  // for nt: B[K(=n) rows, N(=k) cols]
  Tensor c = Tensor::zeros({m, n});
  matmul_nt_raw(a.data(), bt.data(), c.data(), m, k, n, false);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += a.at(i, t) * bt.at(j, t);
      EXPECT_NEAR(c.at(i, j), acc, 1e-12);
    }
  }
  const Tensor a2 = randn(rng, {m, k});
  const Tensor b2 = randn(rng, {m, n});
  Tensor c2 = Tensor::zeros({k, n});
  matmul_tn_raw(a2.data(), b2.data(), c2.data(), m, k, n, false);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < m; ++t) acc += a2.at(t, i) * b2.at(t, j);
      EXPECT_NEAR(c2.at(i, j), acc, 1e-12);
    }
  }
}

TEST(Ops, Conv2dMatchesNaive) {
  Rng rng(33);
  const std::size_t h = 5, w = 6, cin = 3, cout = 2, kh = 3, kw = 3;
  const int stride = 1, pad = 1;
  const Tensor x = randn(rng, {h, w, cin});
  const Tensor wt = randn(rng, {kh, kw, cin, cout});
  const Tensor bias = randn(rng, {cout});
  const Var y =
      conv2d(make_constant(x), make_constant(wt), make_constant(bias), stride,
             pad);
  ASSERT_EQ(y->value.shape(), (std::vector<std::size_t>{h, w, cout}));
  for (std::size_t oy = 0; oy < h; ++oy) {
    for (std::size_t ox = 0; ox < w; ++ox) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        double acc = bias[oc];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long iy = static_cast<long>(oy) + static_cast<long>(ky) - pad;
            const long ix = static_cast<long>(ox) + static_cast<long>(kx) - pad;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) ||
                ix >= static_cast<long>(w)) {
              continue;
            }
            for (std::size_t ic = 0; ic < cin; ++ic) {
              acc += x.at(iy, ix, ic) * wt[((ky * kw + kx) * cin + ic) * cout + oc];
            }
          }
        }
        EXPECT_NEAR(y->value.at(oy, ox, oc), acc, 1e-12);
      }
    }
  }
}

TEST(Ops, ConvTransposeMatchesScatterOracle) {
  Rng rng(34);
  const std::size_t h = 3, w = 4, cin = 2, cout = 3, k = 2;
  const int stride = 2;
  const Tensor x = randn(rng, {h, w, cin});
  const Tensor wt = randn(rng, {k, k, cin, cout});
  const Tensor bias = randn(rng, {cout});
  const Var y = conv_transpose2d(make_constant(x), make_constant(wt),
                                 make_constant(bias), stride);
  ASSERT_EQ(y->value.shape(), (std::vector<std::size_t>{h * 2, w * 2, cout}));
  Tensor oracle = Tensor::zeros({h * 2, w * 2, cout});
  for (std::size_t i = 0; i < oracle.size(); ++i) oracle[i] = bias[i % cout];
  for (std::size_t iy = 0; iy < h; ++iy) {
    for (std::size_t ix = 0; ix < w; ++ix) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          for (std::size_t oc = 0; oc < cout; ++oc) {
            double acc = 0;
            for (std::size_t ic = 0; ic < cin; ++ic) {
              acc += x.at(iy, ix, ic) * wt[((ky * k + kx) * cin + ic) * cout + oc];
            }
            oracle.at(iy * stride + ky, ix * stride + kx, oc) += acc;
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_NEAR(y->value[i], oracle[i], 1e-12);
  }
}

TEST(Ops, MaxPoolValuesAndTieGradient) {
  const Tensor x = Tensor::from_values(
      {2, 4, 1}, {1, 5, 2, 2, 3, 0, 2, 2});  // windows: {1,5,3,0}, {2,2,2,2}
  const Var xv = make_leaf(x, true);
  const Var y = maxpool2d(xv);
  ASSERT_EQ(y->value.shape(), (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_DOUBLE_EQ(y->value[0], 5.0);
  EXPECT_DOUBLE_EQ(y->value[1], 2.0);
  backward(sum_all(y));
  // tie in the second window: all grad lands on the first max (row-major)
  const std::vector<double> want = {0, 1, 1, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_DOUBLE_EQ(xv->grad()[i], want[i]) << "element " << i;
  }
  EXPECT_THROW(maxpool2d(make_constant(Tensor::zeros({3, 4, 1}))),
               std::invalid_argument);
}

TEST(Ops, SoftmaxAndLogsumexp) {
  Rng rng(35);
  const Tensor x = randn(rng, {3, 5});
  const Var sm = softmax_rows(make_constant(x));
  for (std::size_t i = 0; i < 3; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 5; ++j) sum += sm->value.at(i, j);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  const Var lse = logsumexp_rows(make_constant(x));
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += std::exp(x.at(i, j));
    EXPECT_NEAR(lse->value[i], std::log(s), 1e-12);
  }
}

TEST(Ops, LayerNormMatchesFormula) {
  Rng rng(36);
  const Tensor x = randn(rng, {2, 6});
  const Tensor g = randn(rng, {6});
  const Tensor b = randn(rng, {6});
  const Var y = layer_norm_rows(make_constant(x), make_constant(g),
                                make_constant(b));
  for (std::size_t i = 0; i < 2; ++i) {
    double mean = 0;
    for (std::size_t j = 0; j < 6; ++j) mean += x.at(i, j);
    mean /= 6;
    double var = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    }
    var /= 6;
    for (std::size_t j = 0; j < 6; ++j) {
      const double want =
          g[j] * (x.at(i, j) - mean) / std::sqrt(var + 1e-5) + b[j];
      EXPECT_NEAR(y->value.at(i, j), want, 1e-12);
    }
  }
}

TEST(Ops, L2NormalizeRows) {
  Rng rng(37);
  Tensor x = randn(rng, {3, 4});
  for (std::size_t j = 0; j < 4; ++j) x.at(1, j) = 0.0;  // zero row
  const Var y = l2_normalize_rows(make_constant(x));
  for (const std::size_t i : {0ul, 2ul}) {
    double norm = 0;
    for (std::size_t j = 0; j < 4; ++j) norm += y->value.at(i, j) * y->value.at(i, j);
    EXPECT_NEAR(norm, 1.0, 1e-9);
  }
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y->value.at(1, j), 0.0, 1e-6);
}

TEST(Ops, SmoothL1WorkedValues) {
  const Var p = make_constant(Tensor::from_values({1, 2}, {2.0, 0.5}));
  const Var t = make_constant(Tensor::from_values({1, 2}, {0.0, 0.0}));
  const Var y = smooth_l1(p, t, 1.0);
  ASSERT_EQ(y->value.size(), 2u);
  EXPECT_NEAR(y->value[0], 1.5, 1e-12);    // |d|=2 >= beta: 2 - beta/2
  EXPECT_NEAR(y->value[1], 0.125, 1e-12);  // |d|<beta: d^2/(2 beta)
}

TEST(Ops, BceAndCrossEntropyWorkedValues) {
  const Var zeros = make_constant(Tensor::zeros({4}));
  Tensor targets = Tensor::zeros({4});
  targets[0] = 1.0;
  targets[2] = 1.0;
  EXPECT_NEAR(bce_with_logits_mean(zeros, targets)->value[0], std::log(2.0),
              1e-12);
  const Var big = make_constant(Tensor::from_values({1}, {30.0}));
  Tensor one = Tensor::zeros({1});
  one[0] = 1.0;
  EXPECT_NEAR(bce_with_logits_mean(big, one)->value[0], 0.0, 1e-12);

  const Var uniform = make_constant(Tensor::zeros({2, 3}));
  EXPECT_NEAR(softmax_cross_entropy_mean(uniform, {0, 2})->value[0],
              std::log(3.0), 1e-12);
}

TEST(Ops, CosineValues) {
  const Var a = make_constant(Tensor::from_values({3}, {1.0, 0.0, 0.0}));
  const Var b = make_constant(Tensor::from_values({3}, {0.0, 2.0, 0.0}));
  const Var c = make_constant(Tensor::from_values({3}, {5.0, 0.0, 0.0}));
  EXPECT_NEAR(cosine_similarity(a, b)->value[0], 0.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(a, c)->value[0], 1.0, 1e-12);
  Rng rng(38);
  const Tensor m1 = randn(rng, {3, 4});
  const Tensor m2 = randn(rng, {2, 4});
  const Var cm = cosine_matrix(make_constant(m1), make_constant(m2));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      Tensor r1 = Tensor::zeros({4}), r2 = Tensor::zeros({4});
      for (std::size_t k = 0; k < 4; ++k) {
        r1[k] = m1.at(i, k);
        r2[k] = m2.at(j, k);
      }
      EXPECT_NEAR(cm->value.at(i, j),
                  cosine_similarity(make_constant(r1), make_constant(r2))
                      ->value[0],
                  1e-12);
    }
  }
}

TEST(Ops, AttentionUniformKeysAveragesValues) {
  Rng rng(39);
  const Tensor q = randn(rng, {3, 4});
  Tensor k = Tensor::zeros({5, 4});
  for (std::size_t j = 0; j < 5; ++j) {
    for (std::size_t d = 0; d < 4; ++d) k.at(j, d) = 0.3;  // identical keys
  }
  const Tensor v = randn(rng, {5, 4});
  const Var out = scaled_dot_product_attention(
      make_constant(q), make_constant(k), make_constant(v), 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t d = 0; d < 4; ++d) {
      double mean = 0;
      for (std::size_t j = 0; j < 5; ++j) mean += v.at(j, d);
      mean /= 5;
      EXPECT_NEAR(out->value.at(i, d), mean, 1e-12);
    }
  }
  // additive mask excludes a key entirely
  Tensor mask = Tensor::zeros({3, 5});
  for (std::size_t i = 0; i < 3; ++i) mask.at(i, 4) = -1e9;
  const Var masked = scaled_dot_product_attention(
      make_constant(q), make_constant(k), make_constant(v), 2, &mask);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t d = 0; d < 4; ++d) {
      double mean = 0;
      for (std::size_t j = 0; j < 4; ++j) mean += v.at(j, d);
      mean /= 4;
      EXPECT_NEAR(masked->value.at(i, d), mean, 1e-12);
    }
  }
}

// ---------------------------------------------------------------------------
// gradient checks over the op library

namespace {

struct OpCheck {
  const char* name;
  std::function<Var(const std::vector<Var>&)> fn;
  std::vector<Tensor> inputs;
};

Tensor randsigned(Rng& rng, const std::vector<std::size_t>& shape,
                  double lo, double hi) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(lo, hi);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

Tensor distinct_grid(Rng& rng, const std::vector<std::size_t>& shape) {
  Tensor t = Tensor::zeros(shape);
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<double>(order[i]) * 0.37 - 1.1;
  }
  return t;
}

}  // namespace

TEST(OpGradients, Battery) {
  Rng rng(4242);
  const Tensor w34 = randn(rng, {3, 4});
  const Tensor w35 = randn(rng, {3, 5});
  const Tensor w4 = randn(rng, {4});
  const Tensor w3 = randn(rng, {3});
  const Tensor w562 = randn(rng, {5, 6, 2});
  const Tensor w663 = randn(rng, {6, 6, 3});
  const Tensor w231 = randn(rng, {2, 3, 1});

  std::vector<OpCheck> checks;
  checks.push_back({"add",
                    [&](const std::vector<Var>& in) {
                      return weighted(add(in[0], in[1]), w34);
                    },
                    {randn(rng, {3, 4}), randn(rng, {3, 4})}});
  checks.push_back({"sub",
                    [&](const std::vector<Var>& in) {
                      return weighted(sub(in[0], in[1]), w34);
                    },
                    {randn(rng, {3, 4}), randn(rng, {3, 4})}});
  checks.push_back({"mul",
                    [&](const std::vector<Var>& in) {
                      return weighted(mul(in[0], in[1]), w34);
                    },
                    {randn(rng, {3, 4}), randn(rng, {3, 4})}});
  checks.push_back({"scale_add_scalar",
                    [&](const std::vector<Var>& in) {
                      return weighted(add_scalar(scale(in[0], -2.3), 0.7), w34);
                    },
                    {randn(rng, {3, 4})}});
  checks.push_back({"add_row_bias",
                    [&](const std::vector<Var>& in) {
                      return weighted(add_row_bias(in[0], in[1]), w34);
                    },
                    {randn(rng, {3, 4}), randn(rng, {4})}});
  checks.push_back({"add_tensor_const",
                    [&](const std::vector<Var>& in) {
                      return weighted(add_tensor_const(in[0], w34), w34);
                    },
                    {randn(rng, {3, 4})}});
  checks.push_back({"reshape_transpose",
                    [&](const std::vector<Var>& in) {
                      return weighted(transpose(reshape(in[0], {4, 3})), w34);
                    },
                    {randn(rng, {12})}});
  checks.push_back({"concat_rows",
                    [&](const std::vector<Var>& in) {
                      return weighted(concat_rows({in[0], in[1]}), w35);
                    },
                    {randn(rng, {1, 5}), randn(rng, {2, 5})}});
  checks.push_back({"concat_cols",
                    [&](const std::vector<Var>& in) {
                      return weighted(concat_cols({in[0], in[1]}), w34);
                    },
                    {randn(rng, {3, 1}), randn(rng, {3, 3})}});
  checks.push_back({"slice_rows",
                    [&](const std::vector<Var>& in) {
                      return weighted(slice_rows(in[0], 1, 4), w34);
                    },
                    {randn(rng, {5, 4})}});
  checks.push_back({"slice_cols",
                    [&](const std::vector<Var>& in) {
                      return weighted(slice_cols(in[0], 2, 6), w34);
                    },
                    {randn(rng, {3, 7})}});
  checks.push_back({"gather_rows_repeated",
                    [&](const std::vector<Var>& in) {
                      return weighted(gather_rows(in[0], {0, 2, 2}), w34);
                    },
                    {randn(rng, {4, 4})}});
  checks.push_back({"sum_mean_all",
                    [&](const std::vector<Var>& in) {
                      return add(sum_all(in[0]), mean_all(in[0]));
                    },
                    {randn(rng, {3, 4})}});
  checks.push_back({"mean_rows",
                    [&](const std::vector<Var>& in) {
                      return weighted(mean_rows(in[0]),
                                      Tensor::from_values({1, 4}, {1, -2, 3, 0.5}));
                    },
                    {randn(rng, {5, 4})}});
  checks.push_back({"masked_mean_rows",
                    [&](const std::vector<Var>& in) {
                      return weighted(
                          masked_mean_rows(in[0], {true, false, true, false, true}),
                          Tensor::from_values({1, 4}, {1, -2, 3, 0.5}));
                    },
                    {randn(rng, {5, 4})}});
  checks.push_back({"mean_cols",
                    [&](const std::vector<Var>& in) {
                      return weighted(mean_cols(in[0]), w3);
                    },
                    {randn(rng, {3, 5})}});
  checks.push_back({"diag",
                    [&](const std::vector<Var>& in) {
                      return weighted(diag(in[0]), w4);
                    },
                    {randn(rng, {4, 4})}});
  checks.push_back({"dot",
                    [&](const std::vector<Var>& in) {
                      return dot(in[0], in[1]);
                    },
                    {randn(rng, {5}), randn(rng, {5})}});
  checks.push_back({"matmul",
                    [&](const std::vector<Var>& in) {
                      return weighted(matmul(in[0], in[1]), w34);
                    },
                    {randn(rng, {3, 6}), randn(rng, {6, 4})}});
  checks.push_back({"linear",
                    [&](const std::vector<Var>& in) {
                      return weighted(linear(in[0], in[1], in[2]), w34);
                    },
                    {randn(rng, {3, 5}), randn(rng, {5, 4}), randn(rng, {4})}});
  checks.push_back({"relu",
                    [&](const std::vector<Var>& in) {
                      return weighted(relu(in[0]), w34);
                    },
                    {randsigned(rng, {3, 4}, 0.2, 1.0)}});
  checks.push_back({"gelu",
                    [&](const std::vector<Var>& in) {
                      return weighted(gelu(in[0]), w34);
                    },
                    {randn(rng, {3, 4})}});
  checks.push_back({"sigmoid",
                    [&](const std::vector<Var>& in) {
                      return weighted(sigmoid(in[0]), w34);
                    },
                    {randn(rng, {3, 4})}});
  checks.push_back({"softmax_rows",
                    [&](const std::vector<Var>& in) {
                      return weighted(softmax_rows(in[0]), w34);
                    },
                    {randn(rng, {3, 4})}});
  checks.push_back({"logsumexp_rows",
                    [&](const std::vector<Var>& in) {
                      return weighted(logsumexp_rows(in[0]), w3);
                    },
                    {randn(rng, {3, 5})}});
  checks.push_back({"layer_norm_rows",
                    [&](const std::vector<Var>& in) {
                      return weighted(layer_norm_rows(in[0], in[1], in[2]), w34);
                    },
                    {randn(rng, {3, 4}), randn(rng, {4}), randn(rng, {4})}});
  checks.push_back({"l2_normalize_rows",
                    [&](const std::vector<Var>& in) {
                      return weighted(l2_normalize_rows(in[0]), w34);
                    },
                    {randn(rng, {3, 4})}});
  checks.push_back({"conv2d_s1p1",
                    [&](const std::vector<Var>& in) {
                      return weighted(conv2d(in[0], in[1], in[2], 1, 1), w562);
                    },
                    {randn(rng, {5, 6, 3}), randn(rng, {3, 3, 3, 2}),
                     randn(rng, {2})}});
  checks.push_back({"conv2d_s2p0",
                    [&](const std::vector<Var>& in) {
                      return weighted(conv2d(in[0], in[1], in[2], 2, 0), w231);
                    },
                    {randn(rng, {5, 6, 2}), randn(rng, {2, 2, 2, 1}),
                     randn(rng, {1})}});
  checks.push_back({"conv_transpose2d",
                    [&](const std::vector<Var>& in) {
                      return weighted(conv_transpose2d(in[0], in[1], in[2], 2),
                                      w663);
                    },
                    {randn(rng, {3, 3, 2}), randn(rng, {2, 2, 2, 3}),
                     randn(rng, {3})}});
  checks.push_back({"maxpool2d",
                    [&](const std::vector<Var>& in) {
                      return weighted(maxpool2d(in[0]), w231);
                    },
                    {distinct_grid(rng, {4, 6, 1})}});
  checks.push_back({"cosine_similarity",
                    [&](const std::vector<Var>& in) {
                      return cosine_similarity(in[0], in[1]);
                    },
                    {randn(rng, {5}), randn(rng, {5})}});
  checks.push_back({"cosine_matrix",
                    [&](const std::vector<Var>& in) {
                      return weighted(cosine_matrix(in[0], in[1]), w34);
                    },
                    {randn(rng, {3, 6}), randn(rng, {4, 6})}});
  checks.push_back({"smooth_l1",
                    [&](const std::vector<Var>& in) {
                      return weighted(smooth_l1(in[0], in[1], 1.0), w34);
                    },
                    {randn(rng, {3, 4}), randn(rng, {3, 4})}});
  checks.push_back({"bce_with_logits_mean",
                    [&](const std::vector<Var>& in) {
                      Tensor targets = Tensor::zeros({6});
                      for (std::size_t i = 0; i < 6; ++i) {
                        targets[i] = i % 2 == 0 ? 1.0 : 0.0;
                      }
                      return bce_with_logits_mean(in[0], targets);
                    },
                    {randn(rng, {6})}});
  checks.push_back({"softmax_cross_entropy_mean",
                    [&](const std::vector<Var>& in) {
                      return softmax_cross_entropy_mean(in[0], {2, 0, 1});
                    },
                    {randn(rng, {3, 4})}});
  checks.push_back({"attention",
                    [&](const std::vector<Var>& in) {
                      return weighted(
                          scaled_dot_product_attention(in[0], in[1], in[2], 2),
                          w34);
                    },
                    {randn(rng, {3, 4}), randn(rng, {5, 4}),
                     randn(rng, {5, 4})}});

  for (const OpCheck& c : checks) {
    const GradCheckReport r = grad_check(c.fn, c.inputs);
    EXPECT_TRUE(r.pass) << c.name << " max relative error "
                        << r.max_relative_error;
  }
}

TEST(GradCheck, FlagsMisscaledBackward) {
  const auto bad = [](const std::vector<Var>& in) {
    const Var x = in[0];
    Tensor value = Tensor::zeros({1});
    for (std::size_t i = 0; i < x->value.size(); ++i) value[0] += x->value[i];
    return custom_op(value, {x}, [x](Node& self) {
      Tensor& gx = x->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += 1.1 * self.grad()[0];  // deliberately off by 10%
      }
    });
  };
  Rng rng(55);
  const GradCheckReport r = grad_check(bad, {randn(rng, {4})});
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.max_relative_error, 0.05);
  EXPECT_LT(r.max_relative_error, 0.15);
}

TEST(GradCheck, ErrorPaths) {
  Rng rng(56);
  const auto ok = [](const std::vector<Var>& in) { return sum_all(in[0]); };
  EXPECT_THROW(grad_check(ok, {randn(rng, {2})}, 1e-8), std::invalid_argument);
  EXPECT_THROW(grad_check(ok, {randn(rng, {2})}, 1e-2), std::invalid_argument);
  EXPECT_THROW(grad_check(ok, {}), std::invalid_argument);
  const auto nonscalar = [](const std::vector<Var>& in) { return in[0]; };
  EXPECT_THROW(grad_check(nonscalar, {randn(rng, {3})}),
               std::invalid_argument);
  const auto nan_out = [](const std::vector<Var>& in) {
    return scale(sum_all(in[0]), std::numeric_limits<double>::quiet_NaN());
  };
  EXPECT_THROW(grad_check(nan_out, {randn(rng, {2})}), std::runtime_error);
}

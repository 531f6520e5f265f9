#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "test_util.hpp"
#include "vldet/config.hpp"
#include "vldet/graph.hpp"
#include "vldet/model.hpp"
#include "vldet/objective.hpp"
#include "vldet/ops.hpp"
#include "vldet/params.hpp"
#include "vldet/rng.hpp"
#include "vldet/roi.hpp"
#include "vldet/rpn.hpp"
#include "vldet/synthdata.hpp"
#include "vldet/tensor.hpp"
#include "vldet/train.hpp"

namespace {

using namespace vldet;
using testutil::randn;

void expect_bits_equal(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  ASSERT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(double)));
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         0 == std::memcmp(a.data(), b.data(), a.size() * sizeof(double));
}

TEST(Optimizer, MatchesScalarReference) {
  Config cfg;
  cfg.lr = 1e-3;
  cfg.lr_text = 1e-4;
  cfg.weight_decay = 0.01;
  cfg.clip_norm = 0.5;  // low enough that clipping actually fires

  Registry reg;
  Rng init(1);
  const Var text = reg.add("encoders/text/emb", randn(init, {2}));
  const Var trunk = reg.add("trunk/w", randn(init, {3}));
  const Var dead = reg.add("dead/w", randn(init, {2}));
  const Tensor dead_before = dead->value;

  // shadow state
  std::vector<Tensor> theta = {text->value, trunk->value};
  std::vector<Tensor> m = {Tensor::zeros({2}), Tensor::zeros({3})};
  std::vector<Tensor> v = {Tensor::zeros({2}), Tensor::zeros({3})};
  const double lrs[2] = {cfg.lr_text, cfg.lr};

  AdamW opt(reg, cfg);
  for (int step = 1; step <= 100; ++step) {
    reg.zero_grads();
    Tensor& g_text = text->ensure_grad();
    Tensor& g_trunk = trunk->ensure_grad();
    std::vector<Tensor*> grads = {&g_text, &g_trunk};
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t e = 0; e < grads[p]->size(); ++e) {
        (*grads[p])[e] = std::sin(0.7 * step + 1.3 * (p + 1) * (e + 1));
      }
    }
    opt.step(reg);

    double sq = 0.0;
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t e = 0; e < grads[p]->size(); ++e) {
        sq += (*grads[p])[e] * (*grads[p])[e];
      }
    }
    const double norm = std::sqrt(sq);
    const double gscale = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
    const double bc1 = 1.0 - std::pow(AdamW::kBeta1, step);
    const double bc2 = 1.0 - std::pow(AdamW::kBeta2, step);
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t e = 0; e < theta[p].size(); ++e) {
        const double g = (*grads[p])[e] * gscale;
        m[p][e] = AdamW::kBeta1 * m[p][e] + (1.0 - AdamW::kBeta1) * g;
        v[p][e] = AdamW::kBeta2 * v[p][e] + (1.0 - AdamW::kBeta2) * g * g;
        const double mhat = m[p][e] / bc1;
        const double vhat = v[p][e] / bc2;
        theta[p][e] -=
            lrs[p] * (mhat / (std::sqrt(vhat) + AdamW::kEps) +
                      cfg.weight_decay * theta[p][e]);
      }
    }
    for (std::size_t e = 0; e < 2; ++e) {
      ASSERT_DOUBLE_EQ(text->value[e], theta[0][e]) << "step " << step;
    }
    for (std::size_t e = 0; e < 3; ++e) {
      ASSERT_DOUBLE_EQ(trunk->value[e], theta[1][e]) << "step " << step;
    }
  }
  EXPECT_EQ(opt.step_count(), 100u);
  expect_bits_equal(dead->value, dead_before);  // no grad, never touched
}

TEST(Optimizer, ZeroLearningRatesAreNoOp) {
  Config cfg;
  cfg.lr = 0.0;
  cfg.lr_text = 0.0;
  cfg.weight_decay = 0.5;

  Registry reg;
  Rng init(2);
  const Var a = reg.add("encoders/text/w", randn(init, {4}));
  const Var b = reg.add("other/w", randn(init, {4}));
  const Tensor a0 = a->value;
  const Tensor b0 = b->value;

  AdamW opt(reg, cfg);
  for (int step = 0; step < 5; ++step) {
    reg.zero_grads();
    a->ensure_grad().fill(0.3);
    b->ensure_grad().fill(-0.7);
    opt.step(reg);
  }
  expect_bits_equal(a->value, a0);
  expect_bits_equal(b->value, b0);
}

TEST(Optimizer, TextPrefixSelectsLrText) {
  Config cfg;
  cfg.lr = 1e-3;
  cfg.lr_text = 1e-4;
  cfg.weight_decay = 0.0;
  cfg.clip_norm = 1e9;

  Registry reg;
  const Var a = reg.add("encoders/text/w", Tensor::full({1}, 0.5));
  const Var b = reg.add("encoders/image/w", Tensor::full({1}, 0.5));
  AdamW opt(reg, cfg);
  reg.zero_grads();
  a->ensure_grad().fill(0.25);
  b->ensure_grad().fill(0.25);
  opt.step(reg);

  const double da = 0.5 - a->value[0];
  const double db = 0.5 - b->value[0];
  ASSERT_NE(db, 0.0);
  EXPECT_NEAR(da / db, cfg.lr_text / cfg.lr, 1e-12);
}

TEST(Optimizer, RegistryGrowthIsRejected) {
  Config cfg;
  Registry reg;
  reg.add("a/w", Tensor::zeros({2}));
  AdamW opt(reg, cfg);
  reg.add("b/w", Tensor::zeros({2}));
  EXPECT_THROW(opt.step(reg), std::invalid_argument);
}

TEST(Freeze, PrefixBoundaries) {
  Registry reg;
  reg.add("encoders/text/a", Tensor::zeros({1}));
  reg.add("encoders/textual/b", Tensor::zeros({1}));
  reg.add("encoders/image/c", Tensor::zeros({1}));
  reg.add("rpn/objectness_head/w", Tensor::zeros({1}));
  reg.add("rpn/trunk/w", Tensor::zeros({1}));
  reg.add("roi/region_proj/w", Tensor::zeros({1}));
  reg.add("roi/region_projection_extra", Tensor::zeros({1}));

  FreezePolicy policy;
  policy.freeze_el = true;
  policy.freeze_v2l1 = true;
  apply_freeze(reg, policy);

  EXPECT_FALSE(reg.find("encoders/text/a")->trainable);
  EXPECT_TRUE(reg.find("encoders/textual/b")->trainable);
  EXPECT_TRUE(reg.find("encoders/image/c")->trainable);
  EXPECT_FALSE(reg.find("rpn/objectness_head/w")->trainable);
  EXPECT_TRUE(reg.find("rpn/trunk/w")->trainable);
  EXPECT_TRUE(reg.find("roi/region_proj/w")->trainable);

  FreezePolicy rest;
  rest.freeze_ev = true;
  rest.freeze_v2l2 = true;
  apply_freeze(reg, rest);
  EXPECT_FALSE(reg.find("encoders/image/c")->trainable);
  EXPECT_FALSE(reg.find("roi/region_proj/w")->trainable);
  EXPECT_TRUE(reg.find("roi/region_projection_extra")->trainable);
}

double icl_oracle(const Tensor& v, const Tensor& c, double tau) {
  const std::size_t b = v.dim(0);
  const std::size_t d = v.dim(1);
  auto cosine = [&](std::size_t i, std::size_t j) {
    double dot = 0.0, nv = 0.0, nc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      dot += v.at(i, k) * c.at(j, k);
      nv += v.at(i, k) * v.at(i, k);
      nc += c.at(j, k) * c.at(j, k);
    }
    return dot / (std::sqrt(nv) * std::sqrt(nc));
  };
  std::vector<std::vector<double>> s(b, std::vector<double>(b));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) s[i][j] = cosine(i, j) / tau;
  }
  auto lse = [](const std::vector<double>& xs) {
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - mx);
    return mx + std::log(acc);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> row = s[i];
    std::vector<double> col(b);
    for (std::size_t j = 0; j < b; ++j) col[j] = s[j][i];
    total += lse(row) - s[i][i] + lse(col) - s[i][i];
  }
  return total / (2.0 * static_cast<double>(b));
}

TEST(Losses, IclWorkedValue) {
  const Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  const Var loss =
      loss_icl(make_constant(eye), make_constant(eye), 2, 1.0);
  EXPECT_NEAR(loss->value[0], 0.313262, 1e-6);
  EXPECT_NEAR(loss->value[0], std::log(std::exp(1.0) + 1.0) - 1.0, 1e-12);
}

TEST(Losses, IclDegeneratesToZeroForSingletonGroups) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.uniform_int(8);
    const Tensor v = randn(rng, {b, 6});
    const Tensor c = randn(rng, {b, 6});
    const Var loss = loss_icl(make_constant(v), make_constant(c), 1, 0.07);
    ASSERT_EQ(loss->value[0], 0.0) << "trial " << trial;
  }
}

TEST(Losses, IclFullBatchMatchesInfoNceOracle) {
  Rng rng(4);
  for (const std::size_t b : {2u, 4u, 8u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor v = randn(rng, {b, 6});
      const Tensor c = randn(rng, {b, 6});
      const Var loss = loss_icl(make_constant(v), make_constant(c), b, 0.07);
      ASSERT_NEAR(loss->value[0], icl_oracle(v, c, 0.07), 1e-9)
          << "b=" << b << " trial " << trial;
    }
  }
}

TEST(Losses, IclGroupsAverageIndependently) {
  Rng rng(5);
  const Tensor v = randn(rng, {4, 6});
  const Tensor c = randn(rng, {4, 6});
  const Var grouped = loss_icl(make_constant(v), make_constant(c), 2, 0.07);

  auto rows = [](const Tensor& t, std::size_t r0) {
    Tensor out({2, 6});
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t k = 0; k < 6; ++k) out.at(r, k) = t.at(r0 + r, k);
    }
    return out;
  };
  const Var lo = loss_icl(make_constant(rows(v, 0)), make_constant(rows(c, 0)),
                          2, 0.07);
  const Var hi = loss_icl(make_constant(rows(v, 2)), make_constant(rows(c, 2)),
                          2, 0.07);
  EXPECT_NEAR(grouped->value[0], 0.5 * (lo->value[0] + hi->value[0]), 1e-12);
}

TEST(Losses, IclValidatesArguments) {
  Rng rng(6);
  const Tensor v = randn(rng, {4, 6});
  const Tensor c = randn(rng, {4, 6});
  EXPECT_THROW(loss_icl(make_constant(v), make_constant(c), 3, 0.07),
               std::invalid_argument);
  EXPECT_THROW(loss_icl(make_constant(v), make_constant(c), 0, 0.07),
               std::invalid_argument);
  EXPECT_THROW(loss_icl(make_constant(v), make_constant(c), 2, 0.0),
               std::invalid_argument);
  const Tensor other = randn(rng, {3, 6});
  EXPECT_THROW(loss_icl(make_constant(v), make_constant(other), 1, 0.07),
               std::invalid_argument);
}

TEST(Losses, RalUniformOverOrthogonalRows) {
  Tensor text = Tensor::zeros({3, 4});
  text.at(0, 0) = 1.0;
  text.at(1, 1) = 1.0;
  text.at(2, 2) = 1.0;
  Tensor emb = Tensor::zeros({1, 4});
  emb.at(0, 3) = 1.0;  // orthogonal to every class row
  const Var loss =
      loss_ral(make_constant(emb), make_constant(text), {1}, 0.07);
  EXPECT_NEAR(loss->value[0], std::log(3.0), 1e-12);
}

TEST(Losses, AalBalancedScoreGivesLogTwo) {
  Tensor text = Tensor::zeros({3, 4});
  text.at(0, 0) = 1.0;
  text.at(1, 1) = 1.0;
  text.at(2, 2) = 1.0;
  Tensor emb = Tensor::zeros({2, 4});
  emb.at(0, 3) = 1.0;
  emb.at(1, 3) = 1.0;
  MatchResult match;
  match.labels = {1, 0};
  match.matched_gt = {0, 0};
  match.sampled_pos = {0};
  match.sampled_neg = {1};
  const Var loss =
      loss_aal(make_constant(emb), make_constant(text), match, 0.07);
  EXPECT_NEAR(loss->value[0], std::log(2.0), 1e-12);
}

TEST(Losses, TotalCombinesComponents) {
  Config cfg;  // unit weights
  auto scalar = [](double x) {
    return make_constant(Tensor::full({1}, x));
  };
  const LossBreakdown out =
      total_loss(scalar(0.3), scalar(0.7), scalar(1.1), scalar(0.2),
                 scalar(0.4), cfg);
  EXPECT_NEAR(out.total, 2.7, 1e-12);
  EXPECT_EQ(out.icl, 0.3);
  EXPECT_EQ(out.roi_box, 0.4);
  ASSERT_TRUE(out.total_var != nullptr);
  EXPECT_NEAR(out.total_var->value[0], 2.7, 1e-12);

  Config wless = cfg;
  wless.w_icl = 0.0;
  const LossBreakdown a =
      total_loss(scalar(0.3), scalar(0.7), scalar(1.1), scalar(0.2),
                 scalar(0.4), wless);
  const LossBreakdown b =
      total_loss(scalar(99.0), scalar(0.7), scalar(1.1), scalar(0.2),
                 scalar(0.4), wless);
  EXPECT_EQ(a.total, b.total);  // zero-weighted component cannot matter
  EXPECT_EQ(a.weights[0], 0.0);

  EXPECT_THROW(total_loss(make_constant(Tensor::zeros({2})), scalar(0),
                          scalar(0), scalar(0), scalar(0), cfg),
               std::invalid_argument);
  try {
    total_loss(scalar(0.0), scalar(std::numeric_limits<double>::infinity()),
               scalar(0.0), scalar(0.0), scalar(0.0), cfg);
    FAIL() << "expected non-finite rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("aal"), std::string::npos);
  }
}

Config train_cfg() {
  Config cfg;
  cfg.c_v_trunk = 8;
  cfg.c_pyr = 8;
  cfg.c_l = 8;
  cfg.heads = 2;
  cfg.encoder_depth = 1;
  cfg.vocab_size = 512;
  cfg.max_caption_tokens = 16;
  cfg.roi_hidden = 16;
  cfg.n_classes = 0;
  cfg.batch_size = 2;
  cfg.minibatch_m = 2;
  cfg.max_steps = 40;
  cfg.seed = 11;
  return cfg;
}

std::string make_tiny_dataset(const testutil::TempDir& dir) {
  const Config canvas;  // 64x64 default canvas
  const Vocabulary v = build_vocabulary(2, 2, 1, 9);
  return generate_dataset(v, 4, 2, 9, 321, canvas, dir.str());
}

TEST(Checkpoint, RoundTripsBitExactly) {
  const testutil::TempDir dir("ckpt");
  const Config cfg = train_cfg();
  const VLDetModel model = build_model(cfg, cfg.seed);
  Rng rng(17);
  rng.normal();
  const std::string rng_state = rng.serialize();

  const std::string path = dir.file("model.ckpt");
  save_checkpoint(path, model, 123, rng_state);

  const CheckpointData data = read_checkpoint(path);
  EXPECT_EQ(data.step, 123u);
  EXPECT_EQ(data.rng_state, rng_state);
  EXPECT_EQ(config_to_text(data.cfg), config_to_text(cfg));
  ASSERT_EQ(data.params.size(), model.reg.size());
  for (std::size_t i = 0; i < data.params.size(); ++i) {
    EXPECT_EQ(data.params[i].first, model.reg.all()[i]->name);
    expect_bits_equal(data.params[i].second,
                      model.reg.all()[i]->node->value);
  }

  const VLDetModel restored = restore_model(data);
  ASSERT_EQ(restored.reg.size(), model.reg.size());
  for (std::size_t i = 0; i < model.reg.size(); ++i) {
    expect_bits_equal(restored.reg.all()[i]->node->value,
                      model.reg.all()[i]->node->value);
  }
  const std::string again = dir.file("again.ckpt");
  save_checkpoint(again, restored, 123, rng_state);
  EXPECT_EQ(testutil::read_file(path), testutil::read_file(again));

  // resumed rng continues the original stream
  Rng resumed = Rng::deserialize(data.rng_state);
  Rng straight(17);
  straight.normal();
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(resumed.next_u64(), straight.next_u64());
  }
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const testutil::TempDir dir("ckpt_bad");
  const Config cfg = train_cfg();
  const VLDetModel model = build_model(cfg, cfg.seed);
  const std::string path = dir.file("model.ckpt");
  save_checkpoint(path, model, 5, Rng(1).serialize());
  const std::string blob = testutil::read_file(path);

  {
    std::string bad = blob;
    bad[0] = 'X';
    std::ofstream(dir.file("magic.ckpt"), std::ios::binary) << bad;
    EXPECT_THROW(read_checkpoint(dir.file("magic.ckpt")), std::runtime_error);
  }
  {
    const std::string bad = blob.substr(0, blob.size() - 10);
    std::ofstream(dir.file("short.ckpt"), std::ios::binary) << bad;
    EXPECT_THROW(read_checkpoint(dir.file("short.ckpt")), std::runtime_error);
  }
  {
    std::string bad = blob + "trailing";
    std::ofstream(dir.file("long.ckpt"), std::ios::binary) << bad;
    EXPECT_THROW(read_checkpoint(dir.file("long.ckpt")), std::runtime_error);
  }
  EXPECT_THROW(read_checkpoint(dir.file("absent.ckpt")), std::runtime_error);
}

TEST(Checkpoint, RestoreListsEveryOffender) {
  const testutil::TempDir dir("ckpt_mismatch");
  const Config cfg = train_cfg();
  const VLDetModel model = build_model(cfg, cfg.seed);
  const std::string path = dir.file("model.ckpt");
  save_checkpoint(path, model, 1, Rng(1).serialize());
  const CheckpointData good = read_checkpoint(path);

  {
    CheckpointData data = good;
    data.params.erase(data.params.begin());
    try {
      restore_model(data);
      FAIL() << "expected missing-parameter rejection";
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find("missing from file"),
                std::string::npos);
      EXPECT_NE(std::string(e.what()).find(good.params[0].first),
                std::string::npos);
    }
  }
  {
    CheckpointData data = good;
    data.params.emplace_back("bogus/param", Tensor::zeros({2}));
    try {
      restore_model(data);
      FAIL() << "expected unknown-parameter rejection";
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find("not in model"), std::string::npos);
      EXPECT_NE(std::string(e.what()).find("bogus/param"), std::string::npos);
    }
  }
  {
    CheckpointData data = good;
    data.params[0].second = Tensor::zeros({1, 1});
    try {
      restore_model(data);
      FAIL() << "expected shape rejection";
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find("shape mismatch"),
                std::string::npos);
    }
  }
}

TEST(Fit, TrainsLogsAndCheckpoints) {
  const testutil::TempDir dir("fit");
  make_tiny_dataset(dir);
  const Dataset ds = load_dataset(dir.str());

  const Config cfg = train_cfg();
  VLDetModel model = build_model(cfg, cfg.seed);
  const std::string ckpt = dir.file("out.ckpt");
  const std::string log = dir.file("out.log");
  const FitResult res = fit(model, ds, FreezePolicy{}, ckpt, log);

  EXPECT_EQ(res.steps, 40u);
  EXPECT_LT(res.last_total, res.first_total);

  std::ifstream in(log);
  ASSERT_TRUE(in.good());
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  const auto header = nlohmann::json::parse(line);
  ASSERT_TRUE(header.contains("frozen"));
  EXPECT_TRUE(header.at("frozen").empty());

  std::size_t steps_logged = 0;
  double first_total = -1.0, last_total = -1.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    for (const char* key :
         {"step", "epoch", "icl", "aal", "ral", "rpn_box", "roi_box",
          "total"}) {
      ASSERT_TRUE(j.contains(key)) << key;
    }
    EXPECT_EQ(j.at("step").get<std::size_t>(), steps_logged);
    if (steps_logged == 0) first_total = j.at("total").get<double>();
    last_total = j.at("total").get<double>();
    ++steps_logged;
  }
  EXPECT_EQ(steps_logged, 40u);
  EXPECT_DOUBLE_EQ(first_total, res.first_total);
  EXPECT_DOUBLE_EQ(last_total, res.last_total);

  const CheckpointData data = read_checkpoint(ckpt);
  EXPECT_EQ(data.step, 40u);
  ASSERT_EQ(data.params.size(), model.reg.size());
  for (std::size_t i = 0; i < data.params.size(); ++i) {
    expect_bits_equal(data.params[i].second,
                      model.reg.all()[i]->node->value);
  }
}

TEST(Fit, IsDeterministic) {
  const testutil::TempDir dir("fit_det");
  make_tiny_dataset(dir);
  const Dataset ds = load_dataset(dir.str());

  Config cfg = train_cfg();
  cfg.max_steps = 12;

  VLDetModel a = build_model(cfg, cfg.seed);
  fit(a, ds, FreezePolicy{}, dir.file("a.ckpt"), dir.file("a.log"));
  VLDetModel b = build_model(cfg, cfg.seed);
  fit(b, ds, FreezePolicy{}, dir.file("b.ckpt"), dir.file("b.log"));

  EXPECT_EQ(testutil::read_file(dir.file("a.log")),
            testutil::read_file(dir.file("b.log")));
  EXPECT_EQ(testutil::read_file(dir.file("a.ckpt")),
            testutil::read_file(dir.file("b.ckpt")));
}

TEST(Fit, FreezeHoldsParametersStill) {
  const testutil::TempDir dir("fit_freeze");
  make_tiny_dataset(dir);
  const Dataset ds = load_dataset(dir.str());

  Config cfg = train_cfg();
  cfg.max_steps = 2;
  VLDetModel model = build_model(cfg, cfg.seed);
  std::vector<Tensor> before;
  for (const auto& p : model.reg.all()) before.push_back(p->node->value);

  FreezePolicy freeze;
  freeze.freeze_v2l1 = true;
  freeze.freeze_v2l2 = true;
  fit(model, ds, freeze, dir.file("f.ckpt"), dir.file("f.log"));

  for (std::size_t i = 0; i < model.reg.size(); ++i) {
    const auto& p = *model.reg.all()[i];
    const bool frozen =
        p.name.rfind(kFreezePrefixV2l1, 0) == 0 ||
        p.name.rfind(kFreezePrefixV2l2, 0) == 0;
    if (frozen) {
      expect_bits_equal(p.node->value, before[i]);
    } else {
      EXPECT_FALSE(tensors_equal(p.node->value, before[i]))
          << "expected an update in " << p.name;
    }
  }

  std::ifstream in(dir.file("f.log"));
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  const auto header = nlohmann::json::parse(line);
  const std::vector<std::string> want = {kFreezePrefixV2l1, kFreezePrefixV2l2};
  EXPECT_EQ(header.at("frozen").get<std::vector<std::string>>(), want);
}

TEST(Fit, ValidatesDatasetAndConfig) {
  const testutil::TempDir dir("fit_bad");
  make_tiny_dataset(dir);
  const Dataset ds = load_dataset(dir.str());

  {
    Config cfg = train_cfg();
    cfg.batch_size = 8;  // only 4 training scenes
    cfg.minibatch_m = 8;
    VLDetModel model = build_model(cfg, cfg.seed);
    EXPECT_THROW(
        fit(model, ds, FreezePolicy{}, dir.file("x.ckpt"), dir.file("x.log")),
        std::runtime_error);
  }
  {
    Config cfg = train_cfg();
    cfg.n_classes = 7;  // the dataset trains 3 base classes + background
    VLDetModel model = build_model(cfg, cfg.seed);
    EXPECT_THROW(
        fit(model, ds, FreezePolicy{}, dir.file("y.ckpt"), dir.file("y.log")),
        std::runtime_error);
  }
  {
    Dataset empty = ds;
    empty.train_idx.clear();
    Config cfg = train_cfg();
    VLDetModel model = build_model(cfg, cfg.seed);
    EXPECT_THROW(fit(model, empty, FreezePolicy{}, dir.file("z.ckpt"),
                     dir.file("z.log")),
                 std::runtime_error);
  }
  {
    // a novel class smuggled into a training scene is rejected by name
    Dataset tampered = ds;
    ASSERT_FALSE(tampered.vocab.novel_ids.empty());
    const std::size_t novel = tampered.vocab.novel_ids[0];
    for (std::size_t idx : tampered.train_idx) {
      tampered.scenes[idx].class_ids.assign(
          tampered.scenes[idx].class_ids.size(), novel);
    }
    Config cfg = train_cfg();
    VLDetModel model = build_model(cfg, cfg.seed);
    try {
      fit(model, tampered, FreezePolicy{}, dir.file("w.ckpt"),
          dir.file("w.log"));
      FAIL() << "expected vocabulary rejection";
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find("outside the training vocabulary"),
                std::string::npos);
    }
  }
}

}  // namespace

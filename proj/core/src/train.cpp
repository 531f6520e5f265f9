#include "vldet/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace vldet {

namespace {

bool has_prefix(const std::string& name, const char* prefix) {
  return name.rfind(prefix, 0) == 0;
}

constexpr char kCkptMagic[4] = {'V', 'L', 'C', 'K'};
constexpr unsigned char kCkptVersion = 1;
constexpr std::uint64_t kMaxStringLen = 1u << 20;

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) {
    throw std::runtime_error("checkpoint truncated: " + path);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_str(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in, const std::string& path) {
  const std::uint64_t n = read_u64(in, path);
  if (n > kMaxStringLen) {
    throw std::runtime_error("checkpoint corrupt (string length): " + path);
  }
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) {
    throw std::runtime_error("checkpoint truncated: " + path);
  }
  return s;
}

}  // namespace

void apply_freeze(Registry& reg, const FreezePolicy& policy) {
  for (const auto& p : reg.all()) {
    const bool frozen =
        (policy.freeze_el && has_prefix(p->name, kFreezePrefixEl)) ||
        (policy.freeze_ev && has_prefix(p->name, kFreezePrefixEv)) ||
        (policy.freeze_v2l1 && has_prefix(p->name, kFreezePrefixV2l1)) ||
        (policy.freeze_v2l2 && has_prefix(p->name, kFreezePrefixV2l2));
    if (frozen) p->trainable = false;
  }
}

AdamW::AdamW(const Registry& reg, const Config& cfg)
    : lr_(cfg.lr), lr_text_(cfg.lr_text), wd_(cfg.weight_decay),
      clip_(cfg.clip_norm) {
  m_.reserve(reg.size());
  v_.reserve(reg.size());
  for (const auto& p : reg.all()) {
    m_.push_back(Tensor::zeros(p->node->value.shape()));
    v_.push_back(Tensor::zeros(p->node->value.shape()));
  }
}

void AdamW::step(const Registry& reg) {
  const auto& ps = reg.all();
  if (ps.size() != m_.size()) {
    throw std::invalid_argument("optimizer state does not match registry");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps[i];
    if (!p->trainable || !p->node->has_grad()) continue;
    const Tensor& g = p->node->grad();
    for (std::size_t e = 0; e < g.size(); ++e) sq += g[e] * g[e];
  }
  const double norm = std::sqrt(sq);
  const double gscale = norm > clip_ ? clip_ / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& p = ps[i];
    if (!p->trainable || !p->node->has_grad()) continue;
    const double lr = has_prefix(p->name, kFreezePrefixEl) ? lr_text_ : lr_;
    Tensor& th = p->node->value;
    const Tensor& g0 = p->node->grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t e = 0; e < th.size(); ++e) {
      const double g = g0[e] * gscale;
      m[e] = kBeta1 * m[e] + (1.0 - kBeta1) * g;
      v[e] = kBeta2 * v[e] + (1.0 - kBeta2) * g * g;
      const double mhat = m[e] / bc1;
      const double vhat = v[e] / bc2;
      th[e] -= lr * (mhat / (std::sqrt(vhat) + kEps) + wd_ * th[e]);
    }
  }
}

LossBreakdown train_step(VLDetModel& model, AdamW& opt,
                         const std::vector<BatchExample>& batch,
                         const std::vector<std::string>& prompt_names,
                         Rng& rng) {
  model.reg.zero_grads();
  LossBreakdown lb = forward_train_batch(model, batch, prompt_names, rng);
  backward(lb.total_var);
  opt.step(model.reg);
  return lb;
}

void save_checkpoint(const std::string& path, const VLDetModel& model,
                     std::uint64_t step, const std::string& rng_state) {
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
  }
  f.write(kCkptMagic, 4);
  f.put(static_cast<char>(kCkptVersion));
  write_u64(f, step);
  write_str(f, config_to_text(model.cfg));
  write_str(f, rng_state);
  write_u64(f, model.reg.size());
  for (const auto& p : model.reg.all()) {
    write_str(f, p->name);
    write_vldt(f, p->node->value);
  }
  f.close();
  if (!f) {
    throw std::runtime_error("save_checkpoint: write failed for '" + path +
                             "'");
  }
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw std::runtime_error("read_checkpoint: cannot open '" + path + "'");
  }
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw std::runtime_error("read_checkpoint: '" + path +
                             "' is not a checkpoint container");
  }
  const int version = f.get();
  if (version != kCkptVersion) {
    throw std::runtime_error("read_checkpoint: unsupported version " +
                             std::to_string(version) + " in '" + path + "'");
  }
  CheckpointData data;
  data.step = read_u64(f, path);
  data.cfg = parse_config_text(read_str(f, path));
  data.rng_state = read_str(f, path);
  const std::uint64_t count = read_u64(f, path);
  data.params.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_str(f, path);
    Tensor t;
    try {
      t = read_vldt(f);
    } catch (const std::exception& e) {
      throw std::runtime_error("read_checkpoint: '" + path + "' entry '" +
                               name + "': " + e.what());
    }
    data.params.emplace_back(std::move(name), std::move(t));
  }
  if (f.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("read_checkpoint: trailing bytes in '" + path +
                             "'");
  }
  return data;
}

VLDetModel restore_model(const CheckpointData& data) {
  VLDetModel m = build_model(data.cfg, data.cfg.seed);
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : data.params) by_name[name] = &t;
  std::string offenders;
  for (const auto& p : m.reg.all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      offenders += "\n  missing from file: " + p->name;
      continue;
    }
    if (!it->second->same_shape(p->node->value)) {
      offenders += "\n  shape mismatch: " + p->name + " file " +
                   it->second->shape_str() + " model " +
                   p->node->value.shape_str();
    }
    by_name.erase(it);
  }
  for (const auto& [name, t] : data.params) {
    if (by_name.count(name) != 0) {
      offenders += "\n  not in model: " + name;
    }
  }
  if (!offenders.empty()) {
    throw std::runtime_error("restore_model: checkpoint does not match model:" +
                             offenders);
  }
  std::unordered_map<std::string, const Tensor*> values;
  for (const auto& [name, t] : data.params) values[name] = &t;
  for (const auto& p : m.reg.all()) {
    p->node->value = *values.at(p->name);
  }
  return m;
}

FitResult fit(VLDetModel& model, const Dataset& ds,
              const FreezePolicy& freeze, const std::string& ckpt_path,
              const std::string& log_path) {
  const Config& cfg = model.cfg;
  if (ds.train_idx.empty()) {
    throw std::runtime_error("fit: dataset has no training scenes");
  }
  if (ds.train_idx.size() < cfg.batch_size) {
    throw std::runtime_error(
        "fit: batch_size " + std::to_string(cfg.batch_size) +
        " exceeds training scene count " + std::to_string(ds.train_idx.size()));
  }
  std::vector<std::string> fg;
  std::vector<std::size_t> row_of(ds.vocab.class_names.size() + 1, 0);
  for (std::size_t i = 0; i < ds.vocab.base_ids.size(); ++i) {
    const std::size_t id = ds.vocab.base_ids[i];
    fg.push_back(ds.vocab.class_names[id - 1]);
    row_of[id] = i + 1;
  }
  const std::vector<std::string> prompts = with_background(fg);
  if (cfg.n_classes != 0 && cfg.n_classes != prompts.size()) {
    throw std::runtime_error(
        "fit: config n_classes " + std::to_string(cfg.n_classes) +
        " does not match the training vocabulary (" +
        std::to_string(prompts.size()) + " including background)");
  }
  apply_freeze(model.reg, freeze);
  AdamW opt(model.reg, cfg);

  std::ofstream log(log_path, std::ios::binary);
  if (!log) {
    throw std::runtime_error("fit: cannot open log '" + log_path + "'");
  }
  nlohmann::json frozen = nlohmann::json::array();
  if (freeze.freeze_el) frozen.push_back(kFreezePrefixEl);
  if (freeze.freeze_ev) frozen.push_back(kFreezePrefixEv);
  if (freeze.freeze_v2l1) frozen.push_back(kFreezePrefixV2l1);
  if (freeze.freeze_v2l2) frozen.push_back(kFreezePrefixV2l2);
  log << nlohmann::json{{"frozen", frozen}}.dump() << "\n";
  Rng shuffle_rng(derive_seed(cfg.seed, 0x5F1E11ull));
  Rng step_rng(derive_seed(cfg.seed, 0x57E901ull));
  FitResult res;
  std::size_t step = 0;
  bool done = cfg.max_steps == 0 ? false : step >= cfg.max_steps;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::vector<std::size_t> order = ds.train_idx;
    shuffle_rng.shuffle(order);
    for (std::size_t b0 = 0; b0 + cfg.batch_size <= order.size() && !done;
         b0 += cfg.batch_size) {
      std::vector<BatchExample> batch;
      batch.reserve(cfg.batch_size);
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        const SceneRecord& sc = ds.scenes[order[b0 + k]];
        BatchExample ex;
        ex.scene = &sc;
        ex.gt_rows.reserve(sc.class_ids.size());
        for (std::size_t id : sc.class_ids) {
          if (id >= row_of.size() || row_of[id] == 0) {
            throw std::runtime_error(
                "fit: scene '" + sc.scene_id +
                "' contains a class outside the training vocabulary");
          }
          ex.gt_rows.push_back(row_of[id]);
        }
        batch.push_back(std::move(ex));
      }
      LossBreakdown lb;
      try {
        lb = train_step(model, opt, batch, prompts, step_rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("fit: step " + std::to_string(step) + ": " +
                                 e.what());
      }
      if (step == 0) res.first_total = lb.total;
      res.last_total = lb.total;
      const nlohmann::json line = {
          {"step", step},         {"epoch", epoch},      {"icl", lb.icl},
          {"aal", lb.aal},        {"ral", lb.ral},       {"rpn_box", lb.rpn_box},
          {"roi_box", lb.roi_box}, {"total", lb.total}};
      log << line.dump() << "\n";
      ++step;
      if (cfg.checkpoint_every != 0 && step % cfg.checkpoint_every == 0) {
        save_checkpoint(ckpt_path, model, step, step_rng.serialize());
      }
      if (cfg.max_steps != 0 && step >= cfg.max_steps) done = true;
    }
  }
  res.steps = step;
  save_checkpoint(ckpt_path, model, step, step_rng.serialize());
  log.close();
  if (!log) {
    throw std::runtime_error("fit: log write failed for '" + log_path + "'");
  }
  return res;
}

}  // namespace vldet

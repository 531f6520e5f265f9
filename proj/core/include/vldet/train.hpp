#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vldet/config.hpp"
#include "vldet/model.hpp"
#include "vldet/objective.hpp"
#include "vldet/params.hpp"
#include "vldet/rng.hpp"
#include "vldet/synthdata.hpp"
#include "vldet/tensor.hpp"

namespace vldet {

struct FreezePolicy {
  bool freeze_el = false;    // text encoder
  bool freeze_ev = false;    // image encoder
  bool freeze_v2l1 = false;  // rpn objectness embedding head
  bool freeze_v2l2 = false;  // roi region embedding projection
};

// Prefix of every parameter a policy flag freezes.
inline constexpr const char* kFreezePrefixEl = "encoders/text/";
inline constexpr const char* kFreezePrefixEv = "encoders/image/";
inline constexpr const char* kFreezePrefixV2l1 = "rpn/objectness_head/";
inline constexpr const char* kFreezePrefixV2l2 = "roi/region_proj/";

// Marks matching parameters non-trainable; applied once before step 0.
void apply_freeze(Registry& reg, const FreezePolicy& policy);

// Decoupled-weight-decay adaptive-moment optimizer with bias correction,
// global-norm gradient clipping, and two learning-rate groups (parameters
// under encoders/text/ use lr_text, the rest lr).
class AdamW {
 public:
  AdamW(const Registry& reg, const Config& cfg);
  void step(const Registry& reg);
  std::size_t step_count() const { return t_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  double lr_, lr_text_, wd_, clip_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// One optimizer update: zero grads, forward, backward, clip, step. The
// step rng drives anchor and region sampling.
LossBreakdown train_step(VLDetModel& model, AdamW& opt,
                         const std::vector<BatchExample>& batch,
                         const std::vector<std::string>& prompt_names,
                         Rng& rng);

struct CheckpointData {
  Config cfg;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> params;  // registry order
};

// Single little-endian container: magic, version, step counter, config
// snapshot, rng state, then each parameter under its registry name.
void save_checkpoint(const std::string& path, const VLDetModel& model,
                     std::uint64_t step, const std::string& rng_state);
CheckpointData read_checkpoint(const std::string& path);

// Rebuilds the model from the snapshot config and restores every
// parameter; name or shape mismatches raise one error listing all
// offenders.
VLDetModel restore_model(const CheckpointData& data);

struct FitResult {
  std::size_t steps = 0;
  double first_total = 0.0;
  double last_total = 0.0;
};

// Epoch loop with seeded shuffling, full batches only (a ragged tail is
// dropped), per-step JSONL logging, periodic checkpoint overwrites every
// checkpoint_every steps, and a final checkpoint. epochs = 0 writes the
// initial model and an empty log. Training prompts are the dataset's base
// classes; gt class ids are remapped to that prompt list.
FitResult fit(VLDetModel& model, const Dataset& ds,
              const FreezePolicy& freeze, const std::string& ckpt_path,
              const std::string& log_path);

}  // namespace vldet

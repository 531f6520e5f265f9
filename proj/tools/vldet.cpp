#include <cstdint>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vldet/battery.hpp"
#include "vldet/eval.hpp"
#include "vldet/model.hpp"
#include "vldet/rng.hpp"
#include "vldet/synthdata.hpp"
#include "vldet/tensor.hpp"
#include "vldet/train.hpp"

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<std::string> parse_prompts(const std::string& csv) {
  std::vector<std::string> out;
  for (const std::string& p : split_list(csv)) {
    if (p.empty()) {
      throw std::invalid_argument("empty prompt in list '" + csv + "'");
    }
    out.push_back(p);
  }
  return out;
}

vldet::FreezePolicy parse_freeze(const std::string& csv) {
  vldet::FreezePolicy policy;
  if (trim(csv).empty()) return policy;
  for (const std::string& tag : split_list(csv)) {
    if (tag == "el") {
      policy.freeze_el = true;
    } else if (tag == "ev") {
      policy.freeze_ev = true;
    } else if (tag == "v2l1") {
      policy.freeze_v2l1 = true;
    } else if (tag == "v2l2") {
      policy.freeze_v2l2 = true;
    } else {
      throw std::invalid_argument("unknown freeze tag '" + tag +
                                  "' (expected el, ev, v2l1, v2l2)");
    }
  }
  return policy;
}

json frozen_json(const vldet::FreezePolicy& policy) {
  json frozen = json::array();
  if (policy.freeze_el) frozen.push_back(vldet::kFreezePrefixEl);
  if (policy.freeze_ev) frozen.push_back(vldet::kFreezePrefixEv);
  if (policy.freeze_v2l1) frozen.push_back(vldet::kFreezePrefixV2l1);
  if (policy.freeze_v2l2) frozen.push_back(vldet::kFreezePrefixV2l2);
  return frozen;
}

void require_image_match(const vldet::Config& cfg, const vldet::Dataset& ds,
                         const char* what) {
  if (cfg.image_h != ds.image_h || cfg.image_w != ds.image_w) {
    throw std::runtime_error(std::string(what) + " image size " +
                             std::to_string(cfg.image_h) + "x" +
                             std::to_string(cfg.image_w) +
                             " does not match dataset " +
                             std::to_string(ds.image_h) + "x" +
                             std::to_string(ds.image_w));
  }
}

struct GenDataArgs {
  std::string out;
  std::size_t scenes = 50;
  std::size_t eval_scenes = 30;
  std::uint64_t seed = 42;
  std::size_t colors = 4;
  std::size_t shapes = 4;
  std::size_t novel = 4;
};

int cmd_gen_data(const GenDataArgs& a) {
  const vldet::Config cfg;  // rendering only needs the default canvas size
  const vldet::Vocabulary vocab =
      vldet::build_vocabulary(a.colors, a.shapes, a.novel, a.seed);
  vldet::generate_dataset(vocab, a.scenes, a.eval_scenes, a.seed,
                          vldet::derive_seed(a.seed, 0xDA7Aull), cfg, a.out);
  json summary;
  summary["out"] = a.out;
  summary["train_scenes"] = a.scenes;
  summary["eval_scenes"] = a.eval_scenes;
  summary["classes"] = vocab.class_names.size();
  summary["base_classes"] = vocab.base_ids.size();
  summary["novel_classes"] = vocab.novel_ids.size();
  summary["image_h"] = cfg.image_h;
  summary["image_w"] = cfg.image_w;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::string freeze;
};

int cmd_train(const TrainArgs& a) {
  const vldet::FreezePolicy policy = parse_freeze(a.freeze);
  const vldet::Config cfg = vldet::parse_config_file(a.config);
  const vldet::Dataset ds = vldet::load_dataset(a.data);
  require_image_match(cfg, ds, "config");
  vldet::VLDetModel model = vldet::build_model(cfg, cfg.seed);
  const std::string log_path = a.out + ".log";
  const vldet::FitResult res =
      vldet::fit(model, ds, policy, a.out, log_path);
  json summary;
  summary["checkpoint"] = a.out;
  summary["log"] = log_path;
  summary["steps"] = res.steps;
  summary["first_total"] = res.first_total;
  summary["final_total"] = res.last_total;
  summary["frozen"] = frozen_json(policy);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string prompts;
  std::string split = "all";
};

int cmd_eval(const EvalArgs& a) {
  const vldet::CheckpointData data = vldet::read_checkpoint(a.ckpt);
  const vldet::VLDetModel model = vldet::restore_model(data);
  const vldet::Dataset ds = vldet::load_dataset(a.data);
  require_image_match(model.cfg, ds, "checkpoint");
  std::vector<std::string> prompts;
  if (!a.prompts.empty()) {
    prompts = parse_prompts(a.prompts);
  } else if (a.split == "base") {
    for (const std::size_t id : ds.vocab.base_ids) {
      prompts.push_back(ds.vocab.class_names[id - 1]);
    }
  } else if (a.split == "novel") {
    for (const std::size_t id : ds.vocab.novel_ids) {
      prompts.push_back(ds.vocab.class_names[id - 1]);
    }
  } else {
    prompts = ds.vocab.class_names;
  }
  const vldet::EvalReport rep = vldet::evaluate(model, ds, prompts);
  std::cout << rep.to_json() << "\n";
  return 0;
}

int cmd_gradcheck(double tol, double eps) {
  const std::vector<vldet::BatteryEntry> entries =
      vldet::run_gradient_battery(tol, eps, 5);
  json checks = json::array();
  bool all_pass = true;
  for (const vldet::BatteryEntry& e : entries) {
    json row;
    row["name"] = e.name;
    row["max_relative_error"] = e.max_relative_error;
    row["pass"] = e.pass;
    checks.push_back(row);
    all_pass = all_pass && e.pass;
  }
  json report;
  report["tol"] = tol;
  report["eps"] = eps;
  report["checks"] = checks;
  report["pass"] = all_pass;
  std::cout << report.dump(2) << "\n";
  return all_pass ? 0 : 2;
}

struct SweepArgs {
  std::string data;
  std::string config;
  std::vector<std::size_t> values;
  std::string out;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.values.empty()) {
    throw std::invalid_argument("sweep-minibatch: empty value list");
  }
  const vldet::Config base_cfg = vldet::parse_config_file(a.config);
  for (const std::size_t m : a.values) {
    if (m == 0 || base_cfg.batch_size % m != 0) {
      throw std::invalid_argument(
          "sweep-minibatch: value " + std::to_string(m) +
          " does not divide batch_size " +
          std::to_string(base_cfg.batch_size));
    }
  }
  const vldet::Dataset ds = vldet::load_dataset(a.data);
  require_image_match(base_cfg, ds, "config");
  json entries = json::array();
  for (const std::size_t m : a.values) {
    vldet::Config cfg = base_cfg;
    cfg.minibatch_m = m;
    vldet::VLDetModel model = vldet::build_model(cfg, cfg.seed);
    const std::string ckpt = a.out + ".m" + std::to_string(m) + ".ckpt";
    const std::string log = a.out + ".m" + std::to_string(m) + ".log";
    const vldet::FitResult res =
        vldet::fit(model, ds, vldet::FreezePolicy{}, ckpt, log);
    const vldet::EvalReport rep =
        vldet::evaluate(model, ds, ds.vocab.class_names);
    json entry;
    entry["m"] = m;
    entry["ap50_all"] = rep.has_all ? json(rep.ap50_all) : json();
    entry["steps"] = res.steps;
    entry["final_total"] = res.last_total;
    entry["checkpoint"] = ckpt;
    entry["log"] = log;
    entries.push_back(entry);
  }
  json report;
  report["batch_size"] = base_cfg.batch_size;
  report["entries"] = entries;
  std::ofstream f(a.out, std::ios::binary);
  if (!f) {
    throw std::runtime_error("sweep-minibatch: cannot open report '" + a.out +
                             "'");
  }
  f << report.dump(2) << "\n";
  f.close();
  if (!f) {
    throw std::runtime_error("sweep-minibatch: report write failed for '" +
                             a.out + "'");
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

struct DetectArgs {
  std::string ckpt;
  std::string scene;
  std::string prompts;
};

int cmd_detect(const DetectArgs& a) {
  const std::vector<std::string> prompts = parse_prompts(a.prompts);
  const vldet::CheckpointData data = vldet::read_checkpoint(a.ckpt);
  const vldet::VLDetModel model = vldet::restore_model(data);
  const vldet::Tensor image = vldet::load_vldt(a.scene);
  const std::vector<vldet::Detection> dets =
      vldet::forward_infer(model, image, vldet::with_background(prompts));
  json out = json::array();
  for (const vldet::Detection& d : dets) {
    json row;
    row["box"] = json::array({d.box.x1, d.box.y1, d.box.x2, d.box.y2});
    row["class"] = prompts[d.class_id - 1];
    row["score"] = d.score;
    out.push_back(row);
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-vocabulary detection workbench"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--out", gen_args.out, "output directory")->required();
  gen->add_option("--scenes", gen_args.scenes, "training scenes")
      ->check(CLI::PositiveNumber);
  gen->add_option("--eval-scenes", gen_args.eval_scenes, "evaluation scenes")
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_args.seed, "master seed");
  gen->add_option("--colors", gen_args.colors, "palette colors")
      ->check(CLI::PositiveNumber);
  gen->add_option("--shapes", gen_args.shapes, "shape kinds")
      ->check(CLI::PositiveNumber);
  gen->add_option("--novel", gen_args.novel, "classes held out from training");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a detector");
  train->add_option("--data", train_args.data, "dataset directory")->required();
  train->add_option("--config", train_args.config, "config file")->required();
  train->add_option("--out", train_args.out, "checkpoint output path")
      ->required();
  train->add_option("--freeze", train_args.freeze,
                    "comma list from {el, ev, v2l1, v2l2}");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--data", eval_args.data, "dataset directory")->required();
  eval->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
  eval->add_option("--prompts", eval_args.prompts,
                   "comma list of class prompts (overrides --split)");
  eval->add_option("--split", eval_args.split, "prompt vocabulary split")
      ->check(CLI::IsMember({"base", "novel", "all"}));

  double tol = 1e-4, eps = 1e-5;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "run the gradient-check battery");
  gradcheck->add_option("--tol", tol, "max relative error allowed");
  gradcheck->add_option("--eps", eps, "finite-difference step");

  SweepArgs sweep_args;
  CLI::App* sweep = app.add_subcommand(
      "sweep-minibatch", "train once per contrastive mini-batch size");
  sweep->add_option("--data", sweep_args.data, "dataset directory")
      ->required();
  sweep->add_option("--config", sweep_args.config, "config file")->required();
  sweep->add_option("--values", sweep_args.values, "mini-batch sizes")
      ->required()
      ->delimiter(',');
  sweep->add_option("--out", sweep_args.out, "report output path")->required();

  DetectArgs detect_args;
  CLI::App* detect =
      app.add_subcommand("detect", "detect objects in one scene tensor");
  detect->add_option("--ckpt", detect_args.ckpt, "checkpoint path")
      ->required();
  detect->add_option("--scene", detect_args.scene, "scene tensor path")
      ->required();
  detect->add_option("--prompts", detect_args.prompts,
                     "comma list of class prompts")
      ->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (gradcheck->parsed()) return cmd_gradcheck(tol, eps);
    if (sweep->parsed()) return cmd_sweep(sweep_args);
    if (detect->parsed()) return cmd_detect(detect_args);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cerr << app.help("", CLI::AppFormatMode::All);
      return 0;
    }
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vgpeft/checkpoint.hpp"
#include "vgpeft/data.hpp"
#include "vgpeft/error.hpp"
#include "vgpeft/metrics.hpp"
#include "vgpeft/model.hpp"
#include "vgpeft/peft.hpp"
#include "vgpeft/serde.hpp"
#include "vgpeft/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<vgp::ModuleTag> parse_place(const std::string& csv) {
  std::vector<vgp::ModuleTag> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(vgp::module_tag_from(item));
  if (out.empty())
    throw vgp::ConfigError("placement '" + csv + "' names no modules");
  return out;
}

std::vector<std::vector<vgp::ModuleTag>> parse_placements(
    const std::string& groups) {
  std::vector<std::vector<vgp::ModuleTag>> out;
  std::stringstream ss(groups);
  std::string group;
  while (std::getline(ss, group, ';'))
    if (!group.empty()) out.push_back(parse_place(group));
  if (out.empty())
    throw vgp::ConfigError("placement list '" + groups + "' is empty");
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw vgp::InputError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw vgp::ParseError(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw vgp::InputError("cannot write '" + path.string() + "'");
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
  if (!out) throw vgp::InputError("write to '" + path.string() + "' failed");
}

std::string fixed6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string placement_name(const std::vector<vgp::ModuleTag>& placement) {
  std::string name;
  for (vgp::ModuleTag t : placement) {
    if (!name.empty()) name += "+";
    name += vgp::to_string(t);
  }
  return name;
}

// ---------------------------------------------------------------- synth --

struct SynthArgs {
  std::string out;
  vgp::SyntheticSpec spec;
};

void run_synth(const SynthArgs& a) {
  const auto records = vgp::generate_synthetic(a.spec);
  vgp::save_annotations(a.out, records);
  std::cout << "wrote " << records.size() << " records to " << a.out << "\n";
}

// ---------------------------------------------------------------- train --

struct TrainArgs {
  std::string data, eval_data, out_dir, config;
  std::uint64_t model_seed = 1;
  std::string method, place;
  std::size_t rank = 16;
  double alpha = 1.0;
  std::size_t bottleneck = 0;
  std::size_t steps = 500, batch_size = 16;
  double lr = 5e-3;
  std::string optimizer;
  double lambda_reg = 1.0, lambda_iou = 1.0;
  std::uint64_t seed = 0;
  std::size_t log_every = 50, eval_every = 0;
};

void run_train(const CLI::App* cmd, const TrainArgs& a) {
  vgp::ModelConfig mcfg;
  std::optional<vgp::PeftSpec> peft = vgp::PeftSpec{};
  peft->placement = vgp::all_module_tags();
  vgp::TrainConfig tcfg;

  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    vgp::reject_unknown_keys(j, {"model", "peft", "train"}, a.config);
    if (j.contains("model")) mcfg = vgp::model_config_from_json(j.at("model"));
    if (j.contains("peft")) {
      if (j.at("peft").is_null())
        peft.reset();
      else
        peft = vgp::peft_spec_from_json(j.at("peft"));
    }
    if (j.contains("train")) tcfg = vgp::train_config_from_json(j.at("train"));
  }

  auto need_peft = [&](const char* flag) -> vgp::PeftSpec& {
    if (!peft)
      throw vgp::ConfigError(std::string(flag) +
                             " conflicts with method 'none'");
    return *peft;
  };
  if (cmd->count("--method")) {
    if (a.method == "none") {
      peft.reset();
    } else {
      if (!peft) {
        peft = vgp::PeftSpec{};
        peft->placement = vgp::all_module_tags();
      }
      peft->method = vgp::peft_method_from(a.method);
    }
  }
  if (cmd->count("--place")) need_peft("--place").placement = parse_place(a.place);
  if (cmd->count("--rank")) need_peft("--rank").rank = a.rank;
  if (cmd->count("--alpha")) need_peft("--alpha").alpha = a.alpha;
  if (cmd->count("--bottleneck"))
    need_peft("--bottleneck").bottleneck = a.bottleneck;

  if (cmd->count("--steps")) tcfg.steps = a.steps;
  if (cmd->count("--batch-size")) tcfg.batch_size = a.batch_size;
  if (cmd->count("--lr")) tcfg.lr = a.lr;
  if (cmd->count("--optimizer"))
    tcfg.optimizer = vgp::optimizer_from(a.optimizer);
  if (cmd->count("--lambda-reg")) tcfg.lambda_reg = a.lambda_reg;
  if (cmd->count("--lambda-iou")) tcfg.lambda_iou = a.lambda_iou;
  if (cmd->count("--seed")) tcfg.seed = a.seed;
  if (cmd->count("--log-every")) tcfg.log_every = a.log_every;
  if (cmd->count("--eval-every")) tcfg.eval_every = a.eval_every;

  mcfg.validate();
  tcfg.validate();
  if (peft) peft->validate();

  fs::create_directories(a.out_dir);
  const fs::path out_dir(a.out_dir);

  vgp::GroundingModel model = vgp::GroundingModel::build(mcfg, a.model_seed);
  vgp::save_checkpoint(model, (out_dir / "base_checkpoint.pvgc").string());
  if (peft) vgp::inject(model, *peft, a.model_seed + 1);

  json eff{{"model", vgp::to_json(mcfg)},
           {"train", vgp::to_json(tcfg)},
           {"model_seed", a.model_seed}};
  eff["peft"] = model.peft() ? vgp::to_json(*model.peft()) : json(nullptr);
  write_text(out_dir / "config.json", eff.dump(2));

  const vgp::ParamReport rep = vgp::param_report(model);
  write_text(out_dir / "param_report.json", vgp::to_json(rep));
  write_text(out_dir / "param_report.txt", vgp::to_table(rep));

  const auto train_recs = vgp::load_annotations(a.data);
  std::vector<vgp::AnnotationRecord> eval_recs;
  if (!a.eval_data.empty()) eval_recs = vgp::load_annotations(a.eval_data);

  const vgp::TrainLog log = vgp::train(
      model, train_recs, tcfg, eval_recs.empty() ? nullptr : &eval_recs);
  write_text(out_dir / "trainlog.json", vgp::to_json(log));

  vgp::save_checkpoint(model, (out_dir / "checkpoint.pvgc").string());
  if (model.peft())
    vgp::save_delta(model, (out_dir / "delta.pvgd").string());

  std::ostringstream sum;
  sum << "records " << train_recs.size() << "\n"
      << "steps " << log.steps_run << "\n"
      << "final_loss " << fixed6(log.final_loss) << "\n"
      << "trainable " << rep.trainable << " of " << rep.total << "\n"
      << "efficiency " << vgp::format_efficiency(rep.efficiency_pct) << "\n";
  if (!eval_recs.empty()) {
    const vgp::MetricsReport report = vgp::evaluate(model, eval_recs);
    sum << vgp::to_table(report);
    write_text(out_dir / "report.json", vgp::to_json(report));
  }
  write_text(out_dir / "train_summary.txt", sum.str());
  std::cout << sum.str();
}

// ----------------------------------------------------------------- eval --

struct EvalArgs {
  std::string data, checkpoint, base, delta, predictions, out, save_predictions;
};

void run_eval(const EvalArgs& a) {
  const int sources = (!a.checkpoint.empty()) + (!a.predictions.empty()) +
                      (!a.delta.empty());
  if (sources != 1)
    throw vgp::ConfigError(
        "eval needs exactly one of --checkpoint, --delta, or --predictions");
  if (!a.delta.empty() && a.base.empty())
    throw vgp::ConfigError("--delta requires --base");
  if (!a.save_predictions.empty() && !a.predictions.empty())
    throw vgp::ConfigError(
        "--save-predictions needs a model, not --predictions");

  const auto records = vgp::load_annotations(a.data);
  vgp::MetricsReport report;
  if (!a.predictions.empty()) {
    const auto preds = vgp::load_predictions(a.predictions);
    const auto joined = vgp::join_predictions(records, preds);
    std::vector<vgp::BBox> pred, gt;
    for (const auto& jp : joined) {
      pred.push_back(jp.pred);
      gt.push_back(jp.gt);
    }
    report = vgp::score_boxes(pred, gt);
  } else {
    vgp::GroundingModel model =
        a.delta.empty()
            ? vgp::load_checkpoint(a.checkpoint)
            : vgp::apply_delta(vgp::load_checkpoint(a.base), a.delta);
    report = vgp::evaluate(model, records);
    if (!a.save_predictions.empty())
      vgp::save_predictions(a.save_predictions,
                            vgp::predict_all(model, records));
  }

  std::cout << vgp::to_table(report);
  if (!a.out.empty()) write_text(a.out, vgp::to_json(report));
}

// ---------------------------------------------------------------- sweep --

struct SweepArgs {
  std::string config, placements, out;
  std::string method = "lora";
  std::size_t rank = 16;
  double alpha = 1.0;
  std::size_t bottleneck = 0;
  std::uint64_t model_seed = 1;
};

void run_sweep(const SweepArgs& a) {
  vgp::ModelConfig mcfg;
  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    vgp::reject_unknown_keys(j, {"model", "peft", "train"}, a.config);
    if (j.contains("model")) mcfg = vgp::model_config_from_json(j.at("model"));
  }
  vgp::PeftSpec spec;
  spec.method = vgp::peft_method_from(a.method);
  spec.rank = a.rank;
  spec.alpha = a.alpha;
  spec.bottleneck = a.bottleneck;

  const std::string groups =
      a.placements.empty()
          ? "decoder;image;image,decoder;text,image,decoder"
          : a.placements;
  const auto pts =
      vgp::placement_sweep(mcfg, spec, parse_placements(groups), a.model_seed);

  std::cout << vgp::sweep_table(pts);
  if (!a.out.empty()) {
    json arr = json::array();
    for (const auto& pt : pts)
      arr.push_back({{"placement", placement_name(pt.placement)},
                     {"trainable", pt.trainable},
                     {"total", pt.total},
                     {"efficiency", vgp::format_efficiency(pt.efficiency_pct)}});
    write_text(a.out, arr.dump(2));
  }
}

// ---------------------------------------------------------------- merge --

struct MergeArgs {
  std::string checkpoint, base, delta, out;
};

void run_merge(const MergeArgs& a) {
  const int sources = (!a.checkpoint.empty()) + (!a.delta.empty());
  if (sources != 1)
    throw vgp::ConfigError("merge needs exactly one of --checkpoint or --delta");
  if (!a.delta.empty() && a.base.empty())
    throw vgp::ConfigError("--delta requires --base");

  vgp::GroundingModel model =
      a.delta.empty() ? vgp::load_checkpoint(a.checkpoint)
                      : vgp::apply_delta(vgp::load_checkpoint(a.base), a.delta);
  vgp::merge_lora(model);
  vgp::save_checkpoint(model, a.out);
  std::cout << "merged model written to " << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parameter-efficient tuning for a toy visual grounding model"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic referring dataset");
  synth_cmd->add_option("--out", synth.out, "output annotation file")
      ->required();
  synth_cmd->add_option("--count", synth.spec.count, "number of records")
      ->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "generator seed");
  synth_cmd->add_option("--grid", synth.spec.grid, "patches per image side");
  synth_cmd->add_option("--cell-px", synth.spec.cell_px, "pixels per cell");
  synth_cmd->add_option("--patch-dim", synth.spec.patch_dim,
                        "feature channels per patch");
  synth_cmd->add_option("--noise", synth.spec.noise,
                        "feature noise standard deviation");
  synth_cmd->add_option("--min-distractors", synth.spec.min_distractors,
                        "distractors per scene, lower bound");
  synth_cmd->add_option("--max-distractors", synth.spec.max_distractors,
                        "distractors per scene, upper bound");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "adapt and train a model");
  train_cmd->add_option("--data", train.data, "training annotations")
      ->required();
  train_cmd->add_option("--eval-data", train.eval_data, "held-out annotations");
  train_cmd->add_option("--out-dir", train.out_dir, "run output directory")
      ->required();
  train_cmd->add_option("--config", train.config,
                        "JSON config file (flags override it)");
  train_cmd->add_option("--model-seed", train.model_seed,
                        "base model init seed");
  train_cmd->add_option("--method", train.method,
                        "lora, adapter, bitfit, or none");
  train_cmd->add_option("--place", train.place,
                        "modules to adapt, e.g. text,image,decoder");
  train_cmd->add_option("--rank", train.rank, "low-rank width");
  train_cmd->add_option("--alpha", train.alpha, "low-rank scale");
  train_cmd->add_option("--bottleneck", train.bottleneck,
                        "adapter width (0 = d_model/4)");
  train_cmd->add_option("--steps", train.steps, "optimization steps");
  train_cmd->add_option("--batch-size", train.batch_size, "records per step");
  train_cmd->add_option("--lr", train.lr, "learning rate");
  train_cmd->add_option("--optimizer", train.optimizer, "adam or sgd");
  train_cmd->add_option("--lambda-reg", train.lambda_reg,
                        "coordinate loss weight");
  train_cmd->add_option("--lambda-iou", train.lambda_iou,
                        "overlap loss weight");
  train_cmd->add_option("--seed", train.seed, "batch sampling seed");
  train_cmd->add_option("--log-every", train.log_every, "loss log period");
  train_cmd->add_option("--eval-every", train.eval_every,
                        "held-out eval period (0 = never)");

  EvalArgs eval;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "score predictions or a checkpoint");
  eval_cmd->add_option("--data", eval.data, "annotations to score against")
      ->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "model checkpoint");
  eval_cmd->add_option("--base", eval.base, "base checkpoint for --delta");
  eval_cmd->add_option("--delta", eval.delta, "delta checkpoint");
  eval_cmd->add_option("--predictions", eval.predictions,
                       "prediction file to join");
  eval_cmd->add_option("--out", eval.out, "write the report as JSON here");
  eval_cmd->add_option("--save-predictions", eval.save_predictions,
                       "write model predictions here");

  SweepArgs sweep;
  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep", "tabulate parameter budgets across placements");
  sweep_cmd->add_option("--config", sweep.config, "JSON config file");
  sweep_cmd->add_option("--method", sweep.method, "lora, adapter, or bitfit");
  sweep_cmd->add_option("--rank", sweep.rank, "low-rank width");
  sweep_cmd->add_option("--alpha", sweep.alpha, "low-rank scale");
  sweep_cmd->add_option("--bottleneck", sweep.bottleneck,
                        "adapter width (0 = d_model/4)");
  sweep_cmd->add_option("--placements", sweep.placements,
                        "semicolon-separated placement groups");
  sweep_cmd->add_option("--model-seed", sweep.model_seed, "model init seed");
  sweep_cmd->add_option("--out", sweep.out, "write the sweep as JSON here");

  MergeArgs merge;
  CLI::App* merge_cmd = app.add_subcommand(
      "merge", "fold low-rank branches into the base weights");
  merge_cmd->add_option("--checkpoint", merge.checkpoint,
                        "adapted model checkpoint");
  merge_cmd->add_option("--base", merge.base, "base checkpoint for --delta");
  merge_cmd->add_option("--delta", merge.delta, "delta checkpoint");
  merge_cmd->add_option("--out", merge.out, "merged checkpoint path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (synth_cmd->parsed()) run_synth(synth);
    if (train_cmd->parsed()) run_train(train_cmd, train);
    if (eval_cmd->parsed()) run_eval(eval);
    if (sweep_cmd->parsed()) run_sweep(sweep);
    if (merge_cmd->parsed()) run_merge(merge);
  } catch (const vgp::DivergedError& e) {
    std::cerr << "error: training diverged at step " << e.step() << ": "
              << e.what() << "\n";
    return 1;
  } catch (const vgp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

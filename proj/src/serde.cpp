#include "vgpeft/serde.hpp"

#include <algorithm>

#include "vgpeft/error.hpp"

namespace vgp {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError(context + ": unknown key '" + it.key() + "'");
}

json to_json(const ModelConfig& cfg) {
  return json{{"d_model", cfg.d_model},
              {"n_heads", cfg.n_heads},
              {"text_layers", cfg.text_layers},
              {"image_layers", cfg.image_layers},
              {"decoder_layers", cfg.decoder_layers},
              {"ffn_dim", cfg.ffn_dim},
              {"vocab", cfg.vocab},
              {"grid", cfg.grid},
              {"patch_dim", cfg.patch_dim},
              {"max_text_len", cfg.max_text_len}};
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"d_model", "n_heads", "text_layers", "image_layers",
                       "decoder_layers", "ffn_dim", "vocab", "grid",
                       "patch_dim", "max_text_len"},
                      "model config");
  ModelConfig cfg;
  try {
    cfg.d_model = j.value("d_model", cfg.d_model);
    cfg.n_heads = j.value("n_heads", cfg.n_heads);
    cfg.text_layers = j.value("text_layers", cfg.text_layers);
    cfg.image_layers = j.value("image_layers", cfg.image_layers);
    cfg.decoder_layers = j.value("decoder_layers", cfg.decoder_layers);
    cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
    cfg.vocab = j.value("vocab", cfg.vocab);
    cfg.grid = j.value("grid", cfg.grid);
    cfg.patch_dim = j.value("patch_dim", cfg.patch_dim);
    cfg.max_text_len = j.value("max_text_len", cfg.max_text_len);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

json to_json(const PeftSpec& spec) {
  json placement = json::array();
  for (ModuleTag t : spec.placement) placement.push_back(to_string(t));
  return json{{"method", to_string(spec.method)},
              {"rank", spec.rank},
              {"alpha", spec.alpha},
              {"bottleneck", spec.bottleneck},
              {"placement", placement}};
}

PeftSpec peft_spec_from_json(const json& j) {
  reject_unknown_keys(j, {"method", "rank", "alpha", "bottleneck", "placement"},
                      "peft config");
  PeftSpec spec;
  try {
    spec.method = peft_method_from(j.at("method").get<std::string>());
    spec.rank = j.value("rank", spec.rank);
    spec.alpha = j.value("alpha", spec.alpha);
    spec.bottleneck = j.value("bottleneck", spec.bottleneck);
    spec.placement.clear();
    for (const auto& p : j.at("placement"))
      spec.placement.push_back(module_tag_from(p.get<std::string>()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("peft config: ") + e.what());
  }
  spec.validate();
  return spec;
}

json to_json(const TrainConfig& cfg) {
  return json{{"steps", cfg.steps},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.lr},
              {"optimizer", to_string(cfg.optimizer)},
              {"lambda_reg", cfg.lambda_reg},
              {"lambda_iou", cfg.lambda_iou},
              {"seed", cfg.seed},
              {"log_every", cfg.log_every},
              {"eval_every", cfg.eval_every}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"steps", "batch_size", "lr", "optimizer", "lambda_reg",
                       "lambda_iou", "seed", "log_every", "eval_every"},
                      "train config");
  TrainConfig cfg;
  try {
    cfg.steps = j.value("steps", cfg.steps);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    if (j.contains("optimizer"))
      cfg.optimizer = optimizer_from(j.at("optimizer").get<std::string>());
    cfg.lambda_reg = j.value("lambda_reg", cfg.lambda_reg);
    cfg.lambda_iou = j.value("lambda_iou", cfg.lambda_iou);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.log_every = j.value("log_every", cfg.log_every);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace vgp

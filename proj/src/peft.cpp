#include "vgpeft/peft.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "vgpeft/error.hpp"

namespace vgp {

namespace {

std::vector<std::string> placed_block_prefixes(const ModelConfig& cfg,
                                               const PeftSpec& spec) {
  std::vector<std::string> out;
  if (spec.places(ModuleTag::kTextEncoder))
    for (std::size_t i = 0; i < cfg.text_layers; ++i)
      out.push_back("text_encoder.block" + std::to_string(i));
  if (spec.places(ModuleTag::kImageEncoder))
    for (std::size_t i = 0; i < cfg.image_layers; ++i)
      out.push_back("image_encoder.block" + std::to_string(i));
  if (spec.places(ModuleTag::kDecoder))
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
      out.push_back("decoder.block" + std::to_string(i));
  return out;
}

}  // namespace

double efficiency(std::size_t trainable, std::size_t total) {
  if (total == 0) throw ContractError("efficiency: empty model");
  if (trainable > total)
    throw ContractError("efficiency: trainable exceeds total");
  return 100.0 -
         (static_cast<double>(trainable) / static_cast<double>(total)) * 100.0;
}

std::string format_efficiency(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", pct);
  return buf;
}

void inject(GroundingModel& m, const PeftSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (m.peft())
    throw StateError("model already carries an adaptation; merge or rebuild "
                     "before injecting another");

  PeftSpec resolved = spec;
  if (resolved.bottleneck == 0) resolved.bottleneck = m.config().d_model / 4;
  if (resolved.bottleneck == 0)
    throw ConfigError("peft: bottleneck resolved to zero");

  for (const auto& p : m.params()) p->set_trainable(false);

  std::mt19937_64 gen(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  switch (resolved.method) {
    case PeftMethod::kLora: {
      const double sigma = 1.0 / std::sqrt(static_cast<double>(resolved.rank));
      for (const DenseLayerInfo& layer : dense_layers(m.config())) {
        if (!resolved.places(layer.tag)) continue;
        // Down starts at zero so the branch contributes nothing until
        // trained; up carries the scale.
        m.add_parameter({layer.prefix + ".lora_down.weight",
                         Tensor({layer.d_in, resolved.rank}, 0.0, true),
                         true, ParamKind::kWeight});
        std::vector<double> up(resolved.rank * layer.d_out);
        for (double& v : up) v = unit(gen) * sigma;
        m.add_parameter({layer.prefix + ".lora_up.weight",
                         Tensor({resolved.rank, layer.d_out}, std::move(up),
                                true),
                         true, ParamKind::kWeight});
      }
      break;
    }
    case PeftMethod::kAdapter: {
      const std::size_t d = m.config().d_model;
      const std::size_t b = resolved.bottleneck;
      const double sigma = 1.0 / std::sqrt(static_cast<double>(d));
      for (const std::string& blk : placed_block_prefixes(m.config(), resolved))
        for (const char* site : {"attn_adapter", "ffn_adapter"}) {
          const std::string prefix = blk + "." + std::string(site);
          std::vector<double> down(d * b);
          for (double& v : down) v = unit(gen) * sigma;
          m.add_parameter({prefix + ".down.weight",
                           Tensor({d, b}, std::move(down), true), true,
                           ParamKind::kWeight});
          m.add_parameter({prefix + ".down.bias", Tensor({b}, 0.0, true),
                           true, ParamKind::kBias});
          // Zero up-projection makes the adapter start as the identity.
          m.add_parameter({prefix + ".up.weight", Tensor({b, d}, 0.0, true),
                           true, ParamKind::kWeight});
          m.add_parameter({prefix + ".up.bias", Tensor({d}, 0.0, true), true,
                           ParamKind::kBias});
        }
      break;
    }
    case PeftMethod::kBitfit: {
      for (const auto& p : m.params())
        if (p->kind == ParamKind::kBias && resolved.places(tag_of(p->path)))
          p->set_trainable(true);
      break;
    }
  }
  m.set_peft(resolved);
}

void merge_lora(GroundingModel& m) {
  if (!m.peft() || m.peft()->method != PeftMethod::kLora)
    throw StateError("merge: model has no low-rank branches");
  const double alpha = m.peft()->alpha;

  for (const DenseLayerInfo& layer : dense_layers(m.config())) {
    const std::string down_path = layer.prefix + ".lora_down.weight";
    if (!m.has_param(down_path)) continue;
    const std::string up_path = layer.prefix + ".lora_up.weight";
    const auto& down = m.param(down_path).tensor;
    const auto& up = m.param(up_path).tensor;
    auto& w = m.param(layer.prefix + ".weight").tensor.data();
    const std::size_t r = down.shape()[1];
    for (std::size_t i = 0; i < layer.d_in; ++i)
      for (std::size_t k = 0; k < r; ++k) {
        const double dv = alpha * down.data()[i * r + k];
        for (std::size_t j = 0; j < layer.d_out; ++j)
          w[i * layer.d_out + j] += dv * up.data()[k * layer.d_out + j];
      }
    m.remove_parameter(down_path);
    m.remove_parameter(up_path);
  }
  m.set_peft(std::nullopt);
}

ParamReport param_report(const GroundingModel& m) {
  ParamReport r;
  for (const auto& p : m.params()) {
    r.rows.push_back({p->path, p->tensor.size(), p->trainable});
    r.total += p->tensor.size();
    if (p->trainable) r.trainable += p->tensor.size();
  }
  r.efficiency_pct = efficiency(r.trainable, r.total);
  return r;
}

std::string to_table(const ParamReport& r) {
  std::size_t width = 9;
  for (const auto& row : r.rows) width = std::max(width, row.path.size());
  std::ostringstream os;
  for (const auto& row : r.rows) {
    os << row.path << std::string(width - row.path.size() + 2, ' ')
       << (row.trainable ? "trainable" : "frozen   ") << "  " << row.count
       << "\n";
  }
  os << "total " << r.total << "  trainable " << r.trainable
     << "  efficiency " << format_efficiency(r.efficiency_pct) << "%\n";
  return os.str();
}

std::string to_json(const ParamReport& r) {
  std::ostringstream os;
  os << "{\"total\":" << r.total << ",\"trainable\":" << r.trainable
     << ",\"efficiency\":" << format_efficiency(r.efficiency_pct)
     << ",\"params\":[";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    os << (i ? "," : "") << "{\"path\":\"" << row.path
       << "\",\"count\":" << row.count << ",\"trainable\":"
       << (row.trainable ? "true" : "false") << "}";
  }
  os << "]}";
  return os.str();
}

std::vector<SweepPoint> placement_sweep(
    const ModelConfig& cfg, const PeftSpec& base,
    const std::vector<std::vector<ModuleTag>>& placements,
    std::uint64_t seed) {
  if (placements.empty()) throw ConfigError("sweep: no placements given");
  std::vector<SweepPoint> out;
  for (const auto& placement : placements) {
    PeftSpec spec = base;
    spec.placement = placement;
    GroundingModel m = GroundingModel::build(cfg, seed);
    inject(m, spec, seed + 1);
    SweepPoint pt;
    pt.placement = placement;
    pt.trainable = m.trainable_coords();
    pt.total = m.total_coords();
    pt.efficiency_pct = efficiency(pt.trainable, pt.total);
    out.push_back(std::move(pt));
  }
  return out;
}

std::string sweep_table(const std::vector<SweepPoint>& pts) {
  std::ostringstream os;
  os << "placement  trainable  total  efficiency\n";
  for (const auto& pt : pts) {
    std::string name;
    for (ModuleTag t : pt.placement) {
      if (!name.empty()) name += "+";
      name += to_string(t);
    }
    os << name << "  " << pt.trainable << "  " << pt.total << "  "
       << format_efficiency(pt.efficiency_pct) << "\n";
  }
  return os.str();
}

}  // namespace vgp

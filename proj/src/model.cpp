#include "vgpeft/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "vgpeft/error.hpp"
#include "vgpeft/hash.hpp"

namespace vgp {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kPi = 3.14159265358979323846;

void block_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                 std::size_t d, std::size_t ffn) {
  using Init = ParamSpec::Init;
  auto linear = [&](const std::string& name, std::size_t din,
                    std::size_t dout) {
    out.push_back({prefix + "." + name + ".weight", {din, dout},
                   ParamKind::kWeight, Init::kDense});
    out.push_back(
        {prefix + "." + name + ".bias", {dout}, ParamKind::kBias, Init::kZeros});
  };
  linear("attn.q", d, d);
  linear("attn.k", d, d);
  linear("attn.v", d, d);
  linear("attn.o", d, d);
  out.push_back(
      {prefix + ".ln1.gamma", {d}, ParamKind::kWeight, Init::kOnes});
  out.push_back({prefix + ".ln1.beta", {d}, ParamKind::kBias, Init::kZeros});
  linear("ffn.w1", d, ffn);
  linear("ffn.w2", ffn, d);
  out.push_back(
      {prefix + ".ln2.gamma", {d}, ParamKind::kWeight, Init::kOnes});
  out.push_back({prefix + ".ln2.beta", {d}, ParamKind::kBias, Init::kZeros});
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model < 4) throw ConfigError("model: d_model must be at least 4");
  if (n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("model: d_model (" + std::to_string(d_model) +
                      ") must be a positive multiple of n_heads (" +
                      std::to_string(n_heads) + ")");
  if (text_layers == 0 || image_layers == 0 || decoder_layers == 0)
    throw ConfigError("model: every module needs at least one layer");
  if (ffn_dim == 0) throw ConfigError("model: ffn_dim must be positive");
  if (vocab < 2) throw ConfigError("model: vocab must be at least 2");
  if (grid == 0) throw ConfigError("model: grid must be positive");
  if (patch_dim == 0) throw ConfigError("model: patch_dim must be positive");
  if (max_text_len == 0)
    throw ConfigError("model: max_text_len must be positive");
}

std::vector<ParamSpec> architecture(const ModelConfig& cfg) {
  using Init = ParamSpec::Init;
  std::vector<ParamSpec> specs;
  const std::size_t d = cfg.d_model;

  specs.push_back({"text_encoder.embed.weight", {cfg.vocab, d},
                   ParamKind::kWeight, Init::kTable});
  specs.push_back({"text_encoder.pos.weight", {cfg.max_text_len, d},
                   ParamKind::kWeight, Init::kTable});
  for (std::size_t i = 0; i < cfg.text_layers; ++i)
    block_specs(specs, "text_encoder.block" + std::to_string(i), d,
                cfg.ffn_dim);

  specs.push_back({"image_encoder.patch_proj.weight", {cfg.patch_dim, d},
                   ParamKind::kWeight, Init::kDense});
  specs.push_back({"image_encoder.patch_proj.bias", {d}, ParamKind::kBias,
                   Init::kZeros});
  specs.push_back({"image_encoder.pos.weight", {cfg.n_patches(), d},
                   ParamKind::kWeight, Init::kPosGrid2d});
  for (std::size_t i = 0; i < cfg.image_layers; ++i)
    block_specs(specs, "image_encoder.block" + std::to_string(i), d,
                cfg.ffn_dim);

  specs.push_back(
      {"decoder.query.weight", {1, d}, ParamKind::kWeight, Init::kTable});
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
    block_specs(specs, "decoder.block" + std::to_string(i), d, cfg.ffn_dim);
  specs.push_back(
      {"decoder.box_head.weight", {d, 4}, ParamKind::kWeight, Init::kDense});
  specs.push_back(
      {"decoder.box_head.bias", {4}, ParamKind::kBias, Init::kZeros});
  return specs;
}

ModuleTag tag_of(const std::string& path) {
  const auto dot = path.find('.');
  const std::string head = path.substr(0, dot);
  if (head == "text_encoder") return ModuleTag::kTextEncoder;
  if (head == "image_encoder") return ModuleTag::kImageEncoder;
  if (head == "decoder") return ModuleTag::kDecoder;
  throw StateError("parameter path '" + path + "' has no module prefix");
}

std::vector<DenseLayerInfo> dense_layers(const ModelConfig& cfg) {
  std::vector<DenseLayerInfo> out;
  const std::size_t d = cfg.d_model;
  auto block_layers = [&](const std::string& prefix, ModuleTag tag) {
    for (const char* name : {"attn.q", "attn.k", "attn.v", "attn.o"})
      out.push_back({prefix + "." + name, d, d, tag});
    out.push_back({prefix + ".ffn.w1", d, cfg.ffn_dim, tag});
    out.push_back({prefix + ".ffn.w2", cfg.ffn_dim, d, tag});
  };
  for (std::size_t i = 0; i < cfg.text_layers; ++i)
    block_layers("text_encoder.block" + std::to_string(i),
                 ModuleTag::kTextEncoder);
  out.push_back({"image_encoder.patch_proj", cfg.patch_dim, d,
                 ModuleTag::kImageEncoder});
  for (std::size_t i = 0; i < cfg.image_layers; ++i)
    block_layers("image_encoder.block" + std::to_string(i),
                 ModuleTag::kImageEncoder);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
    block_layers("decoder.block" + std::to_string(i), ModuleTag::kDecoder);
  out.push_back({"decoder.box_head", d, 4, ModuleTag::kDecoder});
  return out;
}

GroundingModel GroundingModel::build(const ModelConfig& cfg,
                                     std::uint64_t seed) {
  cfg.validate();
  GroundingModel m(cfg);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  for (const ParamSpec& spec : architecture(cfg)) {
    std::size_t n = 1;
    for (std::size_t dim : spec.shape) n *= dim;
    std::vector<double> data(n, 0.0);
    switch (spec.init) {
      case ParamSpec::Init::kDense: {
        const double sigma = 1.0 / std::sqrt(static_cast<double>(spec.shape[0]));
        for (double& v : data) v = unit(gen) * sigma;
        break;
      }
      case ParamSpec::Init::kTable:
        for (double& v : data) v = unit(gen);
        break;
      case ParamSpec::Init::kOnes:
        for (double& v : data) v = 1.0;
        break;
      case ParamSpec::Init::kZeros:
        break;
      case ParamSpec::Init::kPosGrid2d: {
        const std::size_t g = cfg.grid;
        const std::size_t d = spec.shape[1];
        for (std::size_t cell = 0; cell < spec.shape[0]; ++cell) {
          const double row = (static_cast<double>(cell / g) + 0.5) /
                             static_cast<double>(g);
          const double col = (static_cast<double>(cell % g) + 0.5) /
                             static_cast<double>(g);
          double* v = data.data() + cell * d;
          if (d > 0) v[0] = row;
          if (d > 1) v[1] = col;
          for (std::size_t j = 2; j < d; ++j) {
            const std::size_t k = j - 2;
            const double u = ((k / 2) % 2 == 0) ? row : col;
            const double angle =
                kPi * static_cast<double>(std::size_t{1} << (k / 4)) * u;
            v[j] = (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
          }
        }
        break;
      }
    }
    m.add_parameter({spec.path, Tensor(spec.shape, std::move(data), true),
                     /*trainable=*/true, spec.kind});
  }
  return m;
}

GroundingModel GroundingModel::assemble(const ModelConfig& cfg,
                                        std::optional<PeftSpec> peft) {
  cfg.validate();
  GroundingModel m(cfg);
  m.peft_ = std::move(peft);
  return m;
}

bool GroundingModel::has_param(const std::string& path) const {
  return index_.count(path) != 0;
}

Parameter& GroundingModel::param(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end())
    throw StateError("model has no parameter '" + path + "'");
  return *params_[it->second];
}

const Parameter& GroundingModel::param(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end())
    throw StateError("model has no parameter '" + path + "'");
  return *params_[it->second];
}

std::shared_ptr<Parameter> GroundingModel::param_ptr(
    const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end())
    throw StateError("model has no parameter '" + path + "'");
  return params_[it->second];
}

void GroundingModel::add_parameter(Parameter p) {
  if (index_.count(p.path))
    throw StateError("parameter '" + p.path + "' already exists");
  index_[p.path] = params_.size();
  params_.push_back(std::make_shared<Parameter>(std::move(p)));
}

void GroundingModel::remove_parameter(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end())
    throw StateError("cannot remove unknown parameter '" + path + "'");
  params_.erase(params_.begin() + static_cast<std::ptrdiff_t>(it->second));
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i)
    index_[params_[i]->path] = i;
}

std::size_t GroundingModel::total_coords() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->tensor.size();
  return n;
}

std::size_t GroundingModel::trainable_coords() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p->trainable) n += p->tensor.size();
  return n;
}

std::vector<std::shared_ptr<Parameter>> GroundingModel::trainable_params()
    const {
  std::vector<std::shared_ptr<Parameter>> out;
  for (const auto& p : params_)
    if (p->trainable) out.push_back(p);
  return out;
}

std::uint64_t GroundingModel::frozen_hash() const {
  Fnv1a64 h;
  for (const auto& p : params_) {
    if (p->trainable) continue;
    h.update(p->path);
    h.update(p->tensor.data());
  }
  return h.digest();
}

GroundingModel GroundingModel::clone() const {
  GroundingModel m(cfg_);
  m.peft_ = peft_;
  for (const auto& p : params_)
    m.add_parameter({p->path,
                     Tensor(p->tensor.shape(), p->tensor.data(),
                            p->tensor.requires_grad()),
                     p->trainable, p->kind});
  return m;
}

void GroundingModel::validate_complete() const {
  for (const ParamSpec& spec : architecture(cfg_)) {
    auto it = index_.find(spec.path);
    if (it == index_.end())
      throw ValidationError("model is missing parameter '" + spec.path + "'");
    if (params_[it->second]->tensor.shape() != spec.shape)
      throw ValidationError("parameter '" + spec.path +
                            "' has shape " +
                            params_[it->second]->tensor.shape_str());
  }
}

Tensor GroundingModel::dense(const std::string& prefix, const Tensor& x) const {
  Tensor y = add_bias(matmul(x, param(prefix + ".weight").tensor),
                      param(prefix + ".bias").tensor);
  const std::string down_path = prefix + ".lora_down.weight";
  if (has_param(down_path)) {
    const Tensor& down = param(down_path).tensor;
    const Tensor& up = param(prefix + ".lora_up.weight").tensor;
    const double alpha = peft_ ? peft_->alpha : 1.0;
    y = add(y, scale(matmul(matmul(x, down), up), alpha));
  }
  return y;
}

Tensor GroundingModel::run_adapter(const std::string& prefix,
                                   const Tensor& x) const {
  if (!has_param(prefix + ".down.weight")) return x;
  Tensor h = gelu(add_bias(matmul(x, param(prefix + ".down.weight").tensor),
                           param(prefix + ".down.bias").tensor));
  Tensor up = add_bias(matmul(h, param(prefix + ".up.weight").tensor),
                       param(prefix + ".up.bias").tensor);
  return add(x, up);
}

Tensor GroundingModel::mha(const std::string& prefix, const Tensor& q_in,
                           const Tensor& kv_in) const {
  Tensor q = dense(prefix + ".q", q_in);
  Tensor k = dense(prefix + ".k", kv_in);
  Tensor v = dense(prefix + ".v", kv_in);

  const std::size_t dh = cfg_.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(cfg_.n_heads);
  for (std::size_t i = 0; i < cfg_.n_heads; ++i) {
    Tensor qi = slice_cols(q, i * dh, dh);
    Tensor ki = slice_cols(k, i * dh, dh);
    Tensor vi = slice_cols(v, i * dh, dh);
    Tensor attn = softmax(scale(matmul(qi, transpose(ki)), inv_sqrt_dh), 1);
    heads.push_back(matmul(attn, vi));
  }
  return dense(prefix + ".o", concat_cols(heads));
}

Tensor GroundingModel::block(const std::string& prefix, const Tensor& x,
                             const Tensor* memory) const {
  Tensor attn_out = mha(prefix + ".attn", x, memory ? *memory : x);
  Tensor h = layer_norm(add(x, attn_out), param(prefix + ".ln1.gamma").tensor,
                        param(prefix + ".ln1.beta").tensor, kLnEps);
  h = run_adapter(prefix + ".attn_adapter", h);

  Tensor f = dense(prefix + ".ffn.w2", gelu(dense(prefix + ".ffn.w1", h)));
  Tensor y = layer_norm(add(h, f), param(prefix + ".ln2.gamma").tensor,
                        param(prefix + ".ln2.beta").tensor, kLnEps);
  return run_adapter(prefix + ".ffn_adapter", y);
}

Tensor GroundingModel::encode_text(const std::vector<std::size_t>& ids) const {
  if (ids.empty()) throw InputError("encode_text: empty token sequence");
  if (ids.size() > cfg_.max_text_len)
    throw InputError("encode_text: " + std::to_string(ids.size()) +
                     " tokens exceed max_text_len " +
                     std::to_string(cfg_.max_text_len));
  std::vector<std::size_t> positions(ids.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  Tensor x = add(embedding(param("text_encoder.embed.weight").tensor, ids),
                 embedding(param("text_encoder.pos.weight").tensor, positions));
  for (std::size_t i = 0; i < cfg_.text_layers; ++i)
    x = block("text_encoder.block" + std::to_string(i), x, nullptr);
  return x;
}

Tensor GroundingModel::encode_image(const Tensor& patches) const {
  if (patches.rank() != 2 || patches.shape()[0] != cfg_.n_patches() ||
      patches.shape()[1] != cfg_.patch_dim)
    throw InputError("encode_image: expected (" +
                     std::to_string(cfg_.n_patches()) + "x" +
                     std::to_string(cfg_.patch_dim) + ") patches, got " +
                     patches.shape_str());
  std::vector<std::size_t> positions(cfg_.n_patches());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  Tensor x =
      add(dense("image_encoder.patch_proj", patches),
          embedding(param("image_encoder.pos.weight").tensor, positions));
  for (std::size_t i = 0; i < cfg_.image_layers; ++i)
    x = block("image_encoder.block" + std::to_string(i), x, nullptr);
  return x;
}

Tensor GroundingModel::forward_box(const std::vector<std::size_t>& ids,
                                   const Tensor& patches) const {
  Tensor memory = concat_rows(encode_text(ids), encode_image(patches));
  Tensor x = param("decoder.query.weight").tensor;
  for (std::size_t i = 0; i < cfg_.decoder_layers; ++i)
    x = block("decoder.block" + std::to_string(i), x, &memory);
  return sigmoid(dense("decoder.box_head", x));
}

NormBox GroundingModel::predict_box(const std::vector<std::size_t>& ids,
                                    const Tensor& patches) const {
  const Tensor out = forward_box(ids, patches);
  const double lo = std::nextafter(0.0, 1.0);
  const double hi = std::nextafter(1.0, 0.0);
  auto clamp01 = [&](double v) { return std::min(std::max(v, lo), hi); };
  return NormBox{clamp01(out.data()[0]), clamp01(out.data()[1]),
                 clamp01(out.data()[2]), clamp01(out.data()[3])};
}

}  // namespace vgp

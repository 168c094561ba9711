#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vgpeft/peft_spec.hpp"
#include "vgpeft/tensor.hpp"
#include "vgpeft/types.hpp"

namespace vgp {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t text_layers = 1;
  std::size_t image_layers = 1;
  // Two hops: the first pools the text into the query stream, the second
  // routes over image cells conditioned on it. One layer cannot do both.
  std::size_t decoder_layers = 2;
  std::size_t ffn_dim = 64;
  std::size_t vocab = 64;
  std::size_t grid = 4;        // image is grid x grid patches
  std::size_t patch_dim = 16;  // raw feature width per patch
  std::size_t max_text_len = 32;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t n_patches() const { return grid * grid; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamSpec {
  // kPosGrid2d fills a (grid*grid, d) table with the cell's normalized
  // center coordinates followed by sin/cos features of both axes — a
  // deterministic layout the box head can read linearly.
  enum class Init { kDense, kTable, kOnes, kZeros, kPosGrid2d };
  std::string path;
  std::vector<std::size_t> shape;
  ParamKind kind;
  Init init;
};

// Every base (pre-adaptation) parameter, in canonical table order.
std::vector<ParamSpec> architecture(const ModelConfig& cfg);

// First path segment decides which module a parameter belongs to.
ModuleTag tag_of(const std::string& path);

struct DenseLayerInfo {
  std::string prefix;  // e.g. "decoder.block0.attn.q"
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  ModuleTag tag;
};

// The fully connected layers an adaptation method may target: attention
// projections, feed-forward layers, the patch projection, and the box head.
// Embedding tables and layer norms are not dense layers.
std::vector<DenseLayerInfo> dense_layers(const ModelConfig& cfg);

// Text/image/decoder grounding network over a path-keyed parameter table.
// Adaptation methods add or retag parameters; the forward pass picks up
// low-rank and bottleneck branches by probing for their paths.
class GroundingModel {
 public:
  static GroundingModel build(const ModelConfig& cfg, std::uint64_t seed);

  // Empty parameter table; caller fills it (checkpoint loading).
  static GroundingModel assemble(const ModelConfig& cfg,
                                 std::optional<PeftSpec> peft);

  const ModelConfig& config() const { return cfg_; }
  const std::optional<PeftSpec>& peft() const { return peft_; }
  void set_peft(std::optional<PeftSpec> p) { peft_ = std::move(p); }

  const std::vector<std::shared_ptr<Parameter>>& params() const {
    return params_;
  }
  bool has_param(const std::string& path) const;
  Parameter& param(const std::string& path);
  const Parameter& param(const std::string& path) const;
  std::shared_ptr<Parameter> param_ptr(const std::string& path) const;

  void add_parameter(Parameter p);
  void remove_parameter(const std::string& path);

  std::size_t total_coords() const;
  std::size_t trainable_coords() const;
  std::vector<std::shared_ptr<Parameter>> trainable_params() const;

  // Digest of every frozen parameter's path and raw bytes, in table order.
  std::uint64_t frozen_hash() const;

  GroundingModel clone() const;

  // Confirms all base parameters exist with the right shapes.
  void validate_complete() const;

  Tensor encode_text(const std::vector<std::size_t>& ids) const;
  Tensor encode_image(const Tensor& patches) const;

  // Graph-tracked normalized box, shape [1,4], coordinates in (0,1).
  Tensor forward_box(const std::vector<std::size_t>& ids,
                     const Tensor& patches) const;

  // Forward pass for inference; clamps into the open interval.
  NormBox predict_box(const std::vector<std::size_t>& ids,
                      const Tensor& patches) const;

 private:
  explicit GroundingModel(ModelConfig cfg) : cfg_(cfg) {}

  Tensor dense(const std::string& prefix, const Tensor& x) const;
  Tensor run_adapter(const std::string& prefix, const Tensor& x) const;
  Tensor mha(const std::string& prefix, const Tensor& q_in,
             const Tensor& kv_in) const;
  Tensor block(const std::string& prefix, const Tensor& x,
               const Tensor* memory) const;

  ModelConfig cfg_;
  std::optional<PeftSpec> peft_;
  std::vector<std::shared_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vgp

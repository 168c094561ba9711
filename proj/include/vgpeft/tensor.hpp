#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vgp {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // unset on leaves
};

// Dense row-major float64 tensor with reverse-mode autodiff.
// Value-semantic handle; copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad = false);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data,
         bool requires_grad = false);
  explicit Tensor(std::shared_ptr<TensorNode> node);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t rank() const;
  std::size_t size() const;
  std::string shape_str() const;

  double value() const;  // scalar tensors only
  double at(std::size_t r, std::size_t c) const;
  std::vector<double>& data();
  const std::vector<double>& data() const;

  bool requires_grad() const;
  void set_requires_grad(bool v);
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Reverse sweep from a scalar produced by a recorded graph. Leaf
  // gradients accumulate across calls until cleared with zero_grad.
  void backward() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

enum class ParamKind { kWeight, kBias };

// Named model parameter. `trainable` mirrors tensor.requires_grad().
struct Parameter {
  std::string path;
  Tensor tensor;
  bool trainable = true;
  ParamKind kind = ParamKind::kWeight;

  void set_trainable(bool v) {
    trainable = v;
    tensor.set_requires_grad(v);
  }
};

// Primitives. All record into the autodiff graph when any input
// requires a gradient; none of them mutates its inputs.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// x: [n x d] plus a rank-1 bias [d] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis; gamma/beta are rank-1 of that width.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Row lookup: table [v x d], ids -> [len x d].
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean elementwise Huber(delta=1) distance between two same-shape tensors.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);
// IoU of two (cx, cy, w, h) boxes as a scalar graph node. Zero with zero
// gradient when the boxes are disjoint.
Tensor box_iou(const Tensor& pred, const Tensor& gt);

}  // namespace vgp

#include "vgpeft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "vgpeft/error.hpp"

namespace vgp {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string fmt_shape(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

// Returns the gradient buffer of t, allocating zeros on first use, or
// nullptr when t does not require a gradient.
std::vector<double>* grad_buf(TensorNode& t) {
  if (!t.requires_grad) return nullptr;
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return &t.grad;
}

std::shared_ptr<TensorNode> make_node(std::vector<std::size_t> shape,
                                      std::vector<double> data) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return n;
}

void record(const std::shared_ptr<TensorNode>& out,
            std::vector<std::shared_ptr<TensorNode>> parents,
            std::function<void(TensorNode&)> fn) {
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  if (!needs) return;
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backward_fn = std::move(fn);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         t.shape_str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
}

void require_box4(const Tensor& t, const char* op) {
  if (t.size() != 4)
    throw DimensionError(std::string(op) + ": expected 4 box coordinates, got " +
                         t.shape_str());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  node_ = make_node(std::move(shape), std::vector<double>(n, fill));
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data,
               bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw DimensionError("tensor: " + fmt_shape(shape) + " cannot hold " +
                         std::to_string(data.size()) + " values");
  node_ = make_node(std::move(shape), std::move(data));
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

Tensor Tensor::scalar(double v) { return Tensor({}, std::vector<double>{v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return Tensor(std::move(shape), 0.0, requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::rank() const { return node_->shape.size(); }
std::size_t Tensor::size() const { return node_->data.size(); }
std::string Tensor::shape_str() const { return fmt_shape(node_->shape); }

double Tensor::value() const {
  if (size() != 1)
    throw ContractError("value: tensor " + shape_str() + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank2(*this, "at");
  return node_->data[r * node_->shape[1] + c];
}

std::vector<double>& Tensor::data() { return node_->data; }
const std::vector<double>& Tensor::data() const { return node_->data; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad())
    throw ContractError("grad: no gradient has been accumulated");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward: empty tensor");
  if (node_->data.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_str());
  if (!node_->backward_fn)
    throw ContractError("backward: tensor is not part of a recorded graph");

  // Iterative post-order DFS for the topological order.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      TensorNode* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients are scratch space for this sweep; leaves keep
  // accumulating until the caller clears them.
  for (TensorNode* n : topo)
    if (n->backward_fn) n->grad.assign(n->data.size(), 0.0);
  node_->grad.assign(1, 1.0);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions disagree " + a.shape_str() +
                         " vs " + b.shape_str());
  const std::size_t n = b.shape()[1];

  std::vector<double> out(m * n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      const double* brow = &bd[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }

  auto node = make_node({m, n}, std::move(out));
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  record(node, {a.node(), b.node()}, [an, bn, m, k, n](TensorNode& o) {
    const double* g = o.grad.data();
    if (auto* ga = grad_buf(*an)) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = &g[i * n];
          const double* brow = &bn->data[p * n];
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          (*ga)[i * k + p] += acc;
        }
    }
    if (auto* gb = grad_buf(*bn)) {
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double av = an->data[i * k + p];
          double* brow = &(*gb)[p * n];
          for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
  return Tensor(node);
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];

  auto node = make_node({n, m}, std::move(out));
  TensorNode* an = a.node().get();
  record(node, {a.node()}, [an, m, n](TensorNode& o) {
    if (auto* ga = grad_buf(*an))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          (*ga)[i * n + j] += o.grad[j * m + i];
  });
  return Tensor(node);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] + b.data()[i];

  auto node = make_node(a.shape(), std::move(out));
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  record(node, {a.node(), b.node()}, [an, bn](TensorNode& o) {
    if (auto* ga = grad_buf(*an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i];
    if (auto* gb = grad_buf(*bn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gb)[i] += o.grad[i];
  });
  return Tensor(node);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] - b.data()[i];

  auto node = make_node(a.shape(), std::move(out));
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  record(node, {a.node(), b.node()}, [an, bn](TensorNode& o) {
    if (auto* ga = grad_buf(*an))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i];
    if (auto* gb = grad_buf(*bn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gb)[i] -= o.grad[i];
  });
  return Tensor(node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] * b.data()[i];

  auto node = make_node(a.shape(), std::move(out));
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  record(node, {a.node(), b.node()}, [an, bn](TensorNode& o) {
    if (auto* ga = grad_buf(*an))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        (*ga)[i] += o.grad[i] * bn->data[i];
    if (auto* gb = grad_buf(*bn))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        (*gb)[i] += o.grad[i] * an->data[i];
  });
  return Tensor(node);
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;

  auto node = make_node(a.shape(), std::move(out));
  TensorNode* an = a.node().get();
  record(node, {a.node()}, [an, s](TensorNode& o) {
    if (auto* ga = grad_buf(*an))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        (*ga)[i] += o.grad[i] * s;
  });
  return Tensor(node);
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  if (bias.rank() != 1 || bias.shape()[0] != x.shape()[1])
    throw DimensionError("add_bias: bias " + bias.shape_str() +
                         " does not match " + x.shape_str());
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = x.data()[i * d + j] + bias.data()[j];

  auto node = make_node(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* bn = bias.node().get();
  record(node, {x.node(), bias.node()}, [xn, bn, n, d](TensorNode& o) {
    if (auto* gx = grad_buf(*xn))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i];
    if (auto* gb = grad_buf(*bn))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += o.grad[i * d + j];
  });
  return Tensor(node);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + x.shape_str());
  const auto& shape = x.shape();
  const std::size_t len = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  std::vector<double> out(x.size());
  const double* xd = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xd[base];
      for (std::size_t k = 1; k < len; ++k)
        mx = std::max(mx, xd[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xd[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
    }

  auto node = make_node(shape, std::move(out));
  TensorNode* xn = x.node().get();
  record(node, {x.node()}, [xn, outer, inner, len](TensorNode& o) {
    auto* gx = grad_buf(*xn);
    if (!gx) return;
    for (std::size_t ou = 0; ou < outer; ++ou)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = ou * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          dot += o.grad[idx] * o.data[idx];
        }
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          (*gx)[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
  });
  return Tensor(node);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() == 0)
    throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d)
    throw DimensionError("layer_norm: gamma/beta width " + gamma.shape_str() +
                         "/" + beta.shape_str() + " does not match " +
                         x.shape_str());
  const std::size_t rows = x.size() / d;

  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const double* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xd[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }

  auto node = make_node(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  TensorNode* gn = gamma.node().get();
  TensorNode* bn = beta.node().get();
  record(node, {x.node(), gamma.node(), beta.node()},
         [xn, gn, bn, rows, d, xhat = std::move(xhat),
          inv_std = std::move(inv_std)](TensorNode& o) {
           auto* gx = grad_buf(*xn);
           auto* gg = grad_buf(*gn);
           auto* gb = grad_buf(*bn);
           for (std::size_t r = 0; r < rows; ++r) {
             const double* g = &o.grad[r * d];
             const double* h = &xhat[r * d];
             if (gg || gb)
               for (std::size_t j = 0; j < d; ++j) {
                 if (gg) (*gg)[j] += g[j] * h[j];
                 if (gb) (*gb)[j] += g[j];
               }
             if (gx) {
               double mean_hg = 0.0, mean_hgx = 0.0;
               for (std::size_t j = 0; j < d; ++j) {
                 const double hg = g[j] * gn->data[j];
                 mean_hg += hg;
                 mean_hgx += hg * h[j];
               }
               mean_hg /= static_cast<double>(d);
               mean_hgx /= static_cast<double>(d);
               for (std::size_t j = 0; j < d; ++j) {
                 const double hg = g[j] * gn->data[j];
                 (*gx)[r * d + j] +=
                     inv_std[r] * (hg - mean_hg - h[j] * mean_hgx);
               }
             }
           }
         });
  return Tensor(node);
}

Tensor gelu(const Tensor& x) {
  static constexpr double kInvSqrt2 = 0.7071067811865475244;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }

  auto node = make_node(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  record(node, {x.node()}, [xn](TensorNode& o) {
    auto* gx = grad_buf(*xn);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double v = xn->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      (*gx)[i] += o.grad[i] * (cdf + v * pdf);
    }
  });
  return Tensor(node);
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));

  auto node = make_node(x.shape(), std::move(out));
  TensorNode* xn = x.node().get();
  record(node, {x.node()}, [xn](TensorNode& o) {
    auto* gx = grad_buf(*xn);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double s = o.data[i];
      (*gx)[i] += o.grad[i] * s * (1.0 - s);
    }
  });
  return Tensor(node);
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  require_rank2(table, "embedding");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  for (std::size_t id : ids)
    if (id >= v)
      throw InputError("embedding: id " + std::to_string(id) +
                       " out of range for table " + table.shape_str());
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(&table.data()[ids[i] * d], d, &out[i * d]);

  auto node = make_node({ids.size(), d}, std::move(out));
  TensorNode* tn = table.node().get();
  record(node, {table.node()}, [tn, ids, d](TensorNode& o) {
    auto* gt = grad_buf(*tn);
    if (!gt) return;
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        (*gt)[ids[i] * d + j] += o.grad[i * d + j];
  });
  return Tensor(node);
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_cols");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (begin + count > d)
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") exceeds " +
                         x.shape_str());
  std::vector<double> out(n * count);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(&x.data()[i * d + begin], count, &out[i * count]);

  auto node = make_node({n, count}, std::move(out));
  TensorNode* xn = x.node().get();
  record(node, {x.node()}, [xn, begin, count, n, d](TensorNode& o) {
    auto* gx = grad_buf(*xn);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j)
        (*gx)[i * d + begin + j] += o.grad[i * count + j];
  });
  return Tensor(node);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts[0].shape()[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != n)
      throw DimensionError("concat_cols: row count mismatch " + p.shape_str());
    total += p.shape()[1];
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(&p.data()[i * w], w, &out[i * total + off]);
    off += w;
  }

  auto node = make_node({n, total}, std::move(out));
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::vector<TensorNode*> raw;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    parents.push_back(p.node());
    raw.push_back(p.node().get());
    widths.push_back(p.shape()[1]);
  }
  record(node, std::move(parents),
         [raw = std::move(raw), widths = std::move(widths), n,
          total](TensorNode& o) {
           std::size_t off = 0;
           for (std::size_t k = 0; k < raw.size(); ++k) {
             if (auto* g = grad_buf(*raw[k]))
               for (std::size_t i = 0; i < n; ++i)
                 for (std::size_t j = 0; j < widths[k]; ++j)
                   (*g)[i * widths[k] + j] += o.grad[i * total + off + j];
             off += widths[k];
           }
         });
  return Tensor(node);
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_rows");
  require_rank2(b, "concat_rows");
  if (a.shape()[1] != b.shape()[1])
    throw DimensionError("concat_rows: width mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  const std::size_t na = a.shape()[0], nb = b.shape()[0], d = a.shape()[1];
  std::vector<double> out;
  out.reserve((na + nb) * d);
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());

  auto node = make_node({na + nb, d}, std::move(out));
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  record(node, {a.node(), b.node()}, [an, bn, na, d](TensorNode& o) {
    if (auto* ga = grad_buf(*an))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += o.grad[i];
    if (auto* gb = grad_buf(*bn))
      for (std::size_t i = 0; i < gb->size(); ++i)
        (*gb)[i] += o.grad[na * d + i];
  });
  return Tensor(node);
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;

  auto node = make_node({}, {total});
  TensorNode* xn = x.node().get();
  record(node, {x.node()}, [xn](TensorNode& o) {
    if (auto* gx = grad_buf(*xn))
      for (double& g : *gx) g += o.grad[0];
  });
  return Tensor(node);
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (double v : x.data()) total += v;

  auto node = make_node({}, {total / n});
  TensorNode* xn = x.node().get();
  record(node, {x.node()}, [xn, n](TensorNode& o) {
    if (auto* gx = grad_buf(*xn))
      for (double& g : *gx) g += o.grad[0] / n;
  });
  return Tensor(node);
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "smooth_l1");
  const double n = static_cast<double>(pred.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    const double a = std::abs(d);
    total += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }

  auto node = make_node({}, {total / n});
  TensorNode* pn = pred.node().get();
  TensorNode* tn = target.node().get();
  record(node, {pred.node(), target.node()}, [pn, tn, n](TensorNode& o) {
    auto* gp = grad_buf(*pn);
    auto* gt = grad_buf(*tn);
    if (!gp && !gt) return;
    for (std::size_t i = 0; i < pn->data.size(); ++i) {
      const double d = pn->data[i] - tn->data[i];
      const double dd = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
      const double g = o.grad[0] * dd / n;
      if (gp) (*gp)[i] += g;
      if (gt) (*gt)[i] -= g;
    }
  });
  return Tensor(node);
}

namespace {

struct Corners {
  double x1, y1, x2, y2;
};

Corners to_corners(const double* b) {
  return {b[0] - 0.5 * b[2], b[1] - 0.5 * b[3], b[0] + 0.5 * b[2],
          b[1] + 0.5 * b[3]};
}

}  // namespace

Tensor box_iou(const Tensor& pred, const Tensor& gt) {
  require_box4(pred, "box_iou");
  require_box4(gt, "box_iou");
  const double* p = pred.data().data();
  const double* q = gt.data().data();
  if (p[2] <= 0.0 || p[3] <= 0.0 || q[2] <= 0.0 || q[3] <= 0.0)
    throw InputError("box_iou: boxes must have positive width and height");

  // Areas use the same corner values as the intersection so identical
  // boxes land on exactly 1.
  const Corners a = to_corners(p);
  const Corners b = to_corners(q);
  const double xl = std::max(a.x1, b.x1), xr = std::min(a.x2, b.x2);
  const double yl = std::max(a.y1, b.y1), yr = std::min(a.y2, b.y2);
  const double iw = xr - xl, ih = yr - yl;
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni =
      (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  const double iou = overlap ? inter / uni : 0.0;

  auto node = make_node({}, {iou});
  TensorNode* pn = pred.node().get();
  TensorNode* qn = gt.node().get();
  record(node, {pred.node(), gt.node()}, [pn, qn](TensorNode& o) {
    const double* p = pn->data.data();
    const double* q = qn->data.data();
    const Corners a = to_corners(p);
    const Corners b = to_corners(q);
    const double xl = std::max(a.x1, b.x1), xr = std::min(a.x2, b.x2);
    const double yl = std::max(a.y1, b.y1), yr = std::min(a.y2, b.y2);
    const double iw = xr - xl, ih = yr - yl;
    if (iw <= 0.0 || ih <= 0.0) {
      // The flat zero region still answers with an (exactly zero) gradient.
      grad_buf(*pn);
      grad_buf(*qn);
      return;
    }
    const double inter = iw * ih;
    const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) +
                       (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    const double d_inter = (uni + inter) / (uni * uni);
    const double d_area = -inter / (uni * uni);
    const double g = o.grad[0];

    auto side = [&](const Corners& c, const Corners& other,
                    std::vector<double>* gb) {
      if (!gb) return;
      // Subgradients of the intersection edges owned by this box.
      const double ax1 = c.x1 > other.x1 ? 1.0 : 0.0;
      const double ax2 = c.x2 < other.x2 ? 1.0 : 0.0;
      const double ay1 = c.y1 > other.y1 ? 1.0 : 0.0;
      const double ay2 = c.y2 < other.y2 ? 1.0 : 0.0;
      const double di_cx = ih * (ax2 - ax1);
      const double di_cy = iw * (ay2 - ay1);
      const double di_w = 0.5 * ih * (ax1 + ax2);
      const double di_h = 0.5 * iw * (ay1 + ay2);
      (*gb)[0] += g * d_inter * di_cx;
      (*gb)[1] += g * d_inter * di_cy;
      (*gb)[2] += g * (d_inter * di_w + d_area * (c.y2 - c.y1));
      (*gb)[3] += g * (d_inter * di_h + d_area * (c.x2 - c.x1));
    };
    side(a, b, grad_buf(*pn));
    side(b, a, grad_buf(*qn));
  });
  return Tensor(node);
}

}  // namespace vgp

#pragma once

// Minimal reverse-mode automatic differentiation over float64 NCHW tensors.
//
// A Var is a shared handle to a graph node. Ops record their inputs and a
// backward closure when gradient tracking is enabled and at least one input
// requires a gradient; otherwise they return plain constants. backward()
// consumes the graph: intermediate nodes drop their closures and gradients,
// leaves keep accumulating until zero_grad().

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "nightiq/tensor.hpp"

namespace nightiq::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Zero-initialized gradient buffer matching value.
  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var parameter(Tensor value) { return Var(std::move(value), true); }
  static Var constant(Tensor value) { return Var(std::move(value), false); }

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Tensor& value() const { return node_->value; }
  /// In-place access for optimizers and running statistics.
  Tensor& value_mut() { return node_->value; }
  [[nodiscard]] const Tensor& grad() const { return node_->grad; }
  Tensor& grad_mut() { return node_->grad; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] double item() const;
  void zero_grad();
  [[nodiscard]] Var detach() const { return Var(node_->value, false); }
  [[nodiscard]] const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

[[nodiscard]] bool grad_enabled();

/// While alive, relu/abs/clamp_min/signed_sqrt_normalize hash which side of their
/// non-differentiable point every element falls on. Two evaluations with equal
/// fingerprints lie in the same smooth piece (up to hash collisions).
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  [[nodiscard]] std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  std::uint64_t fingerprint_ = 0xcbf29ce484222325ULL;
  std::uint64_t* previous_;
};

/// Backpropagates from a single-element root.
void backward(const Var& root);

// ---- elementwise (binary ops broadcast any extent equal to 1) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var exp(const Var& a);
/// max(a, floor) elementwise; the gradient passes only where a > floor.
Var clamp_min(const Var& a, double floor);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(double s, const Var& a) { return mul_scalar(a, s); }

// ---- reductions and reshaping ----
Var sum(const Var& a);
Var mean(const Var& a);
/// (N,C,H,W) -> (N,1,H,W)
Var channel_mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var concat_channels(std::span<const Var> parts);
Var concat_batch(std::span<const Var> parts);
Var slice_batch(const Var& a, int begin, int count);

// ---- spatial ----
/// Forward difference along x; the last column is 0.
Var diff_x(const Var& a);
/// Forward difference along y; the last row is 0.
Var diff_y(const Var& a);
/// 2x2 mean pooling, floor semantics.
Var avg_pool2(const Var& a);
/// Bilinear resampling with half-pixel centers.
Var resize_bilinear(const Var& a, int out_h, int out_w);

enum class Padding { kValid, kReplicate };

/// Depthwise 2-D filtering with the separable kernel scale * k(dy) * k(dx).
/// kValid shrinks each extent by len(k) - 1.
Var separable_filter(const Var& a, std::span<const double> kernel, double scale, Padding padding);

// ---- layers ----
/// Stride-1 "same" convolution. weight is (Cout, Cin, k, k) with odd k;
/// bias is (1, Cout, 1, 1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias);

struct BatchNormBuffers {
  Var running_mean;  // (1, C, 1, 1)
  Var running_var;   // (1, C, 1, 1)
  double momentum = 0.1;
  double eps = 1e-5;
};

enum class NormMode {
  kTrain,          // batch statistics, running statistics updated
  kTrainNoUpdate,  // batch statistics, running statistics untouched
  kEval,           // running statistics
};

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers& buffers,
               NormMode mode);

/// Location-averaged outer product: (N,Ca,H,W) x (N,Cb,H,W) -> (N, Ca*Cb, 1, 1),
/// flattened row-major over (a-channel, b-channel).
Var bilinear_pool(const Var& a, const Var& b);

/// Per-sample sign(x) * sqrt(|x|) followed by division by its l2 norm.
/// An all-zero sample stays all-zero.
Var signed_sqrt_normalize(const Var& a);

}  // namespace nightiq::ag

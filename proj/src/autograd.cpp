#include "nightiq/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <unordered_set>

namespace nightiq::ag {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t* g_kink_fingerprint = nullptr;

// Folds which side of `threshold` every element lies on into the active probe.
void record_sides(const Tensor& x, double threshold) {
  if (g_kink_fingerprint == nullptr) return;
  std::uint64_t h = *g_kink_fingerprint;
  std::uint64_t word = 0;
  int bits = 0;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    word = (word << 1) | (x[i] > threshold ? 1u : 0u);
    if (++bits == 64) {
      mix(word);
      word = 0;
      bits = 0;
    }
  }
  mix(word);
  mix(x.size());
  *g_kink_fingerprint = h;
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

// ---- broadcasting elementwise helpers ----

struct Strides {
  std::size_t n, c, h, w;
};

Strides broadcast_strides(const Shape& s, const Shape& out) {
  auto pick = [](int dim, int od, std::size_t stride) -> std::size_t {
    if (dim == od) return stride;
    if (dim == 1) return 0;
    throw std::invalid_argument("shapes are not broadcast-compatible");
  };
  const std::size_t sw = 1;
  const std::size_t sh = static_cast<std::size_t>(s.w);
  const std::size_t sc = sh * s.h;
  const std::size_t sn = sc * s.c;
  return {pick(s.n, out.n, sn), pick(s.c, out.c, sc), pick(s.h, out.h, sh), pick(s.w, out.w, sw)};
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  auto dim = [](int x, int y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw std::invalid_argument("shapes are not broadcast-compatible");
  };
  return {dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

template <typename Fn>
void for_each_broadcast(const Shape& out, const Strides& sa, const Strides& sb, Fn&& fn) {
  std::size_t o = 0;
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int y = 0; y < out.h; ++y) {
        std::size_t ia = n * sa.n + c * sa.c + y * sa.h;
        std::size_t ib = n * sb.n + c * sb.c + y * sb.h;
        for (int x = 0; x < out.w; ++x, ++o, ia += sa.w, ib += sb.w) fn(o, ia, ib);
      }
}

// fwd(a, b) -> out; da(a, b) and db(a, b) are the partials.
template <typename Fwd, typename Da, typename Db>
Var binary_op(const Var& a, const Var& b, Fwd fwd, Da da, Db db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape);
  const Strides sa = broadcast_strides(a.shape(), out_shape);
  const Strides sb = broadcast_strides(b.shape(), out_shape);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* ov = out.data();
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { ov[o] = fwd(av[ia], bv[ib]); });
  return make_op(std::move(out), {a, b}, [out_shape, sa, sb, da, db](Node& self) {
    const double* g = self.grad.data();
    const double* av = self.inputs[0]->value.data();
    const double* bv = self.inputs[1]->value.data();
    double* ga = wants(self, 0) ? self.inputs[0]->grad_buffer().data() : nullptr;
    double* gb = wants(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      if (ga) ga[ia] += g[o] * da(av[ia], bv[ib]);
      if (gb) gb[ib] += g[o] * db(av[ia], bv[ib]);
    });
  });
}

// fwd(x) -> y; deriv(x, y) -> dy/dx.
template <typename Fwd, typename Deriv>
Var unary_op(const Var& a, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape());
  const double* av = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_op(std::move(out), {a}, [deriv](Node& self) {
    const double* g = self.grad.data();
    const double* x = self.inputs[0]->value.data();
    const double* y = self.value.data();
    double* gx = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
  });
}

// ---- convolution helpers ----

void im2col(const double* x, int cin, int h, int w, int k, double* col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::size_t row = 0;
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        double* dst = col + row * hw;
        const double* src = x + static_cast<std::size_t>(ci) * hw;
        const int dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          double* d = dst + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(d, d + w, 0.0);
            continue;
          }
          const double* s = src + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          std::fill(d, d + x0, 0.0);
          for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx + dx];
          std::fill(d + std::max(x0, x1), d + w, 0.0);
        }
      }
}

void col2im_add(const double* col, int cin, int h, int w, int k, double* x) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::size_t row = 0;
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        const double* src = col + row * hw;
        double* dst = x + static_cast<std::size_t>(ci) * hw;
        const int dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* s = src + static_cast<std::size_t>(y) * w;
          double* d = dst + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          for (int xx = x0; xx < x1; ++xx) d[xx + dx] += s[xx];
        }
      }
}

// ---- separable filter helpers ----

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

// Row pass (along x) then column pass (along y) on one plane.
void filter_plane(const double* in, int h, int w, std::span<const double> k, double scale,
                  Padding padding, double* out, AlignedVector& tmp) {
  const int len = static_cast<int>(k.size());
  const int r = len / 2;
  const bool valid = padding == Padding::kValid;
  const int ow = valid ? w - 2 * r : w;
  const int oh = valid ? h - 2 * r : h;
  tmp.assign(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y) {
    const double* s = in + static_cast<std::size_t>(y) * w;
    double* t = tmp.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      if (valid) {
        for (int j = 0; j < len; ++j) acc += k[j] * s[x + j];
      } else {
        for (int j = 0; j < len; ++j) acc += k[j] * s[clamp_index(x + j - r, w)];
      }
      t[x] = acc;
    }
  }
  for (int y = 0; y < oh; ++y) {
    double* o = out + static_cast<std::size_t>(y) * ow;
    std::fill(o, o + ow, 0.0);
    for (int i = 0; i < len; ++i) {
      const int sy = valid ? y + i : clamp_index(y + i - r, h);
      const double* t = tmp.data() + static_cast<std::size_t>(sy) * ow;
      const double ki = k[i] * scale;
      for (int x = 0; x < ow; ++x) o[x] += ki * t[x];
    }
  }
}

void filter_plane_adjoint(const double* gout, int h, int w, std::span<const double> k,
                          double scale, Padding padding, double* gin, AlignedVector& tmp) {
  const int len = static_cast<int>(k.size());
  const int r = len / 2;
  const bool valid = padding == Padding::kValid;
  const int ow = valid ? w - 2 * r : w;
  const int oh = valid ? h - 2 * r : h;
  tmp.assign(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    const double* g = gout + static_cast<std::size_t>(y) * ow;
    for (int i = 0; i < len; ++i) {
      const int sy = valid ? y + i : clamp_index(y + i - r, h);
      double* t = tmp.data() + static_cast<std::size_t>(sy) * ow;
      const double ki = k[i] * scale;
      for (int x = 0; x < ow; ++x) t[x] += ki * g[x];
    }
  }
  for (int y = 0; y < h; ++y) {
    const double* t = tmp.data() + static_cast<std::size_t>(y) * ow;
    double* d = gin + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < ow; ++x) {
      if (valid) {
        for (int j = 0; j < len; ++j) d[x + j] += k[j] * t[x];
      } else {
        for (int j = 0; j < len; ++j) d[clamp_index(x + j - r, w)] += k[j] * t[x];
      }
    }
  }
}

// ---- resize helpers ----

struct AxisWeights {
  std::vector<int> i0, i1;
  AlignedVector l0, l1;
};

AxisWeights axis_weights(int in, int out) {
  AxisWeights a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.l0.resize(out);
  a.l1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = scale * (o + 0.5) - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 + (i0 < in - 1 ? 1 : 0);
    const double l1 = src - i0;
    a.i0[o] = i0;
    a.i1[o] = i1;
    a.l1[o] = l1;
    a.l0[o] = 1.0 - l1;
  }
  return a;
}

}  // namespace

// ---- Node / Var ----

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Node::accumulate(const Tensor& g) { grad_buffer().add_inplace(g); }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (node_->value.size() != 1) {
    throw std::logic_error("item() on non-scalar tensor " + node_->value.shape().str());
  }
  return node_->value[0];
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

KinkProbe::KinkProbe() : previous_(g_kink_fingerprint) { g_kink_fingerprint = &fingerprint_; }
KinkProbe::~KinkProbe() { g_kink_fingerprint = previous_; }

void backward(const Var& root) {
  if (root.value().size() != 1) throw std::logic_error("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order. Owning pointers keep
  // every node alive while parents release their inputs below.
  std::vector<NodePtr> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      NodePtr child = top.first->inputs[top.second++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& node = **it;
    if (!node.backward) continue;  // leaf
    if (!node.grad.empty()) node.backward(node);
    node.backward = nullptr;
    node.inputs.clear();
    node.grad = Tensor();
  }
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  if (a.shape() == b.shape()) {
    Tensor out = a.value();
    out.add_inplace(b.value());
    return make_op(std::move(out), {a, b}, [](Node& self) {
      for (std::size_t i = 0; i < 2; ++i)
        if (wants(self, i)) self.inputs[i]->accumulate(self.grad);
    });
  }
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var add_scalar(const Var& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var relu(const Var& a) {
  record_sides(a.value(), 0.0);
  return unary_op(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary_op(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var abs(const Var& a) {
  record_sides(a.value(), 0.0);
  return unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary_op(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(const Var& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var clamp_min(const Var& a, double floor) {
  record_sides(a.value(), floor);
  return unary_op(
      a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- reductions / reshaping ----

Var sum(const Var& a) {
  return make_op(Tensor::scalar(a.value().sum()), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double s = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return make_op(Tensor::scalar(a.value().sum() / n), {a}, [n](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double s = self.grad[0] / n;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
  });
}

Var channel_mean(const Var& a) {
  const Shape s = a.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  const std::size_t hw = s.plane();
  for (int n = 0; n < s.n; ++n) {
    double* o = out.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const double* p = a.value().plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) o[i] += p[i];
    }
    for (std::size_t i = 0; i < hw; ++i) o[i] /= s.c;
  }
  return make_op(std::move(out), {a}, [s, hw](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      const double* go = self.grad.plane(n, 0);
      for (int c = 0; c < s.c; ++c) {
        double* gi = g.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) gi[i] += go[i] / s.c;
      }
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  const Shape original = a.shape();
  return make_op(a.value().reshaped(shape), {a}, [original](Node& self) {
    self.inputs[0]->accumulate(self.grad.reshaped(original));
  });
}

Var concat_channels(std::span<const Var> parts) {
  require(!parts.empty(), "concat_channels needs at least one input");
  Shape s = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    require(ps.n == s.n && ps.h == s.h && ps.w == s.w, "concat_channels extent mismatch");
    total += ps.c;
  }
  Shape os{s.n, total, s.h, s.w};
  Tensor out(os);
  const std::size_t hw = s.plane();
  for (int n = 0; n < s.n; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const int pc = p.shape().c;
      std::copy_n(p.value().plane(n, 0), pc * hw, out.plane(n, c0));
      c0 += pc;
    }
  }
  return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [hw](Node& self) {
    const int batch = self.value.shape().n;
    int c0 = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      Node& in = *self.inputs[i];
      const int pc = in.value.shape().c;
      if (in.requires_grad) {
        Tensor& g = in.grad_buffer();
        for (int n = 0; n < batch; ++n) {
          const double* src = self.grad.plane(n, c0);
          double* dst = g.plane(n, 0);
          for (std::size_t j = 0; j < pc * hw; ++j) dst[j] += src[j];
        }
      }
      c0 += pc;
    }
  });
}

Var concat_batch(std::span<const Var> parts) {
  require(!parts.empty(), "concat_batch needs at least one input");
  Shape s = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    require(ps.c == s.c && ps.h == s.h && ps.w == s.w, "concat_batch extent mismatch");
    total += ps.n;
  }
  Tensor out(Shape{total, s.c, s.h, s.w});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = in->value.size();
      if (in->requires_grad) {
        double* g = in->grad_buffer().data();
        for (std::size_t j = 0; j < len; ++j) g[j] += self.grad[off + j];
      }
      off += len;
    }
  });
}

Var slice_batch(const Var& a, int begin, int count) {
  const Shape s = a.shape();
  require(begin >= 0 && count > 0 && begin + count <= s.n, "slice_batch out of range");
  const std::size_t per = static_cast<std::size_t>(s.c) * s.h * s.w;
  Tensor out(Shape{count, s.c, s.h, s.w});
  std::copy_n(a.value().data() + begin * per, count * per, out.data());
  return make_op(std::move(out), {a}, [begin, per](Node& self) {
    double* g = self.inputs[0]->grad_buffer().data() + begin * per;
    for (std::size_t j = 0; j < self.grad.size(); ++j) g[j] += self.grad[j];
  });
}

// ---- spatial ----

Var diff_x(const Var& a) {
  const Shape s = a.shape();
  Tensor out(s);
  const double* in = a.value().data();
  for (std::size_t row = 0; row < static_cast<std::size_t>(s.n) * s.c * s.h; ++row) {
    const double* r = in + row * s.w;
    double* o = out.data() + row * s.w;
    for (int x = 0; x + 1 < s.w; ++x) o[x] = r[x + 1] - r[x];
  }
  return make_op(std::move(out), {a}, [s](Node& self) {
    double* g = self.inputs[0]->grad_buffer().data();
    for (std::size_t row = 0; row < static_cast<std::size_t>(s.n) * s.c * s.h; ++row) {
      const double* go = self.grad.data() + row * s.w;
      double* gi = g + row * s.w;
      for (int x = 0; x + 1 < s.w; ++x) {
        gi[x + 1] += go[x];
        gi[x] -= go[x];
      }
    }
  });
}

Var diff_y(const Var& a) {
  const Shape s = a.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = a.value().plane(n, c);
      double* o = out.plane(n, c);
      for (int y = 0; y + 1 < s.h; ++y)
        for (int x = 0; x < s.w; ++x) o[y * s.w + x] = p[(y + 1) * s.w + x] - p[y * s.w + x];
    }
  return make_op(std::move(out), {a}, [s](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double* go = self.grad.plane(n, c);
        double* gi = g.plane(n, c);
        for (int y = 0; y + 1 < s.h; ++y)
          for (int x = 0; x < s.w; ++x) {
            gi[(y + 1) * s.w + x] += go[y * s.w + x];
            gi[y * s.w + x] -= go[y * s.w + x];
          }
      }
  });
}

Var avg_pool2(const Var& a) {
  const Shape s = a.shape();
  require(s.h >= 2 && s.w >= 2, "avg_pool2 needs at least 2x2 input");
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = a.value().plane(n, c);
      double* o = out.plane(n, c);
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x) {
          const double* q = p + 2 * y * s.w + 2 * x;
          o[y * os.w + x] = 0.25 * (q[0] + q[1] + q[s.w] + q[s.w + 1]);
        }
    }
  return make_op(std::move(out), {a}, [s, os](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double* go = self.grad.plane(n, c);
        double* gi = g.plane(n, c);
        for (int y = 0; y < os.h; ++y)
          for (int x = 0; x < os.w; ++x) {
            const double v = 0.25 * go[y * os.w + x];
            double* q = gi + 2 * y * s.w + 2 * x;
            q[0] += v;
            q[1] += v;
            q[s.w] += v;
            q[s.w + 1] += v;
          }
      }
  });
}

Var resize_bilinear(const Var& a, int out_h, int out_w) {
  const Shape s = a.shape();
  require(out_h > 0 && out_w > 0, "resize_bilinear target must be positive");
  const AxisWeights ay = axis_weights(s.h, out_h);
  const AxisWeights ax = axis_weights(s.w, out_w);
  const Shape os{s.n, s.c, out_h, out_w};
  Tensor out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = a.value().plane(n, c);
      double* o = out.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        const double* r0 = p + ay.i0[y] * s.w;
        const double* r1 = p + ay.i1[y] * s.w;
        for (int x = 0; x < out_w; ++x) {
          o[y * out_w + x] = ay.l0[y] * (ax.l0[x] * r0[ax.i0[x]] + ax.l1[x] * r0[ax.i1[x]]) +
                             ay.l1[y] * (ax.l0[x] * r1[ax.i0[x]] + ax.l1[x] * r1[ax.i1[x]]);
        }
      }
    }
  return make_op(std::move(out), {a}, [s, os, ay, ax](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double* go = self.grad.plane(n, c);
        double* gi = g.plane(n, c);
        for (int y = 0; y < os.h; ++y) {
          double* r0 = gi + ay.i0[y] * s.w;
          double* r1 = gi + ay.i1[y] * s.w;
          for (int x = 0; x < os.w; ++x) {
            const double v = go[y * os.w + x];
            r0[ax.i0[x]] += ay.l0[y] * ax.l0[x] * v;
            r0[ax.i1[x]] += ay.l0[y] * ax.l1[x] * v;
            r1[ax.i0[x]] += ay.l1[y] * ax.l0[x] * v;
            r1[ax.i1[x]] += ay.l1[y] * ax.l1[x] * v;
          }
        }
      }
  });
}

Var separable_filter(const Var& a, std::span<const double> kernel, double scale, Padding padding) {
  const Shape s = a.shape();
  const int len = static_cast<int>(kernel.size());
  require(len % 2 == 1, "separable_filter kernel length must be odd");
  Shape os = s;
  if (padding == Padding::kValid) {
    require(s.h >= len && s.w >= len, "image smaller than filter window");
    os.h = s.h - (len - 1);
    os.w = s.w - (len - 1);
  }
  Tensor out(os);
  AlignedVector tmp;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      filter_plane(a.value().plane(n, c), s.h, s.w, kernel, scale, padding, out.plane(n, c), tmp);
  std::vector<double> k(kernel.begin(), kernel.end());
  return make_op(std::move(out), {a}, [s, k, scale, padding](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    AlignedVector tmp;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        filter_plane_adjoint(self.grad.plane(n, c), s.h, s.w, k, scale, padding, g.plane(n, c), tmp);
  });
}

// ---- layers ----

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int cout = ws.n;
  const int cin = ws.c;
  const int k = ws.h;
  require(ws.h == ws.w && k % 2 == 1, "conv2d kernel must be square with odd size");
  if (xs.c != cin) {
    throw std::invalid_argument("conv2d channel mismatch: input " + xs.str() + ", weight " +
                                ws.str());
  }
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.value().size() == static_cast<std::size_t>(cout), "conv2d bias size");

  const int hw = xs.h * xs.w;
  const int kdim = cin * k * k;
  Tensor out(Shape{xs.n, cout, xs.h, xs.w});
  CMapR wmat(weight.value().data(), cout, kdim);

  if (k == 1 && hw == 1) {
    CMapR xin(x.value().data(), xs.n, cin);
    MapR o(out.data(), xs.n, cout);
    o.noalias() = xin * wmat.transpose();
    if (has_bias) {
      for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < cout; ++co) o(n, co) += bias.value()[co];
    }
  } else {
    AlignedVector col(k == 1 ? 0 : static_cast<std::size_t>(kdim) * hw);
    for (int n = 0; n < xs.n; ++n) {
      MapR o(out.plane(n, 0), cout, hw);
      if (k == 1) {
        o.noalias() = wmat * CMapR(x.value().plane(n, 0), cin, hw);
      } else {
        im2col(x.value().plane(n, 0), cin, xs.h, xs.w, k, col.data());
        o.noalias() = wmat * CMapR(col.data(), kdim, hw);
      }
      if (has_bias) {
        for (int co = 0; co < cout; ++co) o.row(co).array() += bias.value()[co];
      }
    }
  }

  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op(std::move(out), std::move(inputs), [xs, cout, cin, k, hw, kdim, has_bias](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv = self.inputs[1]->value;
    const bool want_x = wants(self, 0);
    const bool want_w = wants(self, 1);
    const bool want_b = has_bias && wants(self, 2);
    CMapR wmat(wv.data(), cout, kdim);
    std::optional<MapR> gw;
    if (want_w) gw.emplace(self.inputs[1]->grad_buffer().data(), cout, kdim);
    double* gb = want_b ? self.inputs[2]->grad_buffer().data() : nullptr;

    if (k == 1 && hw == 1) {
      CMapR g(self.grad.data(), xs.n, cout);
      if (want_w) gw->noalias() += g.transpose() * CMapR(xv.data(), xs.n, cin);
      if (want_x) MapR(self.inputs[0]->grad_buffer().data(), xs.n, cin).noalias() += g * wmat;
      if (gb) {
        for (int n = 0; n < xs.n; ++n)
          for (int co = 0; co < cout; ++co) gb[co] += g(n, co);
      }
      return;
    }

    AlignedVector col(k == 1 ? 0 : static_cast<std::size_t>(kdim) * hw);
    MatR dcol;
    for (int n = 0; n < xs.n; ++n) {
      CMapR g(self.grad.plane(n, 0), cout, hw);
      if (gb) {
        for (int co = 0; co < cout; ++co) gb[co] += g.row(co).sum();
      }
      if (want_w) {
        if (k == 1) {
          gw->noalias() += g * CMapR(xv.plane(n, 0), cin, hw).transpose();
        } else {
          im2col(xv.plane(n, 0), cin, xs.h, xs.w, k, col.data());
          gw->noalias() += g * CMapR(col.data(), kdim, hw).transpose();
        }
      }
      if (want_x) {
        double* gx = self.inputs[0]->grad_buffer().plane(n, 0);
        if (k == 1) {
          MapR(gx, cin, hw).noalias() += wmat.transpose() * g;
        } else {
          dcol.noalias() = wmat.transpose() * g;
          col2im_add(dcol.data(), cin, xs.h, xs.w, k, gx);
        }
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormBuffers& buffers,
               NormMode mode) {
  const Shape s = x.shape();
  const int channels = s.c;
  require(gamma.value().size() == static_cast<std::size_t>(channels) &&
              beta.value().size() == static_cast<std::size_t>(channels),
          "batch_norm parameter size mismatch");
  const std::size_t hw = s.plane();
  const double count = static_cast<double>(s.n) * hw;
  const double eps = buffers.eps;

  std::vector<double> mu(channels), inv_std(channels);
  if (mode == NormMode::kEval) {
    for (int c = 0; c < channels; ++c) {
      mu[c] = buffers.running_mean.value()[c];
      inv_std[c] = 1.0 / std::sqrt(buffers.running_var.value()[c] + eps);
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      double m = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) m += p[i];
      }
      m /= count;
      double v = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = x.value().plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= count;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      if (mode == NormMode::kTrain) {
        const double mom = buffers.momentum;
        const double unbiased = count > 1 ? v * count / (count - 1) : v;
        auto& rm = buffers.running_mean.value_mut()[c];
        auto& rv = buffers.running_var.value_mut()[c];
        rm = (1 - mom) * rm + mom * m;
        rv = (1 - mom) * rv + mom * unbiased;
      }
    }
  }

  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < channels; ++c) {
      const double* p = x.value().plane(n, c);
      double* o = out.plane(n, c);
      const double gm = gamma.value()[c] * inv_std[c];
      const double b = beta.value()[c];
      for (std::size_t i = 0; i < hw; ++i) o[i] = gm * (p[i] - mu[c]) + b;
    }

  const bool batch_stats = mode != NormMode::kEval;
  return make_op(std::move(out), {x, gamma, beta},
                 [s, hw, count, mu, inv_std, batch_stats](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& gv = self.inputs[1]->value;
    double* gx = wants(self, 0) ? self.inputs[0]->grad_buffer().data() : nullptr;
    double* gg = wants(self, 1) ? self.inputs[1]->grad_buffer().data() : nullptr;
    double* gbeta = wants(self, 2) ? self.inputs[2]->grad_buffer().data() : nullptr;
    for (int c = 0; c < s.c; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const double* p = xv.plane(n, c);
        const double* g = self.grad.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          sum_dy += g[i];
          sum_dy_xhat += g[i] * (p[i] - mu[c]) * inv_std[c];
        }
      }
      if (gg) gg[c] += sum_dy_xhat;
      if (gbeta) gbeta[c] += sum_dy;
      if (!gx) continue;
      const double scale = gv[c] * inv_std[c];
      for (int n = 0; n < s.n; ++n) {
        const double* p = xv.plane(n, c);
        const double* g = self.grad.plane(n, c);
        double* d = gx + self.inputs[0]->value.index(n, c, 0, 0);
        if (batch_stats) {
          for (std::size_t i = 0; i < hw; ++i) {
            const double xhat = (p[i] - mu[c]) * inv_std[c];
            d[i] += scale * (g[i] - sum_dy / count - xhat * sum_dy_xhat / count);
          }
        } else {
          for (std::size_t i = 0; i < hw; ++i) d[i] += scale * g[i];
        }
      }
    }
  });
}

Var bilinear_pool(const Var& a, const Var& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "bilinear_pool extent mismatch");
  const int hw = sa.h * sa.w;
  const int ca = sa.c;
  const int cb = sb.c;
  Tensor out(Shape{sa.n, ca * cb, 1, 1});
  for (int n = 0; n < sa.n; ++n) {
    MapR o(out.plane(n, 0), ca, cb);
    o.noalias() = CMapR(a.value().plane(n, 0), ca, hw) * CMapR(b.value().plane(n, 0), cb, hw).transpose();
    o /= hw;
  }
  return make_op(std::move(out), {a, b}, [sa, ca, cb, hw](Node& self) {
    for (int n = 0; n < sa.n; ++n) {
      CMapR g(self.grad.plane(n, 0), ca, cb);
      if (wants(self, 0)) {
        MapR ga(self.inputs[0]->grad_buffer().plane(n, 0), ca, hw);
        ga.noalias() += (g * CMapR(self.inputs[1]->value.plane(n, 0), cb, hw)) / hw;
      }
      if (wants(self, 1)) {
        MapR gb(self.inputs[1]->grad_buffer().plane(n, 0), cb, hw);
        gb.noalias() += (g.transpose() * CMapR(self.inputs[0]->value.plane(n, 0), ca, hw)) / hw;
      }
    }
  });
}

Var signed_sqrt_normalize(const Var& a) {
  record_sides(a.value(), 0.0);
  const Shape s = a.shape();
  const std::size_t per = static_cast<std::size_t>(s.c) * s.h * s.w;
  Tensor out(s);
  std::vector<double> norms(s.n, 0.0);
  for (int n = 0; n < s.n; ++n) {
    const double* x = a.value().data() + n * per;
    double* y = out.data() + n * per;
    double sq = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      y[i] = std::copysign(std::sqrt(std::fabs(x[i])), x[i]);
      sq += y[i] * y[i];
    }
    const double norm = std::sqrt(sq);
    norms[n] = norm;
    if (norm > 0) {
      for (std::size_t i = 0; i < per; ++i) y[i] /= norm;
    } else {
      std::fill(y, y + per, 0.0);
    }
  }
  return make_op(std::move(out), {a}, [per, norms](Node& self) {
    const int batch = static_cast<int>(norms.size());
    for (int n = 0; n < batch; ++n) {
      if (norms[n] == 0) continue;
      const double* x = self.inputs[0]->value.data() + n * per;
      const double* y = self.value.data() + n * per;
      const double* g = self.grad.data() + n * per;
      double* gx = self.inputs[0]->grad_buffer().data() + n * per;
      double dot = 0.0;
      for (std::size_t i = 0; i < per; ++i) dot += y[i] * g[i];
      for (std::size_t i = 0; i < per; ++i) {
        if (x[i] == 0) continue;
        const double gs = (g[i] - y[i] * dot) / norms[n];
        gx[i] += gs / (2.0 * std::sqrt(std::fabs(x[i])));
      }
    }
  });
}

}  // namespace nightiq::ag

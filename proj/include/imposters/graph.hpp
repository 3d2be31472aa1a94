// Reverse-mode differentiation over a small DAG of dense layers (CHW, one
// sample at a time). Supports conv2d, max-pool, relu, sigmoid, fully
// connected, channel concat, bilinear upsample, and the two loss heads.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "imposters/tensor.hpp"
#include "imposters/util.hpp"

namespace imposters {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParameterSet {
  std::map<std::string, Tensor> values;
  std::map<std::string, bool> frozen;

  void add(const std::string& name, Tensor t, bool isFrozen = false) {
    values[name] = std::move(t);
    frozen[name] = isFrozen;
  }
  bool operator==(const ParameterSet&) const = default;
};

using GradMap = std::map<std::string, Tensor>;

enum class Op { input, conv2d, maxpool2, relu, sigmoid, fc, concat, upsample2 };

class Graph {
 public:
  struct Node {
    Op op;
    std::string name;
    std::vector<int> in;
    // conv2d: inC/outC/k/stride/pad; fc: inC=inDim, outC=outDim
    int inC = 0, outC = 0, k = 0, stride = 1, pad = 0;
  };

  int input(const std::string& name) { return add({Op::input, name, {}}); }
  int conv2d(int in, const std::string& name, int inC, int outC, int k, int stride = 1,
             int pad = -1) {
    if (pad < 0) pad = k / 2;
    return add({Op::conv2d, name, {in}, inC, outC, k, stride, pad});
  }
  int maxpool2(int in) { return add({Op::maxpool2, "", {in}}); }
  int relu(int in) { return add({Op::relu, "", {in}}); }
  int sigmoid(int in) { return add({Op::sigmoid, "", {in}}); }
  int fc(int in, const std::string& name, int inDim, int outDim) {
    return add({Op::fc, name, {in}, inDim, outDim});
  }
  int concat(int a, int b) { return add({Op::concat, "", {a, b}}); }
  int upsample2(int in) { return add({Op::upsample2, "", {in}}); }

  const std::vector<Node>& nodes() const { return nodes_; }

  // Creates all parameters with deterministic per-name seeds.
  ParameterSet init_params(std::uint64_t seed) const {
    ParameterSet ps;
    for (const auto& n : nodes_) {
      if (n.op == Op::conv2d) {
        const int fanIn = n.inC * n.k * n.k, fanOut = n.outC * n.k * n.k;
        ps.add(n.name + ".w", Tensor::xavier({n.outC, n.inC, n.k, n.k}, fanIn, fanOut,
                                             mix_seed(seed, fnv1a64(n.name.data(), n.name.size()))));
        ps.add(n.name + ".b", Tensor({n.outC}));
      } else if (n.op == Op::fc) {
        ps.add(n.name + ".w", Tensor::xavier({n.outC, n.inC}, n.inC, n.outC,
                                             mix_seed(seed, fnv1a64(n.name.data(), n.name.size()))));
        ps.add(n.name + ".b", Tensor({n.outC}));
      }
    }
    return ps;
  }

 private:
  int add(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }
  std::vector<Node> nodes_;
};

struct Workspace {
  std::vector<Tensor> act;
  std::vector<std::vector<int>> poolArg;  // argmax indices per maxpool node
};

namespace detail {

inline void require(bool cond, const std::string& where, const std::string& what) {
  if (!cond) throw ShapeError("layer '" + where + "': " + what);
}

// Valid output range [lo, hi) for one kernel tap: positions where
// o*stride - pad + k lands inside [0, extent).
inline std::pair<int, int> tap_range(int outExtent, int extent, int stride, int pad, int k) {
  const int off = k - pad;  // input index = o*stride + off
  int lo = off < 0 ? (-off + stride - 1) / stride : 0;
  int hi = (extent - 1 - off) / stride + 1;
  if (hi > outExtent) hi = outExtent;
  if (lo > hi) lo = hi;
  return {lo, hi};
}

inline void conv_forward(const Graph::Node& n, const Tensor& in, const Tensor& w,
                         const Tensor& b, Tensor& out) {
  require(in.shape.size() == 3 && in.shape[0] == n.inC, n.name,
          "expected input channels " + std::to_string(n.inC));
  const int H = in.shape[1], W = in.shape[2];
  const int OH = (H + 2 * n.pad - n.k) / n.stride + 1;
  const int OW = (W + 2 * n.pad - n.k) / n.stride + 1;
  require(OH > 0 && OW > 0, n.name, "output would be empty");
  out = Tensor({n.outC, OH, OW});
  for (int oc = 0; oc < n.outC; ++oc) {
    double* optr = out.data.data() + static_cast<std::size_t>(oc) * OH * OW;
    for (int i = 0; i < OH * OW; ++i) optr[i] = b.data[oc];
    for (int ic = 0; ic < n.inC; ++ic) {
      const double* iptr = in.data.data() + static_cast<std::size_t>(ic) * H * W;
      const double* wptr =
          w.data.data() + ((static_cast<std::size_t>(oc) * n.inC + ic) * n.k) * n.k;
      for (int ky = 0; ky < n.k; ++ky) {
        const auto [y0, y1] = tap_range(OH, H, n.stride, n.pad, ky);
        for (int kx = 0; kx < n.k; ++kx) {
          const double wv = wptr[ky * n.k + kx];
          const auto [x0, x1] = tap_range(OW, W, n.stride, n.pad, kx);
          for (int oy = y0; oy < y1; ++oy) {
            double* orow = optr + static_cast<std::size_t>(oy) * OW;
            const double* irow =
                iptr + static_cast<std::size_t>(oy * n.stride - n.pad + ky) * W - n.pad + kx;
            if (n.stride == 1) {
              for (int ox = x0; ox < x1; ++ox) orow[ox] += wv * irow[ox];
            } else {
              for (int ox = x0; ox < x1; ++ox) orow[ox] += wv * irow[ox * n.stride];
            }
          }
        }
      }
    }
  }
}

inline void conv_backward(const Graph::Node& n, const Tensor& in, const Tensor& w,
                          const Tensor& gout, Tensor& gin, Tensor& gw, Tensor& gb) {
  const int H = in.shape[1], W = in.shape[2];
  const int OH = gout.shape[1], OW = gout.shape[2];
  gin = Tensor(in.shape);
  gw = Tensor(w.shape);
  gb = Tensor({n.outC});
  for (int oc = 0; oc < n.outC; ++oc) {
    const double* gptr = gout.data.data() + static_cast<std::size_t>(oc) * OH * OW;
    double acc = 0;
    for (int i = 0; i < OH * OW; ++i) acc += gptr[i];
    gb.data[oc] = acc;
    for (int ic = 0; ic < n.inC; ++ic) {
      const double* iptr = in.data.data() + static_cast<std::size_t>(ic) * H * W;
      double* giptr = gin.data.data() + static_cast<std::size_t>(ic) * H * W;
      const double* wptr =
          w.data.data() + ((static_cast<std::size_t>(oc) * n.inC + ic) * n.k) * n.k;
      double* gwptr =
          gw.data.data() + ((static_cast<std::size_t>(oc) * n.inC + ic) * n.k) * n.k;
      for (int ky = 0; ky < n.k; ++ky) {
        const auto [y0, y1] = tap_range(OH, H, n.stride, n.pad, ky);
        for (int kx = 0; kx < n.k; ++kx) {
          const double wv = wptr[ky * n.k + kx];
          const auto [x0, x1] = tap_range(OW, W, n.stride, n.pad, kx);
          double gwv = 0;
          for (int oy = y0; oy < y1; ++oy) {
            const int iy = oy * n.stride - n.pad + ky;
            const double* grow = gptr + static_cast<std::size_t>(oy) * OW;
            const double* irow = iptr + static_cast<std::size_t>(iy) * W - n.pad + kx;
            double* girow = giptr + static_cast<std::size_t>(iy) * W - n.pad + kx;
            if (n.stride == 1) {
              for (int ox = x0; ox < x1; ++ox) {
                gwv += grow[ox] * irow[ox];
                girow[ox] += grow[ox] * wv;
              }
            } else {
              for (int ox = x0; ox < x1; ++ox) {
                gwv += grow[ox] * irow[ox * n.stride];
                girow[ox * n.stride] += grow[ox] * wv;
              }
            }
          }
          gwptr[ky * n.k + kx] += gwv;
        }
      }
    }
  }
}

}  // namespace detail

// Forward pass; activations for every node are kept for the backward pass.
inline Workspace forward(const Graph& g, const ParameterSet& params,
                         const std::map<std::string, Tensor>& inputs) {
  Workspace ws;
  ws.act.resize(g.nodes().size());
  ws.poolArg.resize(g.nodes().size());
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    const auto& n = g.nodes()[i];
    switch (n.op) {
      case Op::input: {
        auto it = inputs.find(n.name);
        detail::require(it != inputs.end(), n.name, "missing input tensor");
        ws.act[i] = it->second;
        break;
      }
      case Op::conv2d:
        detail::conv_forward(n, ws.act[n.in[0]], params.values.at(n.name + ".w"),
                             params.values.at(n.name + ".b"), ws.act[i]);
        break;
      case Op::maxpool2: {
        const Tensor& in = ws.act[n.in[0]];
        detail::require(in.shape.size() == 3, "maxpool", "expected CHW input");
        const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
        const int OH = H / 2, OW = W / 2;
        detail::require(OH > 0 && OW > 0, "maxpool", "input too small");
        Tensor out({C, OH, OW});
        auto& arg = ws.poolArg[i];
        arg.assign(out.numel(), 0);
        for (int c = 0; c < C; ++c) {
          for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
              int best = ((c * H + oy * 2) * W) + ox * 2;
              double bv = in.data[best];
              for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                  const int idx = ((c * H + oy * 2 + dy) * W) + ox * 2 + dx;
                  if (in.data[idx] > bv) {
                    bv = in.data[idx];
                    best = idx;
                  }
                }
              }
              const int oidx = (c * OH + oy) * OW + ox;
              out.data[oidx] = bv;
              arg[oidx] = best;
            }
          }
        }
        ws.act[i] = std::move(out);
        break;
      }
      case Op::relu: {
        Tensor out = ws.act[n.in[0]];
        for (auto& v : out.data) v = v > 0 ? v : 0;
        ws.act[i] = std::move(out);
        break;
      }
      case Op::sigmoid: {
        Tensor out = ws.act[n.in[0]];
        for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        ws.act[i] = std::move(out);
        break;
      }
      case Op::fc: {
        const Tensor& in = ws.act[n.in[0]];
        detail::require(static_cast<int>(in.numel()) == n.inC, n.name,
                        "expected flattened size " + std::to_string(n.inC) + ", got " +
                            std::to_string(in.numel()));
        const Tensor& w = params.values.at(n.name + ".w");
        const Tensor& b = params.values.at(n.name + ".b");
        Tensor out({n.outC});
        for (int o = 0; o < n.outC; ++o) {
          double acc = b.data[o];
          const double* wrow = w.data.data() + static_cast<std::size_t>(o) * n.inC;
          for (int j = 0; j < n.inC; ++j) acc += wrow[j] * in.data[j];
          out.data[o] = acc;
        }
        ws.act[i] = std::move(out);
        break;
      }
      case Op::concat: {
        const Tensor& a = ws.act[n.in[0]];
        const Tensor& b = ws.act[n.in[1]];
        detail::require(a.shape.size() == 3 && b.shape.size() == 3 &&
                            a.shape[1] == b.shape[1] && a.shape[2] == b.shape[2],
                        "concat", "spatial dims must match");
        Tensor out({a.shape[0] + b.shape[0], a.shape[1], a.shape[2]});
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.numel());
        ws.act[i] = std::move(out);
        break;
      }
      case Op::upsample2: {
        const Tensor& in = ws.act[n.in[0]];
        detail::require(in.shape.size() == 3, "upsample2", "expected CHW input");
        const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
        Tensor out({C, H * 2, W * 2});
        for (int c = 0; c < C; ++c) {
          for (int y = 0; y < H * 2; ++y) {
            const double fy = std::clamp((y + 0.5) / 2 - 0.5, 0.0, H - 1.0);
            const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, H - 1);
            const double wy = fy - y0;
            for (int x = 0; x < W * 2; ++x) {
              const double fx = std::clamp((x + 0.5) / 2 - 0.5, 0.0, W - 1.0);
              const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, W - 1);
              const double wx = fx - x0;
              const auto v = [&](int yy, int xx) {
                return in.data[(c * H + yy) * W + xx];
              };
              out.data[(c * H * 2 + y) * W * 2 + x] =
                  (1 - wy) * ((1 - wx) * v(y0, x0) + wx * v(y0, x1)) +
                  wy * ((1 - wx) * v(y1, x0) + wx * v(y1, x1));
            }
          }
        }
        ws.act[i] = std::move(out);
        break;
      }
    }
  }
  return ws;
}

// Backward pass from per-node output gradients. Returns parameter gradients;
// frozen parameters still get gradients (the optimizer skips them).
inline GradMap backward(const Graph& g, const ParameterSet& params, const Workspace& ws,
                        const std::map<int, Tensor>& outputGrads) {
  std::vector<Tensor> gact(g.nodes().size());
  for (const auto& [node, grad] : outputGrads) {
    detail::require(grad.shape == ws.act[node].shape, "output grad",
                    "gradient shape mismatch at node " + std::to_string(node));
    gact[node] = grad;
  }
  auto accum = [&](int node, const Tensor& g2) {
    if (gact[node].data.empty())
      gact[node] = g2;
    else
      for (std::size_t j = 0; j < g2.data.size(); ++j) gact[node].data[j] += g2.data[j];
  };

  GradMap grads;
  for (int i = static_cast<int>(g.nodes().size()) - 1; i >= 0; --i) {
    const auto& n = g.nodes()[i];
    if (gact[i].data.empty()) continue;  // node not on any loss path
    const Tensor& gout = gact[i];
    switch (n.op) {
      case Op::input:
        break;
      case Op::conv2d: {
        Tensor gin, gw, gb;
        detail::conv_backward(n, ws.act[n.in[0]], params.values.at(n.name + ".w"), gout,
                              gin, gw, gb);
        grads[n.name + ".w"] = std::move(gw);
        grads[n.name + ".b"] = std::move(gb);
        accum(n.in[0], gin);
        break;
      }
      case Op::maxpool2: {
        Tensor gin(ws.act[n.in[0]].shape);
        const auto& arg = ws.poolArg[i];
        for (std::size_t j = 0; j < gout.data.size(); ++j)
          gin.data[arg[j]] += gout.data[j];
        accum(n.in[0], gin);
        break;
      }
      case Op::relu: {
        Tensor gin = gout;
        const Tensor& in = ws.act[n.in[0]];
        for (std::size_t j = 0; j < gin.data.size(); ++j)
          if (in.data[j] <= 0) gin.data[j] = 0;
        accum(n.in[0], gin);
        break;
      }
      case Op::sigmoid: {
        Tensor gin = gout;
        const Tensor& out = ws.act[i];
        for (std::size_t j = 0; j < gin.data.size(); ++j)
          gin.data[j] *= out.data[j] * (1 - out.data[j]);
        accum(n.in[0], gin);
        break;
      }
      case Op::fc: {
        const Tensor& in = ws.act[n.in[0]];
        const Tensor& w = params.values.at(n.name + ".w");
        Tensor gw(w.shape), gb({n.outC}), gin(in.shape);
        for (int o = 0; o < n.outC; ++o) {
          gb.data[o] = gout.data[o];
          const double* wrow = w.data.data() + static_cast<std::size_t>(o) * n.inC;
          double* gwrow = gw.data.data() + static_cast<std::size_t>(o) * n.inC;
          const double go = gout.data[o];
          for (int j = 0; j < n.inC; ++j) {
            gwrow[j] += go * in.data[j];
            gin.data[j] += go * wrow[j];
          }
        }
        grads[n.name + ".w"] = std::move(gw);
        grads[n.name + ".b"] = std::move(gb);
        accum(n.in[0], gin);
        break;
      }
      case Op::concat: {
        const Tensor& a = ws.act[n.in[0]];
        const Tensor& b = ws.act[n.in[1]];
        Tensor ga(a.shape), gb2(b.shape);
        std::copy(gout.data.begin(), gout.data.begin() + a.numel(), ga.data.begin());
        std::copy(gout.data.begin() + a.numel(), gout.data.end(), gb2.data.begin());
        accum(n.in[0], ga);
        accum(n.in[1], gb2);
        break;
      }
      case Op::upsample2: {
        const Tensor& in = ws.act[n.in[0]];
        const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
        Tensor gin(in.shape);
        for (int c = 0; c < C; ++c) {
          for (int y = 0; y < H * 2; ++y) {
            const double fy = std::clamp((y + 0.5) / 2 - 0.5, 0.0, H - 1.0);
            const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, H - 1);
            const double wy = fy - y0;
            for (int x = 0; x < W * 2; ++x) {
              const double fx = std::clamp((x + 0.5) / 2 - 0.5, 0.0, W - 1.0);
              const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, W - 1);
              const double wx = fx - x0;
              const double go = gout.data[(c * H * 2 + y) * W * 2 + x];
              gin.data[(c * H + y0) * W + x0] += go * (1 - wy) * (1 - wx);
              gin.data[(c * H + y0) * W + x1] += go * (1 - wy) * wx;
              gin.data[(c * H + y1) * W + x0] += go * wy * (1 - wx);
              gin.data[(c * H + y1) * W + x1] += go * wy * wx;
            }
          }
        }
        accum(n.in[0], gin);
        break;
      }
    }
  }
  return grads;
}

// Weighted mean logistic loss on raw logits; returns loss and d(loss)/d(logit).
inline std::pair<double, Tensor> logistic_loss(const Tensor& logits, const Tensor& targets,
                                               const Tensor* weights = nullptr) {
  detail::require(logits.shape == targets.shape, "logistic_loss", "shape mismatch");
  Tensor grad(logits.shape);
  double loss = 0, wsum = 0;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double w = weights ? weights->data[i] : 1.0;
    if (w == 0) continue;
    const double z = logits.data[i], y = targets.data[i];
    // softplus(z) - y*z, computed stably
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += w * (sp - y * z);
    const double sig = 1.0 / (1.0 + std::exp(-z));
    grad.data[i] = w * (sig - y);
    wsum += w;
  }
  if (wsum <= 0) throw std::domain_error("logistic_loss: no weighted elements");
  for (auto& v : grad.data) v /= wsum;
  return {loss / wsum, std::move(grad)};
}

// Elementwise smooth-L1 on residuals (pred - target), mean over active elems.
inline std::pair<double, Tensor> smooth_l1_loss(const Tensor& pred, const Tensor& target,
                                                const Tensor* weights = nullptr) {
  detail::require(pred.shape == target.shape, "smooth_l1_loss", "shape mismatch");
  Tensor grad(pred.shape);
  double loss = 0, wsum = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double w = weights ? weights->data[i] : 1.0;
    if (w == 0) continue;
    const double r = pred.data[i] - target.data[i];
    if (std::abs(r) < 1.0) {
      loss += w * 0.5 * r * r;
      grad.data[i] = w * r;
    } else {
      loss += w * (std::abs(r) - 0.5);
      grad.data[i] = w * (r > 0 ? 1.0 : -1.0);
    }
    wsum += w;
  }
  if (wsum <= 0) throw std::domain_error("smooth_l1_loss: no weighted elements");
  for (auto& v : grad.data) v /= wsum;
  return {loss / wsum, std::move(grad)};
}

enum class LossKind { logistic, smoothL1 };

// Convenience wrapper for simple sequential nets: forward, loss on the last
// node, backward. Returns (loss, parameter gradients).
inline std::pair<double, GradMap> forward_backward(const Graph& g,
                                                   const ParameterSet& params,
                                                   const Tensor& input,
                                                   const Tensor& lossTarget,
                                                   LossKind kind = LossKind::logistic) {
  detail::require(!g.nodes().empty() && g.nodes()[0].op == Op::input, "graph",
                  "first node must be an input");
  Workspace ws = forward(g, params, {{g.nodes()[0].name, input}});
  const int last = static_cast<int>(g.nodes().size()) - 1;
  auto [loss, grad] = kind == LossKind::logistic
                          ? logistic_loss(ws.act[last], lossTarget)
                          : smooth_l1_loss(ws.act[last], lossTarget);
  GradMap grads = backward(g, params, ws, {{last, grad}});
  return {loss, std::move(grads)};
}

}  // namespace imposters

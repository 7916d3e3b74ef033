#include "daash/autodiff.hpp"

#include "daash/error.hpp"

#include <cmath>
#include <string>

namespace daash {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using ColMap = Eigen::Map<Eigen::MatrixXd>;
using ConstColMap = Eigen::Map<const Eigen::MatrixXd>;

Graph& same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw Error(std::string(op) + ": operands belong to different graphs");
  return a.graph();
}

void check_same(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <class Fwd, class Deriv>
Var unary(Var a, Op op, Fwd fwd, Deriv deriv) {
  Tensor out(a.shape(), fwd(a.value().array()));
  return a.graph().record(op, {a.id()}, std::move(out),
                          [deriv](const Graph& g, const std::vector<int>& p, const Tensor& self, const Tensor& go,
                                  Graph::Sink& sink) {
                            if (Tensor* ga = sink(0)) {
                              const Tensor& in = g.value(Var(nullptr, p[0]));
                              ga->array() += go.array() * deriv(in.array(), self.array());
                            }
                          });
}

struct Conv {
  Index batch, cin, h, w, cout, k, pad, hout, wout;
  Index plane_in() const { return h * w; }
  Index plane_out() const { return hout * wout; }
  Index patch() const { return cin * k * k; }
};

// Column-major (hout*wout) x (cin*k*k) patch matrix for one image.
void im2col(const Conv& c, const double* img, Eigen::MatrixXd& cols) {
  cols.resize(c.plane_out(), c.patch());
  for (Index ci = 0; ci < c.cin; ++ci) {
    const double* plane = img + ci * c.plane_in();
    for (Index ky = 0; ky < c.k; ++ky) {
      for (Index kx = 0; kx < c.k; ++kx) {
        double* col = cols.col((ci * c.k + ky) * c.k + kx).data();
        for (Index oy = 0; oy < c.hout; ++oy) {
          const Index iy = oy + ky - c.pad;
          double* dst = col + oy * c.wout;
          if (iy < 0 || iy >= c.h) {
            std::fill(dst, dst + c.wout, 0.0);
            continue;
          }
          const double* src = plane + iy * c.w;
          for (Index ox = 0; ox < c.wout; ++ox) {
            const Index ix = ox + kx - c.pad;
            dst[ox] = (ix < 0 || ix >= c.w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const Conv& c, const Eigen::MatrixXd& cols, double* img) {
  for (Index ci = 0; ci < c.cin; ++ci) {
    double* plane = img + ci * c.plane_in();
    for (Index ky = 0; ky < c.k; ++ky) {
      for (Index kx = 0; kx < c.k; ++kx) {
        const double* col = cols.col((ci * c.k + ky) * c.k + kx).data();
        for (Index oy = 0; oy < c.hout; ++oy) {
          const Index iy = oy + ky - c.pad;
          if (iy < 0 || iy >= c.h) continue;
          const double* src = col + oy * c.wout;
          double* dst = plane + iy * c.w;
          for (Index ox = 0; ox < c.wout; ++ox) {
            const Index ix = ox + kx - c.pad;
            if (ix >= 0 && ix < c.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Separable same-size filtering of every (H, W) plane with zero padding.
void blur_planes(const Eigen::ArrayXd& in, Eigen::ArrayXd& out, Index planes, Index h, Index w,
                 const std::vector<double>& taps) {
  const Index r = static_cast<Index>(taps.size()) / 2;
  Eigen::ArrayXd tmp(h * w);
  out.resize(in.size());
  for (Index p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double s = 0.0;
        for (Index t = -r; t <= r; ++t) {
          const Index xx = x + t;
          if (xx >= 0 && xx < w) s += taps[static_cast<std::size_t>(t + r)] * src[y * w + xx];
        }
        tmp[y * w + x] = s;
      }
    }
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double s = 0.0;
        for (Index t = -r; t <= r; ++t) {
          const Index yy = y + t;
          if (yy >= 0 && yy < h) s += taps[static_cast<std::size_t>(t + r)] * tmp[yy * w + x];
        }
        dst[y * w + x] = s;
      }
    }
  }
}

void require_rank(Var a, Index rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(a.shape()));
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::MatMul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::BiasAdd: return "bias_add";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::SumLastAxis: return "sum_last_axis";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Clamp: return "clamp";
    case Op::Sign: return "sign";
    case Op::GaussianBlur: return "gaussian_blur";
    case Op::AvgPool: return "avg_pool";
    case Op::Reshape: return "reshape";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->value(*this); }

const Tensor& Gradients::operator[](Var v) const {
  const auto i = static_cast<std::size_t>(v.id());
  if (i >= grads_.size() || grads_[i].empty()) {
    throw Error("no gradient recorded for node " + std::to_string(v.id()));
  }
  return grads_[i];
}

Tensor* Graph::Sink::operator()(std::size_t parent) {
  const int p = graph_.nodes_[static_cast<std::size_t>(node_)].parents.at(parent);
  const auto& node = graph_.nodes_[static_cast<std::size_t>(p)];
  if (!node.requires_grad) return nullptr;
  Tensor& g = grads_[static_cast<std::size_t>(p)];
  if (g.empty()) g = Tensor(node.value.shape(), 0.0);
  return &g;
}

Var Graph::variable(Tensor value) {
  require_finite(value, "variable");
  nodes_.push_back({Op::Leaf, {}, std::move(value), nullptr, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back({Op::Leaf, {}, std::move(value), nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::record(Op op, std::vector<int> parents, Tensor value, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string(op_name(op)) + ": produced a non-finite value");
  bool rg = false;
  for (int p : parents) {
    if (p < 0 || p >= static_cast<int>(nodes_.size())) throw Error("record: parent id out of range");
    rg = rg || nodes_[static_cast<std::size_t>(p)].requires_grad;
  }
  nodes_.push_back({op, std::move(parents), std::move(value), std::move(backward), rg});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Gradients Graph::backward(Var loss) {
  if (&loss.graph() != this) throw Error("backward: loss belongs to another graph");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(lv.shape()));
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.id())] = Tensor(lv.shape(), 1.0);
  for (int i = loss.id(); i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    Tensor& g = grads[static_cast<std::size_t>(i)];
    if (g.empty() || !node.requires_grad || node.op == Op::Leaf) continue;
    Sink sink(*this, grads, i);
    node.backward(*this, node.parents, node.value, g, sink);
    if (i != loss.id()) g = Tensor();  // interior gradients are not kept
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& node = nodes_[i];
    if (node.op == Op::Leaf && node.requires_grad && grads[i].empty()) grads[i] = Tensor(node.value.shape(), 0.0);
  }
  return Gradients(std::move(grads));
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b, "add");
  check_same(a, b, "add");
  Tensor out(a.shape(), a.value().array() + b.value().array());
  return g.record(Op::Add, {a.id(), b.id()}, std::move(out),
                  [](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go, Graph::Sink& s) {
                    if (Tensor* ga = s(0)) ga->array() += go.array();
                    if (Tensor* gb = s(1)) gb->array() += go.array();
                  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b, "sub");
  check_same(a, b, "sub");
  Tensor out(a.shape(), a.value().array() - b.value().array());
  return g.record(Op::Sub, {a.id(), b.id()}, std::move(out),
                  [](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go, Graph::Sink& s) {
                    if (Tensor* ga = s(0)) ga->array() += go.array();
                    if (Tensor* gb = s(1)) gb->array() -= go.array();
                  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b, "mul");
  check_same(a, b, "mul");
  Tensor out(a.shape(), a.value().array() * b.value().array());
  return g.record(Op::Mul, {a.id(), b.id()}, std::move(out),
                  [](const Graph& gr, const std::vector<int>& p, const Tensor&, const Tensor& go, Graph::Sink& s) {
                    const auto& av = gr.value(Var(nullptr, p[0])).array();
                    const auto& bv = gr.value(Var(nullptr, p[1])).array();
                    if (Tensor* ga = s(0)) ga->array() += go.array() * bv;
                    if (Tensor* gb = s(1)) gb->array() += go.array() * av;
                  });
}

Var div(Var a, Var b) {
  Graph& g = same_graph(a, b, "div");
  check_same(a, b, "div");
  Tensor out(a.shape(), a.value().array() / b.value().array());
  return g.record(Op::Div, {a.id(), b.id()}, std::move(out),
                  [](const Graph& gr, const std::vector<int>& p, const Tensor& self, const Tensor& go,
                     Graph::Sink& s) {
                    const auto& bv = gr.value(Var(nullptr, p[1])).array();
                    if (Tensor* ga = s(0)) ga->array() += go.array() / bv;
                    if (Tensor* gb = s(1)) gb->array() -= go.array() * self.array() / bv;
                  });
}

Var scale(Var a, double k) {
  Tensor out(a.shape(), a.value().array() * k);
  return a.graph().record(Op::Scale, {a.id()}, std::move(out),
                          [k](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go, Graph::Sink& s) {
                            if (Tensor* ga = s(0)) ga->array() += k * go.array();
                          });
}

Var add_scalar(Var a, double k) {
  Tensor out(a.shape(), a.value().array() + k);
  return a.graph().record(Op::AddScalar, {a.id()}, std::move(out),
                          [](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go, Graph::Sink& s) {
                            if (Tensor* ga = s(0)) ga->array() += go.array();
                          });
}

Var relu(Var a) {
  return unary(
      a, Op::Relu, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.max(0.0); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd { return (x > 0.0).cast<double>(); });
}

Var tanh(Var a) {
  return unary(
      a, Op::Tanh, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.tanh(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) -> Eigen::ArrayXd { return 1.0 - y.square(); });
}

Var exp(Var a) {
  return unary(
      a, Op::Exp, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.exp(); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) -> Eigen::ArrayXd { return y; });
}

Var log(Var a) {
  return unary(
      a, Op::Log, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.log(); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd { return x.inverse(); });
}

Var sign(Var a) {
  return unary(
      a, Op::Sign, [](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.sign(); },
      [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd { return Eigen::ArrayXd::Zero(x.size()); });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw ConfigError("clamp: lo > hi");
  return unary(
      a, Op::Clamp, [lo, hi](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return x.max(lo).min(hi); },
      [lo, hi](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) -> Eigen::ArrayXd {
        return ((x > lo) && (x < hi)).cast<double>();
      });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }
Var operator*(double s, Var a) { return scale(a, s); }

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b, "matmul");
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  RowMap(out.data(), m, n).noalias() = ConstRowMap(a.value().data(), m, k) * ConstRowMap(b.value().data(), k, n);
  return g.record(Op::MatMul, {a.id(), b.id()}, std::move(out),
                  [m, k, n](const Graph& gr, const std::vector<int>& p, const Tensor&, const Tensor& go,
                            Graph::Sink& s) {
                    ConstRowMap gm(go.data(), m, n);
                    if (Tensor* ga = s(0)) {
                      RowMap(ga->data(), m, k).noalias() +=
                          gm * ConstRowMap(gr.value(Var(nullptr, p[1])).data(), k, n).transpose();
                    }
                    if (Tensor* gb = s(1)) {
                      RowMap(gb->data(), k, n).noalias() +=
                          ConstRowMap(gr.value(Var(nullptr, p[0])).data(), m, k).transpose() * gm;
                    }
                  });
}

Var conv2d(Var x, Var w, Index pad) {
  Graph& g = same_graph(x, w, "conv2d");
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.dim(2) != wv.dim(3)) throw ShapeError("conv2d: kernel must be square, got " + to_string(wv.shape()));
  if (wv.dim(1) != xv.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(xv.dim(1)) + " channels, kernel expects " +
                     std::to_string(wv.dim(1)));
  }
  Conv c{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), pad < 0 ? wv.dim(2) / 2 : pad, 0, 0};
  c.hout = c.h + 2 * c.pad - c.k + 1;
  c.wout = c.w + 2 * c.pad - c.k + 1;
  if (c.hout <= 0 || c.wout <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  Tensor out(Shape{c.batch, c.cout, c.hout, c.wout});
  ConstColMap wmat(wv.data(), c.patch(), c.cout);
  Eigen::MatrixXd cols;
  for (Index b = 0; b < c.batch; ++b) {
    im2col(c, xv.data() + b * c.cin * c.plane_in(), cols);
    ColMap(out.data() + b * c.cout * c.plane_out(), c.plane_out(), c.cout).noalias() = cols * wmat;
  }
  return g.record(Op::Conv2d, {x.id(), w.id()}, std::move(out),
                  [c](const Graph& gr, const std::vector<int>& p, const Tensor&, const Tensor& go, Graph::Sink& s) {
                    const Tensor& xin = gr.value(Var(nullptr, p[0]));
                    const Tensor& wt = gr.value(Var(nullptr, p[1]));
                    Tensor* gx = s(0);
                    Tensor* gw = s(1);
                    ConstColMap wm(wt.data(), c.patch(), c.cout);
                    Eigen::MatrixXd cols, dcols;
                    for (Index b = 0; b < c.batch; ++b) {
                      ConstColMap gb(go.data() + b * c.cout * c.plane_out(), c.plane_out(), c.cout);
                      if (gw) {
                        im2col(c, xin.data() + b * c.cin * c.plane_in(), cols);
                        ColMap(gw->data(), c.patch(), c.cout).noalias() += cols.transpose() * gb;
                      }
                      if (gx) {
                        dcols.noalias() = gb * wm.transpose();
                        col2im_add(c, dcols, gx->data() + b * c.cin * c.plane_in());
                      }
                    }
                  });
}

Var bias_add(Var x, Var b) {
  Graph& g = same_graph(x, b, "bias_add");
  const Tensor& xv = x.value();
  if (xv.rank() < 2 || b.value().rank() != 1 || b.value().dim(0) != xv.dim(1)) {
    throw ShapeError("bias_add: bias " + to_string(b.shape()) + " does not match axis 1 of " + to_string(xv.shape()));
  }
  const Index batch = xv.dim(0), ch = xv.dim(1), inner = xv.size() / std::max<Index>(1, batch * ch);
  Tensor out = xv;
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < ch; ++c) out.array().segment((n * ch + c) * inner, inner) += b.value()[c];
  return g.record(Op::BiasAdd, {x.id(), b.id()}, std::move(out),
                  [batch, ch, inner](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go,
                                     Graph::Sink& s) {
                    if (Tensor* gx = s(0)) gx->array() += go.array();
                    if (Tensor* gb = s(1)) {
                      for (Index n = 0; n < batch; ++n)
                        for (Index c = 0; c < ch; ++c) (*gb)[c] += go.array().segment((n * ch + c) * inner, inner).sum();
                    }
                  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph().record(Op::Reshape, {a.id()}, std::move(out),
                          [](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go, Graph::Sink& s) {
                            if (Tensor* ga = s(0)) ga->array() += go.array();
                          });
}

Var sum(Var a) {
  return a.graph().record(Op::Sum, {a.id()}, Tensor::scalar(a.value().array().sum()),
                          [](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go, Graph::Sink& s) {
                            if (Tensor* ga = s(0)) ga->array() += go[0];
                          });
}

Var mean(Var a) {
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return a.graph().record(Op::Mean, {a.id()}, Tensor::scalar(a.value().array().mean()),
                          [n](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go, Graph::Sink& s) {
                            if (Tensor* ga = s(0)) ga->array() += go[0] / static_cast<double>(n);
                          });
}

Var sum_last_axis(Var a) {
  const Tensor& av = a.value();
  if (av.rank() < 1) throw ShapeError("sum_last_axis on a scalar");
  const Index n = av.dim(av.rank() - 1), rows = av.size() / std::max<Index>(n, 1);
  Shape s(av.shape().begin(), av.shape().end() - 1);
  Tensor out(s);
  for (Index r = 0; r < rows; ++r) out[r] = av.array().segment(r * n, n).sum();
  return a.graph().record(Op::SumLastAxis, {a.id()}, std::move(out),
                          [n, rows](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go,
                                    Graph::Sink& sk) {
                            if (Tensor* ga = sk(0))
                              for (Index r = 0; r < rows; ++r) ga->array().segment(r * n, n) += go[r];
                          });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  if (av.rank() < 1) throw ShapeError("softmax on a scalar");
  const Index n = av.dim(av.rank() - 1), rows = av.size() / std::max<Index>(n, 1);
  Tensor out(av.shape());
  for (Index r = 0; r < rows; ++r) {
    auto z = av.array().segment(r * n, n);
    Eigen::ArrayXd e = (z - z.maxCoeff()).exp();
    out.array().segment(r * n, n) = e / e.sum();
  }
  return a.graph().record(Op::Softmax, {a.id()}, std::move(out),
                          [n, rows](const Graph&, const std::vector<int>&, const Tensor& y, const Tensor& go,
                                    Graph::Sink& s) {
                            if (Tensor* ga = s(0)) {
                              for (Index r = 0; r < rows; ++r) {
                                auto yr = y.array().segment(r * n, n);
                                auto gr = go.array().segment(r * n, n);
                                const double dot = (yr * gr).sum();
                                ga->array().segment(r * n, n) += yr * (gr - dot);
                              }
                            }
                          });
}

Var log_softmax(Var a) {
  const Tensor& av = a.value();
  if (av.rank() < 1) throw ShapeError("log_softmax on a scalar");
  const Index n = av.dim(av.rank() - 1), rows = av.size() / std::max<Index>(n, 1);
  Tensor out(av.shape());
  for (Index r = 0; r < rows; ++r) {
    auto z = av.array().segment(r * n, n);
    const double m = z.maxCoeff();
    const double lse = m + std::log((z - m).exp().sum());
    out.array().segment(r * n, n) = z - lse;
  }
  return a.graph().record(Op::LogSoftmax, {a.id()}, std::move(out),
                          [n, rows](const Graph&, const std::vector<int>&, const Tensor& y, const Tensor& go,
                                    Graph::Sink& s) {
                            if (Tensor* ga = s(0)) {
                              for (Index r = 0; r < rows; ++r) {
                                auto gr = go.array().segment(r * n, n);
                                ga->array().segment(r * n, n) += gr - y.array().segment(r * n, n).exp() * gr.sum();
                              }
                            }
                          });
}

std::vector<double> gaussian_taps(Index k, double sigma) {
  if (k < 1 || k % 2 == 0) throw ConfigError("gaussian kernel size must be odd and positive");
  if (!(sigma > 0.0)) throw ConfigError("gaussian sigma must be positive");
  std::vector<double> taps(static_cast<std::size_t>(k));
  double total = 0.0;
  for (Index i = 0; i < k; ++i) {
    const double d = static_cast<double>(i - k / 2);
    taps[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d / (sigma * sigma));
    total += taps[static_cast<std::size_t>(i)];
  }
  for (double& t : taps) t /= total;
  return taps;
}

Var gaussian_blur(Var x, Index k, double sigma) {
  require_rank(x, 4, "gaussian_blur");
  const Tensor& xv = x.value();
  const Index planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  auto taps = gaussian_taps(k, sigma);
  Tensor out(xv.shape());
  blur_planes(xv.array(), out.array(), planes, h, w, taps);
  // Symmetric taps: the adjoint is the same filter.
  return x.graph().record(Op::GaussianBlur, {x.id()}, std::move(out),
                          [planes, h, w, taps](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go,
                                               Graph::Sink& s) {
                            if (Tensor* gx = s(0)) {
                              Eigen::ArrayXd tmp;
                              blur_planes(go.array(), tmp, planes, h, w, taps);
                              gx->array() += tmp;
                            }
                          });
}

Var avg_pool(Var x, Index k, Index stride) { return avg_pool(x, k, k, stride); }

Var avg_pool(Var x, Index kh, Index kw, Index stride) {
  require_rank(x, 4, "avg_pool");
  const Tensor& xv = x.value();
  const Index planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (kh < 1 || kw < 1 || stride < 1 || kh > h || kw > w) {
    throw ShapeError("avg_pool: window " + std::to_string(kh) + "x" + std::to_string(kw) + " does not fit " +
                     to_string(xv.shape()));
  }
  const Index ho = (h - kh) / stride + 1, wo = (w - kw) / stride + 1;
  const double inv = 1.0 / static_cast<double>(kh * kw);
  Tensor out(Shape{xv.dim(0), xv.dim(1), ho, wo});
  Eigen::ArrayXd rows(h * wo);
  for (Index p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * h * w;
    for (Index y = 0; y < h; ++y)
      for (Index ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (Index t = 0; t < kw; ++t) s += src[y * w + ox * stride + t];
        rows[y * wo + ox] = s;
      }
    double* dst = out.data() + p * ho * wo;
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (Index t = 0; t < kh; ++t) s += rows[(oy * stride + t) * wo + ox];
        dst[oy * wo + ox] = s * inv;
      }
  }
  return x.graph().record(Op::AvgPool, {x.id()}, std::move(out),
                          [=](const Graph&, const std::vector<int>&, const Tensor&, const Tensor& go, Graph::Sink& s) {
                            Tensor* gx = s(0);
                            if (!gx) return;
                            Eigen::ArrayXd tmp(h * wo);
                            for (Index p = 0; p < planes; ++p) {
                              tmp.setZero();
                              const double* g = go.data() + p * ho * wo;
                              for (Index oy = 0; oy < ho; ++oy)
                                for (Index t = 0; t < kh; ++t)
                                  for (Index ox = 0; ox < wo; ++ox) tmp[(oy * stride + t) * wo + ox] += g[oy * wo + ox] * inv;
                              double* dst = gx->data() + p * h * w;
                              for (Index y = 0; y < h; ++y)
                                for (Index ox = 0; ox < wo; ++ox)
                                  for (Index t = 0; t < kw; ++t) dst[y * w + ox * stride + t] += tmp[y * wo + ox];
                            }
                          });
}

Var record(Op op, std::initializer_list<Var> inputs) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
  };
  const Var* in = inputs.begin();
  switch (op) {
    case Op::Add: arity(2); return add(in[0], in[1]);
    case Op::Sub: arity(2); return sub(in[0], in[1]);
    case Op::Mul: arity(2); return mul(in[0], in[1]);
    case Op::Div: arity(2); return div(in[0], in[1]);
    case Op::MatMul: arity(2); return matmul(in[0], in[1]);
    case Op::Conv2d: arity(2); return conv2d(in[0], in[1]);
    case Op::BiasAdd: arity(2); return bias_add(in[0], in[1]);
    case Op::Relu: arity(1); return relu(in[0]);
    case Op::Tanh: arity(1); return tanh(in[0]);
    case Op::Exp: arity(1); return exp(in[0]);
    case Op::Log: arity(1); return log(in[0]);
    case Op::Mean: arity(1); return mean(in[0]);
    case Op::Sum: arity(1); return sum(in[0]);
    case Op::SumLastAxis: arity(1); return sum_last_axis(in[0]);
    case Op::Softmax: arity(1); return softmax(in[0]);
    case Op::LogSoftmax: arity(1); return log_softmax(in[0]);
    case Op::Sign: arity(1); return sign(in[0]);
    default: throw ConfigError(std::string(op_name(op)) + " needs parameters; call its function directly");
  }
}

}  // namespace daash

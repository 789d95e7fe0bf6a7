#include "esc/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "esc/error.hpp"

namespace esc::ag {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(Node&)>;

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank3(const Var& a, const char* op) {
  if (a.value().rank() != 3) throw InputError(std::string(op) + ": expected {C,H,W}, got " + shape_string(a.shape()));
}

// Unrolls the k x k receptive fields of `src` {C, H, W} sampled on a grid of
// gh x gw positions (position (gy, gx) covers src rows gy*s - p + ky) into a
// (C*k*k) x (gh*gw) row-major matrix. Out-of-range taps read zero.
void im2col(const double* src, int c, int h, int w, int k, int s, int p, int gh, int gw, double* col) {
  const std::size_t cells = static_cast<std::size_t>(gh) * gw;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * cells;
        for (int gy = 0; gy < gh; ++gy) {
          const int y = gy * s - p + ky;
          double* out = row + static_cast<std::size_t>(gy) * gw;
          if (y < 0 || y >= h) {
            std::fill(out, out + gw, 0.0);
            continue;
          }
          const double* in = src + (static_cast<std::size_t>(ci) * h + y) * w;
          for (int gx = 0; gx < gw; ++gx) {
            const int x = gx * s - p + kx;
            out[gx] = (x >= 0 && x < w) ? in[x] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds the columns back into dst {C, H, W}.
void col2im(const double* col, int c, int h, int w, int k, int s, int p, int gh, int gw, double* dst) {
  const std::size_t cells = static_cast<std::size_t>(gh) * gw;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * cells;
        for (int gy = 0; gy < gh; ++gy) {
          const int y = gy * s - p + ky;
          if (y < 0 || y >= h) continue;
          double* out = dst + (static_cast<std::size_t>(ci) * h + y) * w;
          const double* in = row + static_cast<std::size_t>(gy) * gw;
          for (int gx = 0; gx < gw; ++gx) {
            const int x = gx * s - p + kx;
            if (x >= 0 && x < w) out[x] += in[gx];
          }
        }
      }
    }
  }
}

struct ResizeTap {
  int i0, i1;
  double w0, w1;
};

std::vector<ResizeTap> resize_taps(int in, int out) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = std::max(scale * (o + 0.5) - 0.5, 0.0);
    int i0 = std::min(static_cast<int>(src), in - 1);
    int i1 = i0 + (i0 < in - 1 ? 1 : 0);
    double l1 = src - i0;
    if (i1 == i0) l1 = 0.0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& loss) {
  if (!loss.requires_grad()) return;
  if (loss.value().size() != 1) throw InputError("backward: loss must be a scalar");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad_buffer() += self.grad;
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad;
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const Tensor& x = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Var sum(const Var& a) {
  Tensor out({1}, a.value().sum());
  return make_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (double& v : g.values()) v += self.grad[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(std::max<std::size_t>(a.value().size(), 1));
  return scale(sum(a), 1.0 / n);
}

Var detach(const Var& a) { return Var(a.value(), false); }

Var straight_through(const Var& continuous, const Var& quantized) {
  require_same_shape(continuous, quantized, "straight_through");
  return make_result(quantized.value(), {continuous}, [](Node& self) {
    self.parents[0]->grad_buffer() += self.grad;
  });
}

int conv_out_size(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

int conv_transpose_out_size(int in, int kernel, int stride, int pad) { return (in - 1) * stride - 2 * pad + kernel; }

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_rank3(x, "conv2d");
  const auto& ws = w.shape();
  if (ws.size() != 4 || ws[1] != x.value().channels() || ws[2] != ws[3]) {
    throw InputError("conv2d: weight " + shape_string(ws) + " incompatible with input " + shape_string(x.shape()));
  }
  const int cin = ws[1], cout = ws[0], k = ws[2];
  const int h = x.value().height(), wd = x.value().width();
  const int ho = conv_out_size(h, k, stride, pad), wo = conv_out_size(wd, k, stride, pad);
  if (ho <= 0 || wo <= 0) throw InputError("conv2d: input " + shape_string(x.shape()) + " too small for kernel");
  const int rows = cin * k * k;
  const std::size_t cells = static_cast<std::size_t>(ho) * wo;

  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  auto col = std::make_shared<std::vector<double>>();
  if (!pointwise) {
    col->resize(static_cast<std::size_t>(rows) * cells);
    im2col(x.value().data(), cin, h, wd, k, stride, pad, ho, wo, col->data());
  }
  const double* col_ptr = pointwise ? x.value().data() : col->data();

  Tensor out({cout, ho, wo});
  MapR o(out.data(), cout, static_cast<Eigen::Index>(cells));
  o.noalias() = CMapR(w.value().data(), cout, rows) * CMapR(col_ptr, rows, static_cast<Eigen::Index>(cells));
  if (b.defined()) {
    for (int c = 0; c < cout; ++c) o.row(c).array() += b.value()[static_cast<std::size_t>(c)];
  }

  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_result(std::move(out), parents,
                     [=](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       CMapR go(self.grad.data(), cout, static_cast<Eigen::Index>(cells));
                       const double* cp = pointwise ? px.value.data() : col->data();
                       CMapR cm(cp, rows, static_cast<Eigen::Index>(cells));
                       if (pw.requires_grad) {
                         MapR gw(pw.grad_buffer().data(), cout, rows);
                         gw.noalias() += go * cm.transpose();
                       }
                       if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                         Tensor& gb = self.parents[2]->grad_buffer();
                         for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += go.row(c).sum();
                       }
                       if (px.requires_grad) {
                         CMapR wm(pw.value.data(), cout, rows);
                         if (pointwise) {
                           MapR gx(px.grad_buffer().data(), rows, static_cast<Eigen::Index>(cells));
                           gx.noalias() += wm.transpose() * go;
                         } else {
                           MatR dcol = wm.transpose() * go;
                           col2im(dcol.data(), cin, h, wd, k, stride, pad, ho, wo, px.grad_buffer().data());
                         }
                       }
                     });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_rank3(x, "conv_transpose2d");
  const auto& ws = w.shape();
  if (ws.size() != 4 || ws[0] != x.value().channels() || ws[2] != ws[3]) {
    throw InputError("conv_transpose2d: weight " + shape_string(ws) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  const int cin = ws[0], cout = ws[1], k = ws[2];
  const int h = x.value().height(), wd = x.value().width();
  const int ho = conv_transpose_out_size(h, k, stride, pad), wo = conv_transpose_out_size(wd, k, stride, pad);
  if (ho <= 0 || wo <= 0) throw InputError("conv_transpose2d: empty output");
  const int rows = cout * k * k;
  const std::size_t cells = static_cast<std::size_t>(h) * wd;

  MatR col = CMapR(w.value().data(), cin, rows).transpose() * CMapR(x.value().data(), cin, static_cast<Eigen::Index>(cells));
  Tensor out({cout, ho, wo});
  col2im(col.data(), cout, ho, wo, k, stride, pad, h, wd, out.data());
  if (b.defined()) {
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int c = 0; c < cout; ++c) {
      double bias = b.value()[static_cast<std::size_t>(c)];
      double* p = out.data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias;
    }
  }

  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_result(std::move(out), parents, [=](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    MatR dcol(rows, static_cast<Eigen::Index>(cells));
    im2col(self.grad.data(), cout, ho, wo, k, stride, pad, h, wd, dcol.data());
    if (pw.requires_grad) {
      MapR gw(pw.grad_buffer().data(), cin, rows);
      gw.noalias() += CMapR(px.value.data(), cin, static_cast<Eigen::Index>(cells)) * dcol.transpose();
    }
    if (px.requires_grad) {
      MapR gx(px.grad_buffer().data(), cin, static_cast<Eigen::Index>(cells));
      gx.noalias() += CMapR(pw.value.data(), cin, rows) * dcol;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor& gb = self.parents[2]->grad_buffer();
      const std::size_t plane = static_cast<std::size_t>(ho) * wo;
      for (int c = 0; c < cout; ++c) {
        const double* g = self.grad.data() + c * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += g[i];
        gb[static_cast<std::size_t>(c)] += acc;
      }
    }
  });
}

Var channel_linear(const Var& x, const Var& w, const Var& b) {
  const auto& ws = w.shape();
  if (ws.size() != 2) throw InputError("channel_linear: weight must be {Cout, Cin}");
  // Pointwise convolution on a {Cout, Cin, 1, 1} view of the weight.
  Var wv = make_result(w.value().reshaped({ws[0], ws[1], 1, 1}), {w}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
  return conv2d(x, wv, b, 1, 0);
}

Var add_channel_vector(const Var& x, const Var& v) {
  require_rank3(x, "add_channel_vector");
  const int c = x.value().channels();
  const std::size_t cells = static_cast<std::size_t>(x.value().cells());
  if (v.value().size() != static_cast<std::size_t>(c)) throw InputError("add_channel_vector: length mismatch");
  Tensor out = x.value();
  for (int ci = 0; ci < c; ++ci) {
    double add = v.value()[static_cast<std::size_t>(ci)];
    double* p = out.data() + ci * cells;
    for (std::size_t i = 0; i < cells; ++i) p[i] += add;
  }
  return make_result(std::move(out), {x, v}, [c, cells](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad_buffer() += self.grad;
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->grad_buffer();
      for (int ci = 0; ci < c; ++ci) {
        const double* p = self.grad.data() + ci * cells;
        double acc = 0.0;
        for (std::size_t i = 0; i < cells; ++i) acc += p[i];
        g[static_cast<std::size_t>(ci)] += acc;
      }
    }
  });
}

Var mul_cells(const Var& x, const Var& s) {
  require_rank3(x, "mul_cells");
  const int c = x.value().channels();
  const std::size_t cells = static_cast<std::size_t>(x.value().cells());
  if (s.value().size() != cells) throw InputError("mul_cells: scale map size mismatch");
  Tensor out = x.value();
  for (int ci = 0; ci < c; ++ci) {
    double* p = out.data() + ci * cells;
    for (std::size_t i = 0; i < cells; ++i) p[i] *= s.value()[i];
  }
  return make_result(std::move(out), {x, s}, [c, cells](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    if (px.requires_grad) {
      Tensor& g = px.grad_buffer();
      for (int ci = 0; ci < c; ++ci) {
        for (std::size_t i = 0; i < cells; ++i) g[ci * cells + i] += self.grad[ci * cells + i] * ps.value[i];
      }
    }
    if (ps.requires_grad) {
      Tensor& g = ps.grad_buffer();
      for (int ci = 0; ci < c; ++ci) {
        for (std::size_t i = 0; i < cells; ++i) g[i] += self.grad[ci * cells + i] * px.value[ci * cells + i];
      }
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("concat_channels: no inputs");
  const int h = parts[0].value().height(), w = parts[0].value().width();
  int total = 0;
  for (const auto& p : parts) {
    require_rank3(p, "concat_channels");
    if (p.value().height() != h || p.value().width() != w) throw InputError("concat_channels: spatial mismatch");
    total += p.value().channels();
  }
  Tensor out({total, h, w});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 3) throw InputError("resize_bilinear: expected {C,H,W}");
  const int c = x.channels(), h = x.height(), w = x.width();
  if (h == out_h && w == out_w) return x;
  const auto ty = resize_taps(h, out_h);
  const auto tx = resize_taps(w, out_w);
  Tensor out({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        out.at(ci, oy, ox) = a.w0 * (b.w0 * x.at(ci, a.i0, b.i0) + b.w1 * x.at(ci, a.i0, b.i1)) +
                             a.w1 * (b.w0 * x.at(ci, a.i1, b.i0) + b.w1 * x.at(ci, a.i1, b.i1));
      }
    }
  }
  return out;
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  require_rank3(x, "resize_bilinear");
  const int c = x.value().channels(), h = x.value().height(), w = x.value().width();
  if (h == out_h && w == out_w) return x;
  Tensor out = resize_bilinear(x.value(), out_h, out_w);
  return make_result(std::move(out), {x}, [c, h, w, out_h, out_w](Node& self) {
    const auto ty = resize_taps(h, out_h);
    const auto tx = resize_taps(w, out_w);
    Tensor& g = self.parents[0]->grad_buffer();
    for (int ci = 0; ci < c; ++ci) {
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[static_cast<std::size_t>(ox)];
          const double go = self.grad.at(ci, oy, ox);
          g.at(ci, a.i0, b.i0) += go * a.w0 * b.w0;
          g.at(ci, a.i0, b.i1) += go * a.w0 * b.w1;
          g.at(ci, a.i1, b.i0) += go * a.w1 * b.w0;
          g.at(ci, a.i1, b.i1) += go * a.w1 * b.w1;
        }
      }
    }
  });
}

Var softmax_channels(const Var& x) {
  require_rank3(x, "softmax_channels");
  const int c = x.value().channels();
  const std::size_t cells = static_cast<std::size_t>(x.value().cells());
  Tensor out(x.shape());
  const double* in = x.value().data();
  for (std::size_t i = 0; i < cells; ++i) {
    double m = in[i];
    for (int k = 1; k < c; ++k) m = std::max(m, in[k * cells + i]);
    double z = 0.0;
    for (int k = 0; k < c; ++k) {
      double e = std::exp(in[k * cells + i] - m);
      out[k * cells + i] = e;
      z += e;
    }
    for (int k = 0; k < c; ++k) out[k * cells + i] /= z;
  }
  return make_result(std::move(out), {x}, [c, cells](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < cells; ++i) {
      double dot = 0.0;
      for (int k = 0; k < c; ++k) dot += self.grad[k * cells + i] * self.value[k * cells + i];
      for (int k = 0; k < c; ++k) {
        g[k * cells + i] += self.value[k * cells + i] * (self.grad[k * cells + i] - dot);
      }
    }
  });
}

Tensor cell_attention_weights(const Tensor& q, std::span<const Tensor> keys, int heads) {
  const int n = q.channels();
  const std::size_t cells = static_cast<std::size_t>(q.cells());
  const int len = static_cast<int>(keys.size());
  if (heads <= 0 || n % heads != 0) throw ConfigError("cell_attention: channel count not divisible by heads");
  const int dk = n / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor a({heads, len, q.height(), q.width()});
  std::vector<double> s(static_cast<std::size_t>(len));
  for (int hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < cells; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < len; ++j) {
        double acc = 0.0;
        for (int d = hd * dk; d < (hd + 1) * dk; ++d) acc += q[d * cells + i] * keys[static_cast<std::size_t>(j)][d * cells + i];
        s[static_cast<std::size_t>(j)] = acc * inv;
        m = std::max(m, s[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (int j = 0; j < len; ++j) {
        s[static_cast<std::size_t>(j)] = std::exp(s[static_cast<std::size_t>(j)] - m);
        z += s[static_cast<std::size_t>(j)];
      }
      for (int j = 0; j < len; ++j) a[(static_cast<std::size_t>(hd) * len + j) * cells + i] = s[static_cast<std::size_t>(j)] / z;
    }
  }
  return a;
}

Var cell_attention(const Var& q, std::span<const Var> keys, std::span<const Var> values, int heads) {
  require_rank3(q, "cell_attention");
  if (keys.empty() || keys.size() != values.size()) throw InputError("cell_attention: key/value count mismatch");
  for (std::size_t j = 0; j < keys.size(); ++j) {
    require_same_shape(q, keys[j], "cell_attention key");
    require_same_shape(q, values[j], "cell_attention value");
  }
  const int n = q.value().channels();
  const std::size_t cells = static_cast<std::size_t>(q.value().cells());
  const int len = static_cast<int>(keys.size());
  std::vector<Tensor> key_vals;
  for (const auto& k : keys) key_vals.push_back(k.value());
  auto weights = std::make_shared<Tensor>(cell_attention_weights(q.value(), key_vals, heads));
  const int dk = n / heads;

  Tensor out(q.shape());
  for (int hd = 0; hd < heads; ++hd) {
    for (int j = 0; j < len; ++j) {
      const Tensor& v = values[static_cast<std::size_t>(j)].value();
      const double* a = weights->data() + (static_cast<std::size_t>(hd) * len + j) * cells;
      for (int d = hd * dk; d < (hd + 1) * dk; ++d) {
        for (std::size_t i = 0; i < cells; ++i) out[d * cells + i] += a[i] * v[d * cells + i];
      }
    }
  }

  std::vector<Var> parents{q};
  parents.insert(parents.end(), keys.begin(), keys.end());
  parents.insert(parents.end(), values.begin(), values.end());
  return make_result(std::move(out), parents, [=](Node& self) {
    Node& pq = *self.parents[0];
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<double> da(static_cast<std::size_t>(len)), ds(static_cast<std::size_t>(len));
    for (int hd = 0; hd < heads; ++hd) {
      const int d0 = hd * dk, d1 = (hd + 1) * dk;
      for (std::size_t i = 0; i < cells; ++i) {
        double dot = 0.0;
        for (int j = 0; j < len; ++j) {
          Node& pv = *self.parents[static_cast<std::size_t>(1 + len + j)];
          const double a = (*weights)[(static_cast<std::size_t>(hd) * len + j) * cells + i];
          double acc = 0.0;
          for (int d = d0; d < d1; ++d) acc += self.grad[d * cells + i] * pv.value[d * cells + i];
          da[static_cast<std::size_t>(j)] = acc;
          dot += a * acc;
          if (pv.requires_grad) {
            Tensor& gv = pv.grad_buffer();
            for (int d = d0; d < d1; ++d) gv[d * cells + i] += a * self.grad[d * cells + i];
          }
        }
        for (int j = 0; j < len; ++j) {
          const double a = (*weights)[(static_cast<std::size_t>(hd) * len + j) * cells + i];
          ds[static_cast<std::size_t>(j)] = a * (da[static_cast<std::size_t>(j)] - dot) * inv;
        }
        for (int j = 0; j < len; ++j) {
          Node& pk = *self.parents[static_cast<std::size_t>(1 + j)];
          const double sj = ds[static_cast<std::size_t>(j)];
          if (pq.requires_grad) {
            Tensor& gq = pq.grad_buffer();
            for (int d = d0; d < d1; ++d) gq[d * cells + i] += sj * pk.value[d * cells + i];
          }
          if (pk.requires_grad) {
            Tensor& gk = pk.grad_buffer();
            for (int d = d0; d < d1; ++d) gk[d * cells + i] += sj * pq.value[d * cells + i];
          }
        }
      }
    }
  });
}

Var gather_rows(const Var& table, std::span<const int> keys, int h, int w) {
  const auto& ts = table.shape();
  if (ts.size() != 2) throw InputError("gather_rows: table must be {K, n}");
  const int kcount = ts[0], n = ts[1];
  const std::size_t cells = static_cast<std::size_t>(h) * w;
  if (keys.size() != cells) throw InputError("gather_rows: key count does not match grid");
  Tensor out({n, h, w});
  for (std::size_t i = 0; i < cells; ++i) {
    const int k = keys[i];
    if (k < 0 || k >= kcount) throw ContractError("gather_rows: key " + std::to_string(k) + " out of range");
    for (int d = 0; d < n; ++d) out[d * cells + i] = table.value()[static_cast<std::size_t>(k) * n + d];
  }
  std::vector<int> key_copy(keys.begin(), keys.end());
  return make_result(std::move(out), {table}, [key_copy = std::move(key_copy), n, cells](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < cells; ++i) {
      const std::size_t row = static_cast<std::size_t>(key_copy[i]) * n;
      for (int d = 0; d < n; ++d) g[row + d] += self.grad[d * cells + i];
    }
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse");
  return mean(mul(sub(a, b), sub(a, b)));
}

Var cross_entropy(const Var& logits, std::span<const int> labels, int ignore) {
  require_rank3(logits, "cross_entropy");
  const int c = logits.value().channels();
  const std::size_t cells = static_cast<std::size_t>(logits.value().cells());
  if (labels.size() != cells) throw InputError("cross_entropy: label count does not match logits");
  const double* in = logits.value().data();
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c) * cells, 0.0);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    const int y = labels[i];
    if (y == ignore) continue;
    if (y < 0 || y >= c) throw InputError("cross_entropy: label " + std::to_string(y) + " out of range");
    double m = in[i];
    for (int k = 1; k < c; ++k) m = std::max(m, in[k * cells + i]);
    double z = 0.0;
    for (int k = 0; k < c; ++k) z += std::exp(in[k * cells + i] - m);
    const double lse = m + std::log(z);
    total += lse - in[static_cast<std::size_t>(y) * cells + i];
    for (int k = 0; k < c; ++k) (*probs)[k * cells + i] = std::exp(in[k * cells + i] - lse);
    ++counted;
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result(Tensor({1}, total / denom), {logits},
                     [probs, label_copy = std::move(label_copy), c, cells, denom, ignore](Node& self) {
                       Tensor& g = self.parents[0]->grad_buffer();
                       const double go = self.grad[0] / denom;
                       for (std::size_t i = 0; i < cells; ++i) {
                         const int y = label_copy[i];
                         if (y == ignore) continue;
                         for (int k = 0; k < c; ++k) {
                           g[k * cells + i] += go * ((*probs)[k * cells + i] - (k == y ? 1.0 : 0.0));
                         }
                       }
                     });
}

Var nll_clamped(const Var& probs, std::span<const int> keys, double eps) {
  require_rank3(probs, "nll_clamped");
  const int kcount = probs.value().channels();
  const std::size_t cells = static_cast<std::size_t>(probs.value().cells());
  if (keys.size() != cells) throw InputError("nll_clamped: key count does not match grid");
  double total = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    const int k = keys[i];
    if (k < 0 || k >= kcount) throw InputError("nll_clamped: key out of range");
    total -= std::log(std::max(probs.value()[static_cast<std::size_t>(k) * cells + i], eps));
  }
  const double denom = static_cast<double>(std::max<std::size_t>(cells, 1));
  std::vector<int> key_copy(keys.begin(), keys.end());
  return make_result(Tensor({1}, total / denom), {probs},
                     [key_copy = std::move(key_copy), cells, denom, eps](Node& self) {
                       Tensor& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < cells; ++i) {
                         const std::size_t idx = static_cast<std::size_t>(key_copy[i]) * cells + i;
                         const double p = self.parents[0]->value[idx];
                         if (p > eps) g[idx] -= self.grad[0] / (denom * p);
                       }
                     });
}

}  // namespace esc::ag

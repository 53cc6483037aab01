#include "langdet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace langdet {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void check_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
  }
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      add_into(pa->grad, n.grad);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      add_into(pb->grad, n.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      add_into(pa->grad, n.grad);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->values[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->values[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pb->values[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const double bv = pb->values[i];
        pb->grad[i] -= n.grad[i] * pa->values[i] / (bv * bv);
      }
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  NodePtr pa = a.node();
  return make_op(a.shape(), std::move(out), {pa}, [pa, s](Node& n) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * s;
  });
}

Tensor add_n(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("add_n: empty input list");
  std::vector<double> out(parts[0].size(), 0.0);
  std::vector<NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) {
    check_same_shape(parts[0], p, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
    nodes.push_back(p.node());
  }
  auto parents = nodes;
  return make_op(parts[0].shape(), std::move(out), std::move(parents), [nodes](Node& n) {
    for (const auto& p : nodes) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      add_into(p->grad, n.grad);
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1);
  const std::size_t m = transpose_b ? b.dim(0) : b.dim(1);
  const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
  if (k != bk) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                (transpose_b ? " x T" : " x ") + shape_str(b.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  if (!transpose_b) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* arow = A + i * k;
      double* crow = out.data() + i * m;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = B + kk * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double* arow = A + i * k;
      double* crow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double* brow = B + j * k;
        double acc = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] = acc;
      }
    }
  }
  NodePtr pa = a.node(), pb = b.node();
  return make_op({n, m}, std::move(out), {pa, pb}, [pa, pb, n, k, m, transpose_b](Node& nd) {
    const double* G = nd.grad.data();
    if (pa->requires_grad) {
      pa->ensure_grad();
      double* dA = pa->grad.data();
      const double* B = pb->values.data();
      if (!transpose_b) {
        // dA = G * B^T
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = G + i * m;
          double* darow = dA + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = B + kk * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            darow[kk] += acc;
          }
        }
      } else {
        // dA = G * B
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = G + i * m;
          double* darow = dA + i * k;
          for (std::size_t j = 0; j < m; ++j) {
            const double gv = grow[j];
            const double* brow = B + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) darow[kk] += gv * brow[kk];
          }
        }
      }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      double* dB = pb->grad.data();
      const double* A = pa->values.data();
      if (!transpose_b) {
        // dB = A^T * G
        for (std::size_t i = 0; i < n; ++i) {
          const double* arow = A + i * k;
          const double* grow = G + i * m;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            double* dbrow = dB + kk * m;
            for (std::size_t j = 0; j < m; ++j) dbrow[j] += av * grow[j];
          }
        }
      } else {
        // dB = G^T * A
        for (std::size_t i = 0; i < n; ++i) {
          const double* arow = A + i * k;
          const double* grow = G + i * m;
          for (std::size_t j = 0; j < m; ++j) {
            const double gv = grow[j];
            double* dbrow = dB + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) dbrow[kk] += gv * arow[kk];
          }
        }
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  const std::size_t nd = parts[0].ndim();
  if (axis >= nd) throw std::invalid_argument("concat: axis out of range");
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    if (p.ndim() != nd) {
      throw std::invalid_argument("concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    }
    nodes.push_back(p.node());
  }
  if (nd == 1 || (nd == 2 && axis == 0)) {
    std::size_t total = 0;
    const std::size_t cols = nd == 2 ? parts[0].dim(1) : 1;
    for (const auto& p : parts) {
      if (nd == 2 && p.dim(1) != cols) {
        throw std::invalid_argument("concat: column mismatch " + shape_str(parts[0].shape()) +
                                    " vs " + shape_str(p.shape()));
      }
      total += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(total * cols);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    Shape shape = nd == 2 ? Shape{total, cols} : Shape{total};
    auto parents = nodes;
    return make_op(std::move(shape), std::move(out), std::move(parents), [nodes](Node& n) {
      std::size_t offset = 0;
      for (const auto& p : nodes) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < p->values.size(); ++i) p->grad[i] += n.grad[offset + i];
        }
        offset += p->values.size();
      }
    });
  }
  // nd == 2, axis == 1
  const std::size_t rows = parts[0].dim(0);
  std::size_t total_cols = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != rows) {
      throw std::invalid_argument("concat: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    }
    total_cols += p.dim(1);
  }
  std::vector<double> out(rows * total_cols);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(p.values().begin() + r * pc, p.values().begin() + (r + 1) * pc,
                out.begin() + r * total_cols + col);
    }
    col += pc;
  }
  auto parents = nodes;
  return make_op({rows, total_cols}, std::move(out), std::move(parents),
                 [nodes, rows, total_cols](Node& n) {
                   std::size_t col = 0;
                   for (const auto& p : nodes) {
                     const std::size_t pc = p->shape[1];
                     if (p->requires_grad) {
                       p->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < pc; ++c)
                           p->grad[r * pc + c] += n.grad[r * total_cols + col + c];
                     }
                     col += pc;
                   }
                 });
}

Tensor slice(const Tensor& v, std::size_t begin, std::size_t end) {
  if (v.ndim() != 1) throw std::invalid_argument("slice: expected 1-d tensor, got " + shape_str(v.shape()));
  if (begin >= end || end > v.size()) throw std::invalid_argument("slice: bad range");
  std::vector<double> out(v.values().begin() + begin, v.values().begin() + end);
  NodePtr pv = v.node();
  return make_op({end - begin}, std::move(out), {pv}, [pv, begin](Node& n) {
    pv->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pv->grad[begin + i] += n.grad[i];
  });
}

Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end) {
  check_2d(m, "slice_rows");
  if (begin >= end || end > m.dim(0)) throw std::invalid_argument("slice_rows: bad range");
  const std::size_t cols = m.dim(1);
  std::vector<double> out(m.values().begin() + begin * cols, m.values().begin() + end * cols);
  NodePtr pm = m.node();
  return make_op({end - begin, cols}, std::move(out), {pm}, [pm, begin, cols](Node& n) {
    pm->ensure_grad();
    const std::size_t offset = begin * cols;
    for (std::size_t i = 0; i < n.grad.size(); ++i) pm->grad[offset + i] += n.grad[i];
  });
}

Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t end) {
  check_2d(m, "slice_cols");
  if (begin >= end || end > m.dim(1)) throw std::invalid_argument("slice_cols: bad range");
  const std::size_t rows = m.dim(0), cols = m.dim(1), width = end - begin;
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(m.values().begin() + r * cols + begin, m.values().begin() + r * cols + end,
              out.begin() + r * width);
  NodePtr pm = m.node();
  return make_op({rows, width}, std::move(out), {pm}, [pm, begin, rows, cols, width](Node& n) {
    pm->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c)
        pm->grad[r * cols + begin + c] += n.grad[r * width + c];
  });
}

Tensor reshape(const Tensor& t, Shape shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != t.size()) {
    throw std::invalid_argument("reshape: size mismatch " + shape_str(t.shape()) + " -> " +
                                shape_str(shape));
  }
  NodePtr pt = t.node();
  return make_op(std::move(shape), t.values(), {pt}, [pt](Node& nd) {
    pt->ensure_grad();
    add_into(pt->grad, nd.grad);
  });
}

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  NodePtr pt = t.node();
  return make_op({1}, {acc}, {pt}, [pt](Node& n) {
    pt->ensure_grad();
    const double g = n.grad[0];
    for (double& d : pt->grad) d += g;
  });
}

Tensor mean(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(t.size());
  NodePtr pt = t.node();
  return make_op({1}, {acc * inv}, {pt}, [pt, inv](Node& n) {
    pt->ensure_grad();
    const double g = n.grad[0] * inv;
    for (double& d : pt->grad) d += g;
  });
}

Tensor relu(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i] > 0.0 ? t[i] : 0.0;
  NodePtr pt = t.node();
  return make_op(t.shape(), std::move(out), {pt}, [pt](Node& n) {
    pt->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (pt->values[i] > 0.0) pt->grad[i] += n.grad[i];
  });
}

Tensor gelu(const Tensor& t) {
  constexpr double inv_sqrt2 = 0.70710678118654752440084436210485;
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = t[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  NodePtr pt = t.node();
  return make_op(t.shape(), std::move(out), {pt}, [pt](Node& n) {
    constexpr double c_inv_sqrt2 = 0.70710678118654752440084436210485;
    constexpr double c_inv_sqrt2pi = 0.39894228040143267793994605993438;
    pt->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double x = pt->values[i];
      const double phi = 0.5 * (1.0 + std::erf(x * c_inv_sqrt2));
      const double pdf = c_inv_sqrt2pi * std::exp(-0.5 * x * x);
      pt->grad[i] += n.grad[i] * (phi + x * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-t[i]));
  NodePtr pt = t.node();
  return make_op(t.shape(), std::move(out), {pt}, [pt](Node& n) {
    pt->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double s = n.values[i];
      pt->grad[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor abs(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(t[i]);
  NodePtr pt = t.node();
  return make_op(t.shape(), std::move(out), {pt}, [pt](Node& n) {
    pt->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double x = pt->values[i];
      if (x > 0.0)
        pt->grad[i] += n.grad[i];
      else if (x < 0.0)
        pt->grad[i] -= n.grad[i];
    }
  });
}

Tensor vmin(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "vmin");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] <= b[i] ? a[i] : b[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const bool take_a = pa->values[i] <= pb->values[i];
      const NodePtr& p = take_a ? pa : pb;
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad[i] += n.grad[i];
      }
    }
  });
}

Tensor vmax(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "vmax");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] >= b[i] ? a[i] : b[i];
  NodePtr pa = a.node(), pb = b.node();
  return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const bool take_a = pa->values[i] >= pb->values[i];
      const NodePtr& p = take_a ? pa : pb;
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad[i] += n.grad[i];
      }
    }
  });
}

Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t rows = t.ndim() == 1 ? 1 : t.dim(0);
  const std::size_t cols = t.ndim() == 1 ? t.dim(0) : t.dim(1);
  if (gamma.ndim() != 1 || gamma.dim(0) != cols || beta.ndim() != 1 || beta.dim(0) != cols) {
    throw std::invalid_argument("layer_norm: gain/bias shape " + shape_str(gamma.shape()) + "/" +
                                shape_str(beta.shape()) + " does not match row width " +
                                std::to_string(cols));
  }
  std::vector<double> out(t.size());
  std::vector<double> xhat(t.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = t.values().data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = x[c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (x[c] - mu) * istd;
      xhat[r * cols + c] = xh;
      out[r * cols + c] = gamma[c] * xh + beta[c];
    }
  }
  NodePtr pt = t.node(), pg = gamma.node(), pbta = beta.node();
  return make_op(t.shape(), std::move(out), {pt, pg, pbta},
                 [pt, pg, pbta, rows, cols, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)](Node& n) {
                   if (pg->requires_grad) pg->ensure_grad();
                   if (pbta->requires_grad) pbta->ensure_grad();
                   if (pt->requires_grad) pt->ensure_grad();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* g = n.grad.data() + r * cols;
                     const double* xh = xhat.data() + r * cols;
                     if (pg->requires_grad)
                       for (std::size_t c = 0; c < cols; ++c) pg->grad[c] += g[c] * xh[c];
                     if (pbta->requires_grad)
                       for (std::size_t c = 0; c < cols; ++c) pbta->grad[c] += g[c];
                     if (pt->requires_grad) {
                       double mean_gy = 0.0, mean_gyx = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) {
                         const double gy = g[c] * pg->values[c];
                         mean_gy += gy;
                         mean_gyx += gy * xh[c];
                       }
                       mean_gy /= static_cast<double>(cols);
                       mean_gyx /= static_cast<double>(cols);
                       for (std::size_t c = 0; c < cols; ++c) {
                         const double gy = g[c] * pg->values[c];
                         pt->grad[r * cols + c] += (gy - mean_gy - xh[c] * mean_gyx) * inv_std[r];
                       }
                     }
                   }
                 });
}

namespace {

void softmax_row(const double* x, double* y, std::size_t n, double temperature) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp((x[i] - mx) / temperature);
    z += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}

}  // namespace

Tensor softmax(const Tensor& v, double temperature) {
  if (v.ndim() != 1) throw std::invalid_argument("softmax: expected 1-d tensor, got " + shape_str(v.shape()));
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
  std::vector<double> out(v.size());
  softmax_row(v.values().data(), out.data(), v.size(), temperature);
  NodePtr pv = v.node();
  return make_op(v.shape(), std::move(out), {pv}, [pv, temperature](Node& n) {
    pv->ensure_grad();
    double dot = 0.0;
    for (std::size_t i = 0; i < n.values.size(); ++i) dot += n.grad[i] * n.values[i];
    for (std::size_t i = 0; i < n.values.size(); ++i)
      pv->grad[i] += n.values[i] * (n.grad[i] - dot) / temperature;
  });
}

Tensor softmax_rows(const Tensor& m, double temperature) {
  check_2d(m, "softmax_rows");
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax_rows: temperature must be > 0");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(m.values().data() + r * cols, out.data() + r * cols, cols, temperature);
  NodePtr pm = m.node();
  return make_op(m.shape(), std::move(out), {pm}, [pm, rows, cols, temperature](Node& n) {
    pm->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = n.values.data() + r * cols;
      const double* g = n.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c)
        pm->grad[r * cols + c] += y[c] * (g[c] - dot) / temperature;
    }
  });
}

namespace {

double log_sum_exp(const double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - mx);
  return mx + std::log(z);
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  if (logits.ndim() != 1) {
    throw std::invalid_argument("cross_entropy: expected 1-d logits, got " + shape_str(logits.shape()));
  }
  if (label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
  const double lse = log_sum_exp(logits.values().data(), logits.size());
  NodePtr pl = logits.node();
  return make_op({1}, {lse - logits[label]}, {pl}, [pl, label](Node& n) {
    pl->ensure_grad();
    const double g = n.grad[0];
    const std::size_t k = pl->values.size();
    const double lse = log_sum_exp(pl->values.data(), k);
    for (std::size_t i = 0; i < k; ++i) {
      const double p = std::exp(pl->values[i] - lse);
      pl->grad[i] += g * (p - (i == label ? 1.0 : 0.0));
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& labels) {
  check_2d(logits, "cross_entropy_rows");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) throw std::invalid_argument("cross_entropy_rows: label count mismatch");
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) throw std::invalid_argument("cross_entropy_rows: label out of range");
    const double* x = logits.values().data() + r * cols;
    out[r] = log_sum_exp(x, cols) - x[labels[r]];
  }
  NodePtr pl = logits.node();
  return make_op({rows}, std::move(out), {pl}, [pl, labels, rows, cols](Node& n) {
    pl->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = n.grad[r];
      if (g == 0.0) continue;
      const double* x = pl->values.data() + r * cols;
      const double lse = log_sum_exp(x, cols);
      for (std::size_t c = 0; c < cols; ++c) {
        const double p = std::exp(x[c] - lse);
        pl->grad[r * cols + c] += g * (p - (c == labels[r] ? 1.0 : 0.0));
      }
    }
  });
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.ndim() != 1 || q.ndim() != 1 || p.size() != q.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch " + shape_str(p.shape()) + " vs " +
                                shape_str(q.shape()));
  }
  constexpr double floor = 1e-12;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    if (pi == 0.0) continue;
    acc += pi * (std::log(std::max(pi, floor)) - std::log(std::max(q[i], floor)));
  }
  NodePtr pp = p.node(), pq = q.node();
  return make_op({1}, {acc}, {pp, pq}, [pp, pq](Node& n) {
    constexpr double floor = 1e-12;
    const double g = n.grad[0];
    const std::size_t k = pp->values.size();
    if (pq->requires_grad) {
      pq->ensure_grad();
      for (std::size_t i = 0; i < k; ++i) {
        const double pi = pp->values[i];
        if (pi == 0.0) continue;
        const double qi = pq->values[i];
        if (qi > floor) pq->grad[i] -= g * pi / qi;
      }
    }
    if (pp->requires_grad) {
      pp->ensure_grad();
      for (std::size_t i = 0; i < k; ++i) {
        const double pi = pp->values[i];
        if (pi == 0.0) continue;
        const double term = std::log(std::max(pi, floor)) - std::log(std::max(pq->values[i], floor));
        pp->grad[i] += g * (term + (pi > floor ? 1.0 : 0.0));
      }
    }
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 1 || b.ndim() != 1 || a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: length mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  constexpr double eps = 1e-12;
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (na <= eps || nb <= eps) {
    throw std::invalid_argument("cosine_similarity: degenerate input with near-zero norm");
  }
  const double raw = dot / (na * nb);
  const double cosv = std::clamp(raw, -1.0, 1.0);
  NodePtr pa = a.node(), pb = b.node();
  return make_op({1}, {cosv}, {pa, pb}, [pa, pb, na, nb, raw](Node& n) {
    const double g = n.grad[0];
    const std::size_t k = pa->values.size();
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < k; ++i)
        pa->grad[i] += g * (pb->values[i] / (na * nb) - raw * pa->values[i] / (na * na));
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < k; ++i)
        pb->grad[i] += g * (pa->values[i] / (na * nb) - raw * pb->values[i] / (nb * nb));
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.ndim() != 3 || w.ndim() != 4) {
    throw std::invalid_argument("conv2d: expected (C,H,W) input and (Co,C,kh,kw) weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci) {
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(w.shape()));
  }
  if (bias.ndim() != 1 || bias.dim(0) != co) {
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) + " vs Co=" +
                                std::to_string(co));
  }
  if (h + 2 * padding < kh || wd + 2 * padding < kw) throw std::invalid_argument("conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - kw) / stride + 1;
  std::vector<double> out(co * ho * wo);
  const double* X = x.values().data();
  const double* W = w.values().data();
  for (std::size_t oc = 0; oc < co; ++oc) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = bias[oc];
        for (std::size_t ic = 0; ic < ci; ++ic) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              acc += X[(ic * h + iy) * wd + ix] * W[((oc * ci + ic) * kh + ky) * kw + kx];
            }
          }
        }
        out[(oc * ho + oy) * wo + ox] = acc;
      }
    }
  }
  NodePtr px = x.node(), pw = w.node(), pb = bias.node();
  return make_op({co, ho, wo}, std::move(out), {px, pw, pb},
                 [px, pw, pb, ci, h, wd, co, kh, kw, ho, wo, stride, padding](Node& n) {
                   if (px->requires_grad) px->ensure_grad();
                   if (pw->requires_grad) pw->ensure_grad();
                   if (pb->requires_grad) pb->ensure_grad();
                   const double* G = n.grad.data();
                   for (std::size_t oc = 0; oc < co; ++oc) {
                     for (std::size_t oy = 0; oy < ho; ++oy) {
                       for (std::size_t ox = 0; ox < wo; ++ox) {
                         const double g = G[(oc * ho + oy) * wo + ox];
                         if (g == 0.0) continue;
                         if (pb->requires_grad) pb->grad[oc] += g;
                         for (std::size_t ic = 0; ic < ci; ++ic) {
                           for (std::size_t ky = 0; ky < kh; ++ky) {
                             const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                             if (iy < 0 || iy >= static_cast<long>(h)) continue;
                             for (std::size_t kx = 0; kx < kw; ++kx) {
                               const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                               if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                               const std::size_t xi = (ic * h + iy) * wd + ix;
                               const std::size_t wi = ((oc * ci + ic) * kh + ky) * kw + kx;
                               if (px->requires_grad) px->grad[xi] += g * pw->values[wi];
                               if (pw->requires_grad) pw->grad[wi] += g * px->values[xi];
                             }
                           }
                         }
                       }
                     }
                   }
                 });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 3) throw std::invalid_argument("global_avg_pool: expected (C,H,W), got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[ch * hw + i];
    out[ch] = acc / static_cast<double>(hw);
  }
  NodePtr px = x.node();
  return make_op({c}, std::move(out), {px}, [px, c, hw](Node& n) {
    px->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = n.grad[ch] / static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) px->grad[ch * hw + i] += g;
    }
  });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  check_2d(m, "add_rowvec");
  if (v.ndim() != 1 || v.dim(0) != m.dim(1)) {
    throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(m.shape()) + " vs " +
                                shape_str(v.shape()));
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = m[r * cols + c] + v[c];
  NodePtr pm = m.node(), pv = v.node();
  return make_op(m.shape(), std::move(out), {pm, pv}, [pm, pv, rows, cols](Node& n) {
    if (pm->requires_grad) {
      pm->ensure_grad();
      add_into(pm->grad, n.grad);
    }
    if (pv->requires_grad) {
      pv->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) pv->grad[c] += n.grad[r * cols + c];
    }
  });
}

Tensor embedding_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  check_2d(table, "embedding_rows");
  if (ids.empty()) throw std::invalid_argument("embedding_rows: empty id list");
  const std::size_t cols = table.dim(1);
  std::vector<double> out(ids.size() * cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= table.dim(0)) throw std::invalid_argument("embedding_rows: id out of range");
    std::copy(table.values().begin() + ids[r] * cols, table.values().begin() + (ids[r] + 1) * cols,
              out.begin() + r * cols);
  }
  NodePtr pt = table.node();
  return make_op({ids.size(), cols}, std::move(out), {pt}, [pt, ids, cols](Node& n) {
    pt->ensure_grad();
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) pt->grad[ids[r] * cols + c] += n.grad[r * cols + c];
  });
}

Tensor tokens_to_chw(const Tensor& m, std::size_t h, std::size_t w) {
  check_2d(m, "tokens_to_chw");
  if (m.dim(0) != h * w) {
    throw std::invalid_argument("tokens_to_chw: token count " + shape_str(m.shape()) +
                                " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t c = m.dim(1);
  std::vector<double> out(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(ch * h + y) * w + x] = m[(y * w + x) * c + ch];
  NodePtr pm = m.node();
  return make_op({c, h, w}, std::move(out), {pm}, [pm, c, h, w](Node& n) {
    pm->ensure_grad();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch)
          pm->grad[(y * w + x) * c + ch] += n.grad[(ch * h + y) * w + x];
  });
}

}  // namespace langdet

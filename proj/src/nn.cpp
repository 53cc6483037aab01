#include "langdet/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace langdet {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  for (const auto& [existing, _] : entries_) {
    if (existing == name) throw std::logic_error("ParamStore: duplicate parameter " + name);
  }
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("ParamStore: no parameter named " + name);
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

namespace {

Tensor xavier_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace

Linear Linear::create(ParamStore& params, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng) {
  Linear l;
  l.weight = params.add(name + ".weight", xavier_init({in, out}, in, out, rng));
  l.bias = params.add(name + ".bias", Tensor::zeros({out}, true));
  return l;
}

Linear Linear::create_zero(ParamStore& params, const std::string& name, std::size_t in,
                           std::size_t out) {
  Linear l;
  l.weight = params.add(name + ".weight", Tensor::zeros({in, out}, true));
  l.bias = params.add(name + ".bias", Tensor::zeros({out}, true));
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.ndim() == 1) {
    Tensor row = reshape(x, {1, x.dim(0)});
    return reshape(add_rowvec(matmul(row, weight), bias), {weight.dim(1)});
  }
  return add_rowvec(matmul(x, weight), bias);
}

LayerNormBlock LayerNormBlock::create(ParamStore& params, const std::string& name,
                                      std::size_t dim) {
  LayerNormBlock b;
  b.gamma = params.add(name + ".gamma", Tensor::full({dim}, 1.0, true));
  b.beta = params.add(name + ".beta", Tensor::zeros({dim}, true));
  return b;
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& params, const std::string& name,
                                              std::size_t dim, std::size_t heads, Rng& rng,
                                              bool zero_output_proj) {
  if (dim % heads != 0) {
    throw std::invalid_argument("attention: dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
  MultiHeadAttention a;
  a.heads = heads;
  a.dim = dim;
  a.wq = Linear::create(params, name + ".wq", dim, dim, rng);
  a.wk = Linear::create(params, name + ".wk", dim, dim, rng);
  a.wv = Linear::create(params, name + ".wv", dim, dim, rng);
  a.wo = zero_output_proj ? Linear::create_zero(params, name + ".wo", dim, dim)
                          : Linear::create(params, name + ".wo", dim, dim, rng);
  return a;
}

std::pair<Tensor, std::vector<Tensor>> MultiHeadAttention::forward_with_weights(
    const Tensor& queries, const Tensor& keys_values) const {
  if (queries.ndim() != 2 || keys_values.ndim() != 2 || queries.dim(1) != dim ||
      keys_values.dim(1) != dim) {
    throw std::invalid_argument("attention: feature dim mismatch " + shape_str(queries.shape()) +
                                " vs " + shape_str(keys_values.shape()) + " (model dim " +
                                std::to_string(dim) + ")");
  }
  const std::size_t dh = dim / heads;
  Tensor q = wq.forward(queries);
  Tensor k = wk.forward(keys_values);
  Tensor v = wv.forward(keys_values);
  std::vector<Tensor> head_outputs;
  std::vector<Tensor> head_weights;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, kh, true), inv_sqrt_dh);
    Tensor weights = softmax_rows(scores);
    head_weights.push_back(weights);
    head_outputs.push_back(matmul(weights, vh));
  }
  Tensor merged = heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
  return {wo.forward(merged), std::move(head_weights)};
}

Tensor MultiHeadAttention::forward(const Tensor& queries, const Tensor& keys_values) const {
  return forward_with_weights(queries, keys_values).first;
}

FeedForward FeedForward::create(ParamStore& params, const std::string& name, std::size_t dim,
                                std::size_t hidden, Rng& rng) {
  FeedForward f;
  f.in = Linear::create(params, name + ".in", dim, hidden, rng);
  f.out = Linear::create(params, name + ".out", hidden, dim, rng);
  return f;
}

Tensor sinusoidal_pe_1d(std::size_t positions, std::size_t dim) {
  std::vector<double> v(positions * dim, 0.0);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      v[p * dim + 2 * i] = std::sin(static_cast<double>(p) * freq);
      if (2 * i + 1 < dim) v[p * dim + 2 * i + 1] = std::cos(static_cast<double>(p) * freq);
    }
  }
  return Tensor::from_values({positions, dim}, std::move(v));
}

Tensor sinusoidal_pe_2d(std::size_t height, std::size_t width, std::size_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_pe_2d: dim must be even");
  const std::size_t half = dim / 2;
  Tensor row_pe = sinusoidal_pe_1d(height, half);
  Tensor col_pe = sinusoidal_pe_1d(width, half);
  std::vector<double> v(height * width * dim);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double* out = v.data() + (y * width + x) * dim;
      for (std::size_t i = 0; i < half; ++i) {
        out[i] = col_pe[x * half + i];
        out[half + i] = row_pe[y * half + i];
      }
    }
  }
  return Tensor::from_values({height * width, dim}, std::move(v));
}

AdamW::AdamW(const ParamStore& params, Options opts) : opts_(opts) {
  for (const auto& [_, t] : params.entries()) {
    params_.push_back(t);
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  double lr = opts_.lr;
  if (opts_.warmup_steps > 0 && step_ <= opts_.warmup_steps) {
    lr *= static_cast<double>(step_) / static_cast<double>(opts_.warmup_steps);
  }
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p];
    if (!t.has_grad()) continue;
    const std::vector<double>& g = t.grad();
    std::vector<double>& x = t.mutable_values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[p][i] = opts_.beta1 * m_[p][i] + (1.0 - opts_.beta1) * g[i];
      v_[p][i] = opts_.beta2 * v_[p][i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mh = m_[p][i] / bc1;
      const double vh = v_[p][i] / bc2;
      x[i] -= lr * (mh / (std::sqrt(vh) + opts_.eps) + opts_.weight_decay * x[i]);
    }
  }
}

}  // namespace langdet

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "langdet/ops.hpp"
#include "langdet/rng.hpp"
#include "langdet/tensor.hpp"

namespace langdet {

// Ordered registry of named trainable tensors. Registration order is fixed by
// module construction order, which keeps optimizer state and checkpoints
// deterministic.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  Tensor find(const std::string& name) const;
  std::size_t total_size() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  static Linear create(ParamStore& params, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng);
  static Linear create_zero(ParamStore& params, const std::string& name, std::size_t in,
                            std::size_t out);
  Tensor forward(const Tensor& x) const;  // (n,in) -> (n,out), or 1-d in
};

struct LayerNormBlock {
  Tensor gamma;
  Tensor beta;

  static LayerNormBlock create(ParamStore& params, const std::string& name, std::size_t dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// Scaled dot-product multi-head attention. Queries attend over keys/values;
// per-row attention weights always sum to 1.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t heads = 1;
  std::size_t dim = 0;

  static MultiHeadAttention create(ParamStore& params, const std::string& name, std::size_t dim,
                                   std::size_t heads, Rng& rng, bool zero_output_proj = false);
  Tensor forward(const Tensor& queries, const Tensor& keys_values) const;
  // Also exposes the per-head attention matrices for inspection.
  std::pair<Tensor, std::vector<Tensor>> forward_with_weights(const Tensor& queries,
                                                              const Tensor& keys_values) const;
};

struct FeedForward {
  Linear in;
  Linear out;

  static FeedForward create(ParamStore& params, const std::string& name, std::size_t dim,
                            std::size_t hidden, Rng& rng);
  Tensor forward(const Tensor& x) const { return out.forward(gelu(in.forward(x))); }
};

// Fixed sinusoidal position features. The 2-d variant interleaves row/column
// encodings over half the channel budget each.
Tensor sinusoidal_pe_1d(std::size_t positions, std::size_t dim);
Tensor sinusoidal_pe_2d(std::size_t height, std::size_t width, std::size_t dim);

// AdamW with linear learning-rate warm-up.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::size_t warmup_steps = 0;
  };

  AdamW(const ParamStore& params, Options opts);
  void step();
  std::size_t steps_taken() const { return step_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  Options opts_;
  std::size_t step_ = 0;
};

}  // namespace langdet

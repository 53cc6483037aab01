#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "langdet/nn.hpp"
#include "langdet/tensor.hpp"

namespace langdet {

// Whitespace tokenizer over a fixed pool of scene-context prompt paraphrases.
// The vocabulary is exactly the tokens of the pool; nothing else is accepted.
class PromptVocabulary {
 public:
  explicit PromptVocabulary(std::vector<std::string> pool);

  const std::vector<std::string>& pool() const { return pool_; }
  std::size_t vocab_size() const { return tokens_.size(); }
  std::vector<std::size_t> tokenize(const std::string& prompt) const;
  const std::vector<std::size_t>& pool_tokens(std::size_t index) const { return pool_ids_[index]; }

 private:
  std::vector<std::string> pool_;
  std::vector<std::string> tokens_;
  std::vector<std::vector<std::size_t>> pool_ids_;
};

struct ReasonerConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  bool zero_init_output = true;
  // One classifier head per scene attribute; entries are class counts.
  std::vector<std::size_t> attribute_cardinalities{3, 3, 3};
};

// V2L cross-attention from image features (queries) to scene-context prompt
// features (keys/values), plus the training-only scene-guidance head that
// stands in for the frozen-LLM description branch.
class VisualSemanticReasoner {
 public:
  VisualSemanticReasoner(ParamStore& params, const std::string& name, const ReasonerConfig& cfg,
                         const PromptVocabulary& vocab, Rng& rng);

  // Token embedding + projection + 1-d sinusoidal positions -> (T, dim).
  Tensor encode_prompt(const std::vector<std::size_t>& token_ids) const;

  // (S, dim) image features -> (S, dim) context features. 2-d positions are
  // added to the queries here; spatial length is preserved.
  Tensor forward(const Tensor& image_features, const std::vector<std::size_t>& token_ids) const;
  std::pair<Tensor, std::vector<Tensor>> forward_with_weights(
      const Tensor& image_features, const std::vector<std::size_t>& token_ids) const;

  // Elementwise merge back into the encoder stream, no gating or scaling.
  static Tensor merge(const Tensor& encoder_features, const Tensor& reasoner_output);

  // Sum of per-attribute cross-entropies after the 5x5 strided-conv adapter.
  // Training only: calling this outside training mode is an error, mirroring
  // the no-LLM-at-inference guarantee.
  Tensor guidance_loss(const Tensor& reasoner_output, const std::vector<std::size_t>& attribute_labels,
                       bool training_mode) const;

  // Instrumentation: number of times the guidance branch was constructed.
  std::size_t guidance_constructions() const { return guidance_constructions_; }

  const ReasonerConfig& config() const { return cfg_; }
  const MultiHeadAttention& attention() const { return v2l_; }
  MultiHeadAttention& attention() { return v2l_; }

 private:
  ReasonerConfig cfg_;
  const PromptVocabulary& vocab_;
  Tensor token_table_;  // (vocab, dim)
  Linear prompt_proj_;
  MultiHeadAttention v2l_;
  Tensor image_pe_;   // (grid_h*grid_w, dim)
  Tensor prompt_pe_;  // (max tokens, dim)
  Tensor adapter_w_, adapter_b_;  // 5x5 stride-2 conv
  std::vector<Linear> attribute_heads_;
  mutable std::size_t guidance_constructions_ = 0;
};

}  // namespace langdet

#include "langdet/reasoner.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "langdet/ops.hpp"

namespace langdet {

namespace {

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) {
        out.push_back(current);
        current.clear();
      }
      continue;
    }
    if (c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':' || c == '"' ||
        c == '\'') {
      continue;  // punctuation is not part of the vocabulary
    }
    current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (!current.empty()) out.push_back(current);
  return out;
}

}  // namespace

PromptVocabulary::PromptVocabulary(std::vector<std::string> pool) : pool_(std::move(pool)) {
  if (pool_.empty()) throw std::invalid_argument("prompt vocabulary: empty prompt pool");
  for (const auto& p : pool_) {
    for (const auto& t : split_tokens(p)) {
      if (std::find(tokens_.begin(), tokens_.end(), t) == tokens_.end()) tokens_.push_back(t);
    }
  }
  pool_ids_.reserve(pool_.size());
  for (const auto& p : pool_) pool_ids_.push_back(tokenize(p));
}

std::vector<std::size_t> PromptVocabulary::tokenize(const std::string& prompt) const {
  auto words = split_tokens(prompt);
  if (words.empty()) throw std::invalid_argument("prompt vocabulary: empty prompt");
  std::vector<std::size_t> ids;
  ids.reserve(words.size());
  for (const auto& w : words) {
    auto it = std::find(tokens_.begin(), tokens_.end(), w);
    if (it == tokens_.end()) {
      throw std::invalid_argument("prompt vocabulary: unknown token '" + w + "'");
    }
    ids.push_back(static_cast<std::size_t>(it - tokens_.begin()));
  }
  return ids;
}

VisualSemanticReasoner::VisualSemanticReasoner(ParamStore& params, const std::string& name,
                                               const ReasonerConfig& cfg,
                                               const PromptVocabulary& vocab, Rng& rng)
    : cfg_(cfg), vocab_(vocab) {
  std::size_t max_tokens = 1;
  for (std::size_t i = 0; i < vocab.pool().size(); ++i) {
    max_tokens = std::max(max_tokens, vocab.pool_tokens(i).size());
  }
  {
    std::vector<double> table(vocab.vocab_size() * cfg.dim);
    for (auto& v : table) v = rng.normal(0.0, 0.02);
    token_table_ = params.add(name + ".token_table",
                              Tensor::from_values({vocab.vocab_size(), cfg.dim}, std::move(table), true));
  }
  prompt_proj_ = Linear::create(params, name + ".prompt_proj", cfg.dim, cfg.dim, rng);
  v2l_ = MultiHeadAttention::create(params, name + ".v2l", cfg.dim, cfg.heads, rng,
                                    cfg.zero_init_output);
  image_pe_ = sinusoidal_pe_2d(cfg.grid_h, cfg.grid_w, cfg.dim);
  prompt_pe_ = sinusoidal_pe_1d(max_tokens, cfg.dim);
  {
    const std::size_t fan = cfg.dim * 25;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan + cfg.dim));
    std::vector<double> w(cfg.dim * cfg.dim * 25);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    adapter_w_ = params.add(name + ".adapter.weight",
                            Tensor::from_values({cfg.dim, cfg.dim, 5, 5}, std::move(w), true));
    adapter_b_ = params.add(name + ".adapter.bias", Tensor::zeros({cfg.dim}, true));
  }
  for (std::size_t h = 0; h < cfg.attribute_cardinalities.size(); ++h) {
    attribute_heads_.push_back(Linear::create(params, name + ".attr" + std::to_string(h), cfg.dim,
                                              cfg.attribute_cardinalities[h], rng));
  }
}

Tensor VisualSemanticReasoner::encode_prompt(const std::vector<std::size_t>& token_ids) const {
  if (token_ids.empty()) throw std::invalid_argument("reasoner: empty prompt token sequence");
  if (token_ids.size() > prompt_pe_.dim(0)) {
    throw std::invalid_argument("reasoner: prompt longer than any pool paraphrase");
  }
  Tensor embedded = prompt_proj_.forward(embedding_rows(token_table_, token_ids));
  Tensor pe = slice_rows(prompt_pe_, 0, token_ids.size());
  return add(embedded, pe);
}

std::pair<Tensor, std::vector<Tensor>> VisualSemanticReasoner::forward_with_weights(
    const Tensor& image_features, const std::vector<std::size_t>& token_ids) const {
  if (image_features.ndim() != 2 || image_features.dim(0) != cfg_.grid_h * cfg_.grid_w ||
      image_features.dim(1) != cfg_.dim) {
    throw std::invalid_argument("reasoner: image features " + shape_str(image_features.shape()) +
                                " do not match grid " + std::to_string(cfg_.grid_h) + "x" +
                                std::to_string(cfg_.grid_w) + " with dim " + std::to_string(cfg_.dim));
  }
  Tensor queries = add(image_features, image_pe_);
  Tensor prompt = encode_prompt(token_ids);
  return v2l_.forward_with_weights(queries, prompt);
}

Tensor VisualSemanticReasoner::forward(const Tensor& image_features,
                                       const std::vector<std::size_t>& token_ids) const {
  return forward_with_weights(image_features, token_ids).first;
}

Tensor VisualSemanticReasoner::merge(const Tensor& encoder_features, const Tensor& reasoner_output) {
  return add(encoder_features, reasoner_output);
}

Tensor VisualSemanticReasoner::guidance_loss(const Tensor& reasoner_output,
                                             const std::vector<std::size_t>& attribute_labels,
                                             bool training_mode) const {
  if (!training_mode) {
    throw std::logic_error("reasoner: guidance branch is train-only and must not run at inference");
  }
  if (attribute_labels.size() != attribute_heads_.size()) {
    throw std::invalid_argument("reasoner: expected " + std::to_string(attribute_heads_.size()) +
                                " attribute labels, got " + std::to_string(attribute_labels.size()));
  }
  ++guidance_constructions_;
  Tensor grid = tokens_to_chw(reasoner_output, cfg_.grid_h, cfg_.grid_w);
  Tensor pooled = global_avg_pool(relu(conv2d(grid, adapter_w_, adapter_b_, 2, 2)));
  std::vector<Tensor> terms;
  terms.reserve(attribute_heads_.size());
  for (std::size_t h = 0; h < attribute_heads_.size(); ++h) {
    if (attribute_labels[h] >= cfg_.attribute_cardinalities[h]) {
      throw std::invalid_argument("reasoner: attribute label out of range for head " + std::to_string(h));
    }
    terms.push_back(cross_entropy(attribute_heads_[h].forward(pooled), attribute_labels[h]));
  }
  return sum(concat(terms));
}

}  // namespace langdet

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "langdet/tensor.hpp"

namespace langdet {

enum class DescriptionKind { exemplar, variant };

// One rendered instance description. Exemplars have empty attribute slots.
struct InstanceDescription {
  std::size_t category_id = 0;
  DescriptionKind kind = DescriptionKind::exemplar;
  std::string view, scale, weather;
  std::string text;
};

struct AttributeGrids {
  std::vector<std::string> view{"side", "front", "bird"};
  std::vector<std::string> scale{"small", "medium", "large"};
  std::vector<std::string> weather{"clean", "night", "foggy"};
};

// One exemplar per category plus `variants_per_category` distinct attribute
// combinations, sampled without replacement. Deterministic given the seed.
std::vector<InstanceDescription> curate_descriptions(const std::vector<std::string>& categories,
                                                     const AttributeGrids& grids,
                                                     std::size_t variants_per_category,
                                                     std::uint64_t seed);

// Exemplar/variant language embeddings plus learnable categorical prompts.
// Canonical member order is category-major with the exemplar first; the
// merged member for (category i, slot k) is always embedding + prompt_i,
// elementwise.
class RepresentationBank {
 public:
  RepresentationBank(std::vector<std::string> category_names,
                     std::vector<InstanceDescription> descriptions,
                     std::vector<std::vector<double>> embeddings,  // canonical order
                     std::size_t embedding_dim, std::uint64_t seed);

  std::size_t num_categories() const { return names_.size(); }
  std::size_t variants_per_category() const { return n_variants_; }
  std::size_t members_per_category() const { return n_variants_ + 1; }
  std::size_t bank_size() const { return num_categories() * members_per_category(); }
  std::size_t embedding_dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& category_name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& category_names() const { return names_; }

  std::size_t flat_index(std::size_t category, std::size_t slot) const {
    return category * members_per_category() + slot;
  }
  const InstanceDescription& description(std::size_t category, std::size_t slot) const {
    return descs_[flat_index(category, slot)];
  }

  // Teacher embeddings d; immutable, never on the tape as trainable leaves.
  const Tensor& embedding(std::size_t category, std::size_t slot) const {
    return d_[flat_index(category, slot)];
  }
  // Categorical prompt c^i. Trainable until the bank is frozen.
  const Tensor& prompt(std::size_t category) const { return c_[category]; }

  // Merged member z = d + c (slot 0 is the exemplar). Before freezing this
  // builds on the tape so prompt gradients flow; afterwards it returns the
  // cached constant.
  Tensor merged(std::size_t category, std::size_t slot) const;

  void freeze();
  bool frozen() const { return frozen_; }

  // Mean cosine within categories vs across categories, over all merged pairs.
  struct CosineMargin {
    double intra = 0.0;
    double inter = 0.0;
    double margin() const { return intra - inter; }
  };
  CosineMargin cosine_margin() const;

  std::uint64_t merged_hash() const;  // fingerprint of Z for immutability checks

  void save(const std::string& path) const;             // frozen banks only
  static RepresentationBank load(const std::string& path);
  static RepresentationBank load_frozen(const std::string& path);

  // Internal: prompt (re)initialization used by training. Rejected when frozen.
  void init_prompts(double stddev, std::uint64_t seed);

 private:
  std::vector<std::string> names_;
  std::vector<InstanceDescription> descs_;
  std::vector<Tensor> d_;
  std::vector<Tensor> c_;
  std::vector<Tensor> z_cache_;
  std::size_t n_variants_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  bool frozen_ = false;
};

struct SyntheticEmbedderOptions {
  std::size_t dim = 32;
  double sigma_in = 0.3;  // intra-class spread
  double mu_out = 3.0;    // inter-class separation
};

// Stand-in for an offline sentence embedder: unit-norm category centroids
// with Gaussian perturbations per variant. Categories stay separable whenever
// mu_out / sigma_in is comfortably above sqrt(dim); the defaults give a wide
// margin.
RepresentationBank embed_synthetic(const std::vector<std::string>& categories,
                                   const std::vector<InstanceDescription>& descriptions,
                                   const SyntheticEmbedderOptions& opts, std::uint64_t seed);

struct PromptTrainingConfig {
  double tau_c = 0.1;
  std::size_t epochs = 150;
  double lr = 0.05;
  double init_stddev = 0.02;
};

struct PromptTrainingResult {
  std::vector<double> loss_curve;
};

// Supervised contrastive training of the categorical prompts: every merged
// member is an anchor, same-category members are positives, everything else
// is a negative, logits are temperature-scaled cosines. Teacher embeddings
// are left untouched; only the prompts move.
PromptTrainingResult train_categorical_prompts(RepresentationBank& bank,
                                               const PromptTrainingConfig& cfg,
                                               std::uint64_t seed);

}  // namespace langdet

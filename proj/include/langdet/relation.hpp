#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "langdet/bank.hpp"
#include "langdet/tensor.hpp"

namespace langdet {

// Similarity vector for anchor category i: cosine against every merged bank
// member except that category's own exemplar, in canonical bank order. The
// language side and the visual side share this ordering entry by entry.

// Pure function of a frozen bank; rejected on an unfrozen one.
std::vector<double> language_similarity_vector(const RepresentationBank& bank, std::size_t category);

// Same entries with a visual object feature standing in for the exemplar;
// differentiable w.r.t. the feature, never w.r.t. the bank.
Tensor visual_similarity_vector(const RepresentationBank& bank, const Tensor& object_feature,
                                std::size_t category);

Tensor to_distribution(const Tensor& similarities, double tau_r);
std::vector<double> to_distribution(const std::vector<double>& similarities, double tau_r);

// KL relation loss between the cached language-side distributions and the
// visual-side distributions, averaged over the categories present. The
// language side is a constant target; gradients reach only the visual
// features.
class RelationLoss {
 public:
  RelationLoss(const RepresentationBank& bank, double tau_r, std::size_t target_categories);

  const std::vector<double>& language_distribution(std::size_t category) const;

  // One decoder layer: visual feature per category present in the batch.
  // An empty map yields zero loss (and a warning: no ground truth around).
  Tensor loss(const std::map<std::size_t, Tensor>& visual_features) const;

  // Mean of the single-layer loss over every decoder layer.
  Tensor per_layer_loss(const std::vector<std::map<std::size_t, Tensor>>& per_layer_features) const;

  double tau_r() const { return tau_r_; }
  const RepresentationBank& bank() const { return bank_; }

 private:
  const RepresentationBank& bank_;
  double tau_r_;
  std::size_t target_categories_;
  std::vector<std::vector<double>> language_dists_;
};

}  // namespace langdet

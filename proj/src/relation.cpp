#include "langdet/relation.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "langdet/ops.hpp"

namespace langdet {

namespace {

void check_anchor(const RepresentationBank& bank, std::size_t category) {
  if (!bank.frozen()) {
    throw std::logic_error("relation: bank must be frozen before similarity vectors are taken");
  }
  if (category >= bank.num_categories()) {
    throw std::invalid_argument("relation: category " + std::to_string(category) +
                                " not present in bank of " + std::to_string(bank.num_categories()));
  }
}

}  // namespace

std::vector<double> language_similarity_vector(const RepresentationBank& bank,
                                               std::size_t category) {
  check_anchor(bank, category);
  const Tensor anchor = bank.merged(category, 0);
  std::vector<double> out;
  out.reserve(bank.bank_size() - 1);
  for (std::size_t cat = 0; cat < bank.num_categories(); ++cat) {
    for (std::size_t slot = 0; slot < bank.members_per_category(); ++slot) {
      if (cat == category && slot == 0) continue;  // own exemplar excluded
      out.push_back(cosine_similarity(anchor, bank.merged(cat, slot)).value());
    }
  }
  return out;
}

Tensor visual_similarity_vector(const RepresentationBank& bank, const Tensor& object_feature,
                                std::size_t category) {
  check_anchor(bank, category);
  if (object_feature.ndim() != 1 || object_feature.dim(0) != bank.embedding_dim()) {
    throw std::invalid_argument("relation: object feature shape " +
                                shape_str(object_feature.shape()) + " does not match bank dim " +
                                std::to_string(bank.embedding_dim()));
  }
  std::vector<Tensor> entries;
  entries.reserve(bank.bank_size() - 1);
  for (std::size_t cat = 0; cat < bank.num_categories(); ++cat) {
    for (std::size_t slot = 0; slot < bank.members_per_category(); ++slot) {
      if (cat == category && slot == 0) continue;
      entries.push_back(cosine_similarity(object_feature, bank.merged(cat, slot)));
    }
  }
  return concat(entries);
}

Tensor to_distribution(const Tensor& similarities, double tau_r) {
  if (!(tau_r > 0.0)) throw std::invalid_argument("relation: tau_r must be > 0");
  return softmax(similarities, tau_r);
}

std::vector<double> to_distribution(const std::vector<double>& similarities, double tau_r) {
  if (!(tau_r > 0.0)) throw std::invalid_argument("relation: tau_r must be > 0");
  if (similarities.empty()) throw std::invalid_argument("relation: empty similarity vector");
  double mx = similarities[0];
  for (double s : similarities) mx = std::max(mx, s);
  std::vector<double> out(similarities.size());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp((similarities[i] - mx) / tau_r);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

RelationLoss::RelationLoss(const RepresentationBank& bank, double tau_r,
                           std::size_t target_categories)
    : bank_(bank), tau_r_(tau_r), target_categories_(target_categories) {
  if (!bank.frozen()) throw std::logic_error("relation: bank must be frozen");
  if (!(tau_r > 0.0)) throw std::invalid_argument("relation: tau_r must be > 0");
  if (target_categories > bank.num_categories()) {
    throw std::invalid_argument("relation: more target categories than bank categories");
  }
  language_dists_.reserve(target_categories);
  for (std::size_t cat = 0; cat < target_categories; ++cat) {
    language_dists_.push_back(to_distribution(language_similarity_vector(bank, cat), tau_r));
  }
}

const std::vector<double>& RelationLoss::language_distribution(std::size_t category) const {
  if (category >= target_categories_) {
    throw std::invalid_argument("relation: category " + std::to_string(category) +
                                " is not a target category");
  }
  return language_dists_[category];
}

Tensor RelationLoss::loss(const std::map<std::size_t, Tensor>& visual_features) const {
  if (visual_features.empty()) {
    std::cerr << "[langdet] relation loss: batch has no ground-truth objects, contributing 0\n";
    return Tensor::scalar(0.0);
  }
  std::vector<Tensor> terms;
  terms.reserve(visual_features.size());
  for (const auto& [category, feature] : visual_features) {
    const std::vector<double>& p = language_distribution(category);
    Tensor target = Tensor::from_values({p.size()}, p, false);
    Tensor q = to_distribution(visual_similarity_vector(bank_, feature, category), tau_r_);
    terms.push_back(kl_divergence(target, q));
  }
  return terms.size() == 1 ? terms[0] : mean(concat(terms));
}

Tensor RelationLoss::per_layer_loss(
    const std::vector<std::map<std::size_t, Tensor>>& per_layer_features) const {
  if (per_layer_features.empty()) {
    throw std::invalid_argument("relation: need at least one decoder layer");
  }
  std::vector<Tensor> losses;
  losses.reserve(per_layer_features.size());
  for (const auto& layer : per_layer_features) losses.push_back(loss(layer));
  return losses.size() == 1 ? losses[0] : mean(concat(losses));
}

}  // namespace langdet

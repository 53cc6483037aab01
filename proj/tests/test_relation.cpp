#include <cmath>
#include <map>

#include "doctest.h"
#include "langdet/bank.hpp"
#include "langdet/gradcheck.hpp"
#include "langdet/ops.hpp"
#include "langdet/relation.hpp"
#include "langdet/rng.hpp"
#include "test_util.hpp"

using namespace langdet;

namespace {

RepresentationBank frozen_bank(std::size_t n_cats, std::size_t n_variants, std::uint64_t seed,
                               double sigma_in = 0.2) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n_cats; ++i) names.push_back("cat" + std::to_string(i));
  auto descs = curate_descriptions(names, AttributeGrids{}, n_variants, seed);
  SyntheticEmbedderOptions opts;
  opts.sigma_in = sigma_in;
  auto bank = embed_synthetic(names, descs, opts, seed);
  bank.init_prompts(0.02, seed);
  bank.freeze();
  return bank;
}

Tensor random_feature(Rng& rng, std::size_t dim, bool requires_grad = true) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return Tensor::from_values({dim}, std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("similarity vector length and exclusion") {
  auto bank = frozen_bank(3, 4, 17);
  auto s = language_similarity_vector(bank, 1);
  CHECK(s.size() == 14);  // 3*(4+1) - 1

  // Unfrozen banks are rejected.
  std::vector<std::string> names{"a", "b"};
  auto descs = curate_descriptions(names, AttributeGrids{}, 2, 3);
  auto unfrozen = embed_synthetic(names, descs, {}, 3);
  CHECK_THROWS_AS(language_similarity_vector(unfrozen, 0), std::logic_error);
  CHECK_THROWS_AS(language_similarity_vector(bank, 5), std::invalid_argument);
}

TEST_CASE("language similarity matches the exhaustive pairwise oracle") {
  auto bank = frozen_bank(5, 6, 23);
  for (std::size_t anchor = 0; anchor < 5; ++anchor) {
    auto s = language_similarity_vector(bank, anchor);
    const auto anchor_z = bank.merged(anchor, 0).values();
    std::size_t idx = 0;
    for (std::size_t cat = 0; cat < 5; ++cat) {
      for (std::size_t slot = 0; slot < 7; ++slot) {
        if (cat == anchor && slot == 0) continue;
        const double oracle = testutil::cosine(anchor_z, bank.merged(cat, slot).values());
        CHECK(std::fabs(s[idx] - oracle) < 1e-12);
        ++idx;
      }
    }
    CHECK(idx == s.size());
  }
}

TEST_CASE("own-variant entries sit at the documented positions") {
  auto bank = frozen_bank(3, 4, 31);
  auto s = language_similarity_vector(bank, 0);
  // anchor category 0: first 4 entries are its own variants, in slot order
  for (std::size_t m = 0; m < 4; ++m) {
    const double expect =
        testutil::cosine(bank.merged(0, 0).values(), bank.merged(0, m + 1).values());
    CHECK(s[m] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("visual similarity vector") {
  auto bank = frozen_bank(4, 5, 41);
  const std::size_t dim = bank.embedding_dim();

  SUBCASE("substituting the exemplar reproduces the language side exactly") {
    for (std::size_t cat = 0; cat < 4; ++cat) {
      Tensor o = Tensor::from_values({dim}, bank.merged(cat, 0).values(), true);
      auto visual = visual_similarity_vector(bank, o, cat);
      auto language = language_similarity_vector(bank, cat);
      REQUIRE(visual.size() == language.size());
      for (std::size_t i = 0; i < language.size(); ++i) CHECK(visual[i] == language[i]);
    }
  }

  SUBCASE("random features match the brute-force oracle") {
    Rng rng(4242);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor o = random_feature(rng, dim);
      auto visual = visual_similarity_vector(bank, o, 2);
      std::size_t idx = 0;
      for (std::size_t cat = 0; cat < 4; ++cat) {
        for (std::size_t slot = 0; slot < 6; ++slot) {
          if (cat == 2 && slot == 0) continue;
          CHECK(std::fabs(visual[idx] - testutil::cosine(o.values(), bank.merged(cat, slot).values())) <
                1e-12);
          ++idx;
        }
      }
    }
  }

  SUBCASE("zero-norm feature is rejected") {
    CHECK_THROWS_AS(visual_similarity_vector(bank, Tensor::zeros({dim}), 0), std::invalid_argument);
  }

  SUBCASE("orthogonal feature gives all-zero similarities and a uniform distribution") {
    // Bank embedded in the first dim-1 axes; the last axis is free.
    std::vector<std::string> names{"a", "b"};
    std::vector<InstanceDescription> descs(2);
    descs[0].category_id = 0;
    descs[1].category_id = 1;
    std::vector<std::vector<double>> embeddings{{1, 0, 0, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0, 0, 0}};
    RepresentationBank tiny(names, descs, embeddings, 8, 0);
    tiny.freeze();
    std::vector<double> axis(8, 0.0);
    axis[7] = 1.0;
    Tensor o = Tensor::from_values({8}, axis, true);
    auto visual = visual_similarity_vector(tiny, o, 0);
    REQUIRE(visual.size() == 1);
    CHECK(visual[0] == 0.0);
    auto dist = to_distribution(visual, 0.5);
    CHECK(dist[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("to_distribution behaviour") {
  auto flat = to_distribution(std::vector<double>{0.4, 0.4, 0.4, 0.4}, 0.7);
  for (double p : flat) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

  // argmax preserved for any temperature; small temperature concentrates
  std::vector<double> s{0.2, 0.8, -0.1};
  for (double tau : {2.0, 0.5, 0.05}) {
    auto d = to_distribution(s, tau);
    CHECK(d[1] > d[0]);
    CHECK(d[1] > d[2]);
  }
  CHECK(to_distribution(s, 0.05)[1] > to_distribution(s, 2.0)[1]);

  // direct exponentiation oracle at tau = 1
  auto d = to_distribution(s, 1.0);
  const double z = std::exp(0.2) + std::exp(0.8) + std::exp(-0.1);
  CHECK(d[0] == doctest::Approx(std::exp(0.2) / z).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(std::exp(0.8) / z).epsilon(1e-12));
  CHECK(d[2] == doctest::Approx(std::exp(-0.1) / z).epsilon(1e-12));

  CHECK_THROWS_AS(to_distribution(s, 0.0), std::invalid_argument);

  // tensor and scalar paths agree
  auto dt = to_distribution(Tensor::from_values({3}, s), 0.5);
  auto dv = to_distribution(s, 0.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(dt[i] == doctest::Approx(dv[i]).epsilon(1e-14));
}

TEST_CASE("relation loss identities") {
  auto bank = frozen_bank(3, 4, 53);
  RelationLoss rel(bank, 0.5, 3);

  SUBCASE("visual features equal to the exemplars give zero loss") {
    std::map<std::size_t, Tensor> feats;
    for (std::size_t cat = 0; cat < 3; ++cat)
      feats[cat] = Tensor::from_values({bank.embedding_dim()}, bank.merged(cat, 0).values(), true);
    CHECK(rel.loss(feats).value() < 1e-10);
  }

  SUBCASE("loss is nonnegative and invariant to positive rescaling") {
    Rng rng(999);
    for (int trial = 0; trial < 10; ++trial) {
      std::map<std::size_t, Tensor> feats;
      for (std::size_t cat = 0; cat < 3; ++cat) feats[cat] = random_feature(rng, bank.embedding_dim());
      const double base = rel.loss(feats).value();
      CHECK(base >= 0.0);
      const double lambda = rng.uniform(0.05, 20.0);
      std::map<std::size_t, Tensor> scaled;
      for (auto& [cat, f] : feats) scaled[cat] = scale(f, lambda);
      CHECK(std::fabs(rel.loss(scaled).value() - base) < 1e-9);
    }
  }

  SUBCASE("single-category loss matches the closed-form KL oracle") {
    Rng rng(12);
    Tensor o = random_feature(rng, bank.embedding_dim());
    std::map<std::size_t, Tensor> feats{{1, o}};
    const double loss = rel.loss(feats).value();

    auto s_l = language_similarity_vector(bank, 1);
    auto p = to_distribution(s_l, 0.5);
    std::vector<double> s_v;
    for (std::size_t cat = 0; cat < 3; ++cat)
      for (std::size_t slot = 0; slot < 5; ++slot) {
        if (cat == 1 && slot == 0) continue;
        s_v.push_back(testutil::cosine(o.values(), bank.merged(cat, slot).values()));
      }
    auto q = to_distribution(s_v, 0.5);
    double oracle = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) oracle += p[i] * std::log(p[i] / q[i]);
    CHECK(loss == doctest::Approx(oracle).epsilon(1e-12));
  }

  SUBCASE("empty category list returns zero") {
    CHECK(rel.loss({}).value() == 0.0);
  }

  SUBCASE("mean over present categories only") {
    Rng rng(77);
    Tensor o0 = random_feature(rng, bank.embedding_dim());
    Tensor o2 = random_feature(rng, bank.embedding_dim());
    const double l0 = rel.loss({{0, o0}}).value();
    const double l2 = rel.loss({{2, o2}}).value();
    const double both = rel.loss({{0, o0}, {2, o2}}).value();
    CHECK(both == doctest::Approx(0.5 * (l0 + l2)).epsilon(1e-12));
  }
}

TEST_CASE("relation loss gradients") {
  auto bank = frozen_bank(3, 3, 61);
  RelationLoss rel(bank, 0.5, 3);
  Rng rng(8);

  SUBCASE("matches central finite differences") {
    Tensor o0 = random_feature(rng, bank.embedding_dim());
    Tensor o1 = random_feature(rng, bank.embedding_dim());
    auto err = finite_difference_check_many(
        [&] { return rel.loss({{0, o0}, {1, o1}}); }, {o0, o1}, 1e-5);
    CHECK(err < 1e-4);
  }

  SUBCASE("no gradient ever reaches the frozen bank") {
    Tensor o = random_feature(rng, bank.embedding_dim());
    auto loss = rel.loss({{0, o}});
    loss.backward();
    CHECK(o.has_grad());
    for (std::size_t cat = 0; cat < bank.num_categories(); ++cat) {
      CHECK_FALSE(bank.prompt(cat).has_grad());
      for (std::size_t slot = 0; slot < bank.members_per_category(); ++slot) {
        CHECK_FALSE(bank.merged(cat, slot).has_grad());
        CHECK_FALSE(bank.embedding(cat, slot).has_grad());
      }
    }
  }
}

TEST_CASE("per-layer relation loss") {
  auto bank = frozen_bank(3, 4, 71);
  RelationLoss rel(bank, 0.5, 3);
  Rng rng(31);
  const std::size_t dim = bank.embedding_dim();

  SUBCASE("one layer reduces to the single-layer loss") {
    std::map<std::size_t, Tensor> feats{{0, random_feature(rng, dim)}};
    CHECK(rel.per_layer_loss({feats}).value() == doctest::Approx(rel.loss(feats).value()));
  }

  SUBCASE("identical layers leave the value unchanged") {
    std::map<std::size_t, Tensor> feats{{0, random_feature(rng, dim)}, {2, random_feature(rng, dim)}};
    std::vector<std::map<std::size_t, Tensor>> layers(4, feats);
    CHECK(rel.per_layer_loss(layers).value() == doctest::Approx(rel.loss(feats).value()).epsilon(1e-12));
  }

  SUBCASE("six random layers equal the arithmetic mean of individual losses") {
    std::vector<std::map<std::size_t, Tensor>> layers;
    double acc = 0.0;
    for (int l = 0; l < 6; ++l) {
      std::map<std::size_t, Tensor> feats;
      for (std::size_t cat = 0; cat < 3; ++cat) feats[cat] = random_feature(rng, dim);
      acc += rel.loss(feats).value();
      layers.push_back(std::move(feats));
    }
    CHECK(rel.per_layer_loss(layers).value() == doctest::Approx(acc / 6.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(rel.per_layer_loss({}), std::invalid_argument);
}

#include "langdet/bank.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "langdet/nn.hpp"
#include "langdet/ops.hpp"
#include "langdet/rng.hpp"

namespace langdet {

namespace {

std::string render_exemplar(const std::string& category) {
  return "A photo of a " + category + ".";
}

std::string render_variant(const std::string& category, const std::string& view,
                           const std::string& scale, const std::string& weather) {
  return "A " + view + " view photo of a " + scale + " " + category + " in a " + weather + " day.";
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<InstanceDescription> curate_descriptions(const std::vector<std::string>& categories,
                                                     const AttributeGrids& grids,
                                                     std::size_t variants_per_category,
                                                     std::uint64_t seed) {
  if (categories.empty()) throw std::invalid_argument("curate_descriptions: no categories");
  for (const auto& c : categories) {
    if (c.empty()) throw std::invalid_argument("curate_descriptions: empty category name");
  }
  const std::size_t combos = grids.view.size() * grids.scale.size() * grids.weather.size();
  if (variants_per_category > combos) {
    throw std::invalid_argument("curate_descriptions: requested " +
                                std::to_string(variants_per_category) + " variants but only " +
                                std::to_string(combos) + " distinct attribute combinations exist");
  }
  std::vector<InstanceDescription> out;
  out.reserve(categories.size() * (variants_per_category + 1));
  for (std::size_t cat = 0; cat < categories.size(); ++cat) {
    InstanceDescription ex;
    ex.category_id = cat;
    ex.kind = DescriptionKind::exemplar;
    ex.text = render_exemplar(categories[cat]);
    out.push_back(std::move(ex));

    std::vector<std::size_t> order(combos);
    for (std::size_t i = 0; i < combos; ++i) order[i] = i;
    Rng rng(seed_mix(seed, "curate", cat));
    rng.shuffle(order);
    for (std::size_t n = 0; n < variants_per_category; ++n) {
      const std::size_t combo = order[n];
      const std::size_t vi = combo / (grids.scale.size() * grids.weather.size());
      const std::size_t si = (combo / grids.weather.size()) % grids.scale.size();
      const std::size_t wi = combo % grids.weather.size();
      InstanceDescription d;
      d.category_id = cat;
      d.kind = DescriptionKind::variant;
      d.view = grids.view[vi];
      d.scale = grids.scale[si];
      d.weather = grids.weather[wi];
      d.text = render_variant(categories[cat], d.view, d.scale, d.weather);
      out.push_back(std::move(d));
    }
  }
  return out;
}

RepresentationBank::RepresentationBank(std::vector<std::string> category_names,
                                       std::vector<InstanceDescription> descriptions,
                                       std::vector<std::vector<double>> embeddings,
                                       std::size_t embedding_dim, std::uint64_t seed)
    : names_(std::move(category_names)),
      descs_(std::move(descriptions)),
      dim_(embedding_dim),
      seed_(seed) {
  if (names_.empty()) throw std::invalid_argument("bank: no categories");
  if (descs_.size() != embeddings.size()) {
    throw std::invalid_argument("bank: " + std::to_string(descs_.size()) + " descriptions vs " +
                                std::to_string(embeddings.size()) + " embeddings");
  }
  if (descs_.size() % names_.size() != 0) {
    throw std::invalid_argument("bank: member count not divisible by category count");
  }
  n_variants_ = descs_.size() / names_.size() - 1;
  // Validate the canonical layout: per category one exemplar first, then variants.
  for (std::size_t cat = 0; cat < names_.size(); ++cat) {
    for (std::size_t slot = 0; slot < members_per_category(); ++slot) {
      const auto& d = descs_[flat_index(cat, slot)];
      if (d.category_id != cat) {
        throw std::invalid_argument("bank: description at category " + std::to_string(cat) +
                                    " slot " + std::to_string(slot) + " carries category id " +
                                    std::to_string(d.category_id));
      }
      const bool should_be_exemplar = slot == 0;
      if ((d.kind == DescriptionKind::exemplar) != should_be_exemplar) {
        throw std::invalid_argument("bank: category " + std::to_string(cat) +
                                    " violates exemplar-first layout at slot " + std::to_string(slot));
      }
    }
  }
  d_.reserve(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != dim_) {
      throw std::invalid_argument("bank: member " + std::to_string(i) + " has dimension " +
                                  std::to_string(embeddings[i].size()) + ", expected " +
                                  std::to_string(dim_));
    }
    d_.push_back(Tensor::from_values({dim_}, std::move(embeddings[i]), false));
  }
  c_.reserve(names_.size());
  for (std::size_t cat = 0; cat < names_.size(); ++cat) {
    c_.push_back(Tensor::zeros({dim_}, true));
  }
}

Tensor RepresentationBank::merged(std::size_t category, std::size_t slot) const {
  if (frozen_) return z_cache_[flat_index(category, slot)];
  return add(d_[flat_index(category, slot)], c_[category]);
}

void RepresentationBank::init_prompts(double stddev, std::uint64_t seed) {
  if (frozen_) throw std::logic_error("bank: cannot reinitialize prompts on a frozen bank");
  Rng rng(seed_mix(seed, "prompt-init"));
  for (std::size_t cat = 0; cat < names_.size(); ++cat) {
    std::vector<double>& v = c_[cat].mutable_values();
    for (auto& x : v) x = rng.normal(0.0, stddev);
    c_[cat].zero_grad();
  }
}

void RepresentationBank::freeze() {
  if (frozen_) return;
  z_cache_.clear();
  z_cache_.reserve(descs_.size());
  for (std::size_t cat = 0; cat < names_.size(); ++cat) {
    for (std::size_t slot = 0; slot < members_per_category(); ++slot) {
      std::vector<double> z(dim_);
      const auto& d = d_[flat_index(cat, slot)].values();
      const auto& c = c_[cat].values();
      for (std::size_t i = 0; i < dim_; ++i) z[i] = d[i] + c[i];
      z_cache_.push_back(Tensor::from_values({dim_}, std::move(z), false));
    }
  }
  frozen_ = true;
}

RepresentationBank::CosineMargin RepresentationBank::cosine_margin() const {
  const std::size_t total = bank_size();
  std::vector<std::vector<double>> z(total);
  for (std::size_t cat = 0; cat < num_categories(); ++cat)
    for (std::size_t slot = 0; slot < members_per_category(); ++slot)
      z[flat_index(cat, slot)] = merged(cat, slot).values();
  auto cosine = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  CosineMargin m;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t j = i + 1; j < total; ++j) {
      const double c = cosine(z[i], z[j]);
      const bool same = i / members_per_category() == j / members_per_category();
      if (same) {
        m.intra += c;
        ++n_intra;
      } else {
        m.inter += c;
        ++n_inter;
      }
    }
  }
  if (n_intra) m.intra /= static_cast<double>(n_intra);
  if (n_inter) m.inter /= static_cast<double>(n_inter);
  return m;
}

std::uint64_t RepresentationBank::merged_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_double = [&h](double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (std::size_t cat = 0; cat < num_categories(); ++cat)
    for (std::size_t slot = 0; slot < members_per_category(); ++slot)
      for (double v : merged(cat, slot).values()) mix_double(v);
  return h;
}

void RepresentationBank::save(const std::string& path) const {
  if (!frozen_) {
    throw std::logic_error("bank: refusing to save an unfrozen bank; freeze() after prompt training");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("bank: cannot open " + path + " for writing");
  out << "langdet-bank v1\n";
  out << "embedding_dim " << dim_ << "\n";
  out << "n_categories " << num_categories() << "\n";
  out << "n_variants " << n_variants_ << "\n";
  out << "frozen " << (frozen_ ? 1 : 0) << "\n";
  out << "seed " << seed_ << "\n";
  for (std::size_t cat = 0; cat < num_categories(); ++cat) {
    out << "category " << cat << " " << names_[cat] << "\n";
    out << "prompt " << cat;
    for (double v : c_[cat].values()) out << " " << format_double(v);
    out << "\n";
    for (std::size_t slot = 0; slot < members_per_category(); ++slot) {
      const auto& d = descs_[flat_index(cat, slot)];
      out << "record " << cat << " "
          << (d.kind == DescriptionKind::exemplar ? "exemplar" : "variant") << " "
          << (d.view.empty() ? "-" : d.view) << " " << (d.scale.empty() ? "-" : d.scale) << " "
          << (d.weather.empty() ? "-" : d.weather) << " " << d.text << "\n";
      out << "vector";
      for (double v : d_[flat_index(cat, slot)].values()) out << " " << format_double(v);
      out << "\n";
    }
  }
  if (!out) throw std::runtime_error("bank: write failed for " + path);
}

RepresentationBank RepresentationBank::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("bank: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "langdet-bank v1") {
    throw std::runtime_error("bank: " + path + " is not a langdet-bank v1 file");
  }
  std::size_t dim = 0, n_cats = 0, n_vars = 0;
  int frozen = -1;
  std::uint64_t seed = 0;
  bool saw_dim = false, saw_cats = false, saw_vars = false, saw_seed = false;
  // header
  std::streampos body_start;
  while (true) {
    body_start = in.tellg();
    if (!std::getline(in, line)) throw std::runtime_error("bank: truncated header in " + path);
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "embedding_dim") {
      ls >> dim;
      saw_dim = true;
    } else if (key == "n_categories") {
      ls >> n_cats;
      saw_cats = true;
    } else if (key == "n_variants") {
      ls >> n_vars;
      saw_vars = true;
    } else if (key == "frozen") {
      ls >> frozen;
    } else if (key == "seed") {
      ls >> seed;
      saw_seed = true;
    } else if (key == "category") {
      in.seekg(body_start);
      break;
    } else {
      throw std::runtime_error("bank: unknown header field '" + key + "' in " + path);
    }
  }
  if (!saw_dim || !saw_cats || !saw_vars || frozen < 0 || !saw_seed) {
    throw std::runtime_error("bank: incomplete header in " + path);
  }

  std::vector<std::string> names(n_cats);
  std::vector<InstanceDescription> descs;
  std::vector<std::vector<double>> embeddings;
  std::vector<std::vector<double>> prompts(n_cats);
  std::vector<bool> saw_exemplar(n_cats, false);

  auto parse_vector = [&](std::istringstream& ls, const std::string& what) {
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (v.size() != dim) {
      throw std::runtime_error("bank: " + what + " has dimension " + std::to_string(v.size()) +
                               ", expected " + std::to_string(dim));
    }
    return v;
  };

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "category") {
      std::size_t id;
      std::string name;
      ls >> id >> name;
      if (id >= n_cats) throw std::runtime_error("bank: category id " + std::to_string(id) + " out of range");
      names[id] = name;
    } else if (key == "prompt") {
      std::size_t id;
      ls >> id;
      if (id >= n_cats) throw std::runtime_error("bank: prompt id " + std::to_string(id) + " out of range");
      prompts[id] = parse_vector(ls, "prompt " + std::to_string(id));
    } else if (key == "record") {
      InstanceDescription d;
      std::string kind, view, scale, weather;
      ls >> d.category_id >> kind >> view >> scale >> weather;
      if (d.category_id >= n_cats) {
        throw std::runtime_error("bank: record category " + std::to_string(d.category_id) + " out of range");
      }
      if (kind == "exemplar") {
        d.kind = DescriptionKind::exemplar;
        saw_exemplar[d.category_id] = true;
      } else if (kind == "variant") {
        d.kind = DescriptionKind::variant;
      } else {
        throw std::runtime_error("bank: record with unknown kind '" + kind + "'");
      }
      d.view = view == "-" ? "" : view;
      d.scale = scale == "-" ? "" : scale;
      d.weather = weather == "-" ? "" : weather;
      std::getline(ls, d.text);
      if (!d.text.empty() && d.text.front() == ' ') d.text.erase(0, 1);
      std::string vec_line;
      if (!std::getline(in, vec_line)) throw std::runtime_error("bank: record missing vector line");
      std::istringstream vls(vec_line);
      std::string vkey;
      vls >> vkey;
      if (vkey != "vector") {
        throw std::runtime_error("bank: expected vector line after record for category " +
                                 std::to_string(d.category_id) + " ('" + d.text + "')");
      }
      embeddings.push_back(parse_vector(vls, "record '" + d.text + "'"));
      descs.push_back(std::move(d));
    } else {
      throw std::runtime_error("bank: unknown field '" + key + "' in " + path);
    }
  }

  for (std::size_t cat = 0; cat < n_cats; ++cat) {
    if (!saw_exemplar[cat]) {
      throw std::runtime_error("bank: category " + std::to_string(cat) + " (" + names[cat] +
                               ") has no exemplar record");
    }
  }
  if (descs.size() != n_cats * (n_vars + 1)) {
    throw std::runtime_error("bank: expected " + std::to_string(n_cats * (n_vars + 1)) +
                             " records, found " + std::to_string(descs.size()));
  }

  RepresentationBank bank(std::move(names), std::move(descs), std::move(embeddings), dim, seed);
  for (std::size_t cat = 0; cat < n_cats; ++cat) {
    if (!prompts[cat].empty()) {
      bank.c_[cat] = Tensor::from_values({dim}, std::move(prompts[cat]), true);
    }
  }
  if (frozen) bank.freeze();
  return bank;
}

RepresentationBank RepresentationBank::load_frozen(const std::string& path) {
  RepresentationBank bank = load(path);
  if (!bank.frozen()) {
    throw std::runtime_error("bank: " + path + " is not frozen; detector training needs a frozen bank");
  }
  return bank;
}

RepresentationBank embed_synthetic(const std::vector<std::string>& categories,
                                   const std::vector<InstanceDescription>& descriptions,
                                   const SyntheticEmbedderOptions& opts, std::uint64_t seed) {
  if (opts.dim < 8) throw std::invalid_argument("embed_synthetic: dimension must be >= 8");
  if (!(opts.sigma_in >= 0.0)) throw std::invalid_argument("embed_synthetic: sigma_in must be >= 0");
  if (!(opts.mu_out > 0.0)) throw std::invalid_argument("embed_synthetic: mu_out must be > 0");

  const std::size_t n_cats = categories.size();
  if (descriptions.size() % n_cats != 0) {
    throw std::invalid_argument("embed_synthetic: description list does not tile categories");
  }
  const std::size_t per_cat = descriptions.size() / n_cats;

  auto normalize = [](std::vector<double>& v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0) {
      for (double& x : v) x /= n;
    }
  };

  Rng common_rng(seed_mix(seed, "embed-common"));
  std::vector<double> common(opts.dim);
  for (auto& x : common) x = common_rng.normal();
  normalize(common);

  std::vector<std::vector<double>> embeddings;
  embeddings.reserve(descriptions.size());
  for (std::size_t cat = 0; cat < n_cats; ++cat) {
    Rng rng(seed_mix(seed, "embed-category", cat));
    std::vector<double> direction(opts.dim);
    for (auto& x : direction) x = rng.normal();
    normalize(direction);
    std::vector<double> centroid(opts.dim);
    for (std::size_t i = 0; i < opts.dim; ++i) centroid[i] = common[i] + opts.mu_out * direction[i];
    normalize(centroid);
    for (std::size_t slot = 0; slot < per_cat; ++slot) {
      const auto& d = descriptions[cat * per_cat + slot];
      if (d.kind == DescriptionKind::exemplar) {
        embeddings.push_back(centroid);
      } else {
        std::vector<double> v(opts.dim);
        for (std::size_t i = 0; i < opts.dim; ++i) v[i] = centroid[i] + rng.normal(0.0, opts.sigma_in);
        normalize(v);
        embeddings.push_back(std::move(v));
      }
    }
  }
  return RepresentationBank(categories, descriptions, std::move(embeddings), opts.dim, seed);
}

PromptTrainingResult train_categorical_prompts(RepresentationBank& bank,
                                               const PromptTrainingConfig& cfg,
                                               std::uint64_t seed) {
  if (bank.frozen()) throw std::logic_error("train_categorical_prompts: bank already frozen");
  if (!(cfg.tau_c > 0.0)) throw std::invalid_argument("train_categorical_prompts: tau_c must be > 0");
  for (std::size_t cat = 0; cat < bank.num_categories(); ++cat) {
    for (std::size_t slot = 0; slot < bank.members_per_category(); ++slot) {
      double norm = 0;
      for (double v : bank.embedding(cat, slot).values()) norm += v * v;
      if (std::sqrt(norm) <= 1e-12) {
        throw std::invalid_argument("train_categorical_prompts: degenerate zero embedding at category " +
                                    std::to_string(cat) + " slot " + std::to_string(slot));
      }
    }
  }

  bank.init_prompts(cfg.init_stddev, seed);

  ParamStore prompt_params;
  for (std::size_t cat = 0; cat < bank.num_categories(); ++cat) {
    prompt_params.add("prompt." + std::to_string(cat), bank.prompt(cat));
  }
  AdamW::Options opt_cfg;
  opt_cfg.lr = cfg.lr;
  AdamW optimizer(prompt_params, opt_cfg);

  const std::size_t total = bank.bank_size();
  const std::size_t per_cat = bank.members_per_category();
  PromptTrainingResult result;
  result.loss_curve.reserve(cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Tensor> z(total);
    for (std::size_t cat = 0; cat < bank.num_categories(); ++cat)
      for (std::size_t slot = 0; slot < per_cat; ++slot)
        z[bank.flat_index(cat, slot)] = bank.merged(cat, slot);

    // All pairwise cosines, shared between the two anchors of every pair.
    std::vector<Tensor> cosines(total * total);
    for (std::size_t i = 0; i < total; ++i) {
      for (std::size_t j = i + 1; j < total; ++j) {
        Tensor c = cosine_similarity(z[i], z[j]);
        cosines[i * total + j] = c;
        cosines[j * total + i] = c;
      }
    }

    std::vector<Tensor> anchor_losses;
    anchor_losses.reserve(total);
    for (std::size_t a = 0; a < total; ++a) {
      std::vector<Tensor> logits;
      logits.reserve(total - 1);
      std::vector<std::size_t> positive_slots;
      const std::size_t cat_a = a / per_cat;
      for (std::size_t b = 0; b < total; ++b) {
        if (b == a) continue;
        if (b / per_cat == cat_a) positive_slots.push_back(logits.size());
        logits.push_back(cosines[a * total + b]);
      }
      if (positive_slots.empty()) continue;  // single-member category
      Tensor logit_vec = scale(concat(logits), 1.0 / cfg.tau_c);
      std::vector<Tensor> terms;
      terms.reserve(positive_slots.size());
      for (std::size_t p : positive_slots) terms.push_back(cross_entropy(logit_vec, p));
      anchor_losses.push_back(mean(concat(terms)));
    }
    if (anchor_losses.empty()) break;
    Tensor loss = mean(concat(anchor_losses));
    const double loss_value = loss.value();
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("train_categorical_prompts: loss diverged to " +
                               std::to_string(loss_value) + " at epoch " + std::to_string(epoch));
    }
    result.loss_curve.push_back(loss_value);
    prompt_params.zero_grads();
    loss.backward();
    optimizer.step();
  }
  return result;
}

}  // namespace langdet

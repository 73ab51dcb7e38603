#pragma once

// Bagged CART classifiers over the 41-slot field feature layout, and a bundle
// of one forest per metadata task.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "anameta/annotation.hpp"
#include "anameta/field_stats.hpp"
#include "anameta/label_forge.hpp"
#include "anameta/rng.hpp"
#include "anameta/rule_engine.hpp"
#include "anameta/taxonomy.hpp"

namespace anameta {

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;           // 0 grows until leaves are pure
  std::size_t min_leaf = 1;
  std::size_t features_per_split = 0;  // 0 means ceil(sqrt(width))
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 uses the hardware concurrency

  nlohmann::ordered_json to_json() const {
    return {{"n_trees", n_trees}, {"max_depth", max_depth}, {"min_leaf", min_leaf},
            {"features_per_split", features_per_split}, {"bootstrap", bootstrap}, {"seed", seed}};
  }
  static ForestConfig from_json(const nlohmann::json& j) {
    ForestConfig c;
    c.n_trees = j.value("n_trees", c.n_trees);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.min_leaf = j.value("min_leaf", c.min_leaf);
    c.features_per_split = j.value("features_per_split", c.features_per_split);
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<double> distribution;  // leaves only
  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const std::vector<double>& leaf_for(const std::vector<double>& x) const {
    int n = 0;
    while (!nodes[n].is_leaf()) n = x[nodes[n].feature] <= nodes[n].threshold ? nodes[n].left : nodes[n].right;
    return nodes[n].distribution;
  }
  std::size_t depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      best = std::max(best, d[i]);
      if (!nodes[i].is_leaf()) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
    }
    return best;
  }
};

struct Forest {
  ForestConfig config;
  std::size_t n_classes = 2;
  std::vector<std::string> feature_order;
  std::vector<Tree> trees;
  std::optional<std::string> warning;
};

namespace forest_detail {

inline double gini(const std::vector<double>& counts, double total) {
  if (total <= 0) return 0.0;
  double s = 0.0;
  for (double c : counts) s += (c / total) * (c / total);
  return 1.0 - s;
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& X, const std::vector<int>& y, std::size_t n_classes,
              const ForestConfig& cfg, std::size_t k, std::uint64_t seed)
      : X_(X), y_(y), n_classes_(n_classes), cfg_(cfg), k_(k), rng_(seed) {}

  Tree build() {
    std::vector<std::size_t> idx;
    const std::size_t n = X_.size();
    if (cfg_.bootstrap) {
      idx.reserve(n);
      for (std::size_t i = 0; i < n; ++i) idx.push_back(static_cast<std::size_t>(rng_.below(n)));
    } else {
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), 0);
    }
    Tree t;
    grow(t, idx, 0);
    return t;
  }

 private:
  int grow(Tree& t, std::vector<std::size_t>& idx, std::size_t depth) {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    std::vector<double> counts(n_classes_, 0.0);
    for (std::size_t i : idx) counts[static_cast<std::size_t>(y_[i])] += 1.0;
    const double total = static_cast<double>(idx.size());
    const double parent = gini(counts, total);

    const bool stop = parent == 0.0 || idx.size() < 2 * cfg_.min_leaf ||
                      (cfg_.max_depth != 0 && depth >= cfg_.max_depth);
    std::optional<std::pair<int, double>> split;
    if (!stop) split = best_split(idx, counts, parent);
    if (!split) {
      for (double& c : counts) c /= total;
      t.nodes[id].distribution = std::move(counts);
      return id;
    }
    const auto [f, thr] = *split;
    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) (X_[i][f] <= thr ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    t.nodes[id].feature = f;
    t.nodes[id].threshold = thr;
    const int l = grow(t, left, depth + 1);
    const int r = grow(t, right, depth + 1);
    t.nodes[id].left = l;
    t.nodes[id].right = r;
    return id;
  }

  std::optional<std::pair<int, double>> best_split(const std::vector<std::size_t>& idx,
                                                   const std::vector<double>& counts, double parent) {
    const std::size_t width = X_.front().size();
    std::vector<std::size_t> features(width);
    std::iota(features.begin(), features.end(), 0);
    for (std::size_t a = 0; a < k_; ++a) {
      const std::size_t b = a + static_cast<std::size_t>(rng_.below(width - a));
      std::swap(features[a], features[b]);
    }
    const double total = static_cast<double>(idx.size());
    std::optional<std::pair<int, double>> best;
    double best_gain = -1.0;
    std::vector<std::pair<double, int>> column(idx.size());
    std::vector<double> left(n_classes_), right(n_classes_);
    for (std::size_t a = 0; a < k_; ++a) {
      const std::size_t f = features[a];
      for (std::size_t r = 0; r < idx.size(); ++r) column[r] = {X_[idx[r]][f], y_[idx[r]]};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      std::fill(left.begin(), left.end(), 0.0);
      right = counts;
      for (std::size_t r = 0; r + 1 < column.size(); ++r) {
        left[static_cast<std::size_t>(column[r].second)] += 1.0;
        right[static_cast<std::size_t>(column[r].second)] -= 1.0;
        if (column[r].first == column[r + 1].first) continue;
        const double nl = static_cast<double>(r + 1), nr = total - nl;
        if (nl < static_cast<double>(cfg_.min_leaf) || nr < static_cast<double>(cfg_.min_leaf)) continue;
        const double gain = parent - (nl * gini(left, nl) + nr * gini(right, nr)) / total;
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          double thr = 0.5 * (column[r].first + column[r + 1].first);
          if (!(thr < column[r + 1].first)) thr = column[r].first;  // adjacent doubles
          best = std::pair<int, double>{static_cast<int>(f), thr};
        }
      }
    }
    return best;
  }

  const std::vector<std::vector<double>>& X_;
  const std::vector<int>& y_;
  std::size_t n_classes_;
  const ForestConfig& cfg_;
  std::size_t k_;
  Rng rng_;
};

}  // namespace forest_detail

inline std::size_t default_features_per_split(std::size_t width) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(width))));
}

/// Train a forest. A single observed class yields a constant predictor and a
/// DegenerateLabels warning instead of an exception.
inline Forest train_forest(const std::vector<std::vector<double>>& X, const std::vector<int>& y, std::size_t n_classes,
                           const ForestConfig& cfg, std::vector<std::string> feature_order = feature_layout()) {
  if (X.size() != y.size()) throw Error(ErrorCode::ShapeMismatch, "feature rows and labels differ in count");
  if (X.empty()) throw Error(ErrorCode::EmptyEvaluation, "no training rows");
  if (n_classes < 2) throw Error(ErrorCode::MalformedInput, "a forest needs at least two classes");
  for (const auto& row : X)
    if (row.size() != feature_order.size())
      throw Error(ErrorCode::LayoutMismatch, "row width " + std::to_string(row.size()) + " vs layout " +
                                                 std::to_string(feature_order.size()));
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= n_classes)
      throw Error(ErrorCode::MalformedInput, "label " + std::to_string(label) + " outside class range");

  Forest forest;
  forest.config = cfg;
  forest.n_classes = n_classes;
  forest.feature_order = std::move(feature_order);

  if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); })) {
    forest.warning = std::string(error_code_name(ErrorCode::DegenerateLabels)) + ": only class " +
                     std::to_string(y.front()) + " present; constant predictor";
    Tree t;
    TreeNode leaf;
    leaf.distribution.assign(n_classes, 0.0);
    leaf.distribution[static_cast<std::size_t>(y.front())] = 1.0;
    t.nodes.push_back(std::move(leaf));
    forest.trees.push_back(std::move(t));
    return forest;
  }

  const std::size_t width = forest.feature_order.size();
  const std::size_t k = std::min(width, cfg.features_per_split ? cfg.features_per_split : default_features_per_split(width));
  forest.trees.resize(std::max<std::size_t>(cfg.n_trees, 1));
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < forest.trees.size(); i = next++)
      forest.trees[i] = forest_detail::TreeBuilder(X, y, n_classes, cfg, k, Rng::mix(cfg.seed, i)).build();
  };
  std::size_t n_threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, forest.trees.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& th : pool) th.join();
  return forest;
}

inline std::vector<double> predict_proba(const Forest& f, const std::vector<double>& x) {
  if (x.size() != f.feature_order.size())
    throw Error(ErrorCode::LayoutMismatch, "instance width " + std::to_string(x.size()) + " vs layout " +
                                               std::to_string(f.feature_order.size()));
  std::vector<double> p(f.n_classes, 0.0);
  for (const Tree& t : f.trees) {
    const auto& d = t.leaf_for(x);
    for (std::size_t c = 0; c < p.size(); ++c) p[c] += d[c];
  }
  for (double& v : p) v /= static_cast<double>(f.trees.size());
  return p;
}

inline int predict_class(const Forest& f, const std::vector<double>& x) {
  const auto p = predict_proba(f, x);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

struct RankedField {
  std::size_t field = 0;
  double score = 0.0;
};

/// Fields by descending positive-class probability; ties keep field order.
inline std::vector<RankedField> rank_fields(const Forest& f, const std::vector<std::vector<double>>& rows) {
  std::vector<RankedField> out;
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({i, predict_proba(f, rows[i])[1]});
  std::stable_sort(out.begin(), out.end(), [](const RankedField& a, const RankedField& b) { return a.score > b.score; });
  return out;
}

inline void check_layout(const Forest& f, const std::vector<std::string>& names) {
  if (f.feature_order != names) throw Error(ErrorCode::LayoutMismatch, "model feature order differs from this build");
}

// ---------- serialization ----------

inline constexpr std::string_view kForestFormat = "anameta.forest.v1";

inline nlohmann::ordered_json forest_to_json(const Forest& f) {
  nlohmann::ordered_json j;
  j["format"] = kForestFormat;
  j["config"] = f.config.to_json();
  j["n_classes"] = f.n_classes;
  j["feature_order"] = f.feature_order;
  j["warning"] = f.warning ? nlohmann::ordered_json(*f.warning) : nlohmann::ordered_json(nullptr);
  j["trees"] = nlohmann::ordered_json::array();
  for (const Tree& t : f.trees) {
    nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
    for (const TreeNode& n : t.nodes) {
      if (n.is_leaf()) nodes.push_back({{"leaf", n.distribution}});
      else nodes.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}});
    }
    j["trees"].push_back(std::move(nodes));
  }
  return j;
}

inline Forest forest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kForestFormat)
      throw Error(ErrorCode::MalformedInput, "unsupported forest format " + j.at("format").dump());
    Forest f;
    f.config = ForestConfig::from_json(j.at("config"));
    f.n_classes = j.at("n_classes").get<std::size_t>();
    f.feature_order = j.at("feature_order").get<std::vector<std::string>>();
    if (!j.at("warning").is_null()) f.warning = j["warning"].get<std::string>();
    for (const auto& tj : j.at("trees")) {
      Tree t;
      for (const auto& nj : tj) {
        TreeNode n;
        if (nj.contains("leaf")) {
          n.distribution = nj["leaf"].get<std::vector<double>>();
          if (n.distribution.size() != f.n_classes) throw Error(ErrorCode::MalformedInput, "leaf width mismatch");
        } else {
          n.feature = nj.at("f").get<int>();
          n.threshold = nj.at("t").get<double>();
          n.left = nj.at("l").get<int>();
          n.right = nj.at("r").get<int>();
        }
        t.nodes.push_back(std::move(n));
      }
      const int size = static_cast<int>(t.nodes.size());
      for (const TreeNode& n : t.nodes)
        if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size ||
                             n.feature >= static_cast<int>(f.feature_order.size())))
          throw Error(ErrorCode::MalformedInput, "corrupt tree node");
      if (t.nodes.empty()) throw Error(ErrorCode::MalformedInput, "empty tree");
      f.trees.push_back(std::move(t));
    }
    if (f.trees.empty()) throw Error(ErrorCode::MalformedInput, "forest has no trees");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("forest: ") + e.what());
  }
}

// ---------- per-task bundle ----------

/// Symmetric pair layout: |a - b| then min(a, b), slot by slot.
inline std::vector<std::string> pair_feature_layout() {
  std::vector<std::string> names;
  for (const std::string& n : feature_layout()) names.push_back("absdiff:" + n);
  for (const std::string& n : feature_layout()) names.push_back("min:" + n);
  return names;
}

inline std::vector<double> pair_feature_row(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> row;
  row.reserve(2 * a.size());
  for (std::size_t k = 0; k < a.size(); ++k) row.push_back(std::abs(a[k] - b[k]));
  for (std::size_t k = 0; k < a.size(); ++k) row.push_back(std::min(a[k], b[k]));
  return row;
}

inline std::vector<std::vector<double>> table_feature_rows(const Table& t) {
  std::vector<std::vector<double>> rows;
  for (const Field& f : t.fields) rows.push_back(field_feature_row(f));
  return rows;
}

struct ForestBundle {
  std::map<Task, Forest> models;
  std::vector<std::string> msr_type_labels;
  std::vector<std::string> dim_type_labels;
  std::vector<std::string> agg_labels;
};

namespace forest_detail {

struct Dataset {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  void add(std::vector<double> x, int label) {
    X.push_back(std::move(x));
    y.push_back(label);
  }
};

}  // namespace forest_detail

/// Train one forest per task from labeled training tables. Tasks without any
/// labels are skipped; annotation then falls back to the rule output.
inline ForestBundle train_forest_bundle(const std::vector<const Table*>& tables,
                                        const std::vector<const LabeledExample*>& examples, const Vocabularies& vocab,
                                        const ForestConfig& cfg) {
  using forest_detail::Dataset;
  ForestBundle b;
  b.msr_type_labels = vocab.measure_type_labels();
  b.dim_type_labels = vocab.dimension_type_labels();
  b.agg_labels = vocab.agg_functions();
  std::map<Task, Dataset> data;
  for (std::size_t n = 0; n < tables.size(); ++n) {
    const Table& t = *tables[n];
    const LabeledExample& e = *examples[n];
    if (e.n_fields != t.fields.size()) throw Error(ErrorCode::ShapeMismatch, "labels do not fit table '" + t.id + "'");
    const auto rows = table_feature_rows(t);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (e.msr_dim[i] != Dichotomy::Unlabeled) data[Task::MsrDim].add(rows[i], e.msr_dim[i] == Dichotomy::Measure);
      for (Task role : {Task::NaturalKey, Task::CommonBreakdown, Task::CommonMeasure})
        if (e.role(role)[i] != RoleLabel::Unlabeled) data[role].add(rows[i], e.role(role)[i] == RoleLabel::Pos);
    }
    for (const auto& [i, name] : e.msr_type)
      if (auto c = Vocabularies::index_of(b.msr_type_labels, name)) data[Task::MsrType].add(rows[i], static_cast<int>(*c));
    for (const auto& [i, name] : e.dim_type)
      if (auto c = Vocabularies::index_of(b.dim_type_labels, name)) data[Task::DimType].add(rows[i], static_cast<int>(*c));
    for (const auto& [i, scores] : e.agg_scores)
      for (const auto& [fn, s] : scores)
        if (s == 1)
          if (auto c = Vocabularies::index_of(b.agg_labels, fn)) data[Task::Agg].add(rows[i], static_cast<int>(*c));
    for (const LabeledPair& p : e.msr_pairs) data[Task::MsrPair].add(pair_feature_row(rows[p.i], rows[p.j]), p.positive);
  }
  for (auto& [task, d] : data) {
    if (d.X.empty()) continue;
    const std::size_t classes = task == Task::MsrType ? b.msr_type_labels.size()
                                : task == Task::DimType ? b.dim_type_labels.size()
                                : task == Task::Agg     ? b.agg_labels.size()
                                                        : 2;
    ForestConfig c = cfg;
    c.seed = Rng::mix(cfg.seed, static_cast<std::uint64_t>(task));
    b.models.emplace(task, train_forest(d.X, d.y, std::max<std::size_t>(classes, 2), c,
                                        task == Task::MsrPair ? pair_feature_layout() : feature_layout()));
  }
  return b;
}

inline MetadataAnnotation forest_annotate(const ForestBundle& b, const Table& t, const Vocabularies& vocab) {
  MetadataAnnotation a = rules_annotate(t, vocab);  // fallback for tasks without a model
  a.model = "forest";
  const auto rows = table_feature_rows(t);
  const auto model = [&](Task task) -> const Forest* {
    const auto it = b.models.find(task);
    return it == b.models.end() ? nullptr : &it->second;
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    FieldAnnotation& f = a.fields[i];
    if (const Forest* m = model(Task::MsrDim)) {
      f.measure_prob = predict_proba(*m, rows[i])[1];
      f.msr_dim = std::string(f.measure_prob >= 0.5 ? kMeasureLabel : kDimensionLabel);
    }
    if (const Forest* m = model(Task::NaturalKey)) f.role_scores.key = predict_proba(*m, rows[i])[1];
    if (const Forest* m = model(Task::CommonBreakdown)) f.role_scores.breakdown = predict_proba(*m, rows[i])[1];
    if (const Forest* m = model(Task::CommonMeasure)) f.role_scores.measure = predict_proba(*m, rows[i])[1];
    f.msr_type.reset();
    f.dim_type.reset();
    f.agg_ranking.clear();
    if (f.is_measure()) {
      if (const Forest* m = model(Task::MsrType)) f.msr_type = b.msr_type_labels[static_cast<std::size_t>(predict_class(*m, rows[i]))];
      else f.msr_type = std::string(kMajorityMeasureType);
      if (const Forest* m = model(Task::Agg)) {
        const auto p = predict_proba(*m, rows[i]);
        std::vector<std::size_t> order(b.agg_labels.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return p[x] > p[y]; });
        for (std::size_t c : order) f.agg_ranking.push_back({b.agg_labels[c], p[c]});
      } else {
        f.agg_ranking = majority_agg_ranking(vocab);
      }
    } else {
      if (const Forest* m = model(Task::DimType)) f.dim_type = b.dim_type_labels[static_cast<std::size_t>(predict_class(*m, rows[i]))];
      else f.dim_type = std::string(kMajorityDimensionType);
    }
  }
  a.pairs.clear();
  for (std::size_t i = 0; i < t.fields.size(); ++i) {
    if (!is_numeric_field(t.fields[i])) continue;
    for (std::size_t j = i + 1; j < t.fields.size(); ++j) {
      if (!is_numeric_field(t.fields[j])) continue;
      const Forest* m = model(Task::MsrPair);
      const double s = m ? predict_proba(*m, pair_feature_row(rows[i], rows[j]))[1] : (j == i + 1 ? 1.0 : 0.0);
      a.pairs.push_back({i, j, s});
    }
  }
  return a;
}

inline constexpr std::string_view kForestBundleFormat = "anameta.forest-bundle.v1";

inline nlohmann::ordered_json bundle_to_json(const ForestBundle& b) {
  nlohmann::ordered_json j;
  j["format"] = kForestBundleFormat;
  j["msr_type_labels"] = b.msr_type_labels;
  j["dim_type_labels"] = b.dim_type_labels;
  j["agg_labels"] = b.agg_labels;
  j["tasks"] = nlohmann::ordered_json::object();
  for (const auto& [task, f] : b.models) j["tasks"][std::string(task_name(task))] = forest_to_json(f);
  return j;
}

inline ForestBundle bundle_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kForestBundleFormat)
      throw Error(ErrorCode::MalformedInput, "not a forest bundle: " + j.at("format").dump());
    ForestBundle b;
    b.msr_type_labels = j.at("msr_type_labels").get<std::vector<std::string>>();
    b.dim_type_labels = j.at("dim_type_labels").get<std::vector<std::string>>();
    b.agg_labels = j.at("agg_labels").get<std::vector<std::string>>();
    for (const auto& [name, fj] : j.at("tasks").items()) {
      Forest f = forest_from_json(fj);
      const Task task = task_from_name(name);
      check_layout(f, task == Task::MsrPair ? pair_feature_layout() : feature_layout());
      b.models.emplace(task, std::move(f));
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("forest bundle: ") + e.what());
  }
}

}  // namespace anameta

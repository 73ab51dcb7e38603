#include <gtest/gtest.h>

#include "anameta/forest_ml.hpp"

using namespace anameta;

namespace {

constexpr std::size_t kAggrInteger = static_cast<std::size_t>(Stat::AggrInteger);

struct Planted {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
};

Planted planted(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Planted d;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(kFeatureLayoutWidth);
    for (double& v : x) v = rng.uniform();
    const int label = static_cast<int>(rng.below(2));
    x[kAggrInteger] = label;
    d.X.push_back(std::move(x));
    d.y.push_back(label);
  }
  return d;
}

Tree stump(int feature, double thr, std::vector<double> left, std::vector<double> right) {
  Tree t;
  t.nodes.resize(3);
  t.nodes[0].feature = feature;
  t.nodes[0].threshold = thr;
  t.nodes[0].left = 1;
  t.nodes[0].right = 2;
  t.nodes[1].distribution = std::move(left);
  t.nodes[2].distribution = std::move(right);
  return t;
}

double training_error(const Forest& f, const Planted& d) {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.X.size(); ++i) wrong += predict_class(f, d.X[i]) != d.y[i];
  return static_cast<double>(wrong) / static_cast<double>(d.X.size());
}

}  // namespace

TEST(TrainForest, PlantedRuleFitsTrainingSet) {
  const Planted d = planted(200, 1);
  ForestConfig cfg;
  cfg.n_trees = 25;
  const Forest f = train_forest(d.X, d.y, 2, cfg);
  EXPECT_EQ(training_error(f, d), 0.0);
  EXPECT_FALSE(f.warning);
}

TEST(TrainForest, SingleClassIsConstant) {
  const Planted d = planted(20, 2);
  const std::vector<int> zeros(d.X.size(), 1);
  const Forest f = train_forest(d.X, zeros, 3, ForestConfig{});
  ASSERT_TRUE(f.warning);
  EXPECT_NE(f.warning->find("DegenerateLabels"), std::string::npos);
  for (const auto& x : d.X) EXPECT_EQ(predict_proba(f, x), (std::vector<double>{0, 1, 0}));
}

TEST(TrainForest, DeterministicAcrossThreadCounts) {
  const Planted d = planted(150, 3);
  ForestConfig cfg;
  cfg.n_trees = 12;
  cfg.seed = 42;
  cfg.threads = 1;
  const std::string one = forest_to_json(train_forest(d.X, d.y, 2, cfg)).dump();
  cfg.threads = 4;
  EXPECT_EQ(forest_to_json(train_forest(d.X, d.y, 2, cfg)).dump(), one);
  cfg.seed = 43;
  EXPECT_NE(forest_to_json(train_forest(d.X, d.y, 2, cfg)).dump(), one);
}

TEST(TrainForest, Errors) {
  const Planted d = planted(10, 4);
  std::vector<std::vector<double>> narrow = d.X;
  narrow[3].pop_back();
  EXPECT_THROW(train_forest(narrow, d.y, 2, ForestConfig{}), Error);
  std::vector<int> bad = d.y;
  bad[0] = 5;
  EXPECT_THROW(train_forest(d.X, bad, 2, ForestConfig{}), Error);
}

TEST(PredictProba, StumpAndHandAveragedForest) {
  Forest f;
  f.feature_order = {"a", "b"};
  f.trees.push_back(stump(0, 0.5, {1.0, 0.0}, {0.25, 0.75}));
  const std::vector<double> x = {0.7, 0.1};
  EXPECT_EQ(predict_proba(f, x), (std::vector<double>{0.25, 0.75}));

  f.trees.push_back(stump(1, 0.2, {0.5, 0.5}, {0.0, 1.0}));
  f.trees.push_back(stump(0, 0.9, {0.8, 0.2}, {0.1, 0.9}));
  // x goes right, left, left: (0.25 + 0.5 + 0.8) / 3 and (0.75 + 0.5 + 0.2) / 3
  const auto p = predict_proba(f, x);
  EXPECT_NEAR(p[0], 1.55 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.45 / 3.0, 1e-15);
  try {
    predict_proba(f, {1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LayoutMismatch);
  }
}

TEST(PredictProba, ConvexCombination) {
  const Planted d = planted(120, 5);
  ForestConfig cfg;
  cfg.n_trees = 15;
  cfg.max_depth = 3;
  const Forest f = train_forest(d.X, d.y, 2, cfg);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(kFeatureLayoutWidth);
    for (double& v : x) v = rng.uniform(-1, 2);
    const auto p = predict_proba(f, x);
    EXPECT_GE(*std::min_element(p.begin(), p.end()), 0.0);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-9);
  }
}

TEST(RankFields, TiesToLowerIndex) {
  Forest f;
  f.feature_order = {"a"};
  Tree t;
  t.nodes.resize(5);
  t.nodes[0] = {0, 0.5, 1, 2, {}};
  t.nodes[1].distribution = {0.8, 0.2};
  t.nodes[2] = {0, 1.5, 3, 4, {}};
  t.nodes[3].distribution = {0.1, 0.9};
  t.nodes[4].distribution = {0.1, 0.9};
  f.trees.push_back(t);
  const auto r = rank_fields(f, {{0.0}, {1.0}, {2.0}});
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].field, 1u);
  EXPECT_EQ(r[1].field, 2u);
  EXPECT_EQ(r[2].field, 0u);
  const auto same = rank_fields(f, {{0.0}, {0.1}, {0.2}});
  EXPECT_EQ(same[0].field, 0u);
  EXPECT_EQ(same[2].field, 2u);
}

TEST(RankFields, PlantedPositiveFirst) {
  const Planted d = planted(200, 7);
  ForestConfig cfg;
  cfg.n_trees = 20;
  const Forest f = train_forest(d.X, d.y, 2, cfg);
  std::vector<std::vector<double>> fields(4, std::vector<double>(kFeatureLayoutWidth, 0.5));
  for (auto& r : fields) r[kAggrInteger] = 0.0;
  fields[2][kAggrInteger] = 1.0;
  EXPECT_EQ(rank_fields(f, fields).front().field, 2u);
}

TEST(TreeProperties, DuplicatesKeepTrainingDecisions) {
  const Planted d = planted(60, 8);
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.bootstrap = false;
  cfg.features_per_split = kFeatureLayoutWidth;
  const Forest base = train_forest(d.X, d.y, 2, cfg);
  Planted dup = d;
  for (std::size_t i = 0; i < 20; ++i) {
    dup.X.push_back(d.X[i * 3]);
    dup.y.push_back(d.y[i * 3]);
  }
  const Forest more = train_forest(dup.X, dup.y, 2, cfg);
  for (std::size_t i = 0; i < d.X.size(); ++i) EXPECT_EQ(predict_class(base, d.X[i]), predict_class(more, d.X[i]));
}

TEST(TreeProperties, DepthMonotoneTrainingError) {
  // noisy labels so deeper trees have something to fit
  Planted d = planted(200, 9);
  Rng rng(10);
  for (std::size_t i = 0; i < d.X.size(); ++i) d.y[i] = d.X[i][0] + 0.3 * rng.uniform() > 0.6;
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.bootstrap = false;
  cfg.features_per_split = kFeatureLayoutWidth;
  double prev = 1.0;
  for (std::size_t depth : {1u, 2u, 3u, 5u, 8u, 0u}) {
    cfg.max_depth = depth;
    const Forest f = train_forest(d.X, d.y, 2, cfg);
    const double err = training_error(f, d);
    EXPECT_LE(err, prev) << depth;
    prev = err;
    if (depth) EXPECT_LE(f.trees[0].depth(), depth);
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(ForestJson, RoundTrip) {
  const Planted d = planted(80, 11);
  ForestConfig cfg;
  cfg.n_trees = 5;
  const Forest f = train_forest(d.X, d.y, 2, cfg);
  const auto j = forest_to_json(f);
  const Forest back = forest_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(forest_to_json(back).dump(), j.dump());
  for (const auto& x : d.X) EXPECT_EQ(predict_proba(back, x), predict_proba(f, x));
  EXPECT_THROW(check_layout(back, {"x"}), Error);
}

TEST(ForestBundle, TrainsAndAnnotates) {
  const Vocabularies& v = Vocabularies::builtin();
  std::vector<Table> tables;
  std::vector<LabeledExample> labels;
  for (int i = 0; i < 12; ++i) {
    std::vector<std::vector<std::string>> rows;
    for (int r = 0; r < 6; ++r)
      rows.push_back({"item" + std::to_string(i * 10 + r), r % 2 ? "a" : "b", "$" + std::to_string(r * 3 + i),
                      std::to_string(r + i)});
    tables.push_back(make_table("t" + std::to_string(i), {"name", "group", "amount", "count"}, rows));
    const Table& t = tables.back();
    LabeledExample e = merge_examples(
        t, {derive_from_chart(t, ChartArtifact{t.id, ChartType::Bar, {0}, {{2, 3}}}),
            derive_from_pivot(t, PivotArtifact{t.id, {1}, {}, {{2, "SUM"}}}, v)});
    add_pair_negatives(e, t, 1);
    labels.push_back(e);
  }
  std::vector<const Table*> tp;
  std::vector<const LabeledExample*> ep;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    tp.push_back(&tables[i]);
    ep.push_back(&labels[i]);
  }
  ForestConfig cfg;
  cfg.n_trees = 10;
  const ForestBundle b = train_forest_bundle(tp, ep, v, cfg);
  EXPECT_TRUE(b.models.count(Task::MsrDim));
  EXPECT_TRUE(b.models.count(Task::Agg));
  EXPECT_FALSE(b.models.count(Task::DimType));
  const MetadataAnnotation a = forest_annotate(b, tables[0], v);
  EXPECT_EQ(a.fields[2].msr_dim, "MSR");
  EXPECT_EQ(a.fields[0].msr_dim, "DIM");
  EXPECT_EQ(a.fields[2].agg_ranking.front().function, "SUM");
  EXPECT_EQ(a.ranking(Task::NaturalKey).front(), 0u);
  EXPECT_EQ(a.ranking(Task::CommonBreakdown).front(), 1u);
  const ForestBundle back = bundle_from_json(nlohmann::json::parse(bundle_to_json(b).dump()));
  EXPECT_EQ(annotation_to_json(forest_annotate(back, tables[0], v)), annotation_to_json(a));
}

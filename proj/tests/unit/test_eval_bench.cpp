#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "anameta/eval_bench.hpp"
#include "anameta/synthetic.hpp"

using namespace anameta;

namespace {

template <class F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

struct Bench {
  SyntheticCorpus corpus;
  std::vector<LabeledExample> labels;
};

const Bench& bench() {
  static const Bench b = [] {
    Bench x;
    SyntheticConfig sc;
    sc.tables = 40;
    sc.min_rows = 5;
    sc.max_rows = 8;
    sc.seed = 2;
    x.corpus = generate_corpus(sc);
    const auto raw = derive_labels(x.corpus.tables, x.corpus.artifacts, x.corpus.sidecars, Vocabularies::builtin(), 2);
    SplitConfig split;
    split.seed = 2;
    x.labels = dedup_downsample_split(raw, split).examples;
    return x;
  }();
  return b;
}

// Reads the labels back as an annotation: every gold fact becomes the top prediction.
MetadataAnnotation gold_annotation(const Table& t, const LabeledExample& e) {
  MetadataAnnotation a;
  a.table_id = t.id;
  a.model = "gold";
  for (const Field& f : t.fields) {
    FieldAnnotation fa;
    fa.index = f.index;
    fa.header = f.header;
    fa.msr_dim = std::string(e.msr_dim[f.index] == Dichotomy::Measure ? kMeasureLabel : kDimensionLabel);
    fa.role_scores = {e.natural_key[f.index] == RoleLabel::Pos ? 1.0 : 0.0,
                      e.common_breakdown[f.index] == RoleLabel::Pos ? 1.0 : 0.0,
                      e.common_measure[f.index] == RoleLabel::Pos ? 1.0 : 0.0};
    if (e.msr_type.count(f.index)) fa.msr_type = e.msr_type.at(f.index);
    if (e.dim_type.count(f.index)) fa.dim_type = e.dim_type.at(f.index);
    if (e.agg_scores.count(f.index))
      for (const auto& [fn, s] : e.agg_scores.at(f.index))
        if (s == 1) fa.agg_ranking.insert(fa.agg_ranking.begin(), {fn, 1.0});
    a.fields.push_back(std::move(fa));
  }
  for (const LabeledPair& p : e.msr_pairs)
    if (p.positive) a.pairs.push_back({p.i, p.j, 1.0});
  return a;
}

ModelFactory gold_factory() {
  return [](const BenchmarkSplit&, const BenchmarkSplit&, std::uint64_t) -> Annotator {
    return [](const Table& t) {
      for (const auto& e : bench().labels)
        if (e.table_id == t.id) return gold_annotation(t, e);
      throw Error(ErrorCode::MalformedInput, "no labels");
    };
  };
}

}  // namespace

TEST(Accuracy, Basics) {
  EXPECT_EQ(accuracy(std::vector<std::string>{"A", "B"}, std::vector<std::string>{"A", "B"}), 1.0);
  EXPECT_EQ(accuracy(std::vector<std::string>{"A", "B"}, std::vector<std::string>{"A", "C"}), 0.5);
  EXPECT_EQ(error_of([] { accuracy(std::vector<int>{}, std::vector<int>{}); }), ErrorCode::EmptyEvaluation);
  EXPECT_EQ(error_of([] { accuracy(std::vector<int>{1}, std::vector<int>{1, 2}); }), ErrorCode::ShapeMismatch);
}

TEST(Accuracy, UnlabeledPositionsAreExcluded) {
  const std::vector<int> p{1, 2, 3, 4};
  const std::vector<std::optional<int>> g{1, std::nullopt, 0, std::nullopt};
  EXPECT_EQ(accuracy(p, g), 0.5);
  EXPECT_EQ(error_of([&] { accuracy(p, std::vector<std::optional<int>>(4)); }), ErrorCode::EmptyEvaluation);
}

TEST(Accuracy, SevenOfNineAgainstEnumeration) {
  const std::vector<int> g{0, 1, 2, 0, 1, 2, 0, 1, 2};
  std::vector<int> p = g;
  p[3] = 2;
  p[7] = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < g.size(); ++i) count += p[i] == g[i];
  EXPECT_EQ(count, 7u);
  EXPECT_DOUBLE_EQ(accuracy(p, g), static_cast<double>(count) / 9.0);
}

TEST(Accuracy, InvariantUnderConsistentRelabeling) {
  Rng rng(4);
  std::vector<int> p(30), g(30);
  for (auto& x : p) x = static_cast<int>(rng.below(4));
  for (auto& x : g) x = static_cast<int>(rng.below(4));
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<int> pp, gg;
  for (int x : p) pp.push_back(perm[static_cast<std::size_t>(x)]);
  for (int x : g) gg.push_back(perm[static_cast<std::size_t>(x)]);
  EXPECT_EQ(accuracy(p, g), accuracy(pp, gg));
}

TEST(HitRate, FirstAndSecondRank) {
  const std::vector<std::vector<std::size_t>> r{{0, 1, 2}, {2, 1, 0}};
  EXPECT_EQ(hit_rate_at_k(r, {{0}, {2}}, 1).value, 1.0);
  EXPECT_EQ(hit_rate_at_k(r, {{1}, {1}}, 1).value, 0.0);
  EXPECT_EQ(hit_rate_at_k(r, {{1}, {1}}, 2).value, 1.0);
}

TEST(HitRate, TablesWithoutPositivesAreExcludedAndCounted) {
  const auto h = hit_rate_at_k({{0, 1}, {1, 0}, {0, 1}}, {{0}, {}, {1}}, 1);
  EXPECT_EQ(h.samples, 2u);
  EXPECT_EQ(h.excluded, 1u);
  EXPECT_EQ(h.value, 0.5);
  EXPECT_EQ(error_of([] { hit_rate_at_k({{0}}, {{}}, 1); }), ErrorCode::NoPositives);
  EXPECT_EQ(error_of([] { hit_rate_at_k({{0}}, {{0}}, 0); }), ErrorCode::MalformedInput);
}

TEST(HitRate, MatchesEnumerationAndIsMonotone) {
  Rng rng(9);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t tables = 1 + rng.below(10);
    std::vector<std::vector<std::size_t>> rank, pos;
    std::size_t widest = 0;
    for (std::size_t t = 0; t < tables; ++t) {
      const std::size_t n = 1 + rng.below(6);
      widest = std::max(widest, n);
      std::vector<std::size_t> r(n);
      std::iota(r.begin(), r.end(), 0);
      rng.shuffle(r);
      rank.push_back(r);
      std::vector<std::size_t> p;
      for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform() < 0.3) p.push_back(i);
      if (p.empty()) p.push_back(rng.below(n));
      pos.push_back(p);
    }
    double prev = 0.0;
    for (std::size_t k = 1; k <= widest; ++k) {
      std::size_t hits = 0;
      for (std::size_t t = 0; t < tables; ++t) {
        bool hit = false;
        for (std::size_t i = 0; i < std::min(k, rank[t].size()); ++i)
          for (std::size_t q : pos[t]) hit = hit || rank[t][i] == q;
        hits += hit;
      }
      const double v = hit_rate_at_k(rank, pos, k).value;
      EXPECT_DOUBLE_EQ(v, static_cast<double>(hits) / static_cast<double>(tables));
      EXPECT_GE(v, prev);
      prev = v;
    }
    EXPECT_EQ(prev, 1.0);
  }
}

TEST(ScoreTask, AggCountsTopOneAmongGoldFunctions) {
  const Table t = make_table("t", {"a", "b"}, {{"1", "2"}});
  LabeledExample e = LabeledExample::empty_for(t, "pivot");
  e.agg_scores[0] = {{"SUM", 1}, {"AVG", 1}, {"MAX", 0}};
  e.agg_scores[1] = {{"SUM", 1}};
  MetadataAnnotation a = gold_annotation(t, e);
  a.fields[0].agg_ranking = {{"AVG", 0.6}, {"SUM", 0.3}};
  a.fields[1].agg_ranking = {{"MAX", 0.9}, {"SUM", 0.1}};
  const MetricCell c = score_task(Task::Agg, {&e}, {a});
  EXPECT_EQ(c.n_samples, 2u);
  EXPECT_EQ(*c.value, 0.5);
  EXPECT_FALSE(score_task(Task::MsrType, {&e}, {a}).value.has_value());
}

TEST(Benchmark, RulesOnlyRunHasEveryTaskAndNoTiming) {
  BenchmarkConfig cfg;
  cfg.models = {"rules"};
  cfg.reference = "rules";
  cfg.timing = true;
  const auto rep = run_benchmark(bench().corpus.tables, bench().labels, cfg, builtin_models(Vocabularies::builtin(), cfg));
  ASSERT_EQ(rep.cells.at("rules").size(), 8u);
  EXPECT_TRUE(rep.train_seconds.empty());
  for (Task t : kAllTasks) {
    const MetricCell& c = rep.cells.at("rules").at(t);
    ASSERT_TRUE(c.value) << task_name(t);
    EXPECT_GE(*c.value, 0.0);
    EXPECT_LE(*c.value, 1.0);
    EXPECT_EQ(*rep.delta("rules", t), 0.0);
  }
  EXPECT_EQ(rep.split_sizes.at("test") + rep.split_sizes.at("train") + rep.split_sizes.at("valid"), bench().labels.size());
}

TEST(Benchmark, GoldModelScoresOneWithZeroSelfDelta) {
  BenchmarkConfig cfg;
  cfg.models = {"gold", "rules"};
  cfg.reference = "gold";
  cfg.extra_k = {2};
  auto f = builtin_models(Vocabularies::builtin(), cfg);
  f["gold"] = gold_factory();
  const auto rep = run_benchmark(bench().corpus.tables, bench().labels, cfg, f);
  for (Task t : kAllTasks) {
    EXPECT_EQ(*rep.cells.at("gold").at(t).value, 1.0) << task_name(t);
    EXPECT_EQ(*rep.delta("gold", t), 0.0);
    EXPECT_DOUBLE_EQ(*rep.delta("rules", t), *rep.cells.at("rules").at(t).value - 1.0);
  }
  EXPECT_EQ(rep.extra.at("gold").at(Task::CommonMeasure).at(0).metric, "HR@2");
}

TEST(Benchmark, ForestAgainstRulesDeltasMatchIndependentScoring) {
  BenchmarkConfig cfg;
  cfg.models = {"rules", "forest"};
  cfg.reference = "rules";
  cfg.forest.n_trees = 15;
  cfg.forest.threads = 1;
  cfg.seed = 3;
  const Vocabularies& vocab = Vocabularies::builtin();
  const auto rep = run_benchmark(bench().corpus.tables, bench().labels, cfg, builtin_models(vocab, cfg));

  std::vector<const Table*> train_t, test_t;
  std::vector<const LabeledExample*> train_l, test_l;
  for (const auto& e : bench().labels) {
    const Table* t = nullptr;
    for (const auto& x : bench().corpus.tables)
      if (x.id == e.table_id) t = &x;
    if (e.split == Split::Train) {
      train_t.push_back(t);
      train_l.push_back(&e);
    } else if (e.split == Split::Test) {
      test_t.push_back(t);
      test_l.push_back(&e);
    }
  }
  ForestConfig fc = cfg.forest;
  fc.seed = Rng::mix(cfg.seed, 0);
  const ForestBundle b = train_forest_bundle(train_t, train_l, vocab, fc);
  std::vector<MetadataAnnotation> fa, ra;
  for (const Table* t : test_t) {
    fa.push_back(forest_annotate(b, *t, vocab));
    ra.push_back(rules_annotate(*t, vocab));
  }
  for (Task t : kAllTasks) {
    const auto f = score_task(t, test_l, fa).value, r = score_task(t, test_l, ra).value;
    ASSERT_TRUE(f && r);
    EXPECT_DOUBLE_EQ(*rep.delta("forest", t), *f - *r) << task_name(t);
  }
}

TEST(Benchmark, LeakedSplitAborts) {
  auto labels = bench().labels;
  auto it = std::find_if(labels.begin(), labels.end(), [](const auto& e) { return e.split == Split::Test; });
  ASSERT_NE(it, labels.end());
  LabeledExample leaked = *it;
  leaked.split = Split::Train;
  leaked.table_id = bench().labels.front().table_id == it->table_id ? bench().labels.back().table_id : bench().labels.front().table_id;
  labels.push_back(leaked);
  BenchmarkConfig cfg;
  cfg.models = {"rules"};
  EXPECT_EQ(error_of([&] { run_benchmark(bench().corpus.tables, labels, cfg, builtin_models(Vocabularies::builtin(), cfg)); }),
            ErrorCode::SplitLeakage);
}

TEST(Benchmark, ReportRegenerationIsByteIdentical) {
  BenchmarkConfig cfg;
  cfg.models = {"rules", "forest"};
  cfg.reference = "forest";
  cfg.forest.n_trees = 5;
  cfg.runs = 2;
  const auto f = builtin_models(Vocabularies::builtin(), cfg);
  const auto a = run_benchmark(bench().corpus.tables, bench().labels, cfg, f);
  const auto b = run_benchmark(bench().corpus.tables, bench().labels, cfg, f);
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
  EXPECT_EQ(report_to_markdown(a), report_to_markdown(b));
  const std::string md = report_to_markdown(a);
  EXPECT_NE(md.find("| Model | Msr/Dim | Δ | Natural Key |"), std::string::npos);
  EXPECT_NE(md.find("| forest |"), std::string::npos);
}

TEST(Benchmark, ConfigFromJson) {
  const auto c = benchmark_config_from_json(nlohmann::json::parse(
      R"({"models":["rules"],"tasks":["agg","msr_dim"],"runs":3,"extra_k":[3],"forest":{"n_trees":7},"kdf":{"m":0.25}})"));
  EXPECT_EQ(c.models, std::vector<std::string>{"rules"});
  EXPECT_EQ(c.tasks, (std::vector<Task>{Task::Agg, Task::MsrDim}));
  EXPECT_EQ(c.runs, 3u);
  EXPECT_EQ(c.forest.n_trees, 7u);
  EXPECT_EQ(c.kdf.m, 0.25);
  EXPECT_EQ(error_of([] { benchmark_config_from_json(nlohmann::json::parse(R"({"tasks":["nope"]})")); }), ErrorCode::MalformedInput);
}

#include <gtest/gtest.h>

#include <cmath>

#include "anameta/kdf/gradcheck.hpp"
#include "anameta/kdf/model.hpp"

using namespace anameta;
using namespace anameta::kdf;

namespace {

Mat<double> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double sd = 1.0) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  return m;
}

// Three tokens: 0 and 1 share a cell, 2 sits in the same row elsewhere.
TokenSequence three_tokens() {
  TokenSequence s;
  s.n_cols = 2;
  s.tokens = {{"a", "x", 0, 0, 0, false}, {"b", "x", 0, 0, 0, false}, {"c", "x", 0, 1, 1, false}};
  s.n_cells = 2;
  return s;
}

Table tiny_table() {
  return make_table("tiny", {"Name", "Sales", "Qty"}, {{"Acme Corp", "$1,200", "7"}});
}

KdfConfig small_config() {
  KdfConfig c;
  c.subtoken = {1, 2, 8, 4, 4};
  c.column = {1, 2, 6, 4, 2};
  return c;
}

HeadLabels small_heads() { return {{"Count", "Money", "Ratio"}, {"a", "b"}, {"SUM", "AVG"}}; }

}  // namespace

TEST(Visibility, SameCellRowColumnAndUnrelated) {
  const Table t = make_table("v", {"A", "B"}, {{"x y", "1"}, {"z", "2"}});
  const TokenSequence seq = tokenize_table(t);
  const Mat<double> M = build_visibility(seq, Granularity::Subtoken, 0.5);
  // tokens: A, B, x, y, 1, z, 2
  ASSERT_EQ(M.rows(), 7);
  EXPECT_EQ(M(2, 3), 1.0);  // x, y: same cell
  EXPECT_EQ(M(2, 5), 0.5);  // x, z: same column
  EXPECT_EQ(M(2, 4), 0.5);  // x, 1: same row
  EXPECT_EQ(M(2, 6), 0.0);  // x, 2: unrelated
  EXPECT_EQ(M(0, 1), 0.5);  // header cells share the header row
  for (Eigen::Index i = 0; i < 7; ++i) EXPECT_EQ(M(i, i), 1.0);
  EXPECT_EQ(M, M.transpose());
}

TEST(Visibility, CellAndColumnGranularity) {
  const Table t = make_table("v", {"A", "B"}, {{"x y", "1"}, {"z", "2"}});
  const Mat<double> cells = build_visibility(t, Granularity::Cell, 0.25);
  ASSERT_EQ(cells.rows(), 6);
  EXPECT_EQ(cells(2, 5), 0.0);
  EXPECT_EQ(cells(2, 4), 0.25);
  const Mat<double> cols = build_visibility(t, Granularity::Column, 0.25);
  EXPECT_EQ(cols, Mat<double>::Ones(2, 2));
}

TEST(KnowledgeFusion, ZeroQueryWeightsAverageVisibleEntitiesByVisibility) {
  Rng rng(3);
  const TokenSequence seq = three_tokens();
  const Mat<double> M = build_visibility(seq, Granularity::Subtoken, 0.5);
  const Mat<double> TOK = random_mat(3, 2, rng), ENT = random_mat(3, 3, rng);
  const Mat<double> W1 = Mat<double>::Zero(2, 3), W2 = Mat<double>::Identity(3, 3);
  Mat<double> W3 = Mat<double>::Zero(3, 2);
  W3(0, 0) = W3(1, 1) = 1.0;  // keep the first two entity dimensions
  const Mat<double> out = knowledge_fusion(TOK, ENT, M, W1, W2, W3);
  ASSERT_EQ(out.rows(), 3);
  ASSERT_EQ(out.cols(), 4);
  // exp(0 + ln M) = M, so each row's weights are its visibility row normalised.
  for (int i = 0; i < 3; ++i) {
    double total = 0;
    for (int j = 0; j < 3; ++j) total += M(i, j);
    for (int d = 0; d < 2; ++d) {
      double mean = 0;
      for (int j = 0; j < 3; ++j) mean += M(i, j) / total * ENT(j, d);
      EXPECT_NEAR(out(i, 2 + d), mean + ENT(i, d), 1e-12);
      EXPECT_EQ(out(i, d), TOK(i, d));
    }
  }
}

TEST(KnowledgeFusion, ZeroValueWeightsLeaveOnlyTheEntityResidual) {
  Rng rng(4);
  const Mat<double> M = build_visibility(three_tokens(), Granularity::Subtoken, 0.5);
  const Mat<double> TOK = random_mat(3, 2, rng), ENT = random_mat(3, 3, rng);
  const Mat<double> W3 = random_mat(3, 2, rng);
  const Mat<double> out = knowledge_fusion(TOK, ENT, M, Mat<double>::Zero(2, 3), Mat<double>::Zero(3, 3), W3);
  const Mat<double> expect = ENT * W3;
  for (int i = 0; i < 3; ++i)
    for (int d = 0; d < 2; ++d) EXPECT_NEAR(out(i, 2 + d), expect(i, d), 1e-12);
}

TEST(KnowledgeFusion, SingleTokenSoftmaxIsOne) {
  Rng rng(5);
  const Mat<double> TOK = random_mat(1, 3, rng), ENT = random_mat(1, 2, rng);
  const Mat<double> W1 = random_mat(3, 2, rng), W2 = random_mat(2, 2, rng), W3 = random_mat(2, 2, rng);
  const Mat<double> out = knowledge_fusion(TOK, ENT, Mat<double>::Ones(1, 1), W1, W2, W3);
  const Mat<double> h = (ENT * W2 + ENT) * W3;
  EXPECT_NEAR(out(0, 3), h(0, 0), 1e-12);
  EXPECT_NEAR(out(0, 4), h(0, 1), 1e-12);
}

TEST(KnowledgeFusion, InvisibleEntityRowsNeverReachTheOutput) {
  Rng rng(6);
  const Table t = make_table("p", {"City", "Pop"}, {{"Paris", "2"}, {"Rome", "3"}, {"Oslo", "1"}});
  const TokenSequence seq = tokenize_table(t);
  const auto n = static_cast<Eigen::Index>(seq.tokens.size());
  const Mat<double> M = build_visibility(seq, Granularity::Subtoken, 0.5);
  const Mat<double> TOK = random_mat(n, 4, rng), W1 = random_mat(4, 3, rng), W2 = random_mat(3, 3, rng), W3 = random_mat(3, 2, rng);
  Mat<double> ENT = random_mat(n, 3, rng);
  const Mat<double> base = knowledge_fusion(TOK, ENT, M, W1, W2, W3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    Mat<double> perturbed = ENT;
    for (Eigen::Index j = 0; j < n; ++j)
      if (M(i, j) == 0.0) perturbed.row(j) = random_mat(1, 3, rng, 100.0);
    const Mat<double> out = knowledge_fusion(TOK, perturbed, M, W1, W2, W3);
    for (Eigen::Index d = 0; d < out.cols(); ++d) EXPECT_EQ(out(i, d), base(i, d)) << "row " << i;
  }
}

TEST(MaskedSoftmax, RowsSumToOneAndMaskedEntriesAreZero) {
  Rng rng(7);
  const Mat<double> M = build_visibility(tokenize_table(tiny_table()), Granularity::Subtoken, 0.5);
  const Mat<double> logits = random_mat(M.rows(), M.cols(), rng, 5.0) + log_mask<double>(M);
  const Mat<double> p = ops::softmax_rows_value(logits);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (M(i, j) == 0.0) EXPECT_EQ(p(i, j), 0.0);
  }
}

TEST(KnowledgeFusion, GradientToFullyMaskedEntitiesIsExactlyZero) {
  // Two tokens in different cells and different rows and columns: each row only sees itself.
  Tape<double> t;
  Rng rng(8);
  const Mat<double> M = Mat<double>::Identity(2, 2);
  Mat<double> ent = random_mat(2, 3, rng);
  Mat<double> g;
  const Id tok = t.constant(random_mat(2, 2, rng));
  const Id e = t.param(ent, &g);
  const Id out = knowledge_fusion(t, tok, e, log_mask<double>(M), t.constant(random_mat(2, 3, rng)),
                                  t.constant(random_mat(3, 3, rng)), t.constant(random_mat(3, 2, rng)));
  // loss reads only row 0 of the output
  Mat<double> pick = Mat<double>::Zero(1, 2);
  pick(0, 0) = 1.0;
  const Id row0 = ops::matmul(t, t.constant(pick), out);
  const Id loss = ops::half_squared_norm(t, row0);
  t.backward(loss);
  for (Eigen::Index d = 0; d < 3; ++d) EXPECT_EQ(g(1, d), 0.0);
  EXPECT_GT(g.row(0).cwiseAbs().sum(), 0.0);
}

TEST(KnowledgeFusion, RejectsMismatchedShapes) {
  const Mat<double> M = Mat<double>::Ones(2, 2);
  EXPECT_THROW(knowledge_fusion(Mat<double>::Zero(2, 3), Mat<double>::Zero(2, 4), M, Mat<double>::Zero(3, 3),
                                Mat<double>::Zero(4, 4), Mat<double>::Zero(4, 2)),
               Error);
  EXPECT_THROW(knowledge_fusion(Mat<double>::Zero(2, 3), Mat<double>::Zero(3, 4), M, Mat<double>::Zero(3, 4),
                                Mat<double>::Zero(4, 4), Mat<double>::Zero(4, 2)),
               Error);
}

TEST(KnowledgeFusion, NonFiniteActivationIsReported) {
  Mat<double> ENT = Mat<double>::Ones(1, 2);
  ENT(0, 0) = std::numeric_limits<double>::infinity();
  try {
    knowledge_fusion(Mat<double>::Ones(1, 2), ENT, Mat<double>::Ones(1, 1), Mat<double>::Zero(2, 2),
                     Mat<double>::Identity(2, 2), Mat<double>::Identity(2, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteActivation);
  }
}

TEST(DistributionFusion, ZeroParametersPassStatisticsThrough) {
  const Table t = tiny_table();
  std::vector<FieldCategories> cats;
  std::vector<FeatureVector> stats;
  for (const Field& f : t.fields) {
    cats.push_back(extract_categories(f));
    stats.push_back(normalize_features(extract_statistics(f)));
  }
  const DistributionParams p{Mat<double>::Zero(5, 4), Mat<double>::Zero(1, 4), Mat<double>::Zero(10, 4)};
  const Mat<double> out = distribution_fusion(Mat<double>::Ones(3, 5), cats, stats, p);
  ASSERT_EQ(out.cols(), 4 + 31);
  for (int i = 0; i < 3; ++i) {
    for (int d = 0; d < 4; ++d) EXPECT_EQ(out(i, d), 0.0);
    for (int k = 0; k < 31; ++k) EXPECT_EQ(out(i, 4 + k), stats[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(k)]);
  }
}

TEST(DistributionFusion, TogglingABooleanAddsExactlyItsEmbeddingRow) {
  Rng rng(9);
  const DistributionParams p{random_mat(3, 2, rng), random_mat(1, 2, rng), random_mat(10, 2, rng)};
  FieldCategories off;
  off.field_type = FieldType::Decimal;
  FieldCategories on = off;
  on.is_currency = true;
  const Mat<double> col = random_mat(1, 3, rng);
  const FeatureVector fv{};
  const Mat<double> a = distribution_fusion(col, {off}, {fv}, p);
  const Mat<double> b = distribution_fusion(col, {on}, {fv}, p);
  EXPECT_NEAR(b(0, 0) - a(0, 0), p.cat(6, 0), 1e-12);  // IsCurrency is the second boolean row
  EXPECT_NEAR(b(0, 1) - a(0, 1), p.cat(6, 1), 1e-12);
}

TEST(DistributionFusion, HandComputedTwoDimensionalExample) {
  // col = [1, 2]; W = [[1, 0], [0.5, -1]]; b = [0.25, 0]
  // String and IsPercent rows (1 and 5) are [1, 1] and [0, 3].
  DistributionParams p{Mat<double>(2, 2), Mat<double>(1, 2), Mat<double>::Zero(10, 2)};
  p.w << 1, 0, 0.5, -1;
  p.b << 0.25, 0;
  p.cat.row(1) << 1, 1;
  p.cat.row(5) << 0, 3;
  FieldCategories c;
  c.field_type = FieldType::String;
  c.is_percent = true;
  FeatureVector fv{};
  fv.values[0] = 0.5;
  Mat<double> col(1, 2);
  col << 1, 2;
  const Mat<double> out = distribution_fusion(col, {c}, {fv}, p);
  // linear: [1·1 + 2·0.5 + 0.25, 1·0 + 2·(−1)] = [2.25, −2]; plus [1, 1] + [0, 3]
  EXPECT_DOUBLE_EQ(out(0, 0), 3.25);
  EXPECT_DOUBLE_EQ(out(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(out(0, 2), 0.5);
}

TEST(PoolColumns, MeansPerColumn) {
  Mat<double> x(4, 2);
  x << 1, 2, -1, -2, 3, 3, 3, 3;
  const Mat<double> p = pool_columns(x, {0, 0, 1, 1}, 2);
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_EQ(p(0, 1), 0.0);
  EXPECT_EQ(p(1, 0), 3.0);
  Rng rng(10);
  const Mat<double> y = random_mat(3, 4, rng);
  const Mat<double> q = pool_columns(y, {0, 0, 0}, 1);
  for (int d = 0; d < 4; ++d) EXPECT_NEAR(q(0, d), (y(0, d) + y(1, d) + y(2, d)) / 3.0, 1e-15);
}

TEST(PoolColumns, EmptyColumnIsAnError) {
  try {
    pool_columns(Mat<double>::Zero(2, 2), {0, 0}, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyColumn);
  }
}

TEST(Losses, MultiLabelCrossEntropyAveragesTheGoldTerms) {
  Tape<double> t;
  Mat<double> z(1, 2);
  z << 0.3, -1.1;
  const Id logits = t.constant(z);
  const double lse = std::log(std::exp(0.3) + std::exp(-1.1));
  const double both = t.value(ops::cross_entropy(t, logits, {0}, {{0, 1}}))(0, 0);
  EXPECT_NEAR(both, ((lse - 0.3) + (lse + 1.1)) / 2.0, 1e-14);
  const double one = t.value(ops::cross_entropy(t, logits, {0}, {{1}}))(0, 0);
  EXPECT_NEAR(one, lse + 1.1, 1e-14);
}

TEST(Losses, BinaryCrossEntropyMatchesTheDefinition) {
  Tape<double> t;
  Mat<double> z(3, 1);
  z << 2.0, -0.5, 40.0;
  const double v = t.value(ops::bce_logits(t, t.constant(z), {0, 1, 2}, {1.0, 0.0, 0.0}))(0, 0);
  const auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  const double expect = (-std::log(sig(2.0)) - std::log(1 - sig(-0.5)) + 40.0) / 3.0;
  EXPECT_NEAR(v, expect, 1e-12);
}

TEST(GradCheck, QuadraticLossIsExact) {
  ParamSet<double> p;
  Rng rng(11);
  p.add("x", random_mat(3, 4, rng));
  const auto r = grad_check(p, [](Tape<double>& t, ParamSet<double>& ps) { return ops::half_squared_norm(t, ps.use(t, "x")); },
                            {1e-5, 12, 1e-8, 0});
  EXPECT_EQ(r.checked, 12u);
  EXPECT_LT(r.max_rel_error, 1e-8) << r.worst;
}

TEST(GradCheck, EveryOperationMatchesFiniteDifferences) {
  Rng rng(12);
  ParamSet<double> p;
  p.add("a", random_mat(3, 4, rng));
  p.add("b", random_mat(4, 5, rng));
  p.add("g", Mat<double>::Ones(1, 5) + random_mat(1, 5, rng, 0.1));
  p.add("beta", random_mat(1, 5, rng));
  p.add("emb", random_mat(6, 4, rng));
  const auto loss = [](Tape<double>& t, ParamSet<double>& ps) {
    Id x = ops::matmul(t, ps.use(t, "a"), ps.use(t, "b"));
    x = ops::layer_norm(t, x, ps.use(t, "g"), ps.use(t, "beta"));
    x = ops::gelu(t, x);
    const Id s = ops::softmax_rows(t, ops::matmul_nt(t, x, x));
    const Id e = ops::gather_rows(t, ps.use(t, "emb"), {5, 0, 5});
    const Id c = ops::concat_cols(t, {ops::matmul(t, s, e), ops::slice_cols(t, x, 1, 2)});
    const Id h = ops::hadamard(t, c, c);
    Mat<double> target = Mat<double>::Constant(3, 6, 0.3);
    const Id l1 = ops::mse(t, h, target);
    const Id l2 = ops::cross_entropy(t, x, {0, 2}, {{1}, {0, 4}});
    const Id l3 = ops::bce_logits(t, ops::slice_cols(t, x, 0, 1), {0, 1, 2}, {1.0, 0.0, 1.0});
    return ops::sum_scalars(t, {l1, l2, l3});
  };
  const auto r = grad_check(p, loss, {1e-5, 8, 1e-8, 1});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(Forward, SingleFieldTableShapes) {
  const KdfConfig c = small_config();
  const HeadLabels h = small_heads();
  ParamSet<float> p = init_parameters(c, h);
  const Table t = make_table("one", {"Only"}, {{"a"}, {"b"}});
  const TableInputs in = prepare_inputs(t, nullptr, c);
  const auto fp = forward(p, in, c);
  EXPECT_EQ(fp.value(fp.logits.at(Task::MsrDim)).rows(), 1);
  EXPECT_EQ(fp.value(fp.logits.at(Task::MsrDim)).cols(), 1);
  EXPECT_EQ(fp.value(fp.logits.at(Task::MsrType)).cols(), 3);
  EXPECT_EQ(fp.value(fp.logits.at(Task::DimType)).cols(), 2);
  EXPECT_EQ(fp.value(fp.logits.at(Task::Agg)).cols(), 2);
  EXPECT_TRUE(fp.pairs.empty());
  EXPECT_EQ(fp.pair_logits, -1);
}

TEST(Forward, KnowledgeOffIgnoresEntitiesEntirely) {
  KdfConfig c = small_config();
  c.knowledge_on = false;
  const HeadLabels h = small_heads();
  ParamSet<float> p = init_parameters(c, h);
  for (auto& [name, v] : p.values)
    if (name.rfind("head.", 0) == 0) v.setConstant(0.05f);
  const Table t = tiny_table();
  const EntityStore ents = synthetic_entities({t}, 4, 1);
  const auto a = forward(p, prepare_inputs(t, ents.find("tiny"), c), c);
  const auto b = forward(p, prepare_inputs(t, nullptr, c), c);
  for (Task task : {Task::MsrDim, Task::CommonMeasure, Task::Agg})
    EXPECT_EQ(a.value(a.logits.at(task)), b.value(b.logits.at(task)));
}

TEST(Forward, BothFusionsOffEqualsTheEncoderOnlyPath) {
  KdfConfig c = small_config();
  c.knowledge_on = c.distribution_on = false;
  ParamSet<float> p = init_parameters(c, small_heads());
  Rng rng(13);
  for (auto& [name, v] : p.values)
    if (name.rfind("head.", 0) == 0)
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(rng.normal());
  const TableInputs in = prepare_inputs(tiny_table(), nullptr, c);
  const auto a = forward(p, in, c);
  const auto b = encoder_only_forward(p, in, c);
  EXPECT_EQ(a.value(a.hidden), b.value(b.hidden));
  for (Task task : {Task::MsrDim, Task::NaturalKey, Task::MsrType, Task::Agg})
    EXPECT_EQ(a.value(a.logits.at(task)), b.value(b.logits.at(task)));
  EXPECT_EQ(a.value(a.pair_logits), b.value(b.pair_logits));
}

TEST(Forward, KnowledgeFusionWithEntitiesChangesOutputs) {
  const KdfConfig c = small_config();
  ParamSet<float> p = init_parameters(c, small_heads());
  Rng rng(14);
  for (auto& [name, v] : p.values)
    if (name.rfind("head.", 0) == 0)
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(rng.normal());
  const Table t = tiny_table();
  const EntityStore ents = synthetic_entities({t}, 4, 1);
  const auto with = forward(p, prepare_inputs(t, ents.find("tiny"), c), c);
  const auto without = forward(p, prepare_inputs(t, nullptr, c), c);
  EXPECT_NE(with.value(with.logits.at(Task::MsrDim)), without.value(without.logits.at(Task::MsrDim)));
}

TEST(Forward, FullModelGradientsMatchFiniteDifferences) {
  const KdfConfig c = small_config();
  const HeadLabels h = small_heads();
  ParamSet<double> p = init_parameters(c, h).cast<double>();
  Rng rng(15);
  for (auto& [name, v] : p.values)
    if (name.rfind("head.", 0) == 0)
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = 0.5 * rng.normal();
  const Table t = tiny_table();
  const EntityStore ents = synthetic_entities({t}, 4, 2);
  const TableInputs in = prepare_inputs(t, ents.find("tiny"), c);
  ASSERT_EQ(in.seq.tokens.size(), 8u);
  KdfTargets y;
  y.msr_dim = {{0, 1, 2}, {0.0, 1.0, 1.0}};
  y.common_measure = {{1, 2}, {1.0, 0.0}};
  y.pairs = {{1, 2}};
  y.pair_y = {1.0};
  y.msr_type = {{1}, {{1}}};
  y.agg = {{1, 2}, {{0}, {0, 1}}};
  ForwardOptions opts;
  opts.targets = &y;
  const auto loss = [&](Tape<double>& tape, ParamSet<double>& ps) {
    ForwardPass<double> fp;
    fp.tape = std::move(tape);
    forward_trunk(fp, ps, in, c);
    forward_heads(fp, ps, in.seq.n_cols, opts);
    tape = std::move(fp.tape);
    return fp.loss;
  };
  const auto r = grad_check(p, loss, {1e-5, 4, 1e-8, 3});
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Init, BiasesZeroGainsOneNoKeyBias) {
  const ParamSet<float> p = init_parameters(KdfConfig{}, small_heads());
  std::size_t biases = 0;
  for (const auto& [name, v] : p.values) {
    const std::string last = name.substr(name.rfind('.') + 1);
    EXPECT_NE(last, "bk") << name;
    if (last[0] == 'b') {
      ++biases;
      EXPECT_TRUE(v.isZero()) << name;
    }
    if (last == "g") EXPECT_TRUE(v.isOnes()) << name;
  }
  EXPECT_TRUE(p.values.count("sub.enc.l0.bq"));
  EXPECT_GT(biases, 20u);
}

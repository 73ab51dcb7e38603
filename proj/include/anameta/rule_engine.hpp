#pragma once

// The rule baselines. Each rule is reproduced as stated, failure modes
// included: a column of rank numbers is still "purely numeric" and so a measure.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "anameta/annotation.hpp"
#include "anameta/field_stats.hpp"
#include "anameta/table_core.hpp"
#include "anameta/taxonomy.hpp"

namespace anameta {

struct FieldLabel {
  std::size_t field = 0;
  std::string label;   // class name, or "pos"/"neg" for role tasks
  double score = 0.0;  // 1 for the chosen label or positive role
  std::vector<AggScore> ranking;
  bool operator==(const FieldLabel&) const = default;
};

struct PairLabel {
  std::size_t i = 0;
  std::size_t j = 0;
  bool positive = false;
  bool operator==(const PairLabel&) const = default;
};

struct RulePrediction {
  Task task = Task::MsrDim;
  std::vector<FieldLabel> per_field;
  std::vector<PairLabel> per_pair;

  /// The field marked positive by a role rule, if any.
  std::optional<std::size_t> positive() const {
    for (const FieldLabel& f : per_field)
      if (f.score == 1.0) return f.field;
    return std::nullopt;
  }
};

inline constexpr double kRuleBreakdownCardinality = 0.4;

inline double cardinality_ratio(const Field& f) { return extract_statistics(f)[Stat::Cardinality]; }

inline RulePrediction rule_msr_dim(const Table& t) {
  RulePrediction p{Task::MsrDim, {}, {}};
  for (const Field& f : t.fields) {
    const bool msr = is_numeric_field(f);
    p.per_field.push_back({f.index, std::string(msr ? kMeasureLabel : kDimensionLabel), 1.0, {}});
  }
  return p;
}

struct RoleRulePredictions {
  RulePrediction natural_key;
  RulePrediction common_breakdown;
  RulePrediction common_measure;
};

inline RoleRulePredictions rule_roles(const Table& t) {
  RoleRulePredictions out{{Task::NaturalKey, {}, {}}, {Task::CommonBreakdown, {}, {}}, {Task::CommonMeasure, {}, {}}};
  std::optional<std::size_t> key, breakdown, measure;
  for (const Field& f : t.fields) {
    const double card = cardinality_ratio(f);
    const bool numeric = is_numeric_field(f);
    if (!key && card == 1.0) key = f.index;
    if (!breakdown && !numeric && card < kRuleBreakdownCardinality) breakdown = f.index;
    if (numeric) measure = f.index;
  }
  const auto fill = [&t](RulePrediction& p, std::optional<std::size_t> chosen) {
    for (const Field& f : t.fields) {
      const bool pos = chosen && *chosen == f.index;
      p.per_field.push_back({f.index, pos ? "pos" : "neg", pos ? 1.0 : 0.0, {}});
    }
  };
  fill(out.natural_key, key);
  fill(out.common_breakdown, breakdown);
  fill(out.common_measure, measure);
  return out;
}

struct TypeRulePredictions {
  RulePrediction dim_type;
  RulePrediction msr_type;
};

/// Every dimension gets the most frequent dimension type and every measure the
/// most frequent measure type.
inline TypeRulePredictions rule_types(const Table& t, const Vocabularies& vocab) {
  if (!vocab.loaded()) throw Error(ErrorCode::MissingVocabulary, "type rules need loaded vocabularies");
  if (!vocab.has_dimension_type(kMajorityDimensionType) || !vocab.find_measure_type(kMajorityMeasureType))
    throw Error(ErrorCode::MissingVocabulary, "vocabularies lack the majority types");
  TypeRulePredictions out{{Task::DimType, {}, {}}, {Task::MsrType, {}, {}}};
  for (const FieldLabel& f : rule_msr_dim(t).per_field) {
    if (f.label == kMeasureLabel) out.msr_type.per_field.push_back({f.field, std::string(kMajorityMeasureType), 1.0, {}});
    else out.dim_type.per_field.push_back({f.field, std::string(kMajorityDimensionType), 1.0, {}});
  }
  return out;
}

/// Pairs over rule-predicted measures; only directly adjacent columns are positive.
inline RulePrediction rule_msr_pair(const Table& t) {
  RulePrediction p{Task::MsrPair, {}, {}};
  std::vector<std::size_t> measures;
  for (const FieldLabel& f : rule_msr_dim(t).per_field)
    if (f.label == kMeasureLabel) measures.push_back(f.field);
  for (std::size_t a = 0; a < measures.size(); ++a)
    for (std::size_t b = a + 1; b < measures.size(); ++b)
      p.per_pair.push_back({measures[a], measures[b], measures[b] == measures[a] + 1});
  return p;
}

/// The majority function first, the rest in vocabulary order.
inline std::vector<AggScore> majority_agg_ranking(const Vocabularies& vocab) {
  std::vector<AggScore> ranking;
  const auto majority = vocab.agg_index(kMajorityAggFunction).value_or(0);
  ranking.push_back({vocab.agg_functions()[majority], 1.0});
  for (std::size_t i = 0; i < vocab.agg_functions().size(); ++i)
    if (i != majority) ranking.push_back({vocab.agg_functions()[i], 0.0});
  return ranking;
}

inline RulePrediction rule_agg(const Table& t, const Vocabularies& vocab) {
  if (!vocab.loaded()) throw Error(ErrorCode::MissingVocabulary, "aggregation rule needs a loaded vocabulary");
  RulePrediction p{Task::Agg, {}, {}};
  const auto ranking = majority_agg_ranking(vocab);
  for (const FieldLabel& f : rule_msr_dim(t).per_field)
    if (f.label == kMeasureLabel) p.per_field.push_back({f.field, ranking.front().function, 1.0, ranking});
  return p;
}

/// Measure type from units: a unit in the header or in most cells names the
/// type, '%' markers mean Ratio, and anything else falls back to the majority.
inline std::string unit_measure_type(const Field& f, const Vocabularies& vocab) {
  if (auto m = vocab.detect_unit(f.header)) return m->measure_type->name;
  const FieldCategories cat = extract_categories(f);
  if (cat.is_currency) {
    if (vocab.find_measure_type("Money")) return "Money";
  }
  if (cat.is_percent && vocab.find_measure_type("Ratio")) return "Ratio";
  std::map<std::string, std::size_t> votes;
  std::size_t n = 0;
  for (const CellValue& c : f.cells) {
    if (is_empty(c)) continue;
    ++n;
    if (auto m = vocab.detect_unit(cell_text(c))) ++votes[m->measure_type->name];
  }
  for (const auto& [name, k] : votes)
    if (2 * k > n) return name;
  return std::string(kMajorityMeasureType);
}

struct RuleOptions {
  bool unit_types = false;  // replace the constant measure type with unit lookup
};

/// All eight rule outputs folded into one annotation.
inline MetadataAnnotation rules_annotate(const Table& t, const Vocabularies& vocab, const RuleOptions& opts = {}) {
  MetadataAnnotation a;
  a.table_id = t.id;
  a.model = opts.unit_types ? "rules+units" : "rules";
  const RulePrediction md = rule_msr_dim(t);
  const RoleRulePredictions roles = rule_roles(t);
  const TypeRulePredictions types = rule_types(t, vocab);
  const RulePrediction agg = rule_agg(t, vocab);
  for (const Field& f : t.fields) {
    FieldAnnotation fa;
    fa.index = f.index;
    fa.header = f.header;
    fa.msr_dim = md.per_field[f.index].label;
    fa.measure_prob = fa.is_measure() ? 1.0 : 0.0;
    fa.role_scores = {roles.natural_key.per_field[f.index].score, roles.common_breakdown.per_field[f.index].score,
                      roles.common_measure.per_field[f.index].score};
    a.fields.push_back(std::move(fa));
  }
  for (const FieldLabel& l : types.dim_type.per_field) a.fields[l.field].dim_type = l.label;
  for (const FieldLabel& l : types.msr_type.per_field)
    a.fields[l.field].msr_type = opts.unit_types ? unit_measure_type(t.fields[l.field], vocab) : l.label;
  for (const FieldLabel& l : agg.per_field) a.fields[l.field].agg_ranking = l.ranking;
  for (const PairLabel& p : rule_msr_pair(t).per_pair) a.pairs.push_back({p.i, p.j, p.positive ? 1.0 : 0.0});
  return a;
}

}  // namespace anameta

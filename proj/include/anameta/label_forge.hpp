#pragma once

// Supervision mined from analysis artifacts (charts and pivot tables), plus
// schema-level deduplication, down-sampling and train/valid/test splitting.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "anameta/annotation.hpp"
#include "anameta/rng.hpp"
#include "anameta/table_core.hpp"
#include "anameta/taxonomy.hpp"

namespace anameta {

enum class ChartType { Line, Bar, Scatter, Pie, Other };

inline constexpr std::string_view chart_type_name(ChartType t) {
  switch (t) {
    case ChartType::Line: return "Line";
    case ChartType::Bar: return "Bar";
    case ChartType::Scatter: return "Scatter";
    case ChartType::Pie: return "Pie";
    case ChartType::Other: return "Other";
  }
  return "Other";
}

inline ChartType chart_type_from_name(std::string_view s) {
  for (ChartType t : {ChartType::Line, ChartType::Bar, ChartType::Scatter, ChartType::Pie, ChartType::Other})
    if (chart_type_name(t) == s) return t;
  throw Error(ErrorCode::MalformedInput, "unknown chart type '" + std::string(s) + "'");
}

struct ChartArtifact {
  std::string table_id;
  ChartType chart_type = ChartType::Bar;
  std::vector<std::size_t> x_fields;
  std::vector<std::vector<std::size_t>> y_fields;  // one list per axis
};

struct PivotValue {
  std::size_t field = 0;
  std::string agg;
};

struct PivotArtifact {
  std::string table_id;
  std::vector<std::size_t> row_fields;
  std::vector<std::size_t> column_fields;
  std::vector<PivotValue> value_fields;
};

using Artifact = std::variant<ChartArtifact, PivotArtifact>;

inline const std::string& artifact_table_id(const Artifact& a) {
  return std::visit([](const auto& x) -> const std::string& { return x.table_id; }, a);
}

enum class Dichotomy { Unlabeled, Measure, Dimension };
enum class RoleLabel { Unlabeled, Pos, Neg };
enum class Split { Unassigned, Train, Valid, Test };

inline constexpr std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

inline Split split_from_name(std::string_view s) {
  for (Split x : {Split::Train, Split::Valid, Split::Test, Split::Unassigned})
    if (split_name(x) == s) return x;
  throw Error(ErrorCode::MalformedInput, "unknown split '" + std::string(s) + "'");
}

struct LabeledPair {
  std::size_t i = 0;
  std::size_t j = 0;
  bool positive = false;
  bool operator==(const LabeledPair&) const = default;
};

struct LabeledExample {
  std::string table_id;
  std::string source = "other";  // chart, pivot or other; selects the down-sampling threshold
  std::string fingerprint;       // SchemaFingerprint digest
  std::size_t n_fields = 0;
  std::vector<Dichotomy> msr_dim;
  std::vector<RoleLabel> common_measure;
  std::vector<RoleLabel> common_breakdown;
  std::vector<RoleLabel> natural_key;
  std::vector<LabeledPair> msr_pairs;
  std::map<std::size_t, std::map<std::string, int>> agg_scores;
  std::map<std::size_t, std::string> msr_type;
  std::map<std::size_t, std::string> dim_type;
  std::vector<std::size_t> chart_dims;  // fields labeled DIM by a chart, for the natural-key rule
  Split split = Split::Unassigned;
  std::vector<std::string> conflicts;
  std::vector<std::string> warnings;

  bool operator==(const LabeledExample&) const = default;

  static LabeledExample empty_for(const Table& t, std::string source) {
    LabeledExample e;
    e.table_id = t.id;
    e.source = std::move(source);
    e.fingerprint = schema_fingerprint(t).digest;
    e.n_fields = t.fields.size();
    e.msr_dim.assign(e.n_fields, Dichotomy::Unlabeled);
    e.common_measure.assign(e.n_fields, RoleLabel::Unlabeled);
    e.common_breakdown.assign(e.n_fields, RoleLabel::Unlabeled);
    e.natural_key.assign(e.n_fields, RoleLabel::Unlabeled);
    return e;
  }

  const std::vector<RoleLabel>& role(Task t) const {
    switch (t) {
      case Task::NaturalKey: return natural_key;
      case Task::CommonBreakdown: return common_breakdown;
      case Task::CommonMeasure: return common_measure;
      default: throw Error(ErrorCode::MalformedInput, "not a role task: " + std::string(task_name(t)));
    }
  }

  std::vector<std::size_t> positives(Task t) const {
    std::vector<std::size_t> out;
    const auto& r = role(t);
    for (std::size_t i = 0; i < r.size(); ++i)
      if (r[i] == RoleLabel::Pos) out.push_back(i);
    return out;
  }

  std::string schema_hex() const { return SchemaFingerprint{fingerprint}.hex(); }
};

namespace forge_detail {

inline void check_index(const Table& t, std::size_t i, std::string_view what) {
  if (i >= t.fields.size())
    throw Error(ErrorCode::IndexOutOfRange, std::string(what) + " index " + std::to_string(i) + " on table '" + t.id +
                                                "' with " + std::to_string(t.fields.size()) + " fields");
}

/// Every cell is present and no value repeats.
inline bool all_unique(const Field& f) {
  std::set<std::string> seen;
  for (const CellValue& c : f.cells) {
    if (is_empty(c)) return false;
    if (!seen.insert(cell_text(c)).second) return false;
  }
  return !f.cells.empty();
}

inline bool has_duplicates(const Field& f) {
  std::set<std::string> seen;
  for (const CellValue& c : f.cells)
    if (!is_empty(c) && !seen.insert(cell_text(c)).second) return true;
  return false;
}

inline void set_pair(std::vector<LabeledPair>& pairs, std::size_t i, std::size_t j, bool positive) {
  if (i > j) std::swap(i, j);
  for (LabeledPair& p : pairs)
    if (p.i == i && p.j == j) {
      p.positive = p.positive || positive;
      return;
    }
  pairs.push_back({i, j, positive});
}

inline void sort_pairs(std::vector<LabeledPair>& pairs) {
  std::sort(pairs.begin(), pairs.end(), [](const LabeledPair& a, const LabeledPair& b) {
    return std::tie(a.i, a.j) < std::tie(b.i, b.j);
  });
}

/// Natural-key positive for the single chart dimension when its values are
/// unique; every other field becomes a negative. Without a positive the task
/// stays unlabeled for the table.
inline void apply_natural_key(LabeledExample& e, const Table& t) {
  std::fill(e.natural_key.begin(), e.natural_key.end(), RoleLabel::Unlabeled);
  if (e.chart_dims.size() != 1) return;
  const std::size_t k = e.chart_dims.front();
  if (e.msr_dim[k] != Dichotomy::Dimension || !all_unique(t.fields[k])) return;
  std::fill(e.natural_key.begin(), e.natural_key.end(), RoleLabel::Neg);
  e.natural_key[k] = RoleLabel::Pos;
}

}  // namespace forge_detail

inline LabeledExample derive_from_chart(const Table& t, const ChartArtifact& chart) {
  using namespace forge_detail;
  if (chart.y_fields.empty() || std::all_of(chart.y_fields.begin(), chart.y_fields.end(),
                                            [](const auto& axis) { return axis.empty(); }))
    throw Error(ErrorCode::MalformedInput, "chart on '" + t.id + "' has no y fields");
  LabeledExample e = LabeledExample::empty_for(t, "chart");
  for (const auto& axis : chart.y_fields)
    for (std::size_t y : axis) check_index(t, y, "y-axis");
  for (std::size_t x : chart.x_fields) check_index(t, x, "x-axis");

  std::fill(e.common_measure.begin(), e.common_measure.end(), RoleLabel::Neg);
  for (const auto& axis : chart.y_fields) {
    for (std::size_t y : axis) {
      e.msr_dim[y] = Dichotomy::Measure;
      e.common_measure[y] = RoleLabel::Pos;
    }
    for (std::size_t a = 0; a < axis.size(); ++a)
      for (std::size_t b = a + 1; b < axis.size(); ++b) {
        if (axis[a] == axis[b]) continue;
        if (!is_numeric_field(t.fields[axis[a]]) || !is_numeric_field(t.fields[axis[b]])) {
          e.warnings.push_back("skipped non-numeric axis pair (" + std::to_string(axis[a]) + ", " +
                               std::to_string(axis[b]) + ")");
          continue;
        }
        set_pair(e.msr_pairs, axis[a], axis[b], true);
      }
  }
  if (chart.chart_type != ChartType::Scatter && chart.chart_type != ChartType::Line) {
    for (std::size_t x : chart.x_fields) {
      if (e.msr_dim[x] == Dichotomy::Measure) {
        e.conflicts.push_back("field " + std::to_string(x) + " is on both axes of one chart");
        e.msr_dim[x] = Dichotomy::Unlabeled;
        e.common_measure[x] = RoleLabel::Unlabeled;
        continue;
      }
      e.msr_dim[x] = Dichotomy::Dimension;
      if (std::find(e.chart_dims.begin(), e.chart_dims.end(), x) == e.chart_dims.end()) e.chart_dims.push_back(x);
    }
  }
  sort_pairs(e.msr_pairs);
  apply_natural_key(e, t);
  return e;
}

inline LabeledExample derive_from_pivot(const Table& t, const PivotArtifact& pivot, const Vocabularies& vocab) {
  using namespace forge_detail;
  if (pivot.value_fields.empty()) throw Error(ErrorCode::MalformedInput, "pivot on '" + t.id + "' has no values");
  LabeledExample e = LabeledExample::empty_for(t, "pivot");
  for (const PivotValue& v : pivot.value_fields) {
    check_index(t, v.field, "value");
    if (!vocab.agg_index(v.agg)) throw Error(ErrorCode::UnknownAggFunction, "'" + v.agg + "' on table '" + t.id + "'");
  }
  for (std::size_t r : pivot.row_fields) check_index(t, r, "row");
  for (std::size_t c : pivot.column_fields) check_index(t, c, "column");

  std::fill(e.common_measure.begin(), e.common_measure.end(), RoleLabel::Neg);
  std::fill(e.common_breakdown.begin(), e.common_breakdown.end(), RoleLabel::Neg);
  for (const PivotValue& v : pivot.value_fields) {
    e.msr_dim[v.field] = Dichotomy::Measure;
    e.common_measure[v.field] = RoleLabel::Pos;
    auto& scores = e.agg_scores[v.field];
    if (scores.empty())
      for (const std::string& fn : vocab.agg_functions()) scores[fn] = 0;
    scores[vocab.agg_functions()[*vocab.agg_index(v.agg)]] = 1;
  }
  std::vector<std::size_t> dims = pivot.row_fields;
  dims.insert(dims.end(), pivot.column_fields.begin(), pivot.column_fields.end());
  for (std::size_t d : dims) {
    if (e.msr_dim[d] == Dichotomy::Measure) {
      e.conflicts.push_back("field " + std::to_string(d) + " is both a pivot value and a grouping field");
      e.msr_dim[d] = Dichotomy::Unlabeled;
      e.common_measure[d] = RoleLabel::Unlabeled;
      e.common_breakdown[d] = RoleLabel::Unlabeled;
      e.agg_scores.erase(d);
      continue;
    }
    e.msr_dim[d] = Dichotomy::Dimension;
    if (has_duplicates(t.fields[d])) e.common_breakdown[d] = RoleLabel::Pos;
  }
  return e;
}

/// Combine partial labels for one table. Positives beat negatives; a field
/// that one artifact calls a measure and another a dimension is recorded as
/// a conflict and left unlabeled.
inline LabeledExample merge_examples(const Table& t, const std::vector<LabeledExample>& parts) {
  using namespace forge_detail;
  std::string source = "other";
  for (const LabeledExample& p : parts)
    if (p.source == "chart" || (p.source == "pivot" && source == "other")) source = p.source;
  LabeledExample out = LabeledExample::empty_for(t, source);
  const auto merge_role = [](RoleLabel& dst, RoleLabel src) {
    if (src == RoleLabel::Pos || (src == RoleLabel::Neg && dst == RoleLabel::Unlabeled)) dst = src;
  };
  std::set<std::size_t> conflicted;
  for (const LabeledExample& p : parts) {
    if (p.n_fields != out.n_fields)
      throw Error(ErrorCode::ShapeMismatch, "partial labels for '" + t.id + "' have a different field count");
    for (std::size_t i = 0; i < out.n_fields; ++i) {
      if (p.msr_dim[i] == Dichotomy::Unlabeled) continue;
      if (out.msr_dim[i] != Dichotomy::Unlabeled && out.msr_dim[i] != p.msr_dim[i]) conflicted.insert(i);
      out.msr_dim[i] = p.msr_dim[i];
    }
    for (std::size_t i = 0; i < out.n_fields; ++i) {
      merge_role(out.common_measure[i], p.common_measure[i]);
      merge_role(out.common_breakdown[i], p.common_breakdown[i]);
    }
    for (const LabeledPair& q : p.msr_pairs) set_pair(out.msr_pairs, q.i, q.j, q.positive);
    for (const auto& [f, scores] : p.agg_scores)
      for (const auto& [fn, s] : scores) out.agg_scores[f][fn] = std::max(out.agg_scores[f][fn], s);
    for (const auto& [f, name] : p.msr_type) out.msr_type[f] = name;
    for (const auto& [f, name] : p.dim_type) out.dim_type[f] = name;
    for (std::size_t d : p.chart_dims)
      if (std::find(out.chart_dims.begin(), out.chart_dims.end(), d) == out.chart_dims.end()) out.chart_dims.push_back(d);
    out.conflicts.insert(out.conflicts.end(), p.conflicts.begin(), p.conflicts.end());
    out.warnings.insert(out.warnings.end(), p.warnings.begin(), p.warnings.end());
  }
  for (std::size_t i : conflicted) {
    out.conflicts.push_back("field " + std::to_string(i) + " labeled both MSR and DIM across artifacts");
    out.msr_dim[i] = Dichotomy::Unlabeled;
    if (out.common_measure[i] == RoleLabel::Pos) out.common_measure[i] = RoleLabel::Unlabeled;
    if (out.common_breakdown[i] == RoleLabel::Pos) out.common_breakdown[i] = RoleLabel::Unlabeled;
    out.agg_scores.erase(i);
    out.msr_type.erase(i);
    out.dim_type.erase(i);
    std::erase(out.chart_dims, i);
    std::erase_if(out.msr_pairs, [i](const LabeledPair& p) { return p.i == i || p.j == i; });
  }
  std::sort(out.chart_dims.begin(), out.chart_dims.end());
  sort_pairs(out.msr_pairs);
  apply_natural_key(out, t);
  // Natural keys from annotated primary keys (sidecars) survive the chart rule.
  for (const LabeledExample& p : parts)
    if (p.chart_dims.empty())
      for (std::size_t i = 0; i < out.n_fields; ++i) merge_role(out.natural_key[i], p.natural_key[i]);
  return out;
}

struct PairSample {
  std::vector<LabeledPair> negatives;
  std::optional<std::string> warning;  // set when the pool ran out
};

/// Uniformly sample |positives| numeric field pairs that are not positives.
inline PairSample sample_pair_negatives(const Table& t, const std::vector<LabeledPair>& positives, std::uint64_t seed) {
  std::set<std::pair<std::size_t, std::size_t>> pos;
  for (const LabeledPair& p : positives) pos.insert(std::minmax(p.i, p.j));
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t i = 0; i < t.fields.size(); ++i) {
    if (!is_numeric_field(t.fields[i])) continue;
    for (std::size_t j = i + 1; j < t.fields.size(); ++j)
      if (is_numeric_field(t.fields[j]) && !pos.count({i, j})) pool.emplace_back(i, j);
  }
  PairSample out;
  const std::size_t want = pos.size();
  const std::size_t take = std::min(want, pool.size());
  if (take < want)
    out.warning = "pair negative pool exhausted: wanted " + std::to_string(want) + ", have " + std::to_string(pool.size());
  Rng rng(seed);
  for (std::size_t k = 0; k < take; ++k) {  // partial Fisher-Yates
    const std::size_t r = k + static_cast<std::size_t>(rng.below(pool.size() - k));
    std::swap(pool[k], pool[r]);
    out.negatives.push_back({pool[k].first, pool[k].second, false});
  }
  forge_detail::sort_pairs(out.negatives);
  return out;
}

/// Add sampled negatives with a per-table stream derived from the seed.
inline void add_pair_negatives(LabeledExample& e, const Table& t, std::uint64_t seed) {
  std::vector<LabeledPair> positives;
  for (const LabeledPair& p : e.msr_pairs)
    if (p.positive) positives.push_back(p);
  if (positives.empty()) return;
  PairSample s = sample_pair_negatives(t, positives, Rng::mix(seed, fnv1a64(t.id)));
  for (const LabeledPair& n : s.negatives) forge_detail::set_pair(e.msr_pairs, n.i, n.j, false);
  if (s.warning) e.warnings.push_back(*s.warning);
  forge_detail::sort_pairs(e.msr_pairs);
}

// ---------- sidecar annotations ----------

/// Pre-extracted labels from annotated corpora: measure-type properties or
/// names, dimension types and primary keys, keyed by field index.
struct TypeSidecar {
  std::string table_id;
  std::string source = "other";
  std::map<std::size_t, std::string> msr_type;  // type name or property IRI
  std::map<std::size_t, std::string> dim_type;
  std::optional<std::size_t> primary_key;
};

inline LabeledExample derive_from_sidecar(const Table& t, const TypeSidecar& s, const Vocabularies& vocab) {
  LabeledExample e = LabeledExample::empty_for(t, s.source);
  for (const auto& [i, raw] : s.msr_type) {
    forge_detail::check_index(t, i, "measure type");
    const MeasureType* mt = vocab.find_measure_type(raw);
    if (!mt && raw.find(':') != std::string::npos) mt = &vocab.map_property_to_measure_type(raw);
    if (!mt) throw Error(ErrorCode::MalformedInput, "unknown measure type '" + raw + "'");
    if (mt->name == kOthersType) continue;
    e.msr_type[i] = mt->name;
    e.msr_dim[i] = Dichotomy::Measure;
  }
  for (const auto& [i, name] : s.dim_type) {
    forge_detail::check_index(t, i, "dimension type");
    if (!vocab.has_dimension_type(name)) throw Error(ErrorCode::MalformedInput, "unknown dimension type '" + name + "'");
    e.dim_type[i] = name;
  }
  if (s.primary_key) {
    forge_detail::check_index(t, *s.primary_key, "primary key");
    if (e.msr_dim[*s.primary_key] == Dichotomy::Measure)
      throw Error(ErrorCode::MalformedInput, "primary key of '" + t.id + "' also carries a measure type");
    e.msr_dim[*s.primary_key] = Dichotomy::Dimension;
    std::fill(e.natural_key.begin(), e.natural_key.end(), RoleLabel::Neg);
    e.natural_key[*s.primary_key] = RoleLabel::Pos;
  }
  return e;
}

// ---------- JSON lines ----------

inline Artifact artifact_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "chart") {
      ChartArtifact c;
      c.table_id = j.at("table_id").get<std::string>();
      c.chart_type = chart_type_from_name(j.at("chart_type").get<std::string>());
      c.x_fields = j.value("x_fields", std::vector<std::size_t>{});
      c.y_fields = j.at("y_fields").get<std::vector<std::vector<std::size_t>>>();
      return c;
    }
    if (kind == "pivot") {
      PivotArtifact p;
      p.table_id = j.at("table_id").get<std::string>();
      p.row_fields = j.value("row_fields", std::vector<std::size_t>{});
      p.column_fields = j.value("column_fields", std::vector<std::size_t>{});
      for (const auto& v : j.at("value_fields")) p.value_fields.push_back({v.at("field").get<std::size_t>(), v.at("agg").get<std::string>()});
      return p;
    }
    throw Error(ErrorCode::MalformedInput, "unknown artifact kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("artifact: ") + e.what());
  }
}

inline nlohmann::ordered_json artifact_to_json(const Artifact& a) {
  nlohmann::ordered_json j;
  if (const auto* c = std::get_if<ChartArtifact>(&a)) {
    j["kind"] = "chart";
    j["table_id"] = c->table_id;
    j["chart_type"] = chart_type_name(c->chart_type);
    j["x_fields"] = c->x_fields;
    j["y_fields"] = c->y_fields;
  } else {
    const auto& p = std::get<PivotArtifact>(a);
    j["kind"] = "pivot";
    j["table_id"] = p.table_id;
    j["row_fields"] = p.row_fields;
    j["column_fields"] = p.column_fields;
    j["value_fields"] = nlohmann::ordered_json::array();
    for (const PivotValue& v : p.value_fields) j["value_fields"].push_back({{"field", v.field}, {"agg", v.agg}});
  }
  return j;
}

inline TypeSidecar sidecar_from_json(const nlohmann::json& j) {
  try {
    TypeSidecar s;
    s.table_id = j.at("table_id").get<std::string>();
    s.source = j.value("source", std::string("other"));
    const nlohmann::json msr = j.value("msr_type", nlohmann::json::object());
    const nlohmann::json dim = j.value("dim_type", nlohmann::json::object());
    for (const auto& [k, v] : msr.items()) s.msr_type[std::stoul(k)] = v.get<std::string>();
    for (const auto& [k, v] : dim.items()) s.dim_type[std::stoul(k)] = v.get<std::string>();
    if (j.contains("primary_key") && !j["primary_key"].is_null()) s.primary_key = j["primary_key"].get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("sidecar: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(ErrorCode::MalformedInput, std::string("sidecar field index: ") + e.what());
  }
}

inline nlohmann::ordered_json sidecar_to_json(const TypeSidecar& s) {
  nlohmann::ordered_json j;
  j["table_id"] = s.table_id;
  j["source"] = s.source;
  j["msr_type"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.msr_type) j["msr_type"][std::to_string(k)] = v;
  j["dim_type"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.dim_type) j["dim_type"][std::to_string(k)] = v;
  j["primary_key"] = s.primary_key ? nlohmann::ordered_json(*s.primary_key) : nlohmann::ordered_json(nullptr);
  return j;
}

template <class F>
void for_each_json_line(std::string_view text, F&& f) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (detail::trim_view(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedInput, "line " + std::to_string(n) + ": " + e.what());
    }
    f(j);
  }
}

inline std::vector<Artifact> parse_artifacts(std::string_view jsonl) {
  std::vector<Artifact> out;
  for_each_json_line(jsonl, [&](const nlohmann::json& j) { out.push_back(artifact_from_json(j)); });
  return out;
}

namespace forge_detail {

inline nlohmann::ordered_json role_json(const std::vector<RoleLabel>& r) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (RoleLabel x : r) a.push_back(x == RoleLabel::Pos ? nlohmann::ordered_json("pos")
                                    : x == RoleLabel::Neg ? nlohmann::ordered_json("neg")
                                                          : nlohmann::ordered_json(nullptr));
  return a;
}

inline std::vector<RoleLabel> role_from_json(const nlohmann::json& a) {
  std::vector<RoleLabel> r;
  for (const auto& x : a) r.push_back(x.is_null() ? RoleLabel::Unlabeled : x == "pos" ? RoleLabel::Pos : RoleLabel::Neg);
  return r;
}

template <class Map>
nlohmann::ordered_json index_map_json(const Map& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

}  // namespace forge_detail

inline nlohmann::ordered_json example_to_json(const LabeledExample& e) {
  using namespace forge_detail;
  nlohmann::ordered_json j;
  j["table_id"] = e.table_id;
  j["source"] = e.source;
  j["schema"] = e.schema_hex();
  j["fingerprint"] = e.fingerprint;
  j["n_fields"] = e.n_fields;
  j["msr_dim"] = nlohmann::ordered_json::array();
  for (Dichotomy d : e.msr_dim)
    j["msr_dim"].push_back(d == Dichotomy::Measure     ? nlohmann::ordered_json(kMeasureLabel)
                           : d == Dichotomy::Dimension ? nlohmann::ordered_json(kDimensionLabel)
                                                       : nlohmann::ordered_json(nullptr));
  j["common_measure"] = role_json(e.common_measure);
  j["common_breakdown"] = role_json(e.common_breakdown);
  j["natural_key"] = role_json(e.natural_key);
  j["msr_pairs"] = nlohmann::ordered_json::array();
  for (const LabeledPair& p : e.msr_pairs) j["msr_pairs"].push_back({p.i, p.j, p.positive});
  j["agg_scores"] = nlohmann::ordered_json::object();
  for (const auto& [f, scores] : e.agg_scores) {
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [fn, v] : scores) s[fn] = v;
    j["agg_scores"][std::to_string(f)] = s;
  }
  j["msr_type"] = index_map_json(e.msr_type);
  j["dim_type"] = index_map_json(e.dim_type);
  j["chart_dims"] = e.chart_dims;
  j["split"] = split_name(e.split);
  j["conflicts"] = e.conflicts;
  j["warnings"] = e.warnings;
  return j;
}

inline LabeledExample example_from_json(const nlohmann::json& j) {
  using namespace forge_detail;
  try {
    LabeledExample e;
    e.table_id = j.at("table_id").get<std::string>();
    e.source = j.at("source").get<std::string>();
    e.fingerprint = j.at("fingerprint").get<std::string>();
    e.n_fields = j.at("n_fields").get<std::size_t>();
    for (const auto& d : j.at("msr_dim"))
      e.msr_dim.push_back(d.is_null() ? Dichotomy::Unlabeled : d == kMeasureLabel ? Dichotomy::Measure : Dichotomy::Dimension);
    e.common_measure = role_from_json(j.at("common_measure"));
    e.common_breakdown = role_from_json(j.at("common_breakdown"));
    e.natural_key = role_from_json(j.at("natural_key"));
    for (const auto& p : j.at("msr_pairs")) e.msr_pairs.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>(), p[2].get<bool>()});
    for (const auto& [f, scores] : j.at("agg_scores").items())
      for (const auto& [fn, v] : scores.items()) e.agg_scores[std::stoul(f)][fn] = v.get<int>();
    for (const auto& [f, v] : j.at("msr_type").items()) e.msr_type[std::stoul(f)] = v.get<std::string>();
    for (const auto& [f, v] : j.at("dim_type").items()) e.dim_type[std::stoul(f)] = v.get<std::string>();
    e.chart_dims = j.value("chart_dims", std::vector<std::size_t>{});
    e.split = split_from_name(j.value("split", std::string("unassigned")));
    e.conflicts = j.value("conflicts", std::vector<std::string>{});
    e.warnings = j.value("warnings", std::vector<std::string>{});
    const auto sized = [&](std::size_t n) { return n == e.n_fields; };
    if (!sized(e.msr_dim.size()) || !sized(e.common_measure.size()) || !sized(e.common_breakdown.size()) ||
        !sized(e.natural_key.size()))
      throw Error(ErrorCode::MalformedInput, "label vectors of '" + e.table_id + "' do not match n_fields");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::MalformedInput, std::string("labeled example: ") + ex.what());
  }
}

inline std::string examples_to_jsonl(const std::vector<LabeledExample>& examples) {
  std::string out;
  for (const LabeledExample& e : examples) out += example_to_json(e).dump() + "\n";
  return out;
}

inline std::vector<LabeledExample> examples_from_jsonl(std::string_view text) {
  std::vector<LabeledExample> out;
  for_each_json_line(text, [&](const nlohmann::json& j) { out.push_back(example_from_json(j)); });
  return out;
}

// ---------- dedup, down-sampling and splits ----------

struct SplitConfig {
  std::map<std::string, std::size_t> thresholds{{"chart", 11}, {"pivot", 2}, {"other", 1}};
  std::array<std::size_t, 3> ratios{7, 1, 2};
  std::uint64_t seed = 0;
};

struct SplitResult {
  std::vector<LabeledExample> examples;  // kept, with split assigned
  nlohmann::ordered_json manifest;
  std::size_t dropped = 0;
};

/// Largest-remainder apportionment of n items over the ratio weights.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<std::size_t, 3>& ratios) {
  const std::size_t total = ratios[0] + ratios[1] + ratios[2];
  if (total == 0) throw Error(ErrorCode::MalformedInput, "split ratios sum to zero");
  std::array<std::size_t, 3> count{};
  std::array<std::size_t, 3> rem{};
  std::size_t used = 0;
  for (int k = 0; k < 3; ++k) {
    count[k] = n * ratios[k] / total;
    rem[k] = n * ratios[k] % total;
    used += count[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++count[order[k % 3]];
  return count;
}

inline SplitResult dedup_downsample_split(const std::vector<LabeledExample>& examples, const SplitConfig& cfg) {
  // Group by schema, then by source within the schema.
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i)
    groups[examples[i].fingerprint][examples[i].source].push_back(i);

  SplitResult out;
  Rng sampler(Rng::mix(cfg.seed, 1));
  std::vector<std::size_t> kept;
  for (auto& [fp, by_source] : groups) {
    for (auto& [source, members] : by_source) {
      const auto it = cfg.thresholds.find(source);
      const std::size_t limit = it != cfg.thresholds.end() ? it->second : cfg.thresholds.at("other");
      std::sort(members.begin(), members.end(),
                [&](std::size_t a, std::size_t b) { return examples[a].table_id < examples[b].table_id; });
      sampler.shuffle(members);
      if (members.size() > limit) {
        out.dropped += members.size() - limit;
        members.resize(limit);
      }
      kept.insert(kept.end(), members.begin(), members.end());
    }
  }

  // Split assignment depends only on the schema set and the seed.
  std::vector<std::string> schemas;
  for (const auto& [fp, _] : groups) schemas.push_back(fp);
  Rng splitter(Rng::mix(cfg.seed, 2));
  splitter.shuffle(schemas);
  const auto counts = apportion(schemas.size(), cfg.ratios);
  std::map<std::string, Split> assignment;
  for (std::size_t k = 0; k < schemas.size(); ++k)
    assignment[schemas[k]] = k < counts[0] ? Split::Train : k < counts[0] + counts[1] ? Split::Valid : Split::Test;

  std::sort(kept.begin(), kept.end());
  for (std::size_t i : kept) {
    LabeledExample e = examples[i];
    e.split = assignment.at(e.fingerprint);
    out.examples.push_back(std::move(e));
  }

  nlohmann::ordered_json m;
  m["seed"] = cfg.seed;
  m["thresholds"] = cfg.thresholds;
  m["ratios"] = cfg.ratios;
  m["schemas"] = schemas.size();
  m["kept"] = out.examples.size();
  m["dropped"] = out.dropped;
  nlohmann::ordered_json splits = nlohmann::ordered_json::object();
  std::map<std::string, std::string> by_hex;
  for (const auto& [fp, s] : assignment) by_hex[SchemaFingerprint{fp}.hex()] = std::string(split_name(s));
  for (const auto& [hex, s] : by_hex) splits[hex] = s;
  m["splits"] = splits;
  out.manifest = m;
  return out;
}

/// Throws SplitLeakage when a schema has examples in more than one split.
inline void check_split_leakage(const std::vector<LabeledExample>& examples) {
  std::map<std::string, Split> seen;
  for (const LabeledExample& e : examples) {
    const auto [it, fresh] = seen.emplace(e.fingerprint, e.split);
    if (!fresh && it->second != e.split)
      throw Error(ErrorCode::SplitLeakage, "schema " + e.schema_hex() + " appears in both " +
                                               std::string(split_name(it->second)) + " and " +
                                               std::string(split_name(e.split)) + " (table '" + e.table_id + "')");
  }
}

/// Derive, merge and add pair negatives for every table with artifacts.
inline std::vector<LabeledExample> derive_labels(const std::vector<Table>& tables, const std::vector<Artifact>& artifacts,
                                                 const std::vector<TypeSidecar>& sidecars, const Vocabularies& vocab,
                                                 std::uint64_t seed) {
  std::map<std::string, const Table*> by_id;
  for (const Table& t : tables) by_id[t.id] = &t;
  std::map<std::string, std::vector<LabeledExample>> parts;
  std::vector<std::string> order;
  const auto table_for = [&](const std::string& id) -> const Table& {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::MalformedInput, "artifact references unknown table '" + id + "'");
    if (!parts.count(id)) order.push_back(id);
    return *it->second;
  };
  for (const Artifact& a : artifacts) {
    const Table& t = table_for(artifact_table_id(a));
    if (const auto* c = std::get_if<ChartArtifact>(&a)) parts[t.id].push_back(derive_from_chart(t, *c));
    else parts[t.id].push_back(derive_from_pivot(t, std::get<PivotArtifact>(a), vocab));
  }
  for (const TypeSidecar& s : sidecars) {
    const Table& t = table_for(s.table_id);
    parts[t.id].push_back(derive_from_sidecar(t, s, vocab));
  }
  std::vector<LabeledExample> out;
  for (const std::string& id : order) {
    const Table& t = *by_id.at(id);
    LabeledExample e = merge_examples(t, parts.at(id));
    add_pair_negatives(e, t, seed);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace anameta

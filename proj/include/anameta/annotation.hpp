#pragma once

// The per-table metadata record every predictor produces and every exporter
// consumes.

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "anameta/error.hpp"

namespace anameta {

enum class Task { MsrDim, NaturalKey, CommonBreakdown, CommonMeasure, MsrPair, MsrType, DimType, Agg };

inline constexpr std::array<Task, 8> kAllTasks = {Task::MsrDim,     Task::NaturalKey, Task::CommonBreakdown,
                                                  Task::CommonMeasure, Task::MsrPair, Task::MsrType,
                                                  Task::DimType,    Task::Agg};

constexpr std::string_view task_name(Task t) {
  switch (t) {
    case Task::MsrDim: return "msr_dim";
    case Task::NaturalKey: return "natural_key";
    case Task::CommonBreakdown: return "common_breakdown";
    case Task::CommonMeasure: return "common_measure";
    case Task::MsrPair: return "msr_pair";
    case Task::MsrType: return "msr_type";
    case Task::DimType: return "dim_type";
    case Task::Agg: return "agg";
  }
  return "";
}

inline Task task_from_name(std::string_view s) {
  for (Task t : kAllTasks)
    if (task_name(t) == s) return t;
  throw Error(ErrorCode::MalformedInput, "unknown task '" + std::string(s) + "'");
}

inline constexpr std::string_view kMeasureLabel = "MSR";
inline constexpr std::string_view kDimensionLabel = "DIM";
inline constexpr std::string_view kAnnotationSchema = "anameta.v1";

struct AggScore {
  std::string function;
  double score = 0.0;
  bool operator==(const AggScore&) const = default;
};

struct RoleScores {
  double key = 0.0;
  double breakdown = 0.0;
  double measure = 0.0;
  bool operator==(const RoleScores&) const = default;
};

struct FieldAnnotation {
  std::size_t index = 0;
  std::string header;
  std::string msr_dim;       // "MSR" or "DIM"
  double measure_prob = 0.0;  // confidence that the field is a measure
  RoleScores role_scores;
  std::optional<std::string> msr_type;
  std::optional<std::string> dim_type;
  std::vector<AggScore> agg_ranking;  // best first; only for measures

  bool is_measure() const { return msr_dim == kMeasureLabel; }
  bool operator==(const FieldAnnotation&) const = default;
};

struct PairAnnotation {
  std::size_t i = 0;
  std::size_t j = 0;
  double score = 0.0;
  bool operator==(const PairAnnotation&) const = default;
};

struct MetadataAnnotation {
  std::string table_id;
  std::string model;
  std::vector<FieldAnnotation> fields;
  std::vector<PairAnnotation> pairs;
  bool operator==(const MetadataAnnotation&) const = default;

  double role_score(Task role, std::size_t field) const {
    const RoleScores& r = fields.at(field).role_scores;
    switch (role) {
      case Task::NaturalKey: return r.key;
      case Task::CommonBreakdown: return r.breakdown;
      case Task::CommonMeasure: return r.measure;
      default: throw Error(ErrorCode::MalformedInput, "not a ranking task: " + std::string(task_name(role)));
    }
  }

  /// Field indices by descending role score, ties to the lower index.
  std::vector<std::size_t> ranking(Task role) const {
    std::vector<std::size_t> order(fields.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return role_score(role, a) > role_score(role, b); });
    return order;
  }

  double pair_score(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    for (const PairAnnotation& p : pairs)
      if (p.i == i && p.j == j) return p.score;
    return 0.0;
  }
};

inline nlohmann::ordered_json annotation_to_json(const MetadataAnnotation& a) {
  nlohmann::ordered_json j;
  j["schema"] = kAnnotationSchema;
  j["table_id"] = a.table_id;
  j["model"] = a.model;
  j["fields"] = nlohmann::ordered_json::array();
  for (const FieldAnnotation& f : a.fields) {
    nlohmann::ordered_json fj;
    fj["index"] = f.index;
    fj["header"] = f.header;
    fj["msr_dim"] = f.msr_dim;
    fj["measure_prob"] = f.measure_prob;
    fj["role_scores"] = {{"key", f.role_scores.key},
                         {"breakdown", f.role_scores.breakdown},
                         {"measure", f.role_scores.measure}};
    fj["msr_type"] = f.msr_type ? nlohmann::ordered_json(*f.msr_type) : nlohmann::ordered_json(nullptr);
    fj["dim_type"] = f.dim_type ? nlohmann::ordered_json(*f.dim_type) : nlohmann::ordered_json(nullptr);
    fj["agg_ranking"] = nlohmann::ordered_json::array();
    for (const AggScore& s : f.agg_ranking) fj["agg_ranking"].push_back({{"function", s.function}, {"score", s.score}});
    j["fields"].push_back(std::move(fj));
  }
  j["pairs"] = nlohmann::ordered_json::array();
  for (const PairAnnotation& p : a.pairs) j["pairs"].push_back({{"i", p.i}, {"j", p.j}, {"score", p.score}});
  return j;
}

inline MetadataAnnotation annotation_from_json(const nlohmann::ordered_json& j) {
  try {
    if (j.at("schema").get<std::string>() != kAnnotationSchema)
      throw Error(ErrorCode::MalformedInput, "unsupported annotation schema " + j.at("schema").dump());
    MetadataAnnotation a;
    a.table_id = j.at("table_id").get<std::string>();
    a.model = j.value("model", std::string());
    for (const auto& fj : j.at("fields")) {
      FieldAnnotation f;
      f.index = fj.at("index").get<std::size_t>();
      f.header = fj.at("header").get<std::string>();
      f.msr_dim = fj.at("msr_dim").get<std::string>();
      f.measure_prob = fj.value("measure_prob", f.is_measure() ? 1.0 : 0.0);
      const auto& r = fj.at("role_scores");
      f.role_scores = {r.at("key").get<double>(), r.at("breakdown").get<double>(), r.at("measure").get<double>()};
      if (fj.contains("msr_type") && !fj["msr_type"].is_null()) f.msr_type = fj["msr_type"].get<std::string>();
      if (fj.contains("dim_type") && !fj["dim_type"].is_null()) f.dim_type = fj["dim_type"].get<std::string>();
      for (const auto& s : fj.value("agg_ranking", nlohmann::ordered_json::array()))
        f.agg_ranking.push_back({s.at("function").get<std::string>(), s.at("score").get<double>()});
      a.fields.push_back(std::move(f));
    }
    for (const auto& p : j.value("pairs", nlohmann::ordered_json::array()))
      a.pairs.push_back({p.at("i").get<std::size_t>(), p.at("j").get<std::size_t>(), p.at("score").get<double>()});
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("annotation: ") + e.what());
  }
}

}  // namespace anameta

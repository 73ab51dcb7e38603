#pragma once

// Per-field data statistics (31 features) and categorical features (6 slots).
// Numeric statistics use Number cells only; string statistics use the source
// text of non-empty cells. Degenerate inputs (fewer than two usable values)
// produce 0 for the affected features.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "anameta/table_core.hpp"

namespace anameta {

enum class Stat : std::size_t {
  // progression
  ChangeRate,
  PartialOrdered,
  OrderedConfidence,
  ArithmeticProgressionConfidence,
  GeometricProgressionConfidence,
  // string
  AggrPercentFormatted,
  MedianLen,
  LengthStdDev,
  AvgLogLength,
  CommonPrefix,
  CommonSuffix,
  Cardinality,
  AbsoluteCardinality,
  // number range
  Aggr01Ranged,
  Aggr0100Ranged,
  AggrInteger,
  AggrNegative,
  SumIn01,
  SumIn0100,
  // distribution
  Benford,
  Range,
  NumRows,
  KeyEntropy,
  CharEntropy,
  Variance,
  Cov,
  Spread,
  Major,
  Skewness,
  Kurtosis,
  Gini,
};

inline constexpr std::size_t kNumStats = 31;

inline constexpr std::array<std::string_view, kNumStats> kStatNames = {
    "ChangeRate",   "PartialOrdered",  "OrderedConfidence", "ArithmeticProgressionConfidence",
    "GeometricProgressionConfidence",  "AggrPercentFormatted", "medianLen", "LengthStdDev",
    "AvgLogLength", "CommonPrefix",    "CommonSuffix",      "Cardinality",
    "AbsoluteCardinality", "Aggr01Ranged", "Aggr0100Ranged", "AggrInteger",
    "AggrNegative", "SumIn01",         "SumIn0100",         "Benford",
    "Range",        "NumRows",         "KeyEntropy",        "CharEntropy",
    "Variance",     "Cov",             "Spread",            "Major",
    "Skewness",     "Kurtosis",        "Gini"};

struct FeatureVector {
  std::array<double, kNumStats> values{};

  double& operator[](Stat s) { return values[static_cast<std::size_t>(s)]; }
  double operator[](Stat s) const { return values[static_cast<std::size_t>(s)]; }
  bool operator==(const FeatureVector&) const = default;
};

/// Features whose value is a share or indicator and so always lies in [0, 1].
inline constexpr std::array<Stat, 17> kRatioStats = {
    Stat::ChangeRate,     Stat::PartialOrdered, Stat::OrderedConfidence, Stat::ArithmeticProgressionConfidence,
    Stat::GeometricProgressionConfidence,       Stat::AggrPercentFormatted, Stat::CommonPrefix, Stat::CommonSuffix,
    Stat::Cardinality,    Stat::Aggr01Ranged,   Stat::Aggr0100Ranged,    Stat::AggrInteger,
    Stat::AggrNegative,   Stat::SumIn01,        Stat::SumIn0100,         Stat::Major,
    Stat::Gini};

struct FieldCategories {
  FieldType field_type = FieldType::Unknown;
  bool is_percent = false;
  bool is_currency = false;
  bool has_year = false;
  bool has_month = false;
  bool has_day = false;
  bool operator==(const FieldCategories&) const = default;
};

inline constexpr std::size_t kNumCategorySlots = 6;

namespace stats_detail {

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

inline std::vector<std::string_view> utf8_chars(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i + 1;
    while (j < s.size() && (static_cast<unsigned char>(s[j]) & 0xC0) == 0x80) ++j;
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double population_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// 1 - std(steps)/mean|steps|, clamped; 1 when every step is identical.
inline double progression_confidence(const std::vector<double>& steps) {
  if (steps.size() < 2) return 0.0;
  const double sd = population_std(steps);
  if (sd == 0.0) return 1.0;
  double mean_abs = 0.0;
  for (double s : steps) mean_abs += std::abs(s);
  mean_abs /= static_cast<double>(steps.size());
  if (mean_abs == 0.0) return 0.0;
  return std::clamp(1.0 - sd / mean_abs, 0.0, 1.0);
}

inline double entropy(const std::unordered_map<std::string, std::size_t>& counts, std::size_t total) {
  if (total == 0) return 0.0;
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

inline int first_significant_digit(double x) {
  x = std::abs(x);
  if (x == 0.0 || !std::isfinite(x)) return 0;
  while (x >= 10.0) x /= 10.0;
  while (x < 1.0) x *= 10.0;
  return std::clamp(static_cast<int>(x), 1, 9);
}

inline bool has_percent_marker(const CellValue& c) {
  if (const NumberCell* n = as_number(c)) return n->percent;
  const std::string& s = cell_text(c);
  return !s.empty() && s.back() == '%';
}

inline bool has_currency_marker(const CellValue& c) {
  if (const NumberCell* n = as_number(c)) return n->currency;
  std::string_view s = cell_text(c);
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) s.remove_prefix(1);
  for (std::string_view sym : kCurrencyPrefixes)
    if (s.starts_with(sym)) return true;
  return false;
}

}  // namespace stats_detail

/// Gini coefficient over absolute values (0 for constant or all-zero input).
inline double gini_coefficient(std::vector<double> xs) {
  if (xs.size() < 2) return 0.0;
  for (double& x : xs) x = std::abs(x);
  std::sort(xs.begin(), xs.end());
  const double total = std::accumulate(xs.begin(), xs.end(), 0.0);
  if (total == 0.0) return 0.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) weighted += static_cast<double>(i + 1) * xs[i];
  const double n = static_cast<double>(xs.size());
  return std::clamp((2.0 * weighted) / (n * total) - (n + 1.0) / n, 0.0, 1.0);
}

/// Benford L1 distance over the first significant digits of non-zero values.
inline double benford_distance(const std::vector<double>& xs) {
  std::array<double, 10> hist{};
  std::size_t n = 0;
  for (double x : xs) {
    const int d = stats_detail::first_significant_digit(x);
    if (d == 0) continue;
    hist[static_cast<std::size_t>(d)] += 1.0;
    ++n;
  }
  if (n == 0) return 0.0;
  double dist = 0.0;
  for (int d = 1; d <= 9; ++d)
    dist += std::abs(hist[static_cast<std::size_t>(d)] / static_cast<double>(n) - std::log10(1.0 + 1.0 / d));
  return dist;
}

inline FeatureVector extract_statistics(const Field& field) {
  using namespace stats_detail;
  FeatureVector fv;

  std::vector<std::string_view> texts;
  std::vector<double> nums;
  std::size_t n_percent = 0;
  for (const CellValue& c : field.cells) {
    if (is_empty(c)) continue;
    texts.push_back(cell_text(c));
    if (has_percent_marker(c)) ++n_percent;
    if (const NumberCell* n = as_number(c)) nums.push_back(n->value);
  }
  const auto n_text = static_cast<double>(texts.size());
  const auto n_num = static_cast<double>(nums.size());

  // progression
  if (texts.size() >= 2) {
    std::size_t changes = 0;
    for (std::size_t i = 1; i < texts.size(); ++i) changes += texts[i] != texts[i - 1];
    fv[Stat::ChangeRate] = static_cast<double>(changes) / static_cast<double>(texts.size() - 1);
  }
  if (nums.size() >= 2) {
    std::size_t up = 0, down = 0;
    for (std::size_t i = 1; i < nums.size(); ++i) {
      up += nums[i] >= nums[i - 1];
      down += nums[i] <= nums[i - 1];
    }
    const double pairs = static_cast<double>(nums.size() - 1);
    const double partial = std::max(up, down) / pairs;
    fv[Stat::PartialOrdered] = partial;
    fv[Stat::OrderedConfidence] = partial == 1.0 ? 1.0 : partial * partial;

    std::vector<double> diffs;
    for (std::size_t i = 1; i < nums.size(); ++i) diffs.push_back(nums[i] - nums[i - 1]);
    fv[Stat::ArithmeticProgressionConfidence] = progression_confidence(diffs);

    const bool same_sign_nonzero = std::all_of(nums.begin(), nums.end(), [](double x) { return x > 0; }) ||
                                   std::all_of(nums.begin(), nums.end(), [](double x) { return x < 0; });
    if (same_sign_nonzero) {
      std::vector<double> ratios;
      for (std::size_t i = 1; i < nums.size(); ++i) ratios.push_back(nums[i] / nums[i - 1]);
      fv[Stat::GeometricProgressionConfidence] = progression_confidence(ratios);
    }
  }

  // string
  if (!texts.empty()) {
    fv[Stat::AggrPercentFormatted] = static_cast<double>(n_percent) / n_text;
    std::vector<double> lens;
    for (std::string_view t : texts) lens.push_back(static_cast<double>(utf8_length(t)));
    const double med = median(lens);
    fv[Stat::MedianLen] = med;
    fv[Stat::LengthStdDev] = population_std(lens);
    double log_len = 0.0;
    for (double l : lens) log_len += std::log1p(l);
    fv[Stat::AvgLogLength] = log_len / n_text;

    if (texts.size() >= 2 && med > 0.0) {
      std::size_t prefix = texts[0].size(), suffix = texts[0].size();
      for (std::string_view t : texts) {
        std::size_t p = 0;
        while (p < prefix && p < t.size() && t[p] == texts[0][p]) ++p;
        prefix = p;
        std::size_t s = 0;
        while (s < suffix && s < t.size() && t[t.size() - 1 - s] == texts[0][texts[0].size() - 1 - s]) ++s;
        suffix = s;
      }
      const double prefix_chars = static_cast<double>(utf8_length(texts[0].substr(0, prefix)));
      const double suffix_chars = static_cast<double>(utf8_length(texts[0].substr(texts[0].size() - suffix)));
      fv[Stat::CommonPrefix] = std::clamp(prefix_chars / med, 0.0, 1.0);
      fv[Stat::CommonSuffix] = std::clamp(suffix_chars / med, 0.0, 1.0);
    }

    std::unordered_map<std::string, std::size_t> counts;
    for (std::string_view t : texts) ++counts[std::string(t)];
    fv[Stat::Cardinality] = static_cast<double>(counts.size()) / n_text;
    fv[Stat::AbsoluteCardinality] = static_cast<double>(counts.size());
    std::size_t modal = 0;
    for (const auto& [_, c] : counts) modal = std::max(modal, c);
    fv[Stat::Major] = static_cast<double>(modal) / n_text;
    fv[Stat::KeyEntropy] = entropy(counts, texts.size());

    std::unordered_map<std::string, std::size_t> chars;
    std::size_t n_chars = 0;
    for (std::string_view t : texts)
      for (std::string_view ch : utf8_chars(t)) {
        ++chars[std::string(ch)];
        ++n_chars;
      }
    fv[Stat::CharEntropy] = entropy(chars, n_chars);
  }

  // number range
  if (!nums.empty()) {
    std::size_t in01 = 0, in0100 = 0, integer = 0, negative = 0;
    for (double x : nums) {
      in01 += x >= 0.0 && x <= 1.0;
      in0100 += x >= 0.0 && x <= 100.0;
      integer += x == std::floor(x);
      negative += x < 0.0;
    }
    fv[Stat::Aggr01Ranged] = static_cast<double>(in01) / n_num;
    fv[Stat::Aggr0100Ranged] = static_cast<double>(in0100) / n_num;
    fv[Stat::AggrInteger] = static_cast<double>(integer) / n_num;
    fv[Stat::AggrNegative] = static_cast<double>(negative) / n_num;
    constexpr double eps = 1e-6;
    const double sum = std::accumulate(nums.begin(), nums.end(), 0.0);
    fv[Stat::SumIn01] = (sum >= -eps && sum <= 1.0 + eps) ? 1.0 : 0.0;
    fv[Stat::SumIn0100] = std::abs(sum - 100.0) <= eps ? 1.0 : 0.0;
    fv[Stat::Benford] = benford_distance(nums);
  }

  // distribution
  fv[Stat::NumRows] = static_cast<double>(std::max<std::size_t>(field.cells.size(), 1));
  double range = 0.0;
  if (nums.size() >= 2) {
    const auto [lo, hi] = std::minmax_element(nums.begin(), nums.end());
    range = *hi - *lo;
    fv[Stat::Range] = range;

    const double m = mean(nums);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double x : nums) {
      const double d = x - m;
      m2 += d * d;
      m3 += d * d * d;
      m4 += d * d * d * d;
    }
    const double sample_var = m2 / (n_num - 1.0);
    fv[Stat::Variance] = sample_var;
    fv[Stat::Cov] = m == 0.0 ? 0.0 : std::sqrt(sample_var) / std::abs(m);
    m2 /= n_num;
    m3 /= n_num;
    m4 /= n_num;
    if (m2 > 0.0) {
      fv[Stat::Skewness] = m3 / std::pow(m2, 1.5);
      fv[Stat::Kurtosis] = m4 / (m2 * m2) - 3.0;
    }
    fv[Stat::Gini] = gini_coefficient(nums);
  }
  const bool numeric = field.field_type == FieldType::Decimal || field.field_type == FieldType::Year;
  fv[Stat::Spread] = numeric ? fv[Stat::Cardinality] / (1.0 + range) : fv[Stat::Cardinality];
  return fv;
}

inline FieldCategories extract_categories(const Field& field) {
  using namespace stats_detail;
  FieldCategories cat;
  cat.field_type = field.field_type;
  std::size_t n = 0, pct = 0, cur = 0, year = 0, month = 0, day = 0;
  for (const CellValue& c : field.cells) {
    if (is_empty(c)) continue;
    ++n;
    pct += has_percent_marker(c);
    cur += has_currency_marker(c);
    if (const DateTimeCell* d = as_datetime(c)) {
      ++year;
      month += d->month != 0;
      day += d->day != 0;
    }
  }
  if (n == 0) return cat;
  const auto share = [n](std::size_t k) { return static_cast<double>(k) / static_cast<double>(n) > 0.5; };
  cat.is_percent = share(pct);
  cat.is_currency = share(cur);
  cat.has_year = field.field_type == FieldType::Year || share(year);
  cat.has_month = share(month);
  cat.has_day = share(day);
  return cat;
}

/// How normalize_features treats each statistic.
enum class NormRule { Bounded, Squash, LogSquash };

inline constexpr NormRule norm_rule(Stat s) {
  switch (s) {
    case Stat::NumRows:
    case Stat::AbsoluteCardinality:
    case Stat::Range:
    case Stat::Variance:
    case Stat::MedianLen:
    case Stat::LengthStdDev:
      return NormRule::LogSquash;
    case Stat::AvgLogLength:
    case Stat::KeyEntropy:
    case Stat::CharEntropy:
    case Stat::Cov:
    case Stat::Spread:
    case Stat::Skewness:
    case Stat::Kurtosis:
    case Stat::Benford:
      return NormRule::Squash;
    default:
      return NormRule::Bounded;
  }
}

inline double squash(double x) { return x / (1.0 + std::abs(x)); }

inline double log_squash(double x) {
  const double y = std::copysign(std::log1p(std::abs(x)), x);
  return squash(y);
}

/// Map unbounded statistics into (-1, 1); bounded ones pass through.
inline FeatureVector normalize_features(const FeatureVector& fv) {
  FeatureVector out = fv;
  for (std::size_t i = 0; i < kNumStats; ++i) {
    switch (norm_rule(static_cast<Stat>(i))) {
      case NormRule::Bounded: break;
      case NormRule::Squash: out.values[i] = squash(fv.values[i]); break;
      case NormRule::LogSquash: out.values[i] = log_squash(fv.values[i]); break;
    }
  }
  return out;
}

// ---------- flat layouts ----------

/// Canonical 41-slot layout: 31 statistics, FieldType one-hot (5), then the
/// five boolean categories.
inline std::vector<std::string> feature_layout() {
  std::vector<std::string> names(kStatNames.begin(), kStatNames.end());
  for (FieldType t : kAllFieldTypes) names.push_back("FieldType=" + std::string(field_type_name(t)));
  for (const char* b : {"IsPercent", "IsCurrency", "HasYear", "HasMonth", "HasDay"}) names.emplace_back(b);
  return names;
}

inline constexpr std::size_t kFeatureLayoutWidth = kNumStats + 5 + 5;

inline std::vector<double> flatten_features(const FeatureVector& fv, const FieldCategories& cat) {
  std::vector<double> row(fv.values.begin(), fv.values.end());
  for (FieldType t : kAllFieldTypes) row.push_back(cat.field_type == t ? 1.0 : 0.0);
  for (bool b : {cat.is_percent, cat.is_currency, cat.has_year, cat.has_month, cat.has_day}) row.push_back(b ? 1.0 : 0.0);
  return row;
}

inline std::vector<double> field_feature_row(const Field& f) {
  return flatten_features(extract_statistics(f), extract_categories(f));
}

inline nlohmann::ordered_json features_to_json(const FeatureVector& fv) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < kNumStats; ++i) j[std::string(kStatNames[i])] = fv.values[i];
  return j;
}

inline nlohmann::ordered_json categories_to_json(const FieldCategories& c) {
  nlohmann::ordered_json j;
  j["FieldType"] = field_type_name(c.field_type);
  j["IsPercent"] = c.is_percent;
  j["IsCurrency"] = c.is_currency;
  j["HasYear"] = c.has_year;
  j["HasMonth"] = c.has_month;
  j["HasDay"] = c.has_day;
  return j;
}

}  // namespace anameta

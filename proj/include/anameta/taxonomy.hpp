#pragma once

// Measure-type taxonomy with its unit lexicon, the dimension-type registry,
// the aggregation-function vocabulary and property-to-measure-type mappings.
// Registries are immutable once constructed.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "anameta/builtin_vocab.hpp"
#include "anameta/error.hpp"
#include "anameta/table_core.hpp"

namespace anameta {

enum class MeasureCategory { Dimensionless, Money, DataFileSize, Time, Scientific, Others };

inline MeasureCategory measure_category_from_name(std::string_view s) {
  if (s == "Dimensionless") return MeasureCategory::Dimensionless;
  if (s == "Money") return MeasureCategory::Money;
  if (s == "DataFileSize") return MeasureCategory::DataFileSize;
  if (s == "Time") return MeasureCategory::Time;
  if (s == "Scientific") return MeasureCategory::Scientific;
  if (s == "Others") return MeasureCategory::Others;
  throw Error(ErrorCode::MalformedInput, "unknown measure category '" + std::string(s) + "'");
}

struct MeasureType {
  std::string name;
  MeasureCategory category = MeasureCategory::Others;
  std::vector<std::string> units;
  std::vector<std::string> example_concepts;
};

struct DimensionType {
  std::string name;
  std::string parent;
};

struct UnitMatch {
  std::string unit;
  const MeasureType* measure_type = nullptr;
};

inline constexpr std::string_view kOthersType = "Others";
inline constexpr std::string_view kMajorityDimensionType = "sports.sports_team";
inline constexpr std::string_view kMajorityMeasureType = "Count";
inline constexpr std::string_view kMajorityAggFunction = "SUM";

namespace taxonomy_detail {

inline bool ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
inline bool ascii_alnum(char c) { return ascii_alpha(c) || (c >= '0' && c <= '9'); }
inline char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

inline std::string to_upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

/// Alphabetic units are plain ASCII words (letters, digits, '/', ' ') and
/// match case-insensitively; anything else is a symbol and matches exactly.
inline bool is_alphabetic_unit(std::string_view u) {
  bool letter = false;
  for (char c : u) {
    if (ascii_alpha(c)) letter = true;
    else if (!(c >= '0' && c <= '9') && c != '/' && c != ' ') return false;
  }
  return letter;
}

inline std::string canonical_unit(std::string_view u) {
  std::string s(u);
  if (is_alphabetic_unit(u))
    for (char& c : s) c = lower(c);
  return s;
}

inline std::vector<std::string> read_lines(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto t = detail::trim_view(line);
    if (t.empty() || t.front() == '#') continue;
    out.emplace_back(t);
  }
  return out;
}

}  // namespace taxonomy_detail

/// Paths to user-supplied vocabulary files. Unset entries use the built-in data.
struct VocabularyPaths {
  std::optional<std::filesystem::path> measure_types;
  std::optional<std::filesystem::path> dimension_types;
  std::optional<std::filesystem::path> agg_functions;
  std::optional<std::filesystem::path> property_map;
};

class Vocabularies {
 public:
  Vocabularies() = default;

  static Vocabularies from_text(std::string_view measure_json, std::string_view dimension_lines,
                                std::string_view agg_lines, std::string_view property_json) {
    Vocabularies v;
    v.load_measure_types(measure_json);
    v.load_dimension_types(dimension_lines);
    v.load_agg_functions(agg_lines);
    v.load_property_map(property_json);
    v.build_lexicon();
    v.loaded_ = true;
    return v;
  }

  static const Vocabularies& builtin() {
    static const Vocabularies v = from_text(builtin::kBuiltinMeasureTypes, builtin::kBuiltinDimensionTypes,
                                            builtin::kBuiltinAggFunctions, builtin::kBuiltinPropertyMap);
    return v;
  }

  bool loaded() const { return loaded_; }

  const std::vector<MeasureType>& measure_types() const { return measure_types_; }
  const std::vector<DimensionType>& dimension_types() const { return dimension_types_; }
  const std::vector<std::string>& agg_functions() const { return agg_functions_; }
  const std::map<std::string, std::string>& property_map() const { return property_map_; }

  /// Measure-type class labels for classifiers: every named type except Others.
  std::vector<std::string> measure_type_labels() const {
    std::vector<std::string> out;
    for (const MeasureType& t : measure_types_)
      if (t.name != kOthersType) out.push_back(t.name);
    return out;
  }
  std::vector<std::string> dimension_type_labels() const {
    std::vector<std::string> out;
    for (const DimensionType& t : dimension_types_) out.push_back(t.name);
    return out;
  }

  const MeasureType* find_measure_type(std::string_view name) const {
    for (const MeasureType& t : measure_types_)
      if (t.name == name) return &t;
    return nullptr;
  }
  bool has_dimension_type(std::string_view name) const {
    return std::any_of(dimension_types_.begin(), dimension_types_.end(),
                       [&](const DimensionType& d) { return d.name == name; });
  }
  std::optional<std::size_t> agg_index(std::string_view name) const {
    const std::string up = taxonomy_detail::to_upper(std::string(name));
    for (std::size_t i = 0; i < agg_functions_.size(); ++i)
      if (agg_functions_[i] == up) return i;
    return std::nullopt;
  }
  template <class Labels>
  static std::optional<std::size_t> index_of(const Labels& labels, std::string_view name) {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == name) return i;
    return std::nullopt;
  }

  /// Longest unit mention in a header or cell string. Alphabetic units must
  /// not touch a neighbouring letter (a following digit also blocks them).
  /// Ties prefer symbols, then the rightmost mention.
  std::optional<UnitMatch> detect_unit(std::string_view text) const {
    using namespace taxonomy_detail;
    const Lexeme* best = nullptr;
    std::size_t best_pos = 0;
    for (std::size_t pos = 0; pos < text.size(); ++pos) {
      if (pos > 0 && (static_cast<unsigned char>(text[pos]) & 0xC0) == 0x80) continue;
      for (const Lexeme& lx : lexicon_) {
        const std::string& u = lx.text;
        if (pos + u.size() > text.size()) continue;
        bool eq = true;
        for (std::size_t k = 0; k < u.size() && eq; ++k)
          eq = lx.alphabetic ? lower(text[pos + k]) == lower(u[k]) : text[pos + k] == u[k];
        if (!eq) continue;
        if (ascii_alpha(u.front()) && pos > 0 && ascii_alpha(text[pos - 1])) continue;
        const std::size_t end = pos + u.size();
        if (ascii_alnum(u.back()) && end < text.size() && ascii_alnum(text[end])) continue;
        const bool better = !best || u.size() > best->text.size() ||
                            (u.size() == best->text.size() && (!lx.alphabetic && best->alphabetic)) ||
                            (u.size() == best->text.size() && lx.alphabetic == best->alphabetic && pos >= best_pos);
        if (better) {
          best = &lx;
          best_pos = pos;
        }
      }
    }
    if (!best) return std::nullopt;
    return UnitMatch{best->text, &measure_types_[best->type_index]};
  }

  /// Property IRI (dbo:/wdt: prefixed or full DBpedia/Wikidata URI) to
  /// measure type; unmapped properties fall into Others.
  const MeasureType& map_property_to_measure_type(std::string_view iri) const {
    std::string key(iri);
    for (auto [full, prefix] : {std::pair{"http://dbpedia.org/ontology/", "dbo:"},
                                std::pair{"http://www.wikidata.org/prop/direct/", "wdt:"},
                                std::pair{"http://www.wikidata.org/entity/", "wdt:"}}) {
      if (key.starts_with(full)) key = prefix + key.substr(std::string_view(full).size());
    }
    const auto it = property_map_.find(key);
    const MeasureType* t = it == property_map_.end() ? nullptr : find_measure_type(it->second);
    if (!t) t = find_measure_type(kOthersType);
    return *t;
  }

  struct Lexeme {
    std::string text;
    std::string canonical;
    std::size_t type_index = 0;
    bool alphabetic = false;
  };
  const std::vector<Lexeme>& lexicon() const { return lexicon_; }

 private:
  void load_measure_types(std::string_view text) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedInput, std::string("measure types: ") + e.what());
    }
    if (!doc.is_array() || doc.empty()) throw Error(ErrorCode::EmptyVocabulary, "measure type list is empty");
    std::set<std::string> seen;
    for (const auto& j : doc) {
      MeasureType t;
      t.name = j.at("name").get<std::string>();
      t.category = measure_category_from_name(j.at("category").get<std::string>());
      t.units = j.value("units", std::vector<std::string>{});
      t.example_concepts = j.value("examples", std::vector<std::string>{});
      if (!seen.insert(t.name).second) throw Error(ErrorCode::DuplicateType, "measure type '" + t.name + "'");
      if (t.category == MeasureCategory::Dimensionless && !t.units.empty())
        throw Error(ErrorCode::MalformedInput, "dimensionless type '" + t.name + "' lists units");
      if (t.category != MeasureCategory::Dimensionless && t.category != MeasureCategory::Others && t.units.empty())
        throw Error(ErrorCode::MalformedInput, "type '" + t.name + "' has no units");
      measure_types_.push_back(std::move(t));
    }
    if (!find_measure_type(kOthersType)) {
      MeasureType others;
      others.name = std::string(kOthersType);
      measure_types_.push_back(std::move(others));
    }
  }

  void load_dimension_types(std::string_view text) {
    std::set<std::string> seen;
    for (std::string& name : taxonomy_detail::read_lines(text)) {
      if (!seen.insert(name).second) throw Error(ErrorCode::DuplicateType, "dimension type '" + name + "'");
      DimensionType d;
      d.parent = name.substr(0, name.find('.'));
      d.name = std::move(name);
      dimension_types_.push_back(std::move(d));
    }
    if (dimension_types_.empty()) throw Error(ErrorCode::EmptyVocabulary, "dimension type registry is empty");
  }

  void load_agg_functions(std::string_view text) {
    std::set<std::string> seen;
    for (std::string& name : taxonomy_detail::read_lines(text)) {
      std::string up = taxonomy_detail::to_upper(name);
      if (!seen.insert(up).second) throw Error(ErrorCode::DuplicateType, "aggregation function '" + up + "'");
      agg_functions_.push_back(std::move(up));
    }
    if (agg_functions_.empty()) throw Error(ErrorCode::EmptyVocabulary, "aggregation vocabulary is empty");
  }

  void load_property_map(std::string_view text) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MissingMapping, std::string("property map: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::MissingMapping, "property map must be a JSON object");
    for (const auto& [iri, type] : doc.items()) {
      const std::string name = type.get<std::string>();
      if (!find_measure_type(name))
        throw Error(ErrorCode::MalformedInput, "property '" + iri + "' maps to unknown type '" + name + "'");
      property_map_[iri] = name;
    }
  }

  void build_lexicon() {
    std::map<std::string, std::string> owner;
    for (std::size_t ti = 0; ti < measure_types_.size(); ++ti) {
      for (const std::string& u : measure_types_[ti].units) {
        Lexeme lx{u, taxonomy_detail::canonical_unit(u), ti, taxonomy_detail::is_alphabetic_unit(u)};
        const auto [it, fresh] = owner.emplace(lx.canonical, measure_types_[ti].name);
        if (!fresh) throw Error(ErrorCode::DuplicateType, "unit '" + u + "' listed for " + it->second + " and " +
                                                              measure_types_[ti].name);
        lexicon_.push_back(std::move(lx));
      }
    }
  }

  std::vector<MeasureType> measure_types_;
  std::vector<DimensionType> dimension_types_;
  std::vector<std::string> agg_functions_;
  std::map<std::string, std::string> property_map_;
  std::vector<Lexeme> lexicon_;
  bool loaded_ = false;
};

inline std::string read_vocab_file(const std::filesystem::path& p, ErrorCode missing = ErrorCode::Io) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(missing, "cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Load registries; unset paths fall back to the built-in files.
inline Vocabularies load_vocabularies(const VocabularyPaths& paths) {
  const auto pick = [](const std::optional<std::filesystem::path>& p, std::string_view fallback,
                       ErrorCode missing = ErrorCode::Io) {
    return p ? read_vocab_file(*p, missing) : std::string(fallback);
  };
  return Vocabularies::from_text(pick(paths.measure_types, builtin::kBuiltinMeasureTypes),
                                 pick(paths.dimension_types, builtin::kBuiltinDimensionTypes),
                                 pick(paths.agg_functions, builtin::kBuiltinAggFunctions),
                                 pick(paths.property_map, builtin::kBuiltinPropertyMap, ErrorCode::MissingMapping));
}

inline std::optional<UnitMatch> detect_unit(std::string_view text) { return Vocabularies::builtin().detect_unit(text); }

}  // namespace anameta

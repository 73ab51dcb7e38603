#pragma once

// Downstream views of an annotation: bracket-tagged header sentences,
// question/answer prompts over a markdown rendering of the table, and the
// metadata for column-embedding files.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "anameta/annotation.hpp"
#include "anameta/label_forge.hpp"
#include "anameta/table_core.hpp"
#include "anameta/taxonomy.hpp"

namespace anameta {

// ---------- sentences ----------

inline constexpr double kRoleTagThreshold = 0.5;

/// "AVERAGE" → "Average", "count distinct" → "Count Distinct".
inline std::string title_case(std::string_view s) {
  std::string out(s);
  bool start = true;
  for (char& c : out) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalpha(u)) {
      c = static_cast<char>(start ? std::toupper(u) : std::tolower(u));
      start = false;
    } else {
      start = c == ' ' || c == '_' || c == '-';
    }
  }
  return out;
}

/// Tags in order: dichotomy, roles at or above the threshold, type, top aggregation.
inline std::vector<std::string> sentence_tags(const FieldAnnotation& f, double threshold = kRoleTagThreshold) {
  std::vector<std::string> tags;
  tags.emplace_back(f.is_measure() ? "Measure" : "Dimension");
  if (f.role_scores.key >= threshold) tags.emplace_back("Natural Key");
  if (f.role_scores.breakdown >= threshold) tags.emplace_back("Common Breakdown");
  if (f.role_scores.measure >= threshold) tags.emplace_back("Common Measure");
  const auto& type = f.is_measure() ? f.msr_type : f.dim_type;
  if (type) tags.push_back(*type);
  if (f.is_measure() && !f.agg_ranking.empty()) tags.push_back(title_case(f.agg_ranking.front().function));
  return tags;
}

/// "Price [Measure] [Money] [Sum]"
inline std::string field_sentence(const std::string& header, const FieldAnnotation& f, double threshold = kRoleTagThreshold) {
  std::string s = header;
  for (const std::string& tag : sentence_tags(f, threshold)) s += " [" + tag + "]";
  return s;
}

/// One sentence per field, newline terminated.
inline std::string export_sentences(const MetadataAnnotation& a, const Table& t, double threshold = kRoleTagThreshold) {
  if (a.fields.size() != t.fields.size())
    throw Error(ErrorCode::ShapeMismatch, "annotation has " + std::to_string(a.fields.size()) + " fields, table '" + t.id +
                                              "' has " + std::to_string(t.fields.size()));
  std::string out;
  for (const Field& f : t.fields) out += field_sentence(f.header, a.fields[f.index], threshold) + "\n";
  return out;
}

struct ParsedSentence {
  std::string header;
  std::vector<std::string> tags;
  bool operator==(const ParsedSentence&) const = default;
};

/// Peels " [tag]" groups off the end, so headers may contain brackets
/// as long as they do not end in one.
inline ParsedSentence parse_sentence(std::string_view line) {
  ParsedSentence p;
  std::string_view rest = line;
  while (rest.size() >= 3 && rest.back() == ']') {
    const std::size_t open = rest.rfind(" [");
    if (open == std::string_view::npos) break;
    p.tags.insert(p.tags.begin(), std::string(rest.substr(open + 2, rest.size() - open - 3)));
    rest = rest.substr(0, open);
  }
  p.header = std::string(rest);
  return p;
}

// ---------- question / answer prompts ----------

/// English ordinal words: first, second, …, twenty-first, …, one hundred and first.
inline std::string ordinal_word(std::size_t n) {
  static const char* ones[] = {"", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
  static const char* ones_th[] = {"", "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth"};
  static const char* teens_th[] = {"tenth", "eleventh", "twelfth", "thirteenth", "fourteenth",
                                   "fifteenth", "sixteenth", "seventeenth", "eighteenth", "nineteenth"};
  static const char* tens[] = {"", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"};
  static const char* tens_th[] = {"", "", "twentieth", "thirtieth", "fortieth", "fiftieth", "sixtieth", "seventieth", "eightieth", "ninetieth"};
  if (n == 0 || n >= 1000) return std::to_string(n) + "th";
  const auto below_hundred = [&](std::size_t k) -> std::string {
    if (k < 10) return ones_th[k];
    if (k < 20) return teens_th[k - 10];
    if (k % 10 == 0) return tens_th[k / 10];
    return std::string(tens[k / 10]) + "-" + ones_th[k % 10];
  };
  if (n < 100) return below_hundred(n);
  const std::string h = std::string(ones[n / 100]) + " hundred";
  return n % 100 == 0 ? h + "th" : h + " and " + below_hundred(n % 100);
}

inline std::string markdown_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out;
}

/// Header row, separator, then one line per record.
inline std::string markdown_table(const Table& t, std::size_t max_rows = 0) {
  std::string out = "|";
  for (const Field& f : t.fields) out += " " + markdown_escape(f.header) + " |";
  out += "\n|";
  for (std::size_t i = 0; i < t.fields.size(); ++i) out += " --- |";
  out += "\n";
  const std::size_t rows = max_rows == 0 ? t.n_rows : std::min(max_rows, t.n_rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out += "|";
    for (const Field& f : t.fields) out += " " + markdown_escape(cell_text(f.cells[r])) + " |";
    out += "\n";
  }
  return out;
}

/// The answers a prompt set is built from, taken from labels or from an annotation.
struct QaFacts {
  std::map<std::size_t, bool> is_measure;
  std::map<Task, std::size_t> role_answer;  // the field to name for each role task
  std::map<std::size_t, std::string> msr_type, dim_type, agg;
  std::vector<LabeledPair> pairs;
};

inline QaFacts facts_from_labels(const LabeledExample& e, const Vocabularies& vocab) {
  QaFacts q;
  for (std::size_t i = 0; i < e.n_fields; ++i)
    if (e.msr_dim[i] != Dichotomy::Unlabeled) q.is_measure[i] = e.msr_dim[i] == Dichotomy::Measure;
  for (Task role : {Task::NaturalKey, Task::CommonBreakdown, Task::CommonMeasure}) {
    const auto pos = e.positives(role);
    if (!pos.empty()) q.role_answer[role] = pos.front();
  }
  q.msr_type = e.msr_type;
  q.dim_type = e.dim_type;
  // several user-applied functions: the first in vocabulary order answers
  for (const auto& [i, scores] : e.agg_scores)
    for (const std::string& fn : vocab.agg_functions())
      if (const auto it = scores.find(fn); it != scores.end() && it->second == 1) {
        q.agg[i] = fn;
        break;
      }
  q.pairs = e.msr_pairs;
  return q;
}

inline QaFacts facts_from_annotation(const MetadataAnnotation& a, double threshold = kRoleTagThreshold) {
  QaFacts q;
  for (const FieldAnnotation& f : a.fields) {
    q.is_measure[f.index] = f.is_measure();
    if (f.is_measure() && f.msr_type) q.msr_type[f.index] = *f.msr_type;
    if (!f.is_measure() && f.dim_type) q.dim_type[f.index] = *f.dim_type;
    if (f.is_measure() && !f.agg_ranking.empty()) q.agg[f.index] = f.agg_ranking.front().function;
  }
  for (Task role : {Task::NaturalKey, Task::CommonBreakdown, Task::CommonMeasure}) {
    const auto order = a.ranking(role);
    if (!order.empty() && a.role_score(role, order.front()) >= threshold) q.role_answer[role] = order.front();
  }
  for (const PairAnnotation& p : a.pairs) q.pairs.push_back({p.i, p.j, p.score >= 0.5});
  return q;
}

struct QaOptions {
  bool definitions = false;  // include the term definition in each question
  std::size_t max_rows = 0;  // rows rendered into the markdown table; 0 keeps all
};

struct QaPair {
  std::string table_id;
  Task task = Task::MsrDim;
  std::string prompt;
  std::string answer;
};

namespace qa_detail {

inline const std::map<Task, std::string>& definitions() {
  static const std::map<Task, std::string> d = {
      {Task::MsrDim,
       "A measure field contains numerical measurement values on which calculations can be made. A dimension field "
       "contains categorical values. It provides functions of filtering, grouping, and labeling."},
      {Task::NaturalKey,
       "Natural Key is a dimension field with all unique data values and uses them to represent each record in semantic terms."},
      {Task::CommonBreakdown,
       "Common Breakdown is the dimension field(s) that are the most commonly used for breaking down (grouping by) among a "
       "given table in data analysis."},
      {Task::CommonMeasure,
       "Common Measure is the measure field(s) that are the most commonly used for further analysis (e.g., applying "
       "aggregation function, composing chart) among a given table in data analysis."},
      {Task::MsrPair,
       "Within a table, a measure pair is a pair of comparable measures -- they should have the same type of unit "
       "(including convertible ones), related semantic meanings, and a similar numerical value range."},
  };
  return d;
}

inline std::string column_ref(const Table& t, std::size_t i) {
  return "the " + ordinal_word(i + 1) + " column (\"" + t.fields.at(i).header + "\" column)";
}

inline std::string role_phrase(Task t) {
  return t == Task::NaturalKey ? "natural key" : t == Task::CommonBreakdown ? "common breakdown" : "common measure";
}

}  // namespace qa_detail

/// Prompts for the requested tasks, in task order then field order. Each
/// prompt is the markdown table, the question, and a closing "=>" line.
inline std::vector<QaPair> export_qa_pairs(const Table& t, const QaFacts& facts, const std::vector<Task>& tasks,
                                           const Vocabularies& vocab, const QaOptions& opts = {}) {
  using namespace qa_detail;
  const std::string head = "Given the markdown table:\n" + markdown_table(t, opts.max_rows);
  const auto def = [&](Task task, bool parens) {
    if (!opts.definitions) return std::string();
    return parens ? " (" + definitions().at(task) + ")" : " " + definitions().at(task);
  };
  const auto tuple = [&](std::size_t i) { return "(" + ordinal_word(i + 1) + ", " + t.fields.at(i).header + ")"; };
  std::vector<QaPair> out;
  const auto emit = [&](Task task, const std::string& question, std::string answer) {
    out.push_back({t.id, task, head + question + "\n=>", std::move(answer)});
  };
  std::set<Task> seen;
  for (Task task : tasks) {
    if (!seen.insert(task).second) continue;
    switch (task) {
      case Task::MsrDim:
        for (const auto& [i, msr] : facts.is_measure)
          emit(task,
               "Is " + column_ref(t, i) + " measure or dimension?" + def(task, true) +
                   " Please answer concisely a 'measure' or 'dimension'. (Do not return any explanation or any additional information.)",
               msr ? "measure" : "dimension");
        break;
      case Task::NaturalKey:
      case Task::CommonBreakdown:
      case Task::CommonMeasure:
        if (const auto it = facts.role_answer.find(task); it != facts.role_answer.end())
          emit(task,
               "Which column is the " + role_phrase(task) + " with the highest probability?" + def(task, true) +
                   " Please answer a tuple of '(ordinal English word, header name)', where 'ordinal English word' starts from "
                   "'first'. (Do not return any explanation or any additional information.)",
               tuple(it->second));
        break;
      case Task::MsrType:
      case Task::DimType:
      case Task::Agg: {
        const auto& answers = task == Task::MsrType ? facts.msr_type : task == Task::DimType ? facts.dim_type : facts.agg;
        const std::vector<std::string> choices = task == Task::MsrType ? vocab.measure_type_labels()
                                                 : task == Task::DimType ? vocab.dimension_type_labels()
                                                                         : vocab.agg_functions();
        const std::string noun = task == Task::MsrType ? "measure types" : task == Task::DimType ? "dimension types" : "aggregations";
        std::string listing;
        for (const std::string& c : choices) listing += "\n" + c;
        for (const auto& [i, answer] : answers) {
          if (std::find(choices.begin(), choices.end(), answer) == choices.end()) continue;
          emit(task,
               "Which of the following " + noun + " is " + column_ref(t, i) +
                   "? (Do not return any explanation or any additional information.)" + listing,
               answer);
        }
        break;
      }
      case Task::MsrPair:
        for (const LabeledPair& p : facts.pairs)
          emit(task,
               "Is " + column_ref(t, p.i) + " and " + column_ref(t, p.j) + " a measure pair?" + def(task, false) +
                   " Please answer concisely a 'yes' or 'no'. (Do not return any explanation or any additional information.)",
               p.positive ? "yes" : "no");
        break;
    }
  }
  return out;
}

inline nlohmann::ordered_json qa_to_json(const QaPair& q) {
  return {{"table_id", q.table_id}, {"task", std::string(task_name(q.task))}, {"prompt", q.prompt}, {"answer", q.answer}};
}

inline std::string qa_to_jsonl(const std::vector<QaPair>& qs) {
  std::string out;
  for (const QaPair& q : qs) out += qa_to_json(q).dump() + "\n";
  return out;
}

}  // namespace anameta

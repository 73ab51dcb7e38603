#pragma once

// The KDF network at desk scale: hashed token embeddings stand in for a
// pretrained tabular backbone, then knowledge fusion, a sub-token encoder,
// pooling to columns, distribution fusion, column-level knowledge fusion, a
// column encoder and one head per task.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "anameta/annotation.hpp"
#include "anameta/field_stats.hpp"
#include "anameta/kdf/autodiff.hpp"
#include "anameta/label_forge.hpp"
#include "anameta/rng.hpp"
#include "anameta/table_core.hpp"

namespace anameta::kdf {

// ---------- configuration ----------

struct EncoderConfig {
  int layers = 2;
  int heads = 8;
  int d_tok = 192;
  int d_ent = 100;
  int d_h = 64;
  bool operator==(const EncoderConfig&) const = default;
};

struct TrainingConfig {
  int epochs = 10;
  int batch = 64;
  double lr = 1e-4;
  double weight_decay = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool operator==(const TrainingConfig&) const = default;
};

struct KdfConfig {
  EncoderConfig subtoken{2, 8, 192, 100, 64};
  EncoderConfig column{2, 8, 128, 100, 64};
  double m = 0.5;
  TrainingConfig training;
  bool knowledge_on = true;
  bool distribution_on = true;
  bool scaled_fusion = false;  // divide fusion logits by sqrt(d_ent)
  bool trainable_tokens = false;
  int token_buckets = 4096;
  int max_rows = 10;       // data rows read per table
  int max_subtokens = 3;   // per cell
  std::uint64_t seed = 0;
  bool operator==(const KdfConfig&) const = default;

  int subtoken_width() const { return subtoken.d_tok + (knowledge_on ? subtoken.d_h : 0); }

  void validate() const {
    const auto fail = [](const std::string& msg) { throw Error(ErrorCode::MalformedInput, "kdf config: " + msg); };
    if (!(m > 0.0 && m < 1.0)) fail("m must lie strictly between 0 and 1");
    for (const EncoderConfig* e : {&subtoken, &column})
      if (e->layers < 0 || e->heads <= 0 || e->d_tok <= 0 || e->d_ent <= 0 || e->d_h <= 0) fail("dimensions must be positive");
    if (subtoken_width() % subtoken.heads != 0) fail("sub-token heads must divide the encoder width");
    if (column.d_tok % column.heads != 0) fail("column heads must divide the encoder width");
    if (knowledge_on && subtoken.d_ent != column.d_ent) fail("sub-token and column entity widths must agree");
    if (training.epochs < 0 || training.batch <= 0 || training.lr < 0 || training.weight_decay < 0) fail("bad training settings");
    if (token_buckets <= 0 || max_rows <= 0 || max_subtokens <= 0) fail("token limits must be positive");
  }
};

inline nlohmann::ordered_json encoder_to_json(const EncoderConfig& e) {
  return {{"layers", e.layers}, {"heads", e.heads}, {"d_tok", e.d_tok}, {"d_ent", e.d_ent}, {"d_h", e.d_h}};
}

inline EncoderConfig encoder_from_json(const nlohmann::ordered_json& j, EncoderConfig e) {
  e.layers = j.value("layers", e.layers);
  e.heads = j.value("heads", e.heads);
  e.d_tok = j.value("d_tok", e.d_tok);
  e.d_ent = j.value("d_ent", e.d_ent);
  e.d_h = j.value("d_h", e.d_h);
  return e;
}

inline nlohmann::ordered_json config_to_json(const KdfConfig& c) {
  nlohmann::ordered_json j;
  j["subtoken"] = encoder_to_json(c.subtoken);
  j["column"] = encoder_to_json(c.column);
  j["m"] = c.m;
  j["training"] = {{"epochs", c.training.epochs}, {"batch", c.training.batch},
                   {"lr", c.training.lr},         {"weight_decay", c.training.weight_decay},
                   {"beta1", c.training.beta1},   {"beta2", c.training.beta2},
                   {"adam_eps", c.training.adam_eps}};
  j["knowledge_on"] = c.knowledge_on;
  j["distribution_on"] = c.distribution_on;
  j["scaled_fusion"] = c.scaled_fusion;
  j["trainable_tokens"] = c.trainable_tokens;
  j["token_buckets"] = c.token_buckets;
  j["max_rows"] = c.max_rows;
  j["max_subtokens"] = c.max_subtokens;
  j["seed"] = c.seed;
  return j;
}

/// Missing keys keep their defaults, so a config file may set only what it changes.
inline KdfConfig config_from_json(const nlohmann::ordered_json& j) {
  try {
    KdfConfig c;
    if (j.contains("subtoken")) c.subtoken = encoder_from_json(j["subtoken"], c.subtoken);
    if (j.contains("column")) c.column = encoder_from_json(j["column"], c.column);
    c.m = j.value("m", c.m);
    if (j.contains("training")) {
      const auto& t = j["training"];
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.batch = t.value("batch", c.training.batch);
      c.training.lr = t.value("lr", c.training.lr);
      c.training.weight_decay = t.value("weight_decay", c.training.weight_decay);
      c.training.beta1 = t.value("beta1", c.training.beta1);
      c.training.beta2 = t.value("beta2", c.training.beta2);
      c.training.adam_eps = t.value("adam_eps", c.training.adam_eps);
    }
    c.knowledge_on = j.value("knowledge_on", c.knowledge_on);
    c.distribution_on = j.value("distribution_on", c.distribution_on);
    c.scaled_fusion = j.value("scaled_fusion", c.scaled_fusion);
    c.trainable_tokens = j.value("trainable_tokens", c.trainable_tokens);
    c.token_buckets = j.value("token_buckets", c.token_buckets);
    c.max_rows = j.value("max_rows", c.max_rows);
    c.max_subtokens = j.value("max_subtokens", c.max_subtokens);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("kdf config: ") + e.what());
  }
}

// ---------- tokens ----------

struct Token {
  std::string text;
  std::string shape;   // character-class outline of the whole cell, e.g. "$d,d.d"
  int row = -1;        // -1 for the header row
  int col = 0;
  int cell = 0;        // dense cell id
  bool header = false;
};

struct TokenSequence {
  std::vector<Token> tokens;
  std::size_t n_cols = 0;
  std::size_t n_cells = 0;
};

namespace model_detail {

inline int char_class(unsigned char c) {
  if (std::isdigit(c)) return 1;
  if (std::isalpha(c) || c >= 0x80) return 2;
  if (std::isspace(c)) return 0;
  return 3;
}

/// Runs of letters, runs of digits (with inner ',' and '.'), and single symbols.
inline std::vector<std::string> subtokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    const int k = char_class(c);
    if (k == 0) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (k == 2) {
      while (j < s.size() && char_class(static_cast<unsigned char>(s[j])) == 2) ++j;
    } else if (k == 1) {
      while (j < s.size()) {
        const auto d = static_cast<unsigned char>(s[j]);
        if (std::isdigit(d)) ++j;
        else if ((d == ',' || d == '.') && j + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[j + 1]))) ++j;
        else break;
      }
    }
    std::string tok(s.substr(i, j - i));
    for (char& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    out.push_back(std::move(tok));
    i = j;
  }
  return out;
}

inline std::string cell_shape(std::string_view s) {
  std::string out;
  char last = 0;
  for (unsigned char c : s) {
    char k;
    if (std::isdigit(c)) k = 'd';
    else if (std::isupper(c)) k = 'X';
    else if (std::isalpha(c) || c >= 0x80) k = 'x';
    else if (std::isspace(c)) k = ' ';
    else k = static_cast<char>(c);
    if (k != last || !(k == 'd' || k == 'x' || k == 'X' || k == ' ')) out.push_back(k);
    last = k;
  }
  return out.empty() ? std::string("<empty>") : out;
}

}  // namespace model_detail

inline TokenSequence tokenize_table(const Table& t, int max_rows = 10, int max_subtokens = 3) {
  TokenSequence seq;
  seq.n_cols = t.fields.size();
  const int rows = std::min<int>(max_rows, static_cast<int>(t.n_rows));
  int cell = 0;
  const auto add_cell = [&](std::string_view text, int row, int col, bool header) {
    auto parts = model_detail::subtokens(text);
    if (parts.empty()) parts.emplace_back("<empty>");
    if (static_cast<int>(parts.size()) > max_subtokens) parts.resize(static_cast<std::size_t>(max_subtokens));
    const std::string shape = model_detail::cell_shape(text);
    for (auto& p : parts) seq.tokens.push_back({std::move(p), shape, row, col, cell, header});
    ++cell;
  };
  for (const Field& f : t.fields) add_cell(f.header, -1, static_cast<int>(f.index), true);
  for (int r = 0; r < rows; ++r)
    for (const Field& f : t.fields) add_cell(cell_text(f.cells[static_cast<std::size_t>(r)]), r, static_cast<int>(f.index), false);
  seq.n_cells = static_cast<std::size_t>(cell);
  return seq;
}

// ---------- visibility ----------

enum class Granularity { Subtoken, Cell, Column };

inline double visibility_entry(int row_a, int col_a, int cell_a, int row_b, int col_b, int cell_b, double m) {
  if (cell_a == cell_b) return 1.0;
  if (row_a == row_b || col_a == col_b) return m;
  return 0.0;
}

/// 1 within a cell, m within a row or column, 0 elsewhere. At column level
/// every position sees every other.
inline Mat<double> build_visibility(const TokenSequence& seq, Granularity g, double m) {
  if (g == Granularity::Column) return Mat<double>::Ones(static_cast<Eigen::Index>(seq.n_cols), static_cast<Eigen::Index>(seq.n_cols));
  struct Pos { int row, col, cell; };
  std::vector<Pos> pos;
  if (g == Granularity::Subtoken) {
    for (const Token& tk : seq.tokens) pos.push_back({tk.row, tk.col, tk.cell});
  } else {
    int last = -1;
    for (const Token& tk : seq.tokens)
      if (tk.cell != last) {
        pos.push_back({tk.row, tk.col, tk.cell});
        last = tk.cell;
      }
  }
  const auto n = static_cast<Eigen::Index>(pos.size());
  Mat<double> M(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const Pos& a = pos[static_cast<std::size_t>(i)];
      const Pos& b = pos[static_cast<std::size_t>(j)];
      M(i, j) = visibility_entry(a.row, a.col, a.cell, b.row, b.col, b.cell, m);
    }
  return M;
}

inline Mat<double> build_visibility(const Table& t, Granularity g, double m, int max_rows = 10, int max_subtokens = 3) {
  return build_visibility(tokenize_table(t, max_rows, max_subtokens), g, m);
}

/// ln M with ln 0 taken as -1e30, so masked logits vanish under softmax.
template <class T>
Mat<T> log_mask(const Mat<double>& M) {
  return M.unaryExpr([](double v) { return v > 0.0 ? static_cast<T>(std::log(v)) : static_cast<T>(-1e30); });
}

// ---------- entity embeddings ----------

struct TableEntities {
  std::map<std::pair<int, int>, std::vector<double>> cells;  // (row, col), row -1 for header cells
  std::map<int, std::vector<double>> columns;
};

struct EntityStore {
  std::size_t dim = 0;
  std::map<std::string, TableEntities> tables;

  const TableEntities* find(const std::string& table_id) const {
    const auto it = tables.find(table_id);
    return it == tables.end() ? nullptr : &it->second;
  }
};

/// One JSON object per line: {"table_id", "row" (null for a column entity), "col", "vector"}.
inline EntityStore entities_from_jsonl(std::string_view text, std::size_t dim) {
  EntityStore store;
  store.dim = dim;
  std::size_t line = 0;
  for_each_json_line(text, [&](const nlohmann::json& j) {
    ++line;
    try {
      const std::string id = j.at("table_id").get<std::string>();
      const int col = j.at("col").get<int>();
      std::vector<double> v = j.at("vector").get<std::vector<double>>();
      if (v.size() != dim)
        throw Error(ErrorCode::ShapeMismatch, "entity on line " + std::to_string(line) + " has width " +
                                                  std::to_string(v.size()) + ", expected " + std::to_string(dim));
      for (double x : v)
        if (!std::isfinite(x)) throw Error(ErrorCode::MalformedInput, "non-finite entity value on line " + std::to_string(line));
      TableEntities& te = store.tables[id];
      if (!j.contains("row") || j["row"].is_null()) te.columns[col] = std::move(v);
      else te.cells[{j["row"].get<int>(), col}] = std::move(v);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedInput, "entity line " + std::to_string(line) + ": " + e.what());
    }
  });
  return store;
}

inline EntityStore load_entities(const std::filesystem::path& p, std::size_t dim) {
  return entities_from_jsonl(read_file(p), dim);
}

inline std::string entities_to_jsonl(const EntityStore& store) {
  std::string out;
  for (const auto& [id, te] : store.tables) {
    for (const auto& [pos, v] : te.cells)
      out += nlohmann::ordered_json{{"table_id", id}, {"row", pos.first}, {"col", pos.second}, {"vector", v}}.dump() + "\n";
    for (const auto& [col, v] : te.columns)
      out += nlohmann::ordered_json{{"table_id", id}, {"row", nullptr}, {"col", col}, {"vector", v}}.dump() + "\n";
  }
  return out;
}

/// Seeded pseudo-random unit vector for a key.
inline std::vector<double> hash_vector(std::string_view key, std::size_t dim, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, fnv1a64(key)));
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

/// Stand-in knowledge-graph embeddings: every non-empty text cell links to an
/// entity named by its lower-cased text, every column to its header.
inline EntityStore synthetic_entities(const std::vector<Table>& tables, std::size_t dim, std::uint64_t seed,
                                      int max_rows = 10) {
  EntityStore store;
  store.dim = dim;
  for (const Table& t : tables) {
    TableEntities& te = store.tables[t.id];
    const std::size_t rows = std::min<std::size_t>(static_cast<std::size_t>(max_rows), t.n_rows);
    for (const Field& f : t.fields) {
      const int col = static_cast<int>(f.index);
      std::string header = f.header;
      for (char& c : header) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      te.columns[col] = hash_vector("column:" + header, dim, seed);
      for (std::size_t r = 0; r < rows; ++r) {
        const CellValue& c = f.cells[r];
        if (!std::holds_alternative<TextCell>(c)) continue;
        std::string key = cell_text(c);
        for (char& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        te.cells[{static_cast<int>(r), col}] = hash_vector("entity:" + key, dim, seed);
      }
    }
  }
  return store;
}

// ---------- per-table inputs ----------

inline constexpr int kCategoryRows = 10;  // 5 field types, then one row per boolean slot

inline std::vector<int> category_rows(const FieldCategories& c) {
  std::vector<int> rows;
  for (std::size_t k = 0; k < kAllFieldTypes.size(); ++k)
    if (kAllFieldTypes[k] == c.field_type) rows.push_back(static_cast<int>(k));
  const bool flags[5] = {c.is_percent, c.is_currency, c.has_year, c.has_month, c.has_day};
  for (int k = 0; k < 5; ++k)
    if (flags[k]) rows.push_back(5 + k);
  return rows;
}

/// Everything the forward pass reads besides parameters.
struct TableInputs {
  TokenSequence seq;
  Mat<double> tok;          // n_tokens × d_tok hashed embeddings
  std::vector<int> bucket;  // token id for the trainable embedding table
  Mat<double> ent;          // n_tokens × d_ent
  Mat<double> vis;          // n_tokens × n_tokens
  Mat<double> pool;         // n_cols × n_tokens averaging matrix
  Mat<double> col_ent;      // n_cols × d_ent
  std::vector<std::vector<int>> categories;
  Mat<double> stats;        // n_cols × 31 normalized statistics
};

inline Mat<double> pooling_matrix(const std::vector<int>& col_of, std::size_t n_cols) {
  Mat<double> P = Mat<double>::Zero(static_cast<Eigen::Index>(n_cols), static_cast<Eigen::Index>(col_of.size()));
  std::vector<int> counts(n_cols, 0);
  for (int c : col_of) {
    if (c < 0 || static_cast<std::size_t>(c) >= n_cols) throw Error(ErrorCode::IndexOutOfRange, "token maps to no column");
    ++counts[static_cast<std::size_t>(c)];
  }
  for (std::size_t c = 0; c < n_cols; ++c)
    if (counts[c] == 0) throw Error(ErrorCode::EmptyColumn, "column " + std::to_string(c) + " has no tokens");
  for (std::size_t i = 0; i < col_of.size(); ++i)
    P(col_of[i], static_cast<Eigen::Index>(i)) = 1.0 / counts[static_cast<std::size_t>(col_of[i])];
  return P;
}

/// Per-column mean of token vectors.
inline Mat<double> pool_columns(const Mat<double>& tokens, const std::vector<int>& col_of, std::size_t n_cols) {
  if (static_cast<std::size_t>(tokens.rows()) != col_of.size())
    throw Error(ErrorCode::ShapeMismatch, "pool_columns: one column index per token required");
  return pooling_matrix(col_of, n_cols) * tokens;
}

inline TableInputs prepare_inputs(const Table& t, const TableEntities* ents, const KdfConfig& cfg) {
  TableInputs in;
  in.seq = tokenize_table(t, cfg.max_rows, cfg.max_subtokens);
  const auto n = static_cast<Eigen::Index>(in.seq.tokens.size());
  const int d_tok = cfg.subtoken.d_tok, d_ent = cfg.subtoken.d_ent;
  in.tok.resize(n, d_tok);
  in.ent = Mat<double>::Zero(n, d_ent);
  std::vector<char> present(static_cast<std::size_t>(n), 0);
  std::vector<int> col_of;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Token& tk = in.seq.tokens[static_cast<std::size_t>(i)];
    const auto a = hash_vector("tok:" + tk.text, static_cast<std::size_t>(d_tok), cfg.seed);
    const auto b = hash_vector("shape:" + tk.shape, static_cast<std::size_t>(d_tok), cfg.seed);
    const auto c = hash_vector(tk.header ? "role:header" : "role:cell", static_cast<std::size_t>(d_tok), cfg.seed);
    double norm = 0.0;
    for (int k = 0; k < d_tok; ++k) {
      in.tok(i, k) = a[static_cast<std::size_t>(k)] + b[static_cast<std::size_t>(k)] + 0.5 * c[static_cast<std::size_t>(k)];
      norm += in.tok(i, k) * in.tok(i, k);
    }
    in.tok.row(i) /= std::sqrt(norm);
    in.bucket.push_back(static_cast<int>(fnv1a64(tk.text) % static_cast<std::uint64_t>(cfg.token_buckets)));
    col_of.push_back(tk.col);
    if (ents) {
      const auto it = ents->cells.find({tk.row, tk.col});
      if (it != ents->cells.end()) {
        if (it->second.size() != static_cast<std::size_t>(d_ent)) throw Error(ErrorCode::ShapeMismatch, "entity width differs from d_ent");
        for (int k = 0; k < d_ent; ++k) in.ent(i, k) = it->second[static_cast<std::size_t>(k)];
        present[static_cast<std::size_t>(i)] = 1;
      }
    }
  }
  // A token without an entity is only visible from its own cell.
  in.vis = build_visibility(in.seq, Granularity::Subtoken, cfg.m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (!present[static_cast<std::size_t>(j)] && in.seq.tokens[static_cast<std::size_t>(i)].cell != in.seq.tokens[static_cast<std::size_t>(j)].cell)
        in.vis(i, j) = 0.0;
  in.pool = pooling_matrix(col_of, in.seq.n_cols);
  const auto nc = static_cast<Eigen::Index>(t.fields.size());
  in.col_ent = Mat<double>::Zero(nc, d_ent);
  in.stats.resize(nc, static_cast<Eigen::Index>(kNumStats));
  for (const Field& f : t.fields) {
    const auto c = static_cast<Eigen::Index>(f.index);
    if (ents) {
      const auto it = ents->columns.find(static_cast<int>(f.index));
      if (it != ents->columns.end()) {
        if (it->second.size() != static_cast<std::size_t>(d_ent)) throw Error(ErrorCode::ShapeMismatch, "entity width differs from d_ent");
        for (int k = 0; k < d_ent; ++k) in.col_ent(c, k) = it->second[static_cast<std::size_t>(k)];
      }
    }
    const FeatureVector fv = normalize_features(extract_statistics(f));
    for (std::size_t k = 0; k < kNumStats; ++k) in.stats(c, static_cast<Eigen::Index>(k)) = fv.values[k];
    in.categories.push_back(category_rows(extract_categories(f)));
  }
  return in;
}

// ---------- parameters ----------

template <class T>
struct ParamSet {
  std::vector<std::string> order;
  std::map<std::string, Mat<T>> values;
  // Gradient sinks; written through const references by recording tapes.
  mutable std::map<std::string, Mat<T>> grads;

  void add(const std::string& name, Mat<T> v) {
    if (values.count(name)) throw Error(ErrorCode::MalformedInput, "duplicate parameter " + name);
    order.push_back(name);
    grads[name] = Mat<T>::Zero(v.rows(), v.cols());
    values[name] = std::move(v);
  }
  bool has(const std::string& name) const { return values.count(name) != 0; }
  Mat<T>& at(const std::string& name) {
    const auto it = values.find(name);
    if (it == values.end()) throw Error(ErrorCode::MalformedInput, "no parameter " + name);
    return it->second;
  }
  const Mat<T>& at(const std::string& name) const {
    const auto it = values.find(name);
    if (it == values.end()) throw Error(ErrorCode::MalformedInput, "no parameter " + name);
    return it->second;
  }
  Id use(Tape<T>& t, const std::string& name) const { return t.param(at(name), &grads.at(name)); }
  void zero_grad() const {
    for (auto& [_, g] : grads) g.setZero();
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : values) n += static_cast<std::size_t>(v.size());
    return n;
  }
  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const std::string& name : order) out.add(name, values.at(name).template cast<U>());
    return out;
  }
};

struct HeadLabels {
  std::vector<std::string> msr_types;
  std::vector<std::string> dim_types;
  std::vector<std::string> agg;
  bool operator==(const HeadLabels&) const = default;
};

/// Shape of every parameter implied by a config and head vocabularies.
inline std::vector<std::pair<std::string, std::pair<int, int>>> parameter_shapes(const KdfConfig& c, const HeadLabels& h) {
  std::vector<std::pair<std::string, std::pair<int, int>>> s;
  const auto add = [&](const std::string& n, int r, int k) { s.push_back({n, {r, k}}); };
  const auto encoder = [&](const std::string& prefix, int layers, int w) {
    for (int l = 0; l < layers; ++l) {
      const std::string p = prefix + ".l" + std::to_string(l) + ".";
      for (const char* m : {"wq", "wk", "wv", "wo"}) add(p + m, w, w);
      // No key bias: it shifts every logit in a softmax row equally and never gets a gradient.
      for (const char* b : {"bq", "bv", "bo"}) add(p + b, 1, w);
      add(p + "ln1.g", 1, w);
      add(p + "ln1.b", 1, w);
      add(p + "ff1.w", w, 4 * w);
      add(p + "ff1.b", 1, 4 * w);
      add(p + "ff2.w", 4 * w, w);
      add(p + "ff2.b", 1, w);
      add(p + "ln2.g", 1, w);
      add(p + "ln2.b", 1, w);
    }
  };
  const int ws = c.subtoken_width();
  if (c.trainable_tokens) add("tok.emb", c.token_buckets, c.subtoken.d_tok);
  if (c.knowledge_on) {
    add("sub.kf.w1", c.subtoken.d_tok, c.subtoken.d_ent);
    add("sub.kf.w2", c.subtoken.d_ent, c.subtoken.d_ent);
    add("sub.kf.w3", c.subtoken.d_ent, c.subtoken.d_h);
  }
  encoder("sub.enc", c.subtoken.layers, ws);
  int width = ws;
  if (c.distribution_on) {
    add("col.df.w", ws, c.column.d_tok);
    add("col.df.b", 1, c.column.d_tok);
    add("col.df.cat", kCategoryRows, c.column.d_tok);
    width = c.column.d_tok + static_cast<int>(kNumStats);
  }
  if (c.knowledge_on) {
    add("col.kf.w1", width, c.column.d_ent);
    add("col.kf.w2", c.column.d_ent, c.column.d_ent);
    add("col.kf.w3", c.column.d_ent, c.column.d_h);
    width += c.column.d_h;
  }
  add("col.in.w", width, c.column.d_tok);
  add("col.in.b", 1, c.column.d_tok);
  encoder("col.enc", c.column.layers, c.column.d_tok);
  const int d = c.column.d_tok;
  for (const char* head : {"msr_dim", "natural_key", "common_breakdown", "common_measure"}) {
    add(std::string("head.") + head + ".w", d, 1);
    add(std::string("head.") + head + ".b", 1, 1);
  }
  add("head.msr_pair.w", 2 * d, 1);
  add("head.msr_pair.b", 1, 1);
  add("head.msr_type.w", d, static_cast<int>(h.msr_types.size()));
  add("head.msr_type.b", 1, static_cast<int>(h.msr_types.size()));
  add("head.dim_type.w", d, static_cast<int>(h.dim_types.size()));
  add("head.dim_type.b", 1, static_cast<int>(h.dim_types.size()));
  add("head.agg.w", d, static_cast<int>(h.agg.size()));
  add("head.agg.b", 1, static_cast<int>(h.agg.size()));
  return s;
}

/// Weights ~ N(0, 1/fan_in), layer-norm gains 1, biases and heads 0.
inline ParamSet<float> init_parameters(const KdfConfig& c, const HeadLabels& h) {
  c.validate();
  if (h.msr_types.empty() || h.agg.empty() || h.dim_types.empty())
    throw Error(ErrorCode::EmptyVocabulary, "every classification head needs at least one label");
  Rng rng(Rng::mix(c.seed, 0x4b4446));
  ParamSet<float> p;
  for (const auto& [name, shape] : parameter_shapes(c, h)) {
    Mat<float> v = Mat<float>::Zero(shape.first, shape.second);
    const bool is_head = name.rfind("head.", 0) == 0;
    const bool gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    const bool bias = name[name.rfind('.') + 1] == 'b';  // .b, .bq, .bv, .bo
    if (gain) v.setOnes();
    else if (name == "tok.emb") {
    } else if (name == "col.df.cat") {
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(0.1 * rng.normal());
    } else if (!is_head && !bias) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(shape.first));
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(sd * rng.normal());
    }
    p.add(name, std::move(v));
  }
  return p;
}

// ---------- building blocks ----------

/// concat(TOK, H) with H = (softmax(TOK·W1·ENTᵀ + ln M)·ENT·W2 + ENT)·W3.
template <class T>
Id knowledge_fusion(Tape<T>& t, Id tok, Id ent, const Mat<T>& lnM, Id w1, Id w2, Id w3, bool scaled = false) {
  const auto n = t.value(tok).rows();
  ops::require(t.value(ent).rows() == n && lnM.rows() == n && lnM.cols() == n, "knowledge_fusion: sequence lengths differ");
  ops::require(t.value(w1).rows() == t.value(tok).cols() && t.value(w1).cols() == t.value(ent).cols(),
               "knowledge_fusion: W1 must be d_tok × d_ent");
  ops::require(t.value(w2).rows() == t.value(ent).cols() && t.value(w2).cols() == t.value(ent).cols(),
               "knowledge_fusion: W2 must be d_ent × d_ent");
  ops::require(t.value(w3).rows() == t.value(ent).cols(), "knowledge_fusion: W3 must have d_ent rows");
  Id logits = ops::matmul_nt(t, ops::matmul(t, tok, w1), ent);
  if (scaled) logits = ops::scale(t, logits, T(1) / std::sqrt(static_cast<T>(t.value(ent).cols())));
  logits = ops::add(t, logits, t.constant(lnM));
  const Id attn = ops::matmul(t, ops::matmul(t, ops::softmax_rows(t, logits), ent), w2);
  const Id h = ops::matmul(t, ops::add(t, attn, ent), w3);
  const Id out = ops::concat_cols(t, {tok, h});
  if (!t.value(out).allFinite()) throw Error(ErrorCode::NonFiniteActivation, "knowledge fusion produced a non-finite value");
  return out;
}

/// Plain-matrix form for direct use and tests.
inline Mat<double> knowledge_fusion(const Mat<double>& TOK, const Mat<double>& ENT, const Mat<double>& M, const Mat<double>& W1,
                                    const Mat<double>& W2, const Mat<double>& W3, bool scaled = false) {
  Tape<double> t;
  const Id out = knowledge_fusion(t, t.constant(TOK), t.constant(ENT), log_mask<double>(M), t.constant(W1), t.constant(W2),
                                  t.constant(W3), scaled);
  return t.value(out);
}

/// concat(col·W + b + Σ category embeddings, stats).
template <class T>
Id distribution_fusion(Tape<T>& t, Id col, const std::vector<std::vector<int>>& categories, const Mat<T>& stats, Id w, Id b,
                       Id cat) {
  const auto n = t.value(col).rows();
  ops::require(static_cast<Eigen::Index>(categories.size()) == n && stats.rows() == n, "distribution_fusion: one entry per column");
  ops::require(stats.cols() == static_cast<Eigen::Index>(kNumStats), "distribution_fusion: 31 statistics per column");
  ops::require(t.value(w).rows() == t.value(col).cols(), "distribution_fusion: linear input width");
  ops::require(t.value(cat).cols() == t.value(w).cols(), "distribution_fusion: category embedding width");
  Id sum = ops::add_row(t, ops::matmul(t, col, w), b);
  // Σ over active slots as a fixed selection matrix times the embedding table.
  Mat<T> select = Mat<T>::Zero(n, t.value(cat).rows());
  for (Eigen::Index i = 0; i < n; ++i)
    for (int r : categories[static_cast<std::size_t>(i)]) {
      ops::require(r >= 0 && r < t.value(cat).rows(), "distribution_fusion: category slot out of range");
      select(i, r) += T(1);
    }
  sum = ops::add(t, sum, ops::matmul(t, t.constant(std::move(select)), cat));
  return ops::concat_cols(t, {sum, t.constant(stats)});
}

struct DistributionParams {
  Mat<double> w;    // d_in × d
  Mat<double> b;    // 1 × d
  Mat<double> cat;  // 10 × d
};

inline Mat<double> distribution_fusion(const Mat<double>& col, const std::vector<FieldCategories>& cats,
                                       const std::vector<FeatureVector>& stats, const DistributionParams& p) {
  if (cats.size() != stats.size()) throw Error(ErrorCode::ShapeMismatch, "distribution_fusion: categories and stats differ in length");
  Mat<double> s(static_cast<Eigen::Index>(stats.size()), static_cast<Eigen::Index>(kNumStats));
  std::vector<std::vector<int>> rows;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    for (std::size_t k = 0; k < kNumStats; ++k) s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = stats[i].values[k];
    rows.push_back(category_rows(cats[i]));
  }
  Tape<double> t;
  return t.value(distribution_fusion(t, t.constant(col), rows, s, t.constant(p.w), t.constant(p.b), t.constant(p.cat)));
}

template <class T>
Id linear(Tape<T>& t, const ParamSet<T>& p, Id x, const std::string& prefix) {
  return ops::add_row(t, ops::matmul(t, x, p.use(t, prefix + ".w")), p.use(t, prefix + ".b"));
}

/// Post-norm transformer blocks: x ← LN(x + MHA(x)); x ← LN(x + FFN(x)).
template <class T>
Id encoder(Tape<T>& t, const ParamSet<T>& p, const std::string& prefix, Id x, int layers, int heads) {
  const auto w = t.value(x).cols();
  ops::require(w % heads == 0, "encoder: heads must divide width");
  const auto dh = w / heads;
  const T inv = T(1) / std::sqrt(static_cast<T>(dh));
  for (int l = 0; l < layers; ++l) {
    const std::string pre = prefix + ".l" + std::to_string(l) + ".";
    const auto proj = [&](const char* wn, const char* bn) {
      const Id y = ops::matmul(t, x, p.use(t, pre + wn));
      return bn ? ops::add_row(t, y, p.use(t, pre + bn)) : y;
    };
    const Id q = proj("wq", "bq"), k = proj("wk", nullptr), v = proj("wv", "bv");
    std::vector<Id> outs;
    for (int h = 0; h < heads; ++h) {
      const Id qh = ops::slice_cols(t, q, h * dh, dh);
      const Id kh = ops::slice_cols(t, k, h * dh, dh);
      const Id vh = ops::slice_cols(t, v, h * dh, dh);
      const Id a = ops::softmax_rows(t, ops::scale(t, ops::matmul_nt(t, qh, kh), inv));
      outs.push_back(ops::matmul(t, a, vh));
    }
    const Id attn = ops::add_row(t, ops::matmul(t, ops::concat_cols(t, outs), p.use(t, pre + "wo")), p.use(t, pre + "bo"));
    x = ops::layer_norm(t, ops::add(t, x, attn), p.use(t, pre + "ln1.g"), p.use(t, pre + "ln1.b"));
    const Id hidden = ops::gelu(t, linear(t, p, x, pre + "ff1"));
    const Id ff = linear(t, p, hidden, pre + "ff2");
    x = ops::layer_norm(t, ops::add(t, x, ff), p.use(t, pre + "ln2.g"), p.use(t, pre + "ln2.b"));
  }
  if (!t.value(x).allFinite()) throw Error(ErrorCode::NonFiniteActivation, prefix + " produced a non-finite value");
  return x;
}

// ---------- targets ----------

struct BinaryTargets {
  std::vector<int> rows;
  std::vector<double> y;
  bool empty() const { return rows.empty(); }
};

struct ClassTargets {
  std::vector<int> rows;
  std::vector<std::vector<int>> gold;
  bool empty() const { return rows.empty(); }
};

struct KdfTargets {
  BinaryTargets msr_dim, natural_key, common_breakdown, common_measure;
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> pair_y;
  ClassTargets msr_type, dim_type, agg;
};

inline KdfTargets targets_from_example(const LabeledExample& e, const HeadLabels& h) {
  KdfTargets t;
  for (std::size_t i = 0; i < e.msr_dim.size(); ++i) {
    if (e.msr_dim[i] == Dichotomy::Unlabeled) continue;
    t.msr_dim.rows.push_back(static_cast<int>(i));
    t.msr_dim.y.push_back(e.msr_dim[i] == Dichotomy::Measure ? 1.0 : 0.0);
  }
  const auto roles = [&](const std::vector<RoleLabel>& labels, BinaryTargets& out) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == RoleLabel::Unlabeled) continue;
      out.rows.push_back(static_cast<int>(i));
      out.y.push_back(labels[i] == RoleLabel::Pos ? 1.0 : 0.0);
    }
  };
  roles(e.natural_key, t.natural_key);
  roles(e.common_breakdown, t.common_breakdown);
  roles(e.common_measure, t.common_measure);
  for (const LabeledPair& p : e.msr_pairs) {
    t.pairs.push_back({static_cast<int>(p.i), static_cast<int>(p.j)});
    t.pair_y.push_back(p.positive ? 1.0 : 0.0);
  }
  const auto index = [](const std::vector<std::string>& labels, const std::string& name) -> int {
    for (std::size_t k = 0; k < labels.size(); ++k)
      if (labels[k] == name) return static_cast<int>(k);
    return -1;
  };
  for (const auto& [field, name] : e.msr_type)
    if (const int k = index(h.msr_types, name); k >= 0) {
      t.msr_type.rows.push_back(static_cast<int>(field));
      t.msr_type.gold.push_back({k});
    }
  for (const auto& [field, name] : e.dim_type)
    if (const int k = index(h.dim_types, name); k >= 0) {
      t.dim_type.rows.push_back(static_cast<int>(field));
      t.dim_type.gold.push_back({k});
    }
  for (const auto& [field, scores] : e.agg_scores) {
    std::vector<int> gold;
    for (const auto& [fn, s] : scores)
      if (s == 1)
        if (const int k = index(h.agg, fn); k >= 0) gold.push_back(k);
    if (gold.empty()) continue;
    std::sort(gold.begin(), gold.end());
    t.agg.rows.push_back(static_cast<int>(field));
    t.agg.gold.push_back(std::move(gold));
  }
  return t;
}

// ---------- forward ----------

template <class T>
struct ForwardPass {
  Tape<T> tape;
  Id subtoken_input = -1;  // sequence entering the sub-token encoder
  Id columns = -1;         // pooled column embeddings
  Id hidden = -1;          // column encoder output
  std::map<Task, Id> logits;  // n_fields × K per field task
  std::vector<std::pair<int, int>> pairs;
  Id pair_logits = -1;     // n_pairs × 1, or -1 without pairs
  std::map<Task, Id> task_loss;
  Id loss = -1;

  const Mat<T>& value(Id i) const { return tape.value(i); }
};

struct ForwardOptions {
  const KdfTargets* targets = nullptr;
  bool grad = true;  // record parameter gradients
  std::optional<std::vector<std::pair<int, int>>> pairs;  // default: all fields i<j, or the labeled pairs
};

template <class T>
Id pair_head(Tape<T>& t, const ParamSet<T>& p, Id hidden, const std::vector<std::pair<int, int>>& pairs) {
  const auto n = t.value(hidden).rows();
  Mat<T> si = Mat<T>::Zero(static_cast<Eigen::Index>(pairs.size()), n), sj = si;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    ops::require(pairs[k].first >= 0 && pairs[k].first < n && pairs[k].second >= 0 && pairs[k].second < n, "pair index out of range");
    si(static_cast<Eigen::Index>(k), pairs[k].first) = T(1);
    sj(static_cast<Eigen::Index>(k), pairs[k].second) = T(1);
  }
  const Id hi = ops::matmul(t, t.constant(std::move(si)), hidden);
  const Id hj = ops::matmul(t, t.constant(std::move(sj)), hidden);
  const Id feat = ops::concat_cols(t, {ops::add(t, hi, hj), ops::hadamard(t, hi, hj)});
  return linear(t, p, feat, "head.msr_pair");
}

/// The sub-token and column stages up to the column encoder output.
template <class T>
void forward_trunk(ForwardPass<T>& fp, const ParamSet<T>& p, const TableInputs& in, const KdfConfig& cfg) {
  Tape<T>& t = fp.tape;
  Id tok = t.constant(in.tok.template cast<T>());
  if (cfg.trainable_tokens) tok = ops::add(t, tok, ops::gather_rows(t, p.use(t, "tok.emb"), in.bucket));
  Id x = tok;
  if (cfg.knowledge_on)
    x = knowledge_fusion(t, tok, t.constant(in.ent.template cast<T>()), log_mask<T>(in.vis), p.use(t, "sub.kf.w1"),
                         p.use(t, "sub.kf.w2"), p.use(t, "sub.kf.w3"), cfg.scaled_fusion);
  fp.subtoken_input = x;
  x = encoder(t, p, "sub.enc", x, cfg.subtoken.layers, cfg.subtoken.heads);
  x = ops::matmul(t, t.constant(in.pool.template cast<T>()), x);
  fp.columns = x;
  if (cfg.distribution_on)
    x = distribution_fusion(t, x, in.categories, Mat<T>(in.stats.template cast<T>()), p.use(t, "col.df.w"), p.use(t, "col.df.b"),
                            p.use(t, "col.df.cat"));
  if (cfg.knowledge_on) {
    const auto nc = t.value(x).rows();
    x = knowledge_fusion(t, x, t.constant(in.col_ent.template cast<T>()), log_mask<T>(Mat<double>::Ones(nc, nc)),
                         p.use(t, "col.kf.w1"), p.use(t, "col.kf.w2"), p.use(t, "col.kf.w3"), cfg.scaled_fusion);
  }
  x = linear(t, p, x, "col.in");
  fp.hidden = encoder(t, p, "col.enc", x, cfg.column.layers, cfg.column.heads);
}

template <class T>
void forward_heads(ForwardPass<T>& fp, const ParamSet<T>& p, std::size_t n_fields, const ForwardOptions& opts) {
  Tape<T>& t = fp.tape;
  const Id h = fp.hidden;
  fp.logits[Task::MsrDim] = linear(t, p, h, "head.msr_dim");
  fp.logits[Task::NaturalKey] = linear(t, p, h, "head.natural_key");
  fp.logits[Task::CommonBreakdown] = linear(t, p, h, "head.common_breakdown");
  fp.logits[Task::CommonMeasure] = linear(t, p, h, "head.common_measure");
  fp.logits[Task::MsrType] = linear(t, p, h, "head.msr_type");
  fp.logits[Task::DimType] = linear(t, p, h, "head.dim_type");
  fp.logits[Task::Agg] = linear(t, p, h, "head.agg");
  if (opts.pairs) fp.pairs = *opts.pairs;
  else if (opts.targets) fp.pairs = opts.targets->pairs;
  else
    for (std::size_t i = 0; i < n_fields; ++i)
      for (std::size_t j = i + 1; j < n_fields; ++j) fp.pairs.push_back({static_cast<int>(i), static_cast<int>(j)});
  if (!fp.pairs.empty()) fp.pair_logits = pair_head(t, p, h, fp.pairs);

  if (!opts.targets) return;
  const KdfTargets& y = *opts.targets;
  const auto cast = [](const std::vector<double>& v) { return std::vector<T>(v.begin(), v.end()); };
  const auto binary = [&](Task task, const BinaryTargets& b) {
    if (!b.empty()) fp.task_loss[task] = ops::bce_logits(t, fp.logits[task], b.rows, cast(b.y));
  };
  binary(Task::MsrDim, y.msr_dim);
  binary(Task::NaturalKey, y.natural_key);
  binary(Task::CommonBreakdown, y.common_breakdown);
  binary(Task::CommonMeasure, y.common_measure);
  if (!y.pairs.empty()) {
    std::vector<int> rows(y.pairs.size());
    for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = static_cast<int>(k);
    fp.task_loss[Task::MsrPair] = ops::bce_logits(t, fp.pair_logits, rows, cast(y.pair_y));
  }
  const auto classes = [&](Task task, const ClassTargets& c) {
    if (!c.empty()) fp.task_loss[task] = ops::cross_entropy(t, fp.logits[task], c.rows, c.gold);
  };
  classes(Task::MsrType, y.msr_type);
  classes(Task::DimType, y.dim_type);
  classes(Task::Agg, y.agg);
  std::vector<Id> parts;
  for (const auto& [_, id] : fp.task_loss) parts.push_back(id);
  if (!parts.empty()) fp.loss = ops::sum_scalars(t, parts);
}

template <class T>
ForwardPass<T> forward(const ParamSet<T>& p, const TableInputs& in, const KdfConfig& cfg, const ForwardOptions& opts = {}) {
  ForwardPass<T> fp{Tape<T>(opts.grad)};
  forward_trunk(fp, p, in, cfg);
  forward_heads(fp, p, in.seq.n_cols, opts);
  return fp;
}

/// The backbone-plus-encoders path with no fusion code at all: hashed token
/// embeddings, sub-token encoder, pooling, input projection, column encoder.
template <class T>
ForwardPass<T> encoder_only_forward(const ParamSet<T>& p, const TableInputs& in, const KdfConfig& cfg, const ForwardOptions& opts = {}) {
  ForwardPass<T> fp{Tape<T>(opts.grad)};
  Tape<T>& t = fp.tape;
  Id x = t.constant(in.tok.template cast<T>());
  if (cfg.trainable_tokens) x = ops::add(t, x, ops::gather_rows(t, p.use(t, "tok.emb"), in.bucket));
  fp.subtoken_input = x;
  x = encoder(t, p, "sub.enc", x, cfg.subtoken.layers, cfg.subtoken.heads);
  fp.columns = x = ops::matmul(t, t.constant(in.pool.template cast<T>()), x);
  fp.hidden = encoder(t, p, "col.enc", linear(t, p, x, "col.in"), cfg.column.layers, cfg.column.heads);
  forward_heads(fp, p, in.seq.n_cols, opts);
  return fp;
}

}  // namespace anameta::kdf

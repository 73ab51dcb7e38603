#pragma once

// Canonical in-memory table model: typed cells, fields, parsing of CSV/TSV/JSON
// records, field type detection and schema fingerprints.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "anameta/error.hpp"
#include "anameta/rng.hpp"

namespace anameta {

enum class FieldType { Unknown, String, Year, DateTime, Decimal };

inline constexpr std::array<FieldType, 5> kAllFieldTypes = {
    FieldType::Unknown, FieldType::String, FieldType::Year, FieldType::DateTime, FieldType::Decimal};

constexpr std::string_view field_type_name(FieldType t) {
  switch (t) {
    case FieldType::Unknown: return "Unknown";
    case FieldType::String: return "String";
    case FieldType::Year: return "Year";
    case FieldType::DateTime: return "DateTime";
    case FieldType::Decimal: return "Decimal";
  }
  return "Unknown";
}

inline FieldType field_type_from_name(std::string_view name) {
  for (FieldType t : kAllFieldTypes)
    if (field_type_name(t) == name) return t;
  throw Error(ErrorCode::MalformedInput, "unknown field type '" + std::string(name) + "'");
}

// ---------- cells ----------

struct EmptyCell {
  bool operator==(const EmptyCell&) const = default;
};

struct TextCell {
  std::string text;
  bool operator==(const TextCell&) const = default;
};

struct NumberCell {
  double value = 0.0;
  std::string raw;
  bool percent = false;   // trailing '%'
  bool currency = false;  // leading currency symbol
  bool grouped = false;   // thousands separators present
  std::string currency_symbol;
  bool operator==(const NumberCell&) const = default;
};

struct DateTimeCell {
  int year = 0;
  int month = 0;  // 0 when absent
  int day = 0;    // 0 when absent
  bool has_time = false;
  std::string raw;
  bool operator==(const DateTimeCell&) const = default;
};

using CellValue = std::variant<EmptyCell, TextCell, NumberCell, DateTimeCell>;

inline bool is_empty(const CellValue& c) { return std::holds_alternative<EmptyCell>(c); }
inline const NumberCell* as_number(const CellValue& c) { return std::get_if<NumberCell>(&c); }
inline const DateTimeCell* as_datetime(const CellValue& c) { return std::get_if<DateTimeCell>(&c); }

/// The source text of a cell (empty string for Empty).
inline const std::string& cell_text(const CellValue& c) {
  static const std::string kEmpty;
  return std::visit(
      [](const auto& v) -> const std::string& {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, EmptyCell>) return kEmpty;
        else if constexpr (std::is_same_v<V, TextCell>) return v.text;
        else return v.raw;
      },
      c);
}

/// Currency markers recognised as number prefixes. Every entry is a Money unit
/// in the taxonomy lexicon.
inline constexpr std::array<std::string_view, 6> kCurrencyPrefixes = {"US$", "$", "€", "£", "¥", "₹"};

namespace detail {

inline std::string_view trim_view(std::string_view s) {
  const auto ws = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline std::optional<NumberCell> parse_number(std::string_view s) {
  NumberCell out;
  out.raw = std::string(s);
  bool negative = false;
  auto take_sign = [&] {
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
      negative = s.front() == '-';
      s.remove_prefix(1);
      return true;
    }
    return false;
  };
  auto take_currency = [&] {
    for (std::string_view sym : kCurrencyPrefixes) {
      if (s.starts_with(sym)) {
        out.currency = true;
        out.currency_symbol = std::string(sym);
        s.remove_prefix(sym.size());
        return true;
      }
    }
    return false;
  };
  const bool signed_first = take_sign();
  if (take_currency()) {
    if (!signed_first) take_sign();
  }
  if (!s.empty() && s.back() == '%') {
    out.percent = true;
    s.remove_suffix(1);
  }
  s = trim_view(s);
  if (s.empty()) return std::nullopt;

  // Integer part, optionally grouped as d{1,3}(,ddd)+.
  std::string digits;
  std::size_t i = 0;
  const std::size_t int_start = i;
  while (i < s.size() && (is_digit(s[i]) || s[i] == ',')) ++i;
  std::string_view int_part = s.substr(int_start, i - int_start);
  if (int_part.find(',') != std::string_view::npos) {
    const std::size_t first = int_part.find(',');
    if (first == 0 || first > 3) return std::nullopt;
    for (std::size_t p = first; p < int_part.size(); p += 4) {
      if (int_part[p] != ',' || p + 4 > int_part.size()) return std::nullopt;
      for (std::size_t q = p + 1; q < p + 4; ++q)
        if (!is_digit(int_part[q])) return std::nullopt;
    }
    out.grouped = true;
  }
  for (char c : int_part)
    if (c != ',') digits.push_back(c);
  bool any_digit = !digits.empty();
  if (i < s.size() && s[i] == '.') {
    digits.push_back('.');
    ++i;
    while (i < s.size() && is_digit(s[i])) {
      digits.push_back(s[i++]);
      any_digit = true;
    }
  }
  if (!any_digit) return std::nullopt;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    std::size_t j = i + 1;
    std::string exp = "e";
    if (j < s.size() && (s[j] == '+' || s[j] == '-')) exp.push_back(s[j++]);
    const std::size_t exp_digits = j;
    while (j < s.size() && is_digit(s[j])) exp.push_back(s[j++]);
    if (j == exp_digits) return std::nullopt;
    digits += exp;
    i = j;
  }
  if (i != s.size()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (res.ec != std::errc() || res.ptr != digits.data() + digits.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  out.value = negative ? -v : v;
  return out;
}

inline bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t k = pos; k < pos + len; ++k) {
    if (!is_digit(s[k])) return false;
    v = v * 10 + (s[k] - '0');
  }
  out = v;
  return true;
}

inline bool valid_time_suffix(std::string_view rest) {
  if (rest.empty()) return true;
  if (rest.front() != 'T' && rest.front() != ' ') return false;
  rest.remove_prefix(1);
  int hh, mm, ss;
  if (!read_int(rest, 0, 2, hh) || rest.size() < 5 || rest[2] != ':' || !read_int(rest, 3, 2, mm)) return false;
  if (hh > 23 || mm > 59) return false;
  rest.remove_prefix(5);
  if (!rest.empty() && rest.front() == ':') {
    if (!read_int(rest, 1, 2, ss) || ss > 60) return false;
    rest.remove_prefix(3);
    if (!rest.empty() && rest.front() == '.') {
      rest.remove_prefix(1);
      if (rest.empty() || !is_digit(rest.front())) return false;
      while (!rest.empty() && is_digit(rest.front())) rest.remove_prefix(1);
    }
  }
  if (rest == "Z") return true;
  return rest.empty();
}

inline std::optional<DateTimeCell> parse_datetime(std::string_view s) {
  DateTimeCell out;
  out.raw = std::string(s);
  int y = 0, m = 0, d = 0;
  std::size_t consumed = 0;
  if (s.size() >= 7 && read_int(s, 0, 4, y) && (s[4] == '-' || s[4] == '/') && read_int(s, 5, 2, m)) {
    const char sep = s[4];
    consumed = 7;
    if (s.size() >= 10 && s[7] == sep && read_int(s, 8, 2, d)) {
      consumed = 10;
    } else {
      d = 0;
      // Year-month alone must end here.
      if (s.size() != 7) return std::nullopt;
      if (sep != '-') return std::nullopt;
    }
  } else if (s.size() >= 8) {
    // M/D/YYYY or MM/DD/YYYY
    const std::size_t a = s.find('/');
    if (a == std::string_view::npos || a == 0 || a > 2) return std::nullopt;
    const std::size_t b = s.find('/', a + 1);
    if (b == std::string_view::npos || b - a - 1 == 0 || b - a - 1 > 2) return std::nullopt;
    if (!read_int(s, 0, a, m) || !read_int(s, a + 1, b - a - 1, d) || !read_int(s, b + 1, 4, y)) return std::nullopt;
    consumed = b + 5;
  } else {
    return std::nullopt;
  }
  if (m < 1 || m > 12) return std::nullopt;
  if (d != 0 && (d < 1 || d > 31)) return std::nullopt;
  const std::string_view rest = s.substr(consumed);
  if (!valid_time_suffix(rest)) return std::nullopt;
  if (!rest.empty() && d == 0) return std::nullopt;
  out.year = y;
  out.month = m;
  out.day = d;
  out.has_time = !rest.empty();
  return out;
}

}  // namespace detail

/// Type a single cell. Whitespace-only text parses to Empty.
inline CellValue parse_cell(std::string_view raw) {
  const std::string_view s = detail::trim_view(raw);
  if (s.empty()) return EmptyCell{};
  if (auto dt = detail::parse_datetime(s)) return *dt;
  if (auto num = detail::parse_number(s)) return *num;
  return TextCell{std::string(s)};
}

// ---------- fields and tables ----------

struct Field {
  std::size_t index = 0;
  std::string header;
  std::vector<CellValue> cells;
  FieldType field_type = FieldType::Unknown;

  bool operator==(const Field&) const = default;
};

struct Table {
  std::string id;
  std::vector<Field> fields;
  std::size_t n_rows = 0;

  bool operator==(const Table&) const = default;
};

inline bool is_year_value(double v) {
  return v == std::floor(v) && v >= 1000.0 && v <= 2100.0;
}

/// Majority vote over non-empty cells. DateTime > Year > Decimal > String on
/// ties; numbers become Year when every numeric cell is an ungrouped plain
/// integer in [1000, 2100] and at least two distinct values occur.
inline FieldType detect_field_type(const std::vector<CellValue>& cells) {
  std::size_t n_dt = 0, n_num = 0, n_text = 0;
  bool all_year = true;
  std::vector<double> distinct;
  for (const CellValue& c : cells) {
    if (is_empty(c)) continue;
    if (as_datetime(c)) {
      ++n_dt;
    } else if (const NumberCell* n = as_number(c)) {
      ++n_num;
      if (n->grouped || n->percent || n->currency || !is_year_value(n->value) ||
          n->raw.find_first_of(".eE") != std::string::npos)
        all_year = false;
      if (std::find(distinct.begin(), distinct.end(), n->value) == distinct.end()) distinct.push_back(n->value);
    } else {
      ++n_text;
    }
  }
  if (n_dt + n_num + n_text == 0) return FieldType::Unknown;
  if (n_dt >= n_num && n_dt >= n_text) return FieldType::DateTime;
  if (n_num >= n_text) {
    if (all_year && distinct.size() > 1) return FieldType::Year;
    return FieldType::Decimal;
  }
  return FieldType::String;
}

inline FieldType detect_field_type(const Field& field) { return detect_field_type(field.cells); }

/// True when the field is numerical in the surface-syntactic sense: typed
/// Decimal or Year and every non-empty cell is a number.
inline bool is_numeric_field(const Field& f) {
  if (f.field_type != FieldType::Decimal && f.field_type != FieldType::Year) return false;
  bool any = false;
  for (const CellValue& c : f.cells) {
    if (is_empty(c)) continue;
    if (!as_number(c)) return false;
    any = true;
  }
  return any;
}

/// Build a Table from header strings and row-major raw cells.
inline Table make_table(std::string id, const std::vector<std::string>& headers,
                        const std::vector<std::vector<std::string>>& rows) {
  Table t;
  t.id = std::move(id);
  t.n_rows = rows.size();
  t.fields.resize(headers.size());
  for (std::size_t j = 0; j < headers.size(); ++j) {
    t.fields[j].index = j;
    t.fields[j].header = std::string(detail::trim_view(headers[j]));
    t.fields[j].cells.reserve(rows.size());
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != headers.size())
      throw Error(ErrorCode::MalformedInput, "row " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                                                 " cells, expected " + std::to_string(headers.size()));
    for (std::size_t j = 0; j < headers.size(); ++j) t.fields[j].cells.push_back(parse_cell(rows[r][j]));
  }
  for (Field& f : t.fields) f.field_type = detect_field_type(f);
  return t;
}

// ---------- parsing ----------

enum class TableFormat { CSV, TSV, JSONRecords };

struct ParseOptions {
  std::string id;
  std::size_t max_rows = 10000;  // head truncation; 0 disables the cap
};

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) ||
        (cp >= 0xD800 && cp <= 0xDFFF))
      return false;
    i += len;
  }
  return true;
}

namespace detail {

/// RFC-4180 records. Lines consisting of nothing at all are skipped.
inline std::vector<std::vector<std::string>> split_delimited(std::string_view text, char delim) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string cell;
  bool in_quotes = false;
  bool cell_started = false;  // any char (or quote) seen for this record
  std::size_t line = 1;
  auto end_record = [&] {
    if (cell_started || !record.empty()) {
      record.push_back(std::move(cell));
      records.push_back(std::move(record));
    }
    record.clear();
    cell.clear();
    cell_started = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        cell.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      if (!cell.empty()) throw Error(ErrorCode::MalformedInput, "stray quote on line " + std::to_string(line));
      in_quotes = true;
      cell_started = true;
    } else if (c == delim) {
      record.push_back(std::move(cell));
      cell.clear();
      cell_started = true;
    } else if (c == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') continue;
      end_record();
      ++line;
    } else if (c == '\n') {
      end_record();
      ++line;
    } else {
      cell.push_back(c);
      cell_started = true;
    }
  }
  if (in_quotes) throw Error(ErrorCode::MalformedInput, "unterminated quoted field");
  end_record();
  return records;
}

inline std::string json_scalar_text(const nlohmann::ordered_json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  throw Error(ErrorCode::MalformedInput, "nested JSON values are not table cells");
}

inline void reject_if_empty(const Table& t) {
  if (t.n_rows == 0) throw Error(ErrorCode::EmptyTable, "no data rows");
  if (t.fields.empty()) throw Error(ErrorCode::EmptyTable, "no fields");
  const bool all_empty = std::all_of(t.fields.begin(), t.fields.end(), [](const Field& f) {
    return std::all_of(f.cells.begin(), f.cells.end(), [](const CellValue& c) { return is_empty(c); });
  });
  if (all_empty) throw Error(ErrorCode::EmptyTable, "every data row is empty");
}

}  // namespace detail

inline Table parse_table(std::string_view source, TableFormat format, const ParseOptions& opts = {}) {
  if (source.starts_with("\xEF\xBB\xBF")) source.remove_prefix(3);
  if (!valid_utf8(source)) throw Error(ErrorCode::MalformedInput, "input is not valid UTF-8");

  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;
  if (format == TableFormat::JSONRecords) {
    nlohmann::ordered_json doc;
    try {
      doc = nlohmann::ordered_json::parse(source);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedInput, e.what());
    }
    if (!doc.is_array()) throw Error(ErrorCode::MalformedInput, "JSON records must be an array of objects");
    for (const auto& rec : doc) {
      if (!rec.is_object()) throw Error(ErrorCode::MalformedInput, "JSON record is not an object");
      if (headers.empty())
        for (const auto& [k, _] : rec.items()) headers.push_back(k);
      std::vector<std::string> row(headers.size());
      for (const auto& [k, v] : rec.items()) {
        const auto it = std::find(headers.begin(), headers.end(), k);
        if (it == headers.end()) throw Error(ErrorCode::MalformedInput, "record key '" + k + "' is not in the header set");
        row[static_cast<std::size_t>(it - headers.begin())] = detail::json_scalar_text(v);
      }
      rows.push_back(std::move(row));
      if (opts.max_rows != 0 && rows.size() >= opts.max_rows) break;
    }
  } else {
    auto records = detail::split_delimited(source, format == TableFormat::TSV ? '\t' : ',');
    if (records.empty()) throw Error(ErrorCode::EmptyTable, "no header row");
    headers = std::move(records.front());
    const std::size_t n = records.size() - 1;
    const std::size_t keep = opts.max_rows == 0 ? n : std::min(n, opts.max_rows);
    for (std::size_t r = 1; r <= n; ++r) {
      if (records[r].size() != headers.size())
        throw Error(ErrorCode::MalformedInput, "record " + std::to_string(r + 1) + " has " +
                                                   std::to_string(records[r].size()) + " cells, expected " +
                                                   std::to_string(headers.size()));
      if (r <= keep) rows.push_back(std::move(records[r]));
    }
  }
  Table t = make_table(opts.id, headers, rows);
  detail::reject_if_empty(t);
  return t;
}

inline TableFormat format_from_path(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".tsv" || ext == ".tab") return TableFormat::TSV;
  if (ext == ".json") return TableFormat::JSONRecords;
  return TableFormat::CSV;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline Table load_table(const std::filesystem::path& p, std::size_t max_rows = 10000) {
  ParseOptions opts;
  opts.id = p.stem().string();
  opts.max_rows = max_rows;
  return parse_table(read_file(p), format_from_path(p), opts);
}

// ---------- serialization ----------

inline std::string to_csv(const Table& t, char delim = ',') {
  auto quote = [delim](const std::string& s) {
    if (s.find_first_of(std::string{delim, '"', '\n', '\r'}) == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += "\"\"";
      else q.push_back(c);
    }
    q += '"';
    return q;
  };
  std::string out;
  for (std::size_t j = 0; j < t.fields.size(); ++j) {
    if (j) out.push_back(delim);
    out += quote(t.fields[j].header);
  }
  out.push_back('\n');
  for (std::size_t r = 0; r < t.n_rows; ++r) {
    for (std::size_t j = 0; j < t.fields.size(); ++j) {
      if (j) out.push_back(delim);
      out += quote(cell_text(t.fields[j].cells[r]));
    }
    out.push_back('\n');
  }
  return out;
}

/// Canonical serialized table: {id, n_rows, fields:[{index, header, field_type, cells}]}.
/// Cells are written as source text, null for Empty.
inline nlohmann::ordered_json table_to_json(const Table& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  j["n_rows"] = t.n_rows;
  j["fields"] = nlohmann::ordered_json::array();
  for (const Field& f : t.fields) {
    nlohmann::ordered_json jf;
    jf["index"] = f.index;
    jf["header"] = f.header;
    jf["field_type"] = field_type_name(f.field_type);
    auto& cells = jf["cells"] = nlohmann::ordered_json::array();
    for (const CellValue& c : f.cells) {
      if (is_empty(c)) cells.push_back(nullptr);
      else cells.push_back(cell_text(c));
    }
    j["fields"].push_back(std::move(jf));
  }
  return j;
}

inline Table table_from_json(const nlohmann::ordered_json& j) {
  try {
    std::vector<std::string> headers;
    const auto n_rows = j.at("n_rows").get<std::size_t>();
    std::vector<std::vector<std::string>> rows(n_rows);
    for (const auto& jf : j.at("fields")) {
      headers.push_back(jf.at("header").get<std::string>());
      const auto& cells = jf.at("cells");
      if (cells.size() != n_rows) throw Error(ErrorCode::MalformedInput, "field cell count differs from n_rows");
      for (std::size_t r = 0; r < n_rows; ++r)
        rows[r].push_back(cells[r].is_null() ? std::string() : cells[r].get<std::string>());
    }
    Table t = make_table(j.at("id").get<std::string>(), headers, rows);
    for (std::size_t k = 0; k < t.fields.size(); ++k) {
      const auto& jf = j.at("fields")[k];
      if (jf.contains("field_type")) t.fields[k].field_type = field_type_from_name(jf["field_type"].get<std::string>());
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, e.what());
  }
}

// ---------- schema fingerprint ----------

/// Equality of fingerprints is schema equality: field count plus each field's
/// type and header. The digest is an injective length-prefixed encoding; hex()
/// is a short display id.
struct SchemaFingerprint {
  std::string digest;

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(digest)));
    return buf;
  }
  auto operator<=>(const SchemaFingerprint&) const = default;
};

inline SchemaFingerprint schema_fingerprint(const Table& t) {
  SchemaFingerprint fp;
  fp.digest = std::to_string(t.fields.size()) + "|";
  for (const Field& f : t.fields) {
    fp.digest += std::to_string(static_cast<int>(f.field_type));
    fp.digest += ':';
    fp.digest += std::to_string(f.header.size());
    fp.digest += ':';
    fp.digest += f.header;
    fp.digest += '|';
  }
  return fp;
}

}  // namespace anameta

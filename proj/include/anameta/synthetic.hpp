#pragma once

// A generated corpus with planted regularities, for training and benchmarking
// without a real spreadsheet crawl. Each table has a unique text key, a
// repeated categorical column, a '$' money column and a count column, plus
// sometimes a rank or year column that no artifact uses. Every table comes
// with a bar chart (key against money and count), a pivot (money summed by
// category) and a type sidecar (Money, Count, and theme dimension types).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "anameta/label_forge.hpp"
#include "anameta/rng.hpp"
#include "anameta/table_core.hpp"

namespace anameta {

struct SyntheticConfig {
  std::size_t tables = 200;
  std::size_t min_rows = 8;
  std::size_t max_rows = 16;
  double rank_probability = 0.3;
  double year_probability = 0.3;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  std::vector<Table> tables;
  std::vector<Artifact> artifacts;
  std::vector<TypeSidecar> sidecars;
};

namespace synthetic_detail {

struct Theme {
  std::vector<std::string> key_headers;
  std::vector<std::string> category_headers;
  std::vector<std::string> categories;
  std::string key_type;
  std::string category_type;
};

inline const std::vector<Theme>& themes() {
  static const std::vector<Theme> t = {
      {{"Product", "Item", "Model"}, {"Category", "Segment", "Brand"},
       {"Hardware", "Software", "Services", "Accessories"}, "business.business_operation", "organization.organization"},
      {{"City", "Town", "Location"}, {"Region", "State", "Zone"},
       {"North", "South", "East", "West", "Central"}, "location.citytown", "location.administrative_division"},
      {{"Team", "Club", "Squad"}, {"League", "Division", "Conference"},
       {"Premier", "Championship", "Eastern", "Western"}, "sports.sports_team", "sports.sports_league"},
      {{"Player", "Athlete", "Name"}, {"Position", "Role", "Unit"},
       {"Forward", "Defender", "Midfielder", "Keeper"}, "sports.pro_athlete", "sports.sports_team"},
      {{"Country", "Nation", "Market"}, {"Continent", "Bloc", "Area"},
       {"Europe", "Asia", "Africa", "Americas"}, "location.country", "location.location"},
      {{"Film", "Title", "Movie"}, {"Genre", "Studio", "Rating"},
       {"Drama", "Comedy", "Action", "Horror"}, "film.film", "organization.organization"},
  };
  return t;
}

inline const std::vector<std::string> kMoneyHeaders = {"Revenue", "Sales", "Cost", "Budget", "Price", "Profit", "Spend", "Income"};
inline const std::vector<std::string> kCountHeaders = {"Units", "Orders", "Visits", "Tickets", "Votes", "Wins", "Members", "Downloads"};
inline const std::vector<std::string> kSyllables = {"ka", "lo", "mi", "ra", "ven", "tor", "sil", "da", "mar", "en",
                                                    "qui", "bel", "nor", "sa", "tez", "um", "ri", "co", "fa", "lin"};

template <class V>
const auto& pick(const V& v, Rng& rng) {
  return v[static_cast<std::size_t>(rng.below(v.size()))];
}

inline std::string word(Rng& rng) {
  std::string w;
  const std::size_t n = 2 + static_cast<std::size_t>(rng.below(2));
  for (std::size_t k = 0; k < n; ++k) w += pick(kSyllables, rng);
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

inline std::string grouped(long long v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

inline std::string money(Rng& rng, double scale) {
  const double v = scale * rng.uniform(0.05, 1.0);
  const auto cents = static_cast<long long>(v * 100.0);
  char frac[4];
  std::snprintf(frac, sizeof frac, "%02lld", cents % 100);
  return "$" + grouped(cents / 100) + "." + frac;
}

}  // namespace synthetic_detail

inline SyntheticCorpus generate_corpus(const SyntheticConfig& cfg) {
  using namespace synthetic_detail;
  SyntheticCorpus c;
  Rng rng(Rng::mix(cfg.seed, 0x53594e));
  for (std::size_t ti = 0; ti < cfg.tables; ++ti) {
    const Theme& th = pick(themes(), rng);
    const std::size_t rows = cfg.min_rows + static_cast<std::size_t>(rng.below(cfg.max_rows - cfg.min_rows + 1));
    enum Kind { Key, Cat, Money, Count, Rank, Year };
    std::vector<Kind> kinds = {Key, Cat, Money, Count};
    if (rng.uniform() < cfg.rank_probability) kinds.push_back(Rank);
    if (rng.uniform() < cfg.year_probability) kinds.push_back(Year);
    rng.shuffle(kinds);

    std::vector<std::string> headers;
    std::vector<std::vector<std::string>> cols;
    std::set<std::string> used_keys;
    std::vector<std::string> cats(th.categories);
    rng.shuffle(cats);
    cats.resize(2 + static_cast<std::size_t>(rng.below(cats.size() - 1)));
    const double scale = std::pow(10.0, 2.0 + 3.0 * rng.uniform());
    const double count_scale = std::pow(10.0, 1.0 + 2.0 * rng.uniform());
    const int first_year = 1990 + static_cast<int>(rng.below(20));
    std::size_t key = 0, cat = 0, mon = 0, cnt = 0;
    for (std::size_t f = 0; f < kinds.size(); ++f) {
      std::vector<std::string> v(rows);
      switch (kinds[f]) {
        case Key:
          key = f;
          headers.push_back(pick(th.key_headers, rng));
          for (auto& x : v) {
            do x = word(rng);
            while (!used_keys.insert(x).second);
          }
          break;
        case Cat:
          cat = f;
          headers.push_back(pick(th.category_headers, rng));
          // every value at least twice when the table is long enough
          for (std::size_t r = 0; r < rows; ++r) v[r] = r < 2 * cats.size() ? cats[r / 2] : pick(cats, rng);
          rng.shuffle(v);
          break;
        case Money:
          mon = f;
          headers.push_back(pick(kMoneyHeaders, rng));
          for (auto& x : v) x = money(rng, scale);
          break;
        case Count:
          cnt = f;
          headers.push_back(pick(kCountHeaders, rng));
          for (auto& x : v) x = std::to_string(1 + rng.below(static_cast<std::uint64_t>(count_scale)));
          break;
        case Rank:
          headers.emplace_back("Rank");
          for (std::size_t r = 0; r < rows; ++r) v[r] = std::to_string(r + 1);
          break;
        case Year:
          headers.emplace_back("Year");
          for (std::size_t r = 0; r < rows; ++r) v[r] = std::to_string(first_year + static_cast<int>(r));
          break;
      }
      cols.push_back(std::move(v));
    }
    std::vector<std::vector<std::string>> body(rows, std::vector<std::string>(kinds.size()));
    for (std::size_t f = 0; f < kinds.size(); ++f)
      for (std::size_t r = 0; r < rows; ++r) body[r][f] = cols[f][r];
    char id[32];
    std::snprintf(id, sizeof id, "syn%04zu", ti);
    c.tables.push_back(make_table(id, headers, body));

    c.artifacts.push_back(ChartArtifact{id, ChartType::Bar, {key}, {{mon, cnt}}});
    c.artifacts.push_back(PivotArtifact{id, {cat}, {}, {{mon, "SUM"}}});
    TypeSidecar s;
    s.table_id = id;
    s.msr_type[mon] = "Money";
    s.msr_type[cnt] = "Count";
    s.dim_type[key] = th.key_type;
    s.dim_type[cat] = th.category_type;
    c.sidecars.push_back(std::move(s));
  }
  return c;
}

/// tables/<id>.csv, artifacts.jsonl and sidecars.jsonl under `dir`.
inline void write_corpus(const SyntheticCorpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "tables");
  for (const Table& t : c.tables) {
    std::ofstream out(dir / "tables" / (t.id + ".csv"), std::ios::binary);
    out << to_csv(t);
    if (!out) throw Error(ErrorCode::Io, "cannot write table " + t.id);
  }
  std::ofstream a(dir / "artifacts.jsonl", std::ios::binary);
  for (const Artifact& x : c.artifacts) a << artifact_to_json(x).dump() << '\n';
  std::ofstream s(dir / "sidecars.jsonl", std::ios::binary);
  for (const TypeSidecar& x : c.sidecars) s << sidecar_to_json(x).dump() << '\n';
  if (!a || !s) throw Error(ErrorCode::Io, "cannot write corpus metadata under " + dir.string());
}

}  // namespace anameta

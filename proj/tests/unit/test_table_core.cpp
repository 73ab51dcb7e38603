#include <gtest/gtest.h>

#include <algorithm>

#include "anameta/rng.hpp"
#include "anameta/table_core.hpp"

using namespace anameta;

namespace {

Table csv(std::string_view text) { return parse_table(text, TableFormat::CSV); }

}  // namespace

TEST(ParseTable, SmallCsvGetsTypedFields) {
  const Table t = csv("a,b\n1,x\n2,y");
  ASSERT_EQ(t.fields.size(), 2u);
  EXPECT_EQ(t.n_rows, 2u);
  EXPECT_EQ(t.fields[0].field_type, FieldType::Decimal);
  EXPECT_EQ(t.fields[1].field_type, FieldType::String);
  EXPECT_EQ(t.fields[1].index, 1u);
}

TEST(ParseTable, YearColumn) {
  EXPECT_EQ(csv("Year\n1998\n1999").fields[0].field_type, FieldType::Year);
}

TEST(ParseTable, AllBlankRowsAreEmptyTable) {
  try {
    csv("v\n\n");
    FAIL() << "expected EmptyTable";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTable);
  }
  try {
    csv("a,b\n,\n,\n");
    FAIL() << "expected EmptyTable";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTable);
  }
}

TEST(ParseTable, RaggedRowsAndBadBytesAreMalformed) {
  for (std::string_view bad : {std::string_view("a,b\n1\n"), std::string_view("a\n\xff\xfe\n"),
                               std::string_view("a\n\"open\n")}) {
    try {
      csv(bad);
      FAIL() << "accepted " << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MalformedInput);
    }
  }
}

TEST(ParseTable, QuotedCsvAndTsvAndJson) {
  const Table q = csv("name,note\n\"Smith, J\",\"said \"\"hi\"\"\"\r\nLee,ok\r\n");
  EXPECT_EQ(cell_text(q.fields[0].cells[0]), "Smith, J");
  EXPECT_EQ(cell_text(q.fields[1].cells[0]), "said \"hi\"");

  const Table tsv = parse_table("x\ty\n1\t2\n", TableFormat::TSV);
  EXPECT_EQ(tsv.fields.size(), 2u);

  const Table js = parse_table(R"([{"city":"Oslo","pop":700000},{"pop":5,"city":"Bergen"},{"city":"X"}])",
                               TableFormat::JSONRecords);
  ASSERT_EQ(js.fields.size(), 2u);
  EXPECT_EQ(js.fields[0].header, "city");
  EXPECT_EQ(cell_text(js.fields[0].cells[1]), "Bergen");
  EXPECT_TRUE(is_empty(js.fields[1].cells[2]));
  EXPECT_EQ(js.fields[1].field_type, FieldType::Decimal);
}

TEST(ParseTable, HeadersTrimmedNotCased) {
  EXPECT_EQ(csv("  Product Name ,b\nx,1").fields[0].header, "Product Name");
}

TEST(ParseTable, RowCapTruncatesHead) {
  std::string text = "n\n";
  for (int i = 0; i < 50; ++i) text += std::to_string(i) + "\n";
  ParseOptions opts;
  opts.max_rows = 10;
  const Table t = parse_table(text, TableFormat::CSV, opts);
  EXPECT_EQ(t.n_rows, 10u);
  EXPECT_EQ(as_number(t.fields[0].cells[9])->value, 9.0);
}

TEST(ParseCell, NumberMarkers) {
  const CellValue c = parse_cell("$1,234.50");
  const NumberCell* n = as_number(c);
  ASSERT_NE(n, nullptr);
  EXPECT_DOUBLE_EQ(n->value, 1234.5);
  EXPECT_TRUE(n->currency);
  EXPECT_TRUE(n->grouped);
  EXPECT_EQ(n->currency_symbol, "$");

  const NumberCell* p = as_number(parse_cell("12.5%"));
  ASSERT_NE(p, nullptr);
  EXPECT_TRUE(p->percent);
  EXPECT_DOUBLE_EQ(p->value, 12.5);

  EXPECT_DOUBLE_EQ(as_number(parse_cell("-$3"))->value, -3.0);
  EXPECT_DOUBLE_EQ(as_number(parse_cell("1e3"))->value, 1000.0);
  EXPECT_TRUE(std::holds_alternative<TextCell>(parse_cell("1,23")));
  EXPECT_TRUE(std::holds_alternative<TextCell>(parse_cell("inf")));
  EXPECT_TRUE(is_empty(parse_cell("   ")));
}

TEST(ParseCell, DateTimes) {
  const DateTimeCell* d = as_datetime(parse_cell("2020-01-03"));
  ASSERT_NE(d, nullptr);
  EXPECT_EQ(d->year, 2020);
  EXPECT_EQ(d->month, 1);
  EXPECT_EQ(d->day, 3);
  EXPECT_NE(as_datetime(parse_cell("2020-01-03T10:22:01Z")), nullptr);
  EXPECT_NE(as_datetime(parse_cell("3/14/2015")), nullptr);
  EXPECT_EQ(as_datetime(parse_cell("2020-13-01")), nullptr);
}

TEST(DetectFieldType, Examples) {
  const auto cells = [](std::initializer_list<const char*> raw) {
    std::vector<CellValue> out;
    for (const char* r : raw) out.push_back(parse_cell(r));
    return out;
  };
  EXPECT_EQ(detect_field_type(cells({"1.5", "2.0", "3"})), FieldType::Decimal);
  EXPECT_EQ(detect_field_type(cells({"2001", "2002", "2003"})), FieldType::Year);
  EXPECT_EQ(detect_field_type(cells({"", ""})), FieldType::Unknown);
  EXPECT_EQ(detect_field_type(cells({"2001", "2001"})), FieldType::Decimal);
  EXPECT_EQ(detect_field_type(cells({"2,001", "2,002"})), FieldType::Decimal);
  EXPECT_EQ(detect_field_type(cells({"2020-01-01", "x"})), FieldType::DateTime);
  EXPECT_EQ(detect_field_type(cells({"a", "1", "b"})), FieldType::String);
  EXPECT_EQ(detect_field_type(cells({"a", "1"})), FieldType::Decimal);
}

TEST(DetectFieldType, RowPermutationInvariant) {
  Rng rng(7);
  const std::vector<const char*> pool = {"1", "2.5", "x", "", "2020-02-02", "1999", "$4", "7%"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<CellValue> cells;
    const std::size_t n = 1 + rng.below(9);
    for (std::size_t i = 0; i < n; ++i) cells.push_back(parse_cell(pool[rng.below(pool.size())]));
    const FieldType before = detect_field_type(cells);
    rng.shuffle(cells);
    EXPECT_EQ(detect_field_type(cells), before);
  }
}

TEST(Serialization, CsvRoundTrip) {
  const Table t = csv("Name,Price,Year,When\n\"A, inc\",$5,2001,2020-01-01\nB,7%,2002,\n");
  const Table back = parse_table(to_csv(t), TableFormat::CSV);
  EXPECT_EQ(back, t);
}

TEST(Serialization, JsonRoundTrip) {
  const Table t = csv("Name,Price\nA,$5\nB,\n");
  EXPECT_EQ(table_from_json(table_to_json(t)), t);
  EXPECT_EQ(table_to_json(t)["fields"][1]["field_type"], "Decimal");
}

TEST(SchemaFingerprint, EqualityIsSchemaEquality) {
  const Table a = csv("Name,Price\nA,1\nB,2");
  const Table a2 = csv("Name,Price\nA,1\nB,2");
  const Table values = csv("Name,Price\nQ,9\nR,8\nS,7");
  const Table typed = csv("Name,Price\nA,x\nB,y");
  const Table header = csv("Name,Cost\nA,1\nB,2");
  EXPECT_EQ(schema_fingerprint(a), schema_fingerprint(a2));
  EXPECT_EQ(schema_fingerprint(a).hex(), schema_fingerprint(a2).hex());
  EXPECT_EQ(schema_fingerprint(a), schema_fingerprint(values));
  EXPECT_NE(schema_fingerprint(a), schema_fingerprint(typed));
  EXPECT_NE(schema_fingerprint(a), schema_fingerprint(header));
  EXPECT_EQ(schema_fingerprint(a).hex().size(), 16u);
}

TEST(SchemaFingerprint, HeaderBoundariesDoNotCollide) {
  Table x;
  x.fields = {Field{0, "a|1:b", {}, FieldType::String}};
  Table y;
  y.fields = {Field{0, "a", {}, FieldType::String}, Field{1, "b", {}, FieldType::String}};
  EXPECT_NE(schema_fingerprint(x), schema_fingerprint(y));
}

TEST(SchemaFingerprint, ValueMutationNeverChangesFingerprint) {
  Rng rng(11);
  Table base = csv("k,v,t\na,1,x\nb,2,y\nc,3,z");
  const auto fp = schema_fingerprint(base);
  for (int trial = 0; trial < 100; ++trial) {
    Table m = base;
    for (Field& f : m.fields)
      for (CellValue& c : f.cells)
        if (f.field_type == FieldType::Decimal) c = NumberCell{static_cast<double>(rng.below(1000)), "0"};
        else c = TextCell{"w" + std::to_string(rng.below(1000))};
    EXPECT_EQ(schema_fingerprint(m), fp);
  }
}

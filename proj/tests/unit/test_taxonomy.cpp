#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "anameta/taxonomy.hpp"

using namespace anameta;

namespace {

std::filesystem::path data_dir() { return ANAMETA_DATA_DIR; }

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / ("anameta_tax_" + name);
  std::ofstream(p) << text;
  return p;
}

ErrorCode load_error(const VocabularyPaths& paths) {
  try {
    load_vocabularies(paths);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;  // sentinel: should not load
}

}  // namespace

TEST(Vocabularies, BuiltinShape) {
  const Vocabularies& v = Vocabularies::builtin();
  EXPECT_EQ(v.measure_types().size(), 20u);
  EXPECT_EQ(v.measure_type_labels().size(), 19u);
  EXPECT_EQ(v.dimension_types().size(), 17u);
  EXPECT_EQ(v.agg_functions().size(), 9u);
  EXPECT_EQ(v.agg_functions().front(), "SUM");
  EXPECT_TRUE(v.has_dimension_type("sports.sports_team"));
  EXPECT_EQ(v.dimension_types().front().parent, "people");
  for (const MeasureType& t : v.measure_types()) {
    if (t.category == MeasureCategory::Dimensionless) EXPECT_TRUE(t.units.empty()) << t.name;
    else if (t.category != MeasureCategory::Others) EXPECT_FALSE(t.units.empty()) << t.name;
  }
}

TEST(Vocabularies, EmbeddedCopyMatchesDataFiles) {
  EXPECT_EQ(read_vocab_file(data_dir() / "measure_types.json"), builtin::kBuiltinMeasureTypes);
  EXPECT_EQ(read_vocab_file(data_dir() / "dimension_types.txt"), builtin::kBuiltinDimensionTypes);
  EXPECT_EQ(read_vocab_file(data_dir() / "agg_functions.txt"), builtin::kBuiltinAggFunctions);
  EXPECT_EQ(read_vocab_file(data_dir() / "property_map.json"), builtin::kBuiltinPropertyMap);
}

TEST(Vocabularies, LoadsFullSizeDimensionFile) {
  std::string lines;
  for (int i = 0; i < 255; ++i) lines += "domain" + std::to_string(i % 7) + ".type" + std::to_string(i) + "\n";
  VocabularyPaths paths;
  paths.dimension_types = write_temp("dims255.txt", lines);
  const Vocabularies v = load_vocabularies(paths);
  EXPECT_EQ(v.dimension_types().size(), 255u);
}

TEST(Vocabularies, LoadErrors) {
  VocabularyPaths dup;
  dup.dimension_types = write_temp("dup.txt", "a.b\nc.d\na.b\n");
  EXPECT_EQ(load_error(dup), ErrorCode::DuplicateType);

  VocabularyPaths empty;
  empty.agg_functions = write_temp("empty.txt", "\n# nothing\n");
  EXPECT_EQ(load_error(empty), ErrorCode::EmptyVocabulary);

  VocabularyPaths agg_case;
  agg_case.agg_functions = write_temp("aggcase.txt", "sum\nSUM\n");
  EXPECT_EQ(load_error(agg_case), ErrorCode::DuplicateType);

  VocabularyPaths missing_map;
  missing_map.property_map = "/nonexistent/anameta/map.json";
  EXPECT_EQ(load_error(missing_map), ErrorCode::MissingMapping);

  VocabularyPaths shared_unit;
  shared_unit.measure_types = write_temp(
      "shared.json", R"([{"name":"A","category":"Money","units":["kg"]},{"name":"B","category":"Scientific","units":["KG"]}])");
  shared_unit.property_map = write_temp("emptymap.json", "{}");
  EXPECT_EQ(load_error(shared_unit), ErrorCode::DuplicateType);
}

TEST(Vocabularies, AggNamesCanonicalUppercase) {
  VocabularyPaths p;
  p.agg_functions = write_temp("aggs.txt", "sum\nAverage\n");
  const Vocabularies v = load_vocabularies(p);
  EXPECT_EQ(v.agg_functions(), (std::vector<std::string>{"SUM", "AVERAGE"}));
  EXPECT_EQ(v.agg_index("average"), 1u);
}

TEST(DetectUnit, SpecExamples) {
  auto money = detect_unit("Price ($)");
  ASSERT_TRUE(money);
  EXPECT_EQ(money->unit, "$");
  EXPECT_EQ(money->measure_type->name, "Money");

  auto mass = detect_unit("Weight kg");
  ASSERT_TRUE(mass);
  EXPECT_EQ(mass->unit, "kg");
  EXPECT_EQ(mass->measure_type->name, "Mass");

  EXPECT_FALSE(detect_unit("Name"));
  EXPECT_FALSE(detect_unit("Product Name"));
  EXPECT_FALSE(detect_unit("Category"));
}

TEST(DetectUnit, LongestMatchWins) {
  EXPECT_EQ(detect_unit("Cost (US$)")->unit, "US$");
  EXPECT_EQ(detect_unit("Distance (km)")->measure_type->name, "Length");
  EXPECT_EQ(detect_unit("Speed km/h")->unit, "km/h");
  EXPECT_EQ(detect_unit("Area (km²)")->measure_type->name, "Area");
  EXPECT_EQ(detect_unit("Temp °C")->measure_type->name, "Temperature");
  EXPECT_EQ(detect_unit("Power kWh")->measure_type->name, "Energy");
}

TEST(DetectUnit, AlphabeticUnitsIgnoreCaseSymbolsDoNot) {
  EXPECT_EQ(detect_unit("Weight KG")->measure_type->name, "Mass");
  EXPECT_EQ(detect_unit("weight Kg")->measure_type->name, "Mass");
  EXPECT_EQ(detect_unit("Size (mb)")->measure_type->name, "DataSize");
  EXPECT_FALSE(detect_unit("Temp °c"));
  EXPECT_EQ(detect_unit("Temp °C")->measure_type->name, "Temperature");
}

TEST(DetectUnit, WordBoundaries) {
  EXPECT_FALSE(detect_unit("Comments"));
  EXPECT_FALSE(detect_unit("Status"));
  EXPECT_EQ(detect_unit("12 kg")->unit, "kg");
  EXPECT_EQ(detect_unit("12kg")->unit, "kg");
}

TEST(PropertyMap, Examples) {
  const Vocabularies& v = Vocabularies::builtin();
  EXPECT_EQ(v.map_property_to_measure_type("dbo:populationTotal").name, "Count");
  EXPECT_EQ(v.map_property_to_measure_type("dbo:elevation").name, "Length");
  EXPECT_EQ(v.map_property_to_measure_type("http://dbpedia.org/ontology/elevation").name, "Length");
  EXPECT_EQ(v.map_property_to_measure_type("dbo:noSuchThing").name, "Others");
}

TEST(Taxonomy, LabelsResolveInRegistry) {
  const Vocabularies& v = Vocabularies::builtin();
  for (const std::string& name : v.measure_type_labels()) EXPECT_NE(v.find_measure_type(name), nullptr);
  for (const auto& [iri, type] : v.property_map()) EXPECT_NE(v.find_measure_type(type), nullptr) << iri;
  for (const auto& lx : v.lexicon()) {
    const auto m = v.detect_unit("x " + lx.text);
    ASSERT_TRUE(m) << lx.text;
    EXPECT_EQ(m->measure_type->name, v.measure_types()[lx.type_index].name) << lx.text;
  }
}

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "anameta/label_forge.hpp"
#include "anameta/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args) {
  const fs::path err = fs::temp_directory_path() / "anameta_cli_test.err";
  const std::string cmd = std::string("'") + ANAMETA_CLI_PATH + "' " + args + " 2>'" + err.string() + "'";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  const int status = pclose(p);
  std::ifstream e(err);
  std::string err_text((std::istreambuf_iterator<char>(e)), {});
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out, err_text};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "anameta_cli_suite";
    fs::remove_all(dir_);
    anameta::SyntheticConfig c;
    c.tables = 20;
    c.seed = 2;
    anameta::write_corpus(anameta::generate_corpus(c), dir_ / "corpus");
  }
  static fs::path dir_;
};
fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, NoArgumentsIsUsageError) {
  const CliResult r = cli("");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(cli("annotate").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST_F(Cli, AnnotateRulesPrintsAnnotation) {
  const CliResult r = cli("annotate " + q(dir_ / "corpus/tables/syn0000.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["schema"], "anameta.v1");
  EXPECT_EQ(j["model"], "rules");
  EXPECT_EQ(j["table_id"], "syn0000");
}

TEST_F(Cli, ForestModelNeedsFile) { EXPECT_EQ(cli("annotate --model forest " + q(dir_ / "corpus/tables/syn0000.csv")).code, 2); }

TEST_F(Cli, EmptyTableIsDataError) {
  const fs::path p = dir_ / "empty.csv";
  std::ofstream(p) << "a,b\n";
  const CliResult r = cli("annotate " + q(p));
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(r.out.empty());
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"], "EmptyTable");
}

TEST_F(Cli, LabelsThenLeakedEvaluationFails) {
  const fs::path c = dir_ / "corpus";
  const fs::path labels = dir_ / "labels.jsonl";
  CliResult r = cli("derive-labels --split --tables " + q(c / "tables") + " --artifacts " + q(c / "artifacts.jsonl") + " --sidecars " +
              q(c / "sidecars.jsonl") + " -o " + q(labels));
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli("evaluate --models rules --tables " + q(c / "tables") + " --labels " + q(labels));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("| Model |", 0), 0u);

  auto ex = anameta::examples_from_jsonl(anameta::read_file(labels));
  ex[1].fingerprint = ex[0].fingerprint;
  ex[0].split = anameta::Split::Train;
  ex[1].split = anameta::Split::Test;
  const fs::path leak = dir_ / "leak.jsonl";
  std::ofstream(leak) << anameta::examples_to_jsonl(ex);
  r = cli("evaluate --models rules --tables " + q(c / "tables") + " --labels " + q(leak));
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "SplitLeakage");
}

TEST_F(Cli, EmptyQaTaskSetEmitsNothing) {
  const CliResult r = cli("export-qa --tasks '' " + q(dir_ / "corpus/tables/syn0001.csv"));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  const CliResult s = cli("export-qa --tasks msr_dim " + q(dir_ / "corpus/tables/syn0001.csv"));
  EXPECT_EQ(s.code, 0) << s.err;
  EXPECT_GT(std::count(s.out.begin(), s.out.end(), '\n'), 0);
}

TEST_F(Cli, ErrorsLeaveNoPartialOutput) {
  const fs::path out = dir_ / "never.json";
  const CliResult r = cli("-o " + q(out) + " annotate " + q(dir_ / "missing.csv"));
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(fs::exists(out));
}

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using representor::cli::run;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "representor");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("representor_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const fs::path data = REPRESENTOR_TEST_DATA;
    src_ = (data / "tiny.src").string();
    tgt_ = (data / "tiny.tgt").string();
    golden_ = (data / "tiny.vocab").string();
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // A few training steps of a very small model over the fixture corpus.
  Result train_small(const std::string& ck, const std::string& seed = "3", const std::string& objective = "cfp",
                     std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train",  "--src",   src_,      "--tgt",     tgt_,   "--vocab",
                                  golden_,  "--checkpoint", ck,   "--objective", objective, "--seed",
                                  seed,     "--steps", "6",       "--warmup",  "4",    "--batch-size",
                                  "4",      "--layers", "1",      "--dim",     "8",    "--heads",
                                  "2",      "--ffn",   "16",      "--max-len", "24"};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  }

  fs::path dir_;
  std::string src_, tgt_, golden_;
};

}  // namespace

TEST_F(Cli, BuildVocabMatchesGoldenFileAndIsIdempotent) {
  const auto out = path("v.txt");
  auto r = cli({"build-vocab", "--src", src_, "--tgt", tgt_, "--src-size", "6", "--tgt-size", "100", "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(out), slurp(golden_));
  r = cli({"build-vocab", "--src", src_, "--tgt", tgt_, "--src-size", "6", "--tgt-size", "100", "--out", out});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(slurp(out), slurp(golden_));
}

TEST_F(Cli, BuildVocabRecordsLargeBudgets) {
  std::ofstream s(path("big.src")), t(path("big.tgt"));
  for (int line = 0; line < 500; ++line) {
    for (int k = 0; k < 70; ++k) s << (k ? " " : "") << "s" << line * 70 + k;
    for (int k = 0; k < 60; ++k) t << (k ? " " : "") << "t" << line * 60 + k;
    s << '\n';
    t << '\n';
  }
  s.close();
  t.close();
  const auto r = cli({"build-vocab", "--src", path("big.src"), "--tgt", path("big.tgt"), "--src-size", "35000",
                      "--tgt-size", "30000", "--out", path("big.vocab")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_lines(path("big.vocab")).front(), "representor-vocab v1 35000 30000");
}

TEST_F(Cli, BuildVocabMissingInputIsUsageError) {
  const auto r = cli({"build-vocab", "--src", path("nope.src"), "--tgt", tgt_, "--out", path("v.txt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST_F(Cli, PrepareWritesFourExamplesPerPair) {
  const auto r = cli({"prepare", "--src", src_, "--tgt", tgt_, "--vocab", golden_, "--objective", "cfp"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  EXPECT_EQ(n, 4 * read_lines(src_).size());
}

TEST_F(Cli, TrainIsDeterministicAndLogsFourDirections) {
  ASSERT_EQ(train_small(path("a.ck")).code, 0);
  ASSERT_EQ(train_small(path("b.ck")).code, 0);
  const auto a = slurp(path("a.ck.metrics.tsv"));
  EXPECT_EQ(a, slurp(path("b.ck.metrics.tsv")));
  EXPECT_EQ(slurp(path("a.ck")), slurp(path("b.ck")));
  const auto lines = read_lines(path("a.ck.metrics.tsv"));
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0], "step\tlr\tloss_total\tloss_s2t_l2r\tloss_s2t_r2l\tloss_t2s_l2r\tloss_t2s_r2l");
  EXPECT_EQ(lines[6].rfind("6\t", 0), 0u);
  EXPECT_TRUE(fs::exists(path("a.ck.ini")));

  ASSERT_EQ(train_small(path("c.ck"), "4").code, 0);
  EXPECT_NE(a, slurp(path("c.ck.metrics.tsv")));
}

TEST_F(Cli, TrainFromConfigFileWithOverride) {
  std::ofstream(path("run.ini")) << "[paths]\nsrc = " << src_ << "\ntgt = " << tgt_ << "\nvocab = " << golden_
                                 << "\ncheckpoint = " << path("m.ck")
                                 << "\n[model]\nlayers = 1\ndim = 8\nheads = 2\nffn = 16\nmax_len = 24\n"
                                    "[train]\nsteps = 50\nwarmup = 4\nbatch_size = 4\nobjective = st-ts\n";
  const auto r = cli({"train", "--config", path("run.ini"), "--steps", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("effective config"), std::string::npos);
  const auto lines = read_lines(path("m.ck.metrics.tsv"));
  ASSERT_EQ(lines.size(), 4u);
  std::size_t nans = 0;
  for (auto at = lines[1].find("nan"); at != std::string::npos; at = lines[1].find("nan", at + 1)) ++nans;
  EXPECT_EQ(nans, 2u);
  EXPECT_NE(slurp(path("m.ck.ini")).find("steps = 3"), std::string::npos);
}

TEST_F(Cli, TrainResumesFromCheckpoint) {
  ASSERT_EQ(train_small(path("full.ck")).code, 0);
  ASSERT_EQ(train_small(path("part.ck"), "3", "cfp", {"--steps", "3"}).code, 0);
  const auto r = train_small(path("part.ck"), "3", "cfp", {"--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("full.ck")), slurp(path("part.ck")));
}

TEST_F(Cli, TrainRejectsBadConfig) {
  std::ofstream(path("bad.ini")) << "[train]\nstepz = 3\n";
  EXPECT_EQ(cli({"train", "--config", path("bad.ini")}).code, 2);
  EXPECT_EQ(train_small(path("x.ck"), "3", "everything").code, 2);
  EXPECT_EQ(train_small(path("x.ck"), "3", "cfp", {"--label-smoothing", "1.5"}).code, 2);
  EXPECT_EQ(train_small(path("x.ck"), "3", "cfp", {"--heads", "3"}).code, 2);
  EXPECT_EQ(cli({"train", "--src", src_}).code, 2);
}

TEST_F(Cli, TrainDivergenceExitsWithNumericCode) {
  const auto r = train_small(path("nan.ck"), "3", "cfp", {"--lr-scale", "1e200", "--warmup", "1"});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("numeric"), std::string::npos);
}

TEST_F(Cli, TranslateBothTasksAndVerboseColumns) {
  ASSERT_EQ(train_small(path("m.ck")).code, 0);
  for (const char* mode : {"l2r", "r2l", "mixed", "joint"}) {
    const auto r = cli({"translate", "--checkpoint", path("m.ck"), "--vocab", golden_, "--input", src_, "--mode", mode,
                        "--verbose", "--decode-max-len", "6"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream in(r.out);
    std::size_t n = 0;
    for (std::string l; std::getline(in, l); ++n) {
      const auto dir = l.substr(0, l.find('\t'));
      EXPECT_TRUE(dir == "l2r" || dir == "r2l" || dir == "both") << l;
      EXPECT_EQ(std::count(l.begin(), l.end(), '\t'), 2) << l;
    }
    EXPECT_EQ(n, read_lines(src_).size()) << mode;
  }
  const auto t2s = cli({"translate", "--checkpoint", path("m.ck"), "--vocab", golden_, "--input", tgt_, "--task",
                        "t2s", "--output", path("back.txt"), "--decode-max-len", "6"});
  ASSERT_EQ(t2s.code, 0) << t2s.err;
  EXPECT_EQ(read_lines(path("back.txt")).size(), read_lines(tgt_).size());
  EXPECT_EQ(cli({"translate", "--checkpoint", path("m.ck"), "--vocab", golden_, "--input", src_, "--task", "xx"}).code,
            2);
}

TEST_F(Cli, TranslateRejectsMismatchedVocabulary) {
  ASSERT_EQ(train_small(path("m.ck")).code, 0);
  ASSERT_EQ(cli({"build-vocab", "--src", src_, "--tgt", tgt_, "--src-size", "3", "--tgt-size", "3", "--out",
                 path("other.vocab")})
                .code,
            0);
  const auto r = cli({"translate", "--checkpoint", path("m.ck"), "--vocab", path("other.vocab"), "--input", src_});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("does not match"), std::string::npos);
}

TEST_F(Cli, BleuOfIdenticalFilesIsHundred) {
  auto r = cli({"bleu", "--hyp", src_, "--ref", src_});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("bleu: 100.00\n", 0), 0u);
  r = cli({"bleu", "--hyp", src_, "--ref", src_, "--json"});
  EXPECT_DOUBLE_EQ(nlohmann::json::parse(r.out).at("bleu").get<double>(), 100.0);
  EXPECT_EQ(cli({"bleu", "--hyp", src_, "--ref", tgt_, "--ref", path("missing")}).code, 2);
}

TEST_F(Cli, ReportWithBucketsAndDirections) {
  std::ofstream dirs(path("dirs.txt"));
  for (std::size_t i = 0; i < read_lines(src_).size(); ++i) dirs << (i % 2 ? "r2l" : "l2r") << "\t-1.0\tx\n";
  dirs.close();
  const auto r = cli({"report", "--hyp", src_, "--ref", src_, "--src", src_, "--length-buckets", "3", "--directions",
                      path("dirs.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("length_bucket\tsentences\tbleu"), std::string::npos);
  EXPECT_NE(r.out.find("[1,3]"), std::string::npos);
  EXPECT_NE(r.out.find("l2r_percent"), std::string::npos);
}

TEST_F(Cli, ParamsTableAndRecords) {
  auto r = cli({"params"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("100.0%"), std::string::npos);
  std::istringstream in(r.out);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  EXPECT_EQ(n, 6u);

  r = cli({"params", "--all", "--emit", "records"});
  ASSERT_EQ(r.code, 0);
  std::istringstream rec(r.out);
  n = 0;
  for (std::string l; std::getline(rec, l); ++n) EXPECT_TRUE(nlohmann::json::parse(l).contains("percent"));
  EXPECT_EQ(n, 8u);

  r = cli({"params", "--sharing", "es+eds", "--dim", "512", "--heads", "8", "--ffn", "2048"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(cli({"params", "--sharing", "xyz"}).code, 2);
  EXPECT_EQ(cli({"params", "--emit", "csv"}).code, 2);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(cli({"--bogus"}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"params", "--layers", "abc"}).code, 2);
  const auto help = cli({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("translate"), std::string::npos);
}

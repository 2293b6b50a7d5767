#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "rdns/binary_io.hpp"
#include "rdns/cli.hpp"
#include "rdns/synth_data.hpp"

using namespace rdns;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("rdns_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string path(const std::string& name) const { return (root_ / name).string(); }

  std::string make_dataset() {
    const CliResult r = run({"gen-data", "--out", path("data"), "--count", "10", "--benign", "5", "--malignant",
                       "5", "--seed", "3"});
    EXPECT_EQ(r.code, 0) << r.err;
    return path("data");
  }

  fs::path root_;
};

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(CliTest, GenDataPrintsSplit) {
  const CliResult r = run({"gen-data", "--out", path("data"), "--count", "10", "--benign", "5", "--malignant", "5"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "cases 10 train 8 validation 2\n");
  EXPECT_TRUE(fs::exists(path("data") + "/manifest.json"));
}

TEST_F(CliTest, GenDataRejectsBadPathsWithoutWriting) {
  write_file(path("file"), "x");
  const CliResult into_file = run({"gen-data", "--out", path("file"), "--count", "10", "--benign", "5",
                             "--malignant", "5"});
  EXPECT_EQ(into_file.code, 2);
  EXPECT_FALSE(into_file.err.empty());

  const CliResult no_parent = run({"gen-data", "--out", path("missing/deeper/data")});
  EXPECT_EQ(no_parent.code, 2);
  EXPECT_FALSE(fs::exists(path("missing")));

  make_dataset();
  const CliResult again = run({"gen-data", "--out", path("data"), "--count", "10", "--benign", "5",
                         "--malignant", "5"});
  EXPECT_EQ(again.code, 2);
  const CliResult forced = run({"gen-data", "--out", path("data"), "--count", "10", "--benign", "5",
                          "--malignant", "5", "--force"});
  EXPECT_EQ(forced.code, 0) << forced.err;
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run({"gen-data", "--out", path("d"), "--bogus"}).code, 2);
  EXPECT_EQ(run({"no-such-command"}).code, 2);
  EXPECT_EQ(run({"gen-data", "--out", path("d"), "--count", "10"}).code, 2);
  EXPECT_EQ(run({"train", "--dataset", path("nowhere"), "--out", path("t")}).code, 2);
  EXPECT_EQ(run({"eval", "--checkpoint", path("none.rdns"), "--dataset", make_dataset(), "--out", path("e")}).code,
            2);
}

TEST_F(CliTest, TrainZeroEpochsWritesInitialCheckpointAndHeader) {
  const std::string data = make_dataset();
  const CliResult r = run({"train", "--dataset", data, "--out", path("t"), "--epochs", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "best epoch 0\n");
  EXPECT_TRUE(fs::exists(path("t") + "/checkpoint.rdns"));
  EXPECT_EQ(count_lines(read_file(path("t") + "/train_log.csv")), 1u);
  EXPECT_EQ(read_file(path("t") + "/train_steps.csv"), "step,total,class_loss,box_loss,mask_loss\n");
}

TEST_F(CliTest, TrainLogHasOneRowPerEpochAndIsReproducible) {
  const std::string data = make_dataset();
  for (const char* out : {"a", "b"}) {
    const CliResult r = run({"train", "--dataset", data, "--out", path(out), "--epochs", "2", "--batch", "4",
                       "--blocks", "1,1", "--k", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const std::string log = read_file(path("a") + "/train_log.csv");
  EXPECT_EQ(count_lines(log), 3u);
  EXPECT_EQ(log, read_file(path("b") + "/train_log.csv"));
  EXPECT_EQ(read_file(path("a") + "/checkpoint.rdns"), read_file(path("b") + "/checkpoint.rdns"));
  EXPECT_EQ(run({"train", "--dataset", data, "--out", path("c"), "--kind", "detector", "--blocks", "1,1"}).code,
            2);
  EXPECT_EQ(run({"train", "--dataset", data, "--out", path("c"), "--theta", "0"}).code, 2);
}

TEST_F(CliTest, NonFiniteTrainingExitsThree) {
  DatasetSpec spec;
  spec.count = 10;
  spec.benign_count = spec.malignant_count = 5;
  Dataset d = generate_dataset(spec);
  for (Phantom& p : d.train) {
    for (double& v : p.image.data()) v = std::nan("");
  }
  export_dataset(d, path("poisoned"));
  const CliResult r = run({"train", "--dataset", path("poisoned"), "--out", path("t"), "--epochs", "1"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("epoch 1"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvalOracleGivesAllOnesRow) {
  const std::string data = make_dataset();
  ASSERT_EQ(run({"train", "--kind", "oracle", "--dataset", data, "--out", path("o")}).code, 0);
  const CliResult r = run({"eval", "--checkpoint", path("o") + "/checkpoint.rdns", "--dataset", data, "--out",
                     path("report")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "acc,sen,spe,precision,f1,auc\n1,1,1,1,1,1\n");
  EXPECT_EQ(read_file(path("report") + "/metrics.csv"), r.out);
  EXPECT_TRUE(fs::exists(path("report") + "/roc.csv"));
  EXPECT_EQ(count_lines(read_file(path("report") + "/predictions.csv")), 3u);
}

TEST_F(CliTest, GradcheckPassesAndReportsBrokenOp) {
  const CliResult ok = run({"gradcheck", "--cases", "1"});
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_EQ(ok.out.substr(0, ok.out.find('\n')), "op,cases,max_rel_error,tolerance,kink_skips,status");
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);

  const CliResult broken = run({"gradcheck", "--cases", "1", "--break", "roi_align"});
  EXPECT_EQ(broken.code, 1);
  EXPECT_NE(broken.err.find("roi_align"), std::string::npos);
  EXPECT_NE(broken.out.find("roi_align,1,"), std::string::npos);

  // A different step changes the finite differences, hence the reported errors.
  const CliResult small_step = run({"gradcheck", "--cases", "1", "--eps", "1e-5"});
  EXPECT_EQ(small_step.code, 0);
  EXPECT_NE(small_step.out, ok.out);
  EXPECT_EQ(run({"gradcheck", "--eps", "0"}).code, 2);
  EXPECT_EQ(run({"gradcheck", "--break", "nonexistent"}).code, 2);
}

TEST_F(CliTest, RoiDemoContrast) {
  const CliResult constant = run({"roi-demo", "--roi", "0.5,1.5,5.5,6", "--map", "constant:2.5"});
  ASSERT_EQ(constant.code, 0) << constant.err;
  EXPECT_EQ(constant.out, "bin_y,bin_x,align,pool\n0,0,2.5,2.5\n0,1,2.5,2.5\n1,0,2.5,2.5\n1,1,2.5,2.5\n");

  auto columns = [](const std::string& csv) {
    std::vector<std::string> align, pool;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto a = line.find(',', line.find(',') + 1), b = line.rfind(',');
      align.push_back(line.substr(a + 1, b - a - 1));
      pool.push_back(line.substr(b + 1));
    }
    return std::pair{align, pool};
  };
  const CliResult a = run({"roi-demo", "--roi", "1.1,2.2,5.5,6.1", "--map", "random:4"});
  const CliResult b = run({"roi-demo", "--roi", "1.5,2.6,5.9,6.5", "--map", "random:4"});
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_NE(columns(a.out).first, columns(b.out).first);
  EXPECT_EQ(columns(a.out).second, columns(b.out).second);

  EXPECT_EQ(run({"roi-demo", "--roi", "1,2,3"}).code, 2);
  EXPECT_EQ(run({"roi-demo", "--roi", "a,b,c,d"}).code, 2);
  EXPECT_EQ(run({"roi-demo", "--roi", "4,4,1,1"}).code, 2);
  EXPECT_EQ(run({"roi-demo", "--roi", "1,1,2,2", "--map", "wavy"}).code, 2);

  const CliResult to_file = run({"roi-demo", "--roi", "1,1,4,4", "--out", path("demo.csv")});
  ASSERT_EQ(to_file.code, 0);
  EXPECT_EQ(count_lines(read_file(path("demo.csv"))), 5u);
}

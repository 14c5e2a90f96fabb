#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "wordprobe/checkpoint.hpp"
#include "wordprobe/cli.hpp"
#include "wordprobe/csv.hpp"

using namespace wordprobe;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "wordprobe");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kSmall{"--layers", "2", "--heads", "2", "--dim", "8", "--max-len", "48"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("stats subcommand") {
  testutil::TempDir dir("cli_stats");
  testutil::spit(dir / "c.txt", "ab c\nd ef gh i\n");
  const auto r = cli({"stats", "--corpus", (dir / "c.txt").string(), "--out", (dir / "o").string()});
  REQUIRE(r.code == 0);
  const std::string stats = testutil::slurp(dir / "o" / "stats.csv");
  CHECK(stats == "corpus,sentence_count,word_count,char_count,avg_sentence_length_chars\nc.txt,2,6,9,4.5000\n");
  CHECK(testutil::slurp(dir / "o" / "baseline.csv").find("c.txt,4.5000,0.222,0.222222") != std::string::npos);

  const auto avg = cli({"stats", "--avg-len", "26.3", "--out", (dir / "p").string()});
  REQUIRE(avg.code == 0);
  CHECK(avg.out.find("random baseline 0.038") != std::string::npos);
  CHECK(testutil::slurp(dir / "p" / "baseline.csv").find("avg_len,26.3000,0.038,") != std::string::npos);
}

TEST_CASE("errors exit with code 2 and name the problem") {
  testutil::TempDir dir("cli_err");
  const auto missing = cli({"stats", "--corpus", (dir / "nope.txt").string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nope.txt") != std::string::npos);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({}).code == 2);
  CHECK(cli({"stats", "--layers", "x", "--avg-len", "3"}).code == 2);
  CHECK(cli({"stats", "--avg-len", "0", "--out", (dir / "o").string()}).code == 2);
  CHECK(cli({"--help"}).code == 0);

  testutil::spit(dir / "bad.txt", "a b\nc\x01 d\n");
  const auto bad = cli({"stats", "--corpus", (dir / "bad.txt").string(), "--out", (dir / "o").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("InvalidChar") != std::string::npos);
}

TEST_CASE("config files are overridden by flags") {
  testutil::TempDir dir("cli_cfg");
  testutil::spit(dir / "run.cfg", "out=" + (dir / "from_cfg").string() + "\n[stats]\navg-len=26.3\n");
  const auto r = cli({"stats", "--config", (dir / "run.cfg").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "from_cfg" / "baseline.csv"));
  const auto r2 = cli({"stats", "--config", (dir / "run.cfg").string(), "--out", (dir / "flag").string()});
  REQUIRE(r2.code == 0);
  CHECK(fs::exists(dir / "flag" / "baseline.csv"));
}

TEST_CASE("pipeline end to end, rerun byte-identical") {
  testutil::TempDir dir("cli_pipe");
  const std::string data = (dir / "data").string();
  REQUIRE(cli({"gen-corpus", "--train-size", "40", "--dev-size", "10", "--test-size", "10", "--seed", "3", "--out",
               data})
              .code == 0);
  const std::string train = data + "/train.txt", dev = data + "/dev.txt", test = data + "/test.txt";
  const std::string corpora = train + "," + dev + "," + test;

  auto pipeline = [&](const std::string& tag) {
    const std::string out = (dir / tag).string();
    REQUIRE(cli(with({"train-mlm", "--corpus", train, "--epochs", "1", "--out", out + "/mlm"}, kSmall)).code == 0);
    const std::string ck = out + "/mlm/checkpoint";
    REQUIRE(cli({"analyze", "--checkpoint", ck, "--corpus", test, "--matrix", "2,1,3", "--out", out + "/an"}).code == 0);
    REQUIRE(cli({"dump", "--checkpoint", ck, "--corpus", test, "--out", out + "/dump"}).code == 0);
    REQUIRE(cli({"analyze", "--dump", out + "/dump/dump", "--out", out + "/an_dump"}).code == 0);
    REQUIRE(cli({"probe", "--checkpoint", ck, "--corpora", corpora, "--lr", "1e-2", "--out", out + "/probe"}).code == 0);
    REQUIRE(cli({"finetune", "--checkpoint", ck, "--task", "boundary", "--data", train, "--epochs", "1", "--out",
                 out + "/ft"})
                .code == 0);
    REQUIRE(cli({"delta-report", "--base", ck, "--finetuned", "same=" + ck, "--finetuned",
                 "boundary=" + out + "/ft/checkpoint", "--dataset", "fine=" + corpora, "--lr", "1e-2", "--out",
                 out + "/delta"})
                .code == 0);
  };
  pipeline("a");
  pipeline("b");

  const char* files[] = {"mlm/mlm_loss.csv",        "mlm/checkpoint/model.bin",  "mlm/checkpoint/model.manifest",
                         "an/head_stats.csv",        "an/best_heads.csv",         "an/window_curve.csv",
                         "an/matrix_l2_h1_s3.csv",   "an/matrix_l2_h1_s3.svg",    "dump/dump/records.bin",
                         "probe/probe.csv",          "ft/checkpoint/model.bin",   "ft/finetune_loss.csv",
                         "ft/task_eval.csv",         "delta/delta.csv",           "delta/layer_curves.csv"};
  for (const char* f : files) {
    INFO(f);
    REQUIRE(fs::exists(dir / "a" / f));
    CHECK(testutil::slurp(dir / "a" / f) == testutil::slurp(dir / "b" / f));
  }
  // Dump path and checkpoint path give identical reports.
  for (const char* f : {"head_stats.csv", "best_heads.csv", "window_curve.csv"}) {
    CHECK(testutil::slurp(dir / "a" / "an" / f) == testutil::slurp(dir / "a" / "an_dump" / f));
  }
  const std::string loss = testutil::slurp(dir / "a" / "mlm" / "mlm_loss.csv");
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 2);
  const std::string probe = testutil::slurp(dir / "a" / "probe" / "probe.csv");
  CHECK(probe.find("\n2,") != std::string::npos);
  CHECK(probe.find("\nbaseline_all_s,") != std::string::npos);
  const std::string delta = testutil::slurp(dir / "a" / "delta" / "delta.csv");
  CHECK(delta.find("\nsame,") != std::string::npos);
  CHECK(delta.find(",+0.00,unchanged\n") != std::string::npos);

  // Probe from dumps.
  const std::string out = (dir / "a").string();
  const std::string ck = out + "/mlm/checkpoint";
  for (const char* split : {"train", "dev", "test"}) {
    REQUIRE(cli({"dump", "--checkpoint", ck, "--corpus", data + "/" + split + ".txt", "--out", out + "/d_" + split})
                .code == 0);
  }
  REQUIRE(cli({"probe", "--dumps", out + "/d_train/dump," + out + "/d_dev/dump," + out + "/d_test/dump", "--lr", "1e-2",
               "--out", out + "/probe_dump"})
              .code == 0);
  CHECK(testutil::slurp(dir / "a" / "probe_dump" / "probe.csv") == probe);

  // Thread count does not change results.
  REQUIRE(cli({"probe", "--checkpoint", ck, "--corpora", corpora, "--lr", "1e-2", "--threads", "3", "--out",
               out + "/probe_mt"})
              .code == 0);
  CHECK(testutil::slurp(dir / "a" / "probe_mt" / "probe.csv") == probe);

  const auto bad_matrix = cli({"analyze", "--checkpoint", ck, "--corpus", test, "--matrix", "9,1,1", "--out", out + "/x"});
  CHECK(bad_matrix.code == 2);
  CHECK(bad_matrix.err.find("IndexOutOfRange") != std::string::npos);
}

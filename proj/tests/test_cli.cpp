#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "robdet/checkpoint.hpp"
#include "robdet/cli.hpp"
#include "robdet/feature_bank.hpp"
#include "robdet/metrics.hpp"
#include "test_util.hpp"

using namespace robdet;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const TempDir& d, const std::string& name) { return (d / name).string(); }

std::vector<std::string> small_train_flags() {
  return {"--set", "hidden_dims=8,4", "--set", "batch_size=64", "--set", "lr=0.01", "--epochs", "2"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"train", "--help"}).code == 0);
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"synth", "--real", "3"}).code == 2);
  CHECK(cli({"synth", "--real", "x", "--fake", "2", "--dim", "2", "--out", "a"}).code == 2);
  CHECK(cli({"synth", "--real", "0", "--fake", "2", "--dim", "2", "--out", "a"}).code == 2);
}

TEST_CASE("synth writes a deterministic bank") {
  TempDir d;
  auto r = cli({"synth", "--real", "100", "--fake", "514", "--dim", "4", "--seed", "3", "--out", p(d, "a.fbnk")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("n_real=100 n_fake=514") != std::string::npos);
  REQUIRE(cli({"synth", "--real", "100", "--fake", "514", "--dim", "4", "--seed", "3", "--out", p(d, "b.fbnk")}).code == 0);
  CHECK(slurp(d / "a.fbnk") == slurp(d / "b.fbnk"));
  const auto bank = load_bank(d / "a.fbnk");
  CHECK(class_counts(bank) == ClassCounts{100, 514});
  CHECK(bank.dim() == 4);

  REQUIRE(cli({"synth", "--real", "2", "--fake", "3", "--dim", "2", "--out", p(d, "c.csv")}).code == 0);
  CHECK(load_bank(d / "c.csv").size() == 5);
}

TEST_CASE("augment and split") {
  TempDir d;
  REQUIRE(cli({"synth", "--real", "20", "--fake", "80", "--dim", "3", "--out", p(d, "a.fbnk")}).code == 0);
  REQUIRE(cli({"augment", "--in", p(d, "a.fbnk"), "--out", p(d, "aug.fbnk")}).code == 0);
  CHECK(load_bank(d / "aug.fbnk").size() == 200);
  auto r = cli({"split", "--in", p(d, "a.fbnk"), "--train-out", p(d, "t.fbnk"), "--val-out", p(d, "v.fbnk"),
                "--fraction", "0.25"});
  REQUIRE(r.code == 0);
  CHECK(class_counts(load_bank(d / "v.fbnk")) == ClassCounts{5, 20});
  CHECK(class_counts(load_bank(d / "t.fbnk")) == ClassCounts{15, 60});
  CHECK(cli({"augment", "--in", p(d, "missing.fbnk"), "--out", p(d, "x.fbnk")}).code == 2);
}

TEST_CASE("train, eval and predict") {
  TempDir d;
  REQUIRE(cli({"synth", "--real", "60", "--fake", "240", "--dim", "5", "--seed", "1", "--out", p(d, "train.fbnk")}).code == 0);
  REQUIRE(cli({"synth", "--real", "50", "--fake", "50", "--dim", "5", "--seed", "2", "--out", p(d, "val.fbnk")}).code == 0);
  const auto run = cli(concat({"train", "--train", p(d, "train.fbnk"), "--val", p(d, "val.fbnk"), "--out-dir",
                               p(d, "run")},
                              small_train_flags()));
  INFO(run.err);
  REQUIRE(run.code == 0);
  for (auto f : {"best.ckpt", "final.ckpt", "train.log", "config.txt", "report.txt"})
    CHECK(std::filesystem::exists(d.path() / "run" / f));
  const auto log = slurp(d.path() / "run" / "train.log");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);
  CHECK(log.rfind("epoch=0 loss=", 0) == 0);
  CHECK(load_checkpoint(d.path() / "run" / "final.ckpt").optimizer.has_value());
  CHECK_FALSE(load_checkpoint(d.path() / "run" / "best.ckpt").optimizer.has_value());

  const auto ckpt = p(d, "run/best.ckpt");
  const auto ev = cli({"eval", "--ckpt", ckpt, "--bank", p(d, "val.fbnk"), "--roc", p(d, "roc.csv")});
  REQUIRE(ev.code == 0);
  const auto report = parse_report(ev.out);
  CHECK(ev.out == slurp(d.path() / "run" / "report.txt"));
  const auto roc = parse_roc_csv(slurp(d / "roc.csv"));
  CHECK(std::abs(roc_area(roc) - report.auc) < 1e-10);

  // the best epoch's log line carries the same validation AUC
  const auto best_line = run.out.substr(run.out.find("best_epoch=") + 11);
  const auto best_epoch = std::stoul(best_line);
  std::istringstream log_lines(log);
  std::string entry;
  for (std::size_t e = 0; e <= best_epoch; ++e) std::getline(log_lines, entry);
  const auto at = entry.find("val_auc=") + 8;
  CHECK(std::stod(entry.substr(at, entry.find(' ', at) - at)) == report.auc);

  const auto pr = cli({"predict", "--ckpt", ckpt, "--bank", p(d, "val.fbnk")});
  REQUIRE(pr.code == 0);
  std::istringstream lines(pr.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "index,logit,prediction");
  std::vector<double> logits;
  std::size_t correct = 0;
  const auto val = load_bank(d / "val.fbnk");
  while (std::getline(lines, line)) {
    const auto c1 = line.find(','), c2 = line.rfind(',');
    const double logit = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    const bool real = line.substr(c2 + 1) == "real";
    CHECK(real == (logit > 0));
    correct += real == (val.label(logits.size()) == kReal);
    logits.push_back(logit);
  }
  REQUIRE(logits.size() == 100);
  CHECK(static_cast<double>(correct) / 100 == doctest::Approx(report.accuracy).epsilon(1e-12));
  std::vector<std::uint8_t> labels(val.labels().begin(), val.labels().end());
  CHECK(oracle::pair_count_auc(logits, labels) == doctest::Approx(report.auc).epsilon(1e-6));

  REQUIRE(cli({"predict", "--ckpt", ckpt, "--bank", p(d, "val.fbnk"), "--out", p(d, "pred.csv")}).code == 0);
  CHECK(slurp(d / "pred.csv") == pr.out);

  // determinism through the whole command
  const auto again = cli(concat({"train", "--train", p(d, "train.fbnk"), "--val", p(d, "val.fbnk"), "--out-dir",
                                 p(d, "run2")},
                                small_train_flags()));
  REQUIRE(again.code == 0);
  for (auto f : {"best.ckpt", "final.ckpt", "train.log", "config.txt", "report.txt"})
    CHECK(slurp(d.path() / "run" / f) == slurp(d.path() / "run2" / f));
}

TEST_CASE("predict with a zero output layer says fake everywhere") {
  TempDir d;
  REQUIRE(cli({"synth", "--real", "10", "--fake", "10", "--dim", "3", "--out", p(d, "a.fbnk")}).code == 0);
  MlpSpec s;
  s.input_dim = 3;
  s.hidden_dims = {4};
  auto params = init_params<double>(s, 1);
  params.out_weight.setZero();
  save_checkpoint({params, std::nullopt}, d / "zero.ckpt");
  const auto r = cli({"predict", "--ckpt", p(d, "zero.ckpt"), "--bank", p(d, "a.fbnk")});
  REQUIRE(r.code == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 21);
  CHECK(r.out.find(",real") == std::string::npos);
  CHECK(cli({"eval", "--ckpt", p(d, "zero.ckpt"), "--bank", p(d, "a.fbnk")}).out.find("auc=0.5\n") == 0);
}

TEST_CASE("both loss compositions train from the command line") {
  TempDir d;
  REQUIRE(cli({"synth", "--real", "40", "--fake", "160", "--dim", "4", "--out", p(d, "a.fbnk")}).code == 0);
  for (std::string loss : {"cvar_vs_auc", "ce_auc"}) {
    const auto r = cli(concat({"train", "--train", p(d, "a.fbnk"), "--out-dir", p(d, loss), "--loss", loss},
                              small_train_flags()));
    INFO(r.err);
    CHECK(r.code == 0);
    CHECK(slurp(d.path() / loss / "config.txt").find("loss=" + loss + "\n") != std::string::npos);
    CHECK_NOTHROW(parse_report(slurp(d.path() / loss / "report.txt")));
  }
}

TEST_CASE("train carves validation when none is given, and resumes") {
  TempDir d;
  REQUIRE(cli({"synth", "--real", "60", "--fake", "240", "--dim", "5", "--out", p(d, "train.fbnk")}).code == 0);
  const auto r = cli(concat({"train", "--train", p(d, "train.fbnk"), "--out-dir", p(d, "run"), "--no-augment"},
                            small_train_flags()));
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(class_counts(load_bank(d.path() / "run" / "val.fbnk")) == ClassCounts{6, 24});

  // two more epochs on top of the first two
  auto flags = small_train_flags();
  flags.back() = "4";
  const auto res = cli(concat({"train", "--train", p(d, "train.fbnk"), "--out-dir", p(d, "more"), "--no-augment",
                               "--resume", p(d, "run/final.ckpt")},
                              flags));
  INFO(res.err);
  REQUIRE(res.code == 0);
  const auto log = slurp(d.path() / "more" / "train.log");
  CHECK(log.rfind("epoch=2 ", 0) == 0);
}

TEST_CASE("train and eval failures map to exit codes") {
  TempDir d;
  REQUIRE(cli({"synth", "--real", "30", "--fake", "30", "--dim", "3", "--out", p(d, "a.fbnk")}).code == 0);
  REQUIRE(cli({"synth", "--real", "30", "--fake", "30", "--dim", "4", "--out", p(d, "b.fbnk")}).code == 0);

  auto bad_key = cli({"train", "--train", p(d, "a.fbnk"), "--out-dir", p(d, "r"), "--set", "learning_rate=1"});
  CHECK(bad_key.code == 2);
  CHECK(bad_key.err.find("learning_rate") != std::string::npos);
  CHECK(cli({"train", "--train", p(d, "a.fbnk"), "--out-dir", p(d, "r"), "--set", "alpha=2"}).code == 2);
  CHECK(cli({"train", "--train", p(d, "a.fbnk"), "--out-dir", p(d, "r"), "--loss", "mse"}).code == 2);

  spit(d / "run.cfg", "epochs=1\nepochs=2\n");
  CHECK(cli({"train", "--train", p(d, "a.fbnk"), "--out-dir", p(d, "r"), "--config", p(d, "run.cfg")}).code == 2);

  CHECK(cli({"eval", "--ckpt", p(d, "missing.ckpt"), "--bank", p(d, "a.fbnk")}).code == 2);

  // a checkpoint trained on dim 3 cannot score a dim-4 bank
  REQUIRE(cli({"train", "--train", p(d, "a.fbnk"), "--val", p(d, "a.fbnk"), "--out-dir", p(d, "r"), "--set",
               "hidden_dims=4", "--set", "batch_size=16", "--epochs", "1"})
              .code == 0);
  const auto mismatch = cli({"eval", "--ckpt", p(d, "r/best.ckpt"), "--bank", p(d, "b.fbnk")});
  CHECK(mismatch.code == 1);
  CHECK_FALSE(mismatch.err.empty());

  spit(d / "junk.ckpt", "MLPC");
  CHECK(cli({"eval", "--ckpt", p(d, "junk.ckpt"), "--bank", p(d, "a.fbnk")}).code == 1);

  const auto diverge = cli({"train", "--train", p(d, "a.fbnk"), "--val", p(d, "a.fbnk"), "--out-dir", p(d, "n"),
                            "--set", "hidden_dims=4", "--set", "lr=1e308", "--set", "weight_decay=1e10", "--epochs", "1"});
  CHECK(diverge.code == 1);
  CHECK(diverge.err.find("numeric") != std::string::npos);
  CHECK(diverge.err.find("at epoch 0 batch 0") != std::string::npos);
}

TEST_CASE("ablate") {
  TempDir d;
  REQUIRE(cli({"synth", "--real", "40", "--fake", "160", "--dim", "4", "--out", p(d, "a.fbnk")}).code == 0);
  const auto r = cli(concat({"ablate", "--kind", "gamma", "--values", "0,0.6,1", "--train", p(d, "a.fbnk"), "--out",
                             p(d, "g.csv"), "--no-augment"},
                            small_train_flags()));
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto rows = oracle::read_csv_numbers(slurp(d / "g.csv").substr(slurp(d / "g.csv").find('\n') + 1));
  REQUIRE(rows.size() == 3);
  CHECK(rows[2][0] == 1.0);
  CHECK(rows[0].size() == 7);
  CHECK(r.out == slurp(d / "g.csv"));

  CHECK(cli(concat({"ablate", "--kind", "depth", "--values", "3,7", "--train", p(d, "a.fbnk")}, small_train_flags()))
            .code == 2);
  CHECK(cli({"ablate", "--kind", "width", "--values", "3", "--train", p(d, "a.fbnk")}).code == 2);
  CHECK(cli({"ablate", "--kind", "gamma", "--values", "", "--train", p(d, "a.fbnk")}).code == 2);
}

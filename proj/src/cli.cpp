#include "robdet/cli.hpp"

#include <charconv>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "file_io.hpp"
#include "robdet/augmentation.hpp"
#include "robdet/checkpoint.hpp"
#include "robdet/feature_bank.hpp"
#include "robdet/metrics.hpp"
#include "robdet/run_config.hpp"
#include "robdet/trainer.hpp"

namespace robdet {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::string_view v = text;
  while (!v.empty()) {
    auto comma = v.find(',');
    auto item = v.substr(0, comma);
    T x{};
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc{} || p != item.data() + item.size() || item.empty())
      throw UsageError("bad list value '" + std::string(item) + "'");
    out.push_back(x);
    v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
  }
  if (out.empty()) throw UsageError("value list is empty");
  return out;
}

struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string loss;
  std::size_t epochs = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value run config")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a config key, key=value (repeatable)");
    cmd->add_option("--loss", loss, "cvar_vs_auc or ce_auc")->check(CLI::IsMember({"cvar_vs_auc", "ce_auc"}));
    cmd->add_option("--epochs", epochs, "override epochs")->check(CLI::PositiveNumber);
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      apply_setting(cfg, std::string_view(kv).substr(0, eq), std::string_view(kv).substr(eq + 1));
    }
    if (!loss.empty()) apply_setting(cfg, "loss", loss);
    if (epochs) cfg.train.epochs = epochs;
    try {
      cfg.train.validate();
    } catch (const ArgumentError& e) {
      throw UsageError(std::string("invalid config: ") + e.what());
    }
    return cfg;
  }
};

struct SynthArgs {
  std::size_t n_real = 0, n_fake = 0, dim = 0;
  double separation = 2.0;
  std::uint64_t seed = 8079;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  auto bank = generate_synthetic(a.n_real, a.n_fake, a.dim, a.separation, a.seed);
  save_bank(bank, a.out);
  auto c = class_counts(bank);
  out << "wrote " << a.out << " n_real=" << c.n_real << " n_fake=" << c.n_fake << " dim=" << bank.dim()
      << " imbalance=1:" << fmt(static_cast<double>(c.n_fake) / static_cast<double>(c.n_real)) << "\n";
  return 0;
}

struct AugmentArgs {
  std::string in, out;
  double beta = 0.5;
  std::uint64_t seed = 8079;
};

int cmd_augment(const AugmentArgs& a, std::ostream& out) {
  auto bank = augment_bank(load_bank(a.in), {a.beta, a.seed});
  save_bank(bank, a.out);
  out << "wrote " << a.out << " samples=" << bank.size() << "\n";
  return 0;
}

struct SplitArgs {
  std::string in, train_out, val_out;
  double fraction = 0.1;
  std::uint64_t seed = 8079;
};

int cmd_split(const SplitArgs& a, std::ostream& out) {
  auto [tr, va] = split_bank(load_bank(a.in), a.fraction, a.seed);
  save_bank(tr, a.train_out);
  save_bank(va, a.val_out);
  out << "train=" << tr.size() << " val=" << va.size() << "\n";
  return 0;
}

struct TrainArgs {
  std::string train, val, out_dir, resume;
  double val_fraction = 0.1;
  bool no_augment = false;
  ConfigOptions config;
};

// Loads the training bank and a validation bank (given or carved out).
std::pair<FeatureBank, FeatureBank> load_banks(const std::string& train_path, const std::string& val_path,
                                               double val_fraction, std::uint64_t seed, const fs::path* save_val_to) {
  auto train_bank = load_bank(train_path);
  if (!val_path.empty()) return {std::move(train_bank), load_bank(val_path)};
  auto split = split_bank(train_bank, val_fraction, seed);
  if (save_val_to) save_bank(split.second, *save_val_to);
  return split;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto cfg = a.config.resolve();
  fs::create_directories(a.out_dir);
  const fs::path dir = a.out_dir;

  const fs::path val_copy = dir / "val.fbnk";
  auto [train_bank, val_bank] =
      load_banks(a.train, a.val, a.val_fraction, cfg.train.seed, a.val.empty() ? &val_copy : nullptr);
  if (!a.no_augment) train_bank = augment_bank(train_bank, cfg.augment());

  TrainControl control;
  if (!a.resume.empty()) control.resume_from = load_checkpoint(a.resume);
  auto outcome = train(train_bank, val_bank, cfg.train, control);

  save_checkpoint({outcome.best_params, std::nullopt}, dir / "best.ckpt");
  save_checkpoint({outcome.final_params, outcome.final_optimizer}, dir / "final.ckpt");
  detail::write_atomically(dir / "train.log", format_train_log(outcome.history));
  detail::write_atomically(dir / "config.txt", format_run_config(cfg));
  const auto report = format_report(evaluate(outcome.best_params, val_bank));
  detail::write_atomically(dir / "report.txt", report);

  auto c = class_counts(train_bank);
  out << "trained on " << train_bank.size() << " samples (n_real=" << c.n_real << " n_fake=" << c.n_fake
      << "), validated on " << val_bank.size() << "\n";
  out << "best_epoch=" << outcome.best_epoch << "\n" << report;
  return 0;
}

struct EvalArgs {
  std::string ckpt, bank, roc;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto ckpt = load_checkpoint(a.ckpt);
  auto bank = load_bank(a.bank);
  auto report = evaluate(ckpt.params, bank);
  out << format_report(report);
  if (!a.roc.empty()) detail::write_atomically(a.roc, format_roc_csv(report.roc_points));
  return 0;
}

struct PredictArgs {
  std::string ckpt, bank, out;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  auto ckpt = load_checkpoint(a.ckpt);
  auto bank = load_bank(a.bank);
  const Eigen::VectorXd logits = predict_logits(ckpt.params, bank);
  std::string csv = "index,logit,prediction\n";
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    csv += std::to_string(i) + "," + fmt(logits[i]) + "," + (logits[i] > 0 ? "real" : "fake") + "\n";
  if (a.out.empty()) {
    out << csv;
  } else {
    detail::write_atomically(a.out, csv);
    out << "wrote " << a.out << " rows=" << logits.size() << "\n";
  }
  return 0;
}

struct AblateArgs {
  std::string kind, values, train, val, out;
  double val_fraction = 0.1;
  bool no_augment = false;
  ConfigOptions config;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const auto cfg = a.config.resolve();
  std::vector<double> gammas;
  std::vector<std::size_t> depths;
  if (a.kind == "gamma") gammas = parse_list<double>(a.values);
  else depths = parse_list<std::size_t>(a.values);
  for (auto d : depths)
    if (d == 0 || d % 3 != 0 || d > 15) throw UsageError("depth values must be in {3,6,9,12,15}");

  auto [train_bank, val_bank] = load_banks(a.train, a.val, a.val_fraction, cfg.train.seed, nullptr);
  if (!a.no_augment) train_bank = augment_bank(train_bank, cfg.augment());
  const auto rows = a.kind == "gamma" ? ablate_gamma(train_bank, val_bank, cfg.train, gammas)
                                      : ablate_depth(train_bank, val_bank, cfg.train, depths);
  const auto csv = format_ablation_csv(a.kind, rows);
  if (!a.out.empty()) detail::write_atomically(a.out, csv);
  out << csv;
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Imbalance-robust real/fake classifier over feature banks", "robdet"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic imbalanced feature bank");
  s->add_option("--real", synth.n_real, "real samples")->required()->check(CLI::PositiveNumber);
  s->add_option("--fake", synth.n_fake, "fake samples")->required()->check(CLI::PositiveNumber);
  s->add_option("--dim", synth.dim, "feature dimension")->required()->check(CLI::PositiveNumber);
  s->add_option("--sep", synth.separation, "class separation along axis 0")->check(CLI::NonNegativeNumber);
  s->add_option("--seed", synth.seed);
  s->add_option("--out", synth.out, "output bank (.csv or binary)")->required();

  AugmentArgs aug;
  auto* g = app.add_subcommand("augment", "double a bank with noise-perturbed copies");
  g->add_option("--in", aug.in)->required()->check(CLI::ExistingFile);
  g->add_option("--out", aug.out)->required();
  g->add_option("--beta", aug.beta, "noise scale")->check(CLI::NonNegativeNumber);
  g->add_option("--seed", aug.seed);

  SplitArgs split;
  auto* sp = app.add_subcommand("split", "stratified train/validation split");
  sp->add_option("--in", split.in)->required()->check(CLI::ExistingFile);
  sp->add_option("--train-out", split.train_out)->required();
  sp->add_option("--val-out", split.val_out)->required();
  sp->add_option("--fraction", split.fraction)->check(CLI::Range(0.0, 1.0));
  sp->add_option("--seed", split.seed);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the classification head");
  t->add_option("--train", tr.train)->required()->check(CLI::ExistingFile);
  t->add_option("--val", tr.val, "validation bank; carved from --train if omitted")->check(CLI::ExistingFile);
  t->add_option("--val-fraction", tr.val_fraction)->check(CLI::Range(0.0, 1.0));
  t->add_option("--out-dir", tr.out_dir)->required();
  t->add_option("--resume", tr.resume, "continue from a final.ckpt")->check(CLI::ExistingFile);
  t->add_flag("--no-augment", tr.no_augment, "skip noise augmentation");
  tr.config.attach(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a bank");
  e->add_option("--ckpt", ev.ckpt)->required()->check(CLI::ExistingFile);
  e->add_option("--bank", ev.bank)->required()->check(CLI::ExistingFile);
  e->add_option("--roc", ev.roc, "write ROC points as CSV");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "per-sample logits and decisions");
  p->add_option("--ckpt", pr.ckpt)->required()->check(CLI::ExistingFile);
  p->add_option("--bank", pr.bank)->required()->check(CLI::ExistingFile);
  p->add_option("--out", pr.out, "CSV path; stdout if omitted");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "sweep gamma or depth");
  a->add_option("--kind", ab.kind)->required()->check(CLI::IsMember({"gamma", "depth"}));
  a->add_option("--values", ab.values, "comma-separated values")->required();
  a->add_option("--train", ab.train)->required()->check(CLI::ExistingFile);
  a->add_option("--val", ab.val)->check(CLI::ExistingFile);
  a->add_option("--val-fraction", ab.val_fraction)->check(CLI::Range(0.0, 1.0));
  a->add_option("--out", ab.out);
  a->add_flag("--no-augment", ab.no_augment);
  ab.config.attach(a);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return 2;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*g) return cmd_augment(aug, out);
    if (*sp) return cmd_split(split, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    if (*p) return cmd_predict(pr, out);
    if (*a) return cmd_ablate(ab, out);
  } catch (const ConfigError& ex) {
    err << "config error (key '" << ex.key() << "'): " << ex.what() << "\n";
    return 2;
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << "\n";
    return 2;
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace robdet

#ifndef ACL_CLI_HPP
#define ACL_CLI_HPP

// Command-line front end: `acl <command> [flags]`.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
// Every command writes `<command>_report.json` into --out-dir holding the
// effective configuration and the results.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "acl/config.hpp"

namespace acl {

struct CliOptions {
  std::string command;
  std::string config_path;
  std::string out_dir = "acl-out";
  std::string checkpoint;
  std::string protocol = "finetune";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> bn_branch;
  std::optional<double> label_fraction;
  std::optional<float> epsilon;
  std::optional<std::size_t> steps;
  bool grid = false;
};

namespace cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline RunConfig load_run_config(const CliOptions& o) {
  RunConfig cfg = desk_preset();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot read config " + o.config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + o.config_path + " is not valid JSON: " + e.what());
    }
    from_json(j, cfg);  // keys the file leaves out keep their preset values
  }
  if (o.seed) cfg.seed = *o.seed;
  cfg.apply_seed();
  cfg.fit_encoder_to_data();

  auto reject = [&](bool given, const char* flag) {
    if (given) throw ConfigError(std::string("flag ") + flag + " does not apply to '" + o.command + "'");
  };
  const bool downstream = o.command != "pretrain";
  reject(o.variant && o.command != "pretrain", "--variant");
  reject(o.bn_branch && !downstream, "--bn-branch");
  reject(o.label_fraction && o.command != "semisup", "--label-fraction");
  reject(o.grid && o.command != "semisup", "--grid");

  if (o.variant) cfg.pretrain.variant = parse_variant(*o.variant);
  if (o.bn_branch) {
    const BranchMode b = parse_branch(*o.bn_branch);
    cfg.finetune.bn_branch = cfg.linear.bn_branch = cfg.semisup.bn_branch = cfg.eval_branch = b;
  }
  if (o.label_fraction) cfg.semisup.label_fraction = *o.label_fraction;
  // --epsilon/--steps set the attack the command is about: the training
  // attack for pretrain, the reporting attack everywhere else.
  auto override_attack = [&](AttackConfig& a) {
    if (o.epsilon) a.epsilon = *o.epsilon;
    if (o.steps) a.steps = *o.steps;
  };
  if (o.command == "pretrain") {
    override_attack(cfg.pretrain.attack);
  } else {
    override_attack(cfg.eval_attack);
    override_attack(cfg.finetune.eval_attack);
    override_attack(cfg.linear.eval_attack);
    override_attack(cfg.semisup.eval_attack);
  }
  cfg.validate();
  return cfg;
}

inline std::string file_digest(const fs::path& p) { return hex64(fnv1a64(read_file(p))); }

inline json report_json(const EvalReport& r) {
  json j = {{"ta", r.ta}, {"ra", r.ra}, {"attack", r.attack}, {"n_examples", r.n_examples}, {"seed", r.seed}};
  if (r.corruption_acc) j["corruption_acc"] = *r.corruption_acc;
  return j;
}

inline std::map<std::string, std::string> run_meta(const RunConfig& cfg, const std::string& command) {
  return {{"command", command}, {"run_config_digest", hex64(fnv1a64(json(cfg).dump()))}};
}

inline fs::path fresh(const fs::path& p) {
  fs::remove(p);
  return p;
}

/// Pretrained model from --checkpoint, or a random initialization.
inline Model initial_model(const CliOptions& o, const RunConfig& cfg, const Dataset& data, json& report) {
  if (o.checkpoint.empty()) {
    report["init"] = "random";
    return Model(cfg.encoder, cfg.seed);
  }
  Model m = model_from_checkpoint(load_checkpoint(o.checkpoint));
  const auto& e = m.config();
  if (e.in_channels != data.channels || e.resolution != data.height || e.num_classes != data.num_classes) {
    throw ConfigError("checkpoint " + o.checkpoint + " expects " + std::to_string(e.in_channels) + "x" +
                      std::to_string(e.resolution) + " inputs and " + std::to_string(e.num_classes) +
                      " classes; dataset has " + std::to_string(data.channels) + "x" + std::to_string(data.height) +
                      " and " + std::to_string(data.num_classes));
  }
  report["init"] = o.checkpoint;
  report["init_digest"] = file_digest(o.checkpoint);
  report["encoder"] = e;
  return m;
}

inline json save_model(const Model& m, const fs::path& path, std::map<std::string, std::string> meta) {
  save_checkpoint(model_checkpoint(m, std::move(meta)), path);
  return {{"checkpoint", path.string()}, {"checkpoint_digest", file_digest(path)}};
}

inline json run_pretrain(const CliOptions& o, const RunConfig& cfg, const fs::path& dir) {
  const Dataset train = cfg.dataset.load_train();
  PretrainOutputs out{fresh(dir / "pretrain_metrics.csv"), dir / "pretrain.ckpt", run_meta(cfg, o.command)};
  const PretrainResult r = run_pretraining(train, cfg.pretrain, Model(cfg.encoder, cfg.seed), out);
  json j = {{"steps", r.steps}, {"final_loss", r.epochs.empty() ? 0.0f : r.epochs.back().loss}};
  j["checkpoint"] = out.checkpoint.string();
  j["checkpoint_digest"] = file_digest(out.checkpoint);
  return j;
}

inline json run_finetune(const CliOptions& o, const RunConfig& cfg, const fs::path& dir) {
  const Dataset train = cfg.dataset.load_train(), test = cfg.dataset.load_test();
  json j;
  const Model init = initial_model(o, cfg, train, j);
  const FinetuneResult r = adversarial_finetune(init, train, test, cfg.finetune, fresh(dir / "finetune_metrics.csv"));
  j["test"] = report_json(r.report);
  j["best_epoch"] = r.best_epoch;
  json log = json::array();
  for (const auto& e : r.log) log.push_back({{"epoch", e.epoch}, {"val_ta", e.val_ta}, {"val_ra", e.val_ra}, {"loss", e.loss}});
  j["validation"] = log;
  j.update(save_model(r.model, dir / "finetune.ckpt", run_meta(cfg, o.command)));
  return j;
}

inline json run_linear(const CliOptions& o, const RunConfig& cfg, const fs::path& dir) {
  const Dataset train = cfg.dataset.load_train(), test = cfg.dataset.load_test();
  json j;
  const Model init = initial_model(o, cfg, train, j);
  const LinearEvalResult r = linear_eval(init, train, test, cfg.linear);
  CsvLog csv(fresh(dir / "linear_metrics.csv"), {"protocol", "ta", "ra"});
  csv.row({mode_key(cfg.linear.mode), CsvLog::cell(r.ta), CsvLog::cell(r.ra)});
  j["protocol"] = mode_key(cfg.linear.mode);
  j["test"] = {{"ta", r.ta}, {"ra", r.ra}, {"attack", cfg.linear.eval_attack}};
  j.update(save_model(r.model, dir / "linear.ckpt", run_meta(cfg, o.command)));
  return j;
}

/// Grid over (alpha, T, 1/lambda) scored by RA on a stratified validation
/// split of the training set; the test set is never touched.
inline json run_semisup_grid(const Model& pretrained, const Dataset& train, const RunConfig& cfg, const fs::path& dir) {
  auto [fit_idx, val_idx] = stratified_split(train.labels, cfg.semisup_grid.val_fraction, cfg.seed ^ 0x6121DULL);
  if (val_idx.empty()) throw ConfigError("semisup_grid.val_fraction leaves no validation rows");
  const Dataset fit = train.subset(fit_idx), val = train.subset(val_idx);
  CsvLog csv(fresh(dir / "semisup_grid.csv"), {"mix_alpha", "temperature", "consistency_weight", "pseudo_acc", "val_ta", "val_ra"});
  json best;
  double best_ra = -1.0, best_ta = -1.0;
  for (float a : cfg.semisup_grid.mix_alpha)
    for (float t : cfg.semisup_grid.temperature)
      for (float w : cfg.semisup_grid.consistency_weight) {
        SemiSupConfig s = cfg.semisup;
        s.mix_alpha = a;
        s.temperature = t;
        s.consistency_weight = w;
        const SemiSupResult r = run_semisup_from(pretrained, fit, val, s);
        csv.row({CsvLog::cell(a), CsvLog::cell(t), CsvLog::cell(w), CsvLog::cell(r.pseudo.pseudo_accuracy),
                 CsvLog::cell(r.report.ta), CsvLog::cell(r.report.ra)});
        if (r.report.ra > best_ra || (r.report.ra == best_ra && r.report.ta > best_ta)) {
          best_ra = r.report.ra;
          best_ta = r.report.ta;
          best = {{"mix_alpha", a}, {"temperature", t}, {"consistency_weight", w}, {"val_ta", r.report.ta}, {"val_ra", best_ra}};
        }
      }
  return {{"grid_csv", (dir / "semisup_grid.csv").string()}, {"best", best}};
}

inline json run_semisup(const CliOptions& o, const RunConfig& cfg, const fs::path& dir) {
  const Dataset train = cfg.dataset.load_train(), test = cfg.dataset.load_test();
  json j;
  Model pretrained = [&] {
    if (!o.checkpoint.empty()) return initial_model(o, cfg, train, j);
    PretrainConfig p = cfg.pretrain;
    p.variant = Variant::DS;
    PretrainOutputs out{fresh(dir / "pretrain_metrics.csv"), dir / "pretrain.ckpt", run_meta(cfg, "pretrain")};
    j["init"] = "ds-pretrain";
    Model m = run_pretraining(train, p, Model(cfg.encoder, cfg.seed), out).model;
    j["pretrain_checkpoint"] = out.checkpoint.string();
    j["pretrain_checkpoint_digest"] = file_digest(out.checkpoint);
    return m;
  }();
  if (o.grid) {
    j["grid"] = run_semisup_grid(pretrained, train, cfg, dir);
    return j;
  }
  fresh(dir / "semisup_metrics.csv");
  const SemiSupResult r = run_semisup_from(pretrained, train, test, cfg.semisup, dir);
  j["pseudo_accuracy"] = r.pseudo.pseudo_accuracy;
  j["labeled_accuracy"] = r.pseudo.labeled_accuracy;
  j["labeled"] = r.pseudo.store.labeled_count();
  j["unlabeled"] = r.pseudo.store.unlabeled_count();
  j["pseudo_labels"] = (dir / "pseudo_labels.bin").string();
  j["pseudo_labels_digest"] = file_digest(dir / "pseudo_labels.bin");
  j["test"] = report_json(r.report);
  j.update(save_model(r.model, dir / "semisup.ckpt", run_meta(cfg, o.command)));
  return j;
}

inline json run_eval(const CliOptions& o, const RunConfig& cfg, const fs::path& dir) {
  const Dataset test = cfg.dataset.load_test();
  json j;
  Model m = initial_model(o, cfg, test, j);
  const EvalReport r = evaluate(m, test, cfg.eval_branch, cfg.eval_attack, cfg.seed, cfg.noise_sigma);
  CsvLog csv(dir / "eval_metrics.csv", {"checkpoint", "branch", "epsilon", "steps", "ta", "ra", "corruption_acc", "n", "seed"});
  csv.row({o.checkpoint.empty() ? "random" : o.checkpoint, branch_name(cfg.eval_branch), CsvLog::cell(r.attack.epsilon),
           CsvLog::cell(r.attack.steps), CsvLog::cell(r.ta), CsvLog::cell(r.ra), CsvLog::cell(r.corruption_acc.value_or(0.0)),
           CsvLog::cell(r.n_examples), CsvLog::cell(r.seed)});
  j["test"] = report_json(r);
  j["branch"] = cfg.eval_branch;
  return j;
}

/// Every pretraining variant from one shared initialization, each followed
/// by the same downstream protocol. One CSV row per variant.
inline json run_ablate(const CliOptions& o, const RunConfig& cfg, const fs::path& dir) {
  if (o.protocol != "finetune" && o.protocol != "linear") throw ConfigError("--protocol must be finetune or linear");
  const Dataset train = cfg.dataset.load_train(), test = cfg.dataset.load_test();
  const Model init(cfg.encoder, cfg.seed);
  CsvLog csv(fresh(dir / "ablation.csv"), {"variant", "pretrain_loss", "ta", "ra"});
  json rows = json::array();
  for (Variant v : {Variant::S2S, Variant::A2A, Variant::A2S, Variant::DS}) {
    const std::string name = variant_name(v);
    PretrainConfig p = cfg.pretrain;
    p.variant = v;
    PretrainOutputs out{fresh(dir / ("pretrain_" + name + "_metrics.csv")), dir / ("pretrain_" + name + ".ckpt"),
                        run_meta(cfg, o.command)};
    const PretrainResult pre = run_pretraining(train, p, init.clone(), out);
    double ta = 0.0, ra = 0.0;
    if (o.protocol == "finetune") {
      const FinetuneResult r = adversarial_finetune(pre.model, train, test, cfg.finetune);
      ta = r.report.ta;
      ra = r.report.ra;
    } else {
      const LinearEvalResult r = linear_eval(pre.model, train, test, cfg.linear);
      ta = r.ta;
      ra = r.ra;
    }
    const float loss = pre.epochs.empty() ? 0.0f : pre.epochs.back().loss;
    csv.row({name, CsvLog::cell(loss), CsvLog::cell(ta), CsvLog::cell(ra)});
    rows.push_back({{"variant", name}, {"pretrain_loss", loss}, {"ta", ta}, {"ra", ra},
                    {"checkpoint_digest", file_digest(out.checkpoint)}});
  }
  return {{"protocol", o.protocol}, {"csv", (dir / "ablation.csv").string()}, {"variants", rows}};
}

}  // namespace cli

/// Parses argv and runs one command. Returns the process exit code.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CliOptions o;
  CLI::App app{"Adversarial contrastive pretraining, fine-tuning and evaluation", "acl"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--config", o.config_path, "JSON run configuration (keys override the desk preset)")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Single seed for every random choice");
  app.add_option("--out-dir", o.out_dir, "Directory for metrics, checkpoints and the report")->capture_default_str();
  app.add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint to start from (default: random init)");
  app.add_option("--variant", o.variant, "Pretraining variant: s2s|a2a|a2s|ds");
  app.add_option("--bn-branch", o.bn_branch, "Batch-norm branch used downstream: std|adv");
  app.add_option("--label-fraction", o.label_fraction, "Labelled share of the training set for semisup");
  app.add_option("--epsilon", o.epsilon, "L-inf budget (pretrain: training attack; others: reported attack)");
  app.add_option("--steps", o.steps, "PGD steps of the same attack");
  app.add_subcommand("pretrain", "Contrastive pretraining (S2S, A2A, A2S or DS)");
  app.add_subcommand("finetune", "TRADES fine-tuning of the whole network");
  app.add_subcommand("linear-eval", "Linear probe on the frozen encoder");
  app.add_subcommand("semisup", "Pseudo-labelling then adversarial training on all images")
      ->add_flag("--grid", o.grid, "Search mix alpha, temperature and consistency weight on a validation split");
  app.add_subcommand("eval", "TA, RA and Gaussian-noise accuracy of a checkpoint");
  app.add_subcommand("ablate", "All four pretraining variants from one initialization")
      ->add_option("--protocol", o.protocol, "Downstream protocol: finetune|linear")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  o.command = app.get_subcommands().front()->get_name();

  RunConfig cfg;
  try {
    cfg = cli::load_run_config(o);
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  }

  try {
    const std::filesystem::path dir(o.out_dir);
    std::filesystem::create_directories(dir);
    nlohmann::json report;
    if (o.command == "pretrain") report = cli::run_pretrain(o, cfg, dir);
    else if (o.command == "finetune") report = cli::run_finetune(o, cfg, dir);
    else if (o.command == "linear-eval") report = cli::run_linear(o, cfg, dir);
    else if (o.command == "semisup") report = cli::run_semisup(o, cfg, dir);
    else if (o.command == "eval") report = cli::run_eval(o, cfg, dir);
    else report = cli::run_ablate(o, cfg, dir);
    report["command"] = o.command;
    report["config"] = cfg;
    const auto path = dir / (o.command + "_report.json");
    atomic_write(path, report.dump(2) + "\n");
    out << path.string() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace acl

#endif  // ACL_CLI_HPP

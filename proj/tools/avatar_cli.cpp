// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

// avatar: command-line front end for the sanitisation toolkit.
//
// Every command that draws random numbers takes its randomness from --seed,
// fanned out into named streams. Results go to stdout as JSON unless an
// output path is given.

#include <fmt/core.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "avatar/bounds.hpp"
#include "avatar/diffusion.hpp"
#include "avatar/error.hpp"
#include "avatar/gaussian_oracle.hpp"
#include "avatar/io.hpp"
#include "avatar/pipeline.hpp"
#include "avatar/poison_lab.hpp"
#include "avatar/rng.hpp"
#include "avatar/schedule.hpp"
#include "avatar/score_training.hpp"
#include "avatar/selection.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace avatar;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

void add_schedule_options(CLI::App* cmd, ScheduleSpec& spec, const std::string& prefix = "") {
  cmd->add_option_function<std::string>(
         "--" + prefix + "schedule",
         [&spec](const std::string& v) { spec.kind = v == "cosine" ? ScheduleKind::kCosine : ScheduleKind::kLinear; },
         "linear or cosine")
      ->check(CLI::IsMember({"linear", "cosine"}));
  cmd->add_option("--" + prefix + "steps", spec.steps, "number of diffusion steps T")->capture_default_str();
  if (prefix.empty()) {
    cmd->add_option("--beta-start", spec.beta_start)->capture_default_str();
    cmd->add_option("--beta-end", spec.beta_end)->capture_default_str();
    cmd->add_option("--cosine-s", spec.s_offset)->capture_default_str();
  }
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

json estimate_json(const Estimate& e) { return {{"mean", e.mean}, {"std_error", e.std_error}}; }

json window_json(const TstarWindow& w) {
  json j{{"lower", w.lower}, {"upper", w.upper}, {"feasible", w.feasible}};
  if (!w.admissible_ts.empty()) {
    j["admissible_t_min"] = w.admissible_ts.front();
    j["admissible_t_max"] = w.admissible_ts.back();
  }
  return j;
}

json report_json(const BoundReport& r) {
  json steps = json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"t", s.t},
                     {"before", estimate_json(s.before)},
                     {"after", estimate_json(s.after)},
                     {"lambda", s.lambda ? json(*s.lambda) : json(nullptr)},
                     {"oracle_factor", s.oracle_factor},
                     {"rhs", s.rhs},
                     {"certified", s.certified},
                     {"holds", s.holds}});
  }
  json j{{"t_star", r.t_star},
         {"convention", std::string(to_string(r.convention))},
         {"coupling", r.coupling == NoiseCoupling::kShared ? "shared" : "independent"},
         {"trajectories", r.trajectories},
         {"seed", r.seed},
         {"dimension", r.dimension},
         {"delta_norm_sq", r.delta_norm_sq},
         {"lambda_product", r.lambda_product},
         {"exp_bound", r.exp_bound},
         {"cumulative_bound", r.cumulative_bound},
         {"red_term", estimate_json(r.red_term)},
         {"red_term_expected", r.red_term_expected},
         {"final_distance", estimate_json(r.final_distance)},
         {"cumulative_holds", r.cumulative_holds},
         {"reconstruction_error", estimate_json(r.reconstruction_error)},
         {"sanitized_error", estimate_json(r.sanitized_error)},
         {"notes", r.notes},
         {"holds", r.holds},
         {"steps", steps}};
  if (r.theorem_checked) {
    j["mu"] = r.mu;
    j["feasible"] = r.feasible;
    j["theorem_bound"] = r.theorem_bound;
    if (r.window) j["window"] = window_json(*r.window);
  }
  return j;
}

// Toy oracle setup shared by the bound commands: one isotropic Gaussian at
// `mean` in every coordinate and delta spread evenly over the coordinates.
struct OracleSetup {
  std::size_t dim = 4;
  double sigma2 = 1e-4;
  double mean = 0.0;
  double delta_norm = 0.5;
  int t_star = 100;
  MonteCarloOptions mc;
  std::string coupling = "independent";
  std::string convention = "skip-first";

  GaussianMixtureSpec spec() const { return GaussianMixtureSpec::single(std::vector<double>(dim, mean), sigma2); }
  std::vector<double> delta() const {
    return std::vector<double>(dim, delta_norm / std::sqrt(static_cast<double>(dim)));
  }
  MonteCarloOptions options(const Globals& g) const {
    MonteCarloOptions o = mc;
    o.seed = g.seed;
    o.threads = g.threads;
    o.coupling = coupling == "shared" ? NoiseCoupling::kShared : NoiseCoupling::kIndependent;
    o.convention = convention == "alpha0-one" ? LambdaConvention::kAlphaZeroOne : LambdaConvention::kSkipFirst;
    return o;
  }
};

void add_oracle_options(CLI::App* cmd, OracleSetup& o) {
  cmd->add_option("--dim", o.dim, "data dimension d")->capture_default_str();
  cmd->add_option("--sigma2", o.sigma2, "oracle component variance")->capture_default_str();
  cmd->add_option("--mean", o.mean, "oracle mean (every coordinate)")->capture_default_str();
  cmd->add_option("--delta-norm", o.delta_norm, "L2 norm of the perturbation")->capture_default_str();
  cmd->add_option("--trajectories,-n", o.mc.trajectories)->capture_default_str();
  cmd->add_option("--coupling", o.coupling)->check(CLI::IsMember({"independent", "shared"}))->capture_default_str();
  cmd->add_option("--convention", o.convention)
      ->check(CLI::IsMember({"skip-first", "alpha0-one"}))
      ->capture_default_str();
}

// Score selection for commands that sanitise: either an oracle mixture file
// (as written by `data generate`) or a trained checkpoint.
struct ScoreArgs {
  std::string distribution;
  std::string checkpoint;

  std::shared_ptr<const ScoreFunction> load(const std::shared_ptr<const DiffusionSchedule>& schedule) const {
    if (distribution.empty() == checkpoint.empty()) {
      throw InvalidArgument("pass exactly one of --distribution or --checkpoint");
    }
    if (!distribution.empty()) {
      const auto spec = json::parse(read_file(distribution)).get<GaussianMixtureSpec>();
      return oracle_score(spec, *schedule);
    }
    return std::make_shared<const LearnedScore>(load_checkpoint(checkpoint, *schedule), schedule);
  }
};

void add_score_options(CLI::App* cmd, ScoreArgs& s) {
  cmd->add_option("--distribution", s.distribution, "oracle mixture JSON")->check(CLI::ExistingFile);
  cmd->add_option("--checkpoint", s.checkpoint, "trained score checkpoint")->check(CLI::ExistingFile);
}

CLI::Option* add_norm_option(CLI::App* cmd, NormKind& norm) {
  return cmd
      ->add_option_function<std::string>(
          "--norm", [&norm](const std::string& v) { norm = v == "l2" ? NormKind::kL2 : NormKind::kLinf; },
          "linf or l2")
      ->check(CLI::IsMember({"linf", "l2"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avatar: diffusion-based sanitisation of availability-poisoned data"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "base seed for every random stream")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads (results do not depend on it)")
      ->check(CLI::Range(1u, 1024u))
      ->capture_default_str();

  // schedule show
  auto* schedule_cmd = app.add_subcommand("schedule", "variance schedules")->require_subcommand(1);
  ScheduleSpec show_spec;
  std::vector<int> show_ts;
  std::string show_csv;
  auto* show = schedule_cmd->add_subcommand("show", "print beta_t, alpha_bar_t and t * beta_t");
  add_schedule_options(show, show_spec);
  show->add_option("--t", show_ts, "timesteps to print (default: every 100)")->delimiter(',');
  show->add_option("--csv", show_csv, "write the full table as CSV");
  show->callback([&] {
    const auto s = show_spec.build();
    if (show_ts.empty()) {
      for (int t = 0; t <= s.steps(); t += std::max(1, s.steps() / 10)) show_ts.push_back(t);
    }
    json rows = json::array();
    for (int t : show_ts) {
      json row{{"t", t}, {"alpha_bar", s.alpha_bar(t)}};
      if (t >= 1) {
        row["beta"] = s.beta(t);
        row["t_beta"] = t * s.beta(t);
      }
      rows.push_back(row);
    }
    print_json({{"schedule", s.description()}, {"fingerprint", fmt::format("{:016x}", s.fingerprint())}, {"rows", rows}});
    if (!show_csv.empty()) {
      std::string text = "t,beta,alpha_bar,t_beta\n";
      for (int t = 1; t <= s.steps(); ++t) {
        text += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", t, s.beta(t), s.alpha_bar(t), t * s.beta(t));
      }
      write_text(show_csv, text);
    }
  });

  // bound window / verify / theorem
  auto* bound_cmd = app.add_subcommand("bound", "contraction bounds")->require_subcommand(1);
  ScheduleSpec bound_spec;
  double win_delta_sq = 0.0, win_mu = 8.0, win_Delta = 8.0;
  std::size_t win_dim = 16;
  auto* window = bound_cmd->add_subcommand("window", "admissible t* window for the sanitisation error bound");
  add_schedule_options(window, bound_spec);
  window->add_option("--delta-norm-sq", win_delta_sq)->capture_default_str();
  window->add_option("--dim", win_dim)->capture_default_str();
  window->add_option("--mu", win_mu)->capture_default_str();
  window->add_option("--Delta", win_Delta, "reconstruction error Delta")->capture_default_str();
  window->callback([&] {
    print_json(window_json(tstar_window(win_delta_sq, win_dim, win_mu, win_Delta, bound_spec.build())));
  });

  OracleSetup verify_setup;
  auto* verify = bound_cmd->add_subcommand("verify", "Monte Carlo check of the per-step contraction bounds");
  add_schedule_options(verify, bound_spec);
  add_oracle_options(verify, verify_setup);
  verify->add_option("--t-star", verify_setup.t_star)->capture_default_str();
  verify->callback([&] {
    const auto s = bound_spec.build();
    const auto r = verify_contraction_mc(verify_setup.spec(), s, verify_setup.t_star, verify_setup.delta(),
                                         verify_setup.options(g));
    print_json(report_json(r));
    if (!r.holds) throw CLI::RuntimeError(2);
  });

  OracleSetup theorem_setup;
  double theorem_mu = 20.0;
  int theorem_start = 0;
  auto* theorem = bound_cmd->add_subcommand("theorem", "end-to-end sanitisation error bound with a t* search");
  add_schedule_options(theorem, bound_spec);
  add_oracle_options(theorem, theorem_setup);
  theorem->add_option("--mu", theorem_mu)->capture_default_str();
  theorem->add_option("--start-t", theorem_start, "first t of the search (default T/10)");
  theorem->callback([&] {
    const auto s = bound_spec.build();
    const auto r = theorem_check_mc(theorem_setup.spec(), s, theorem_setup.delta(), theorem_mu,
                                    theorem_setup.options(g),
                                    theorem_start > 0 ? std::optional<int>(theorem_start) : std::nullopt);
    print_json(report_json(r));
    if (!r.holds) throw CLI::RuntimeError(2);
  });

  // tstar match / psnr
  auto* tstar_cmd = app.add_subcommand("tstar", "choose the sanitisation timestep")->require_subcommand(1);
  ScheduleSpec ref_spec, target_spec;
  target_spec.kind = ScheduleKind::kCosine;
  int t_ref = 100;
  auto* match = tstar_cmd->add_subcommand("match", "transfer t* between schedules by alpha_bar");
  add_schedule_options(match, ref_spec);
  add_schedule_options(match, target_spec, "target-");
  match->add_option("--t-ref", t_ref)->capture_default_str();
  match->callback([&] {
    const auto ref = ref_spec.build();
    const auto target = target_spec.build();
    const int t = match_timestep(ref, t_ref, target);
    print_json({{"reference", ref.description()},
                {"target", target.description()},
                {"t_ref", t_ref},
                {"alpha_bar_ref", ref.alpha_bar(t_ref)},
                {"t_star", t},
                {"alpha_bar_target", target.alpha_bar(t)}});
  });

  ScheduleSpec psnr_spec;
  ScoreArgs psnr_score;
  std::string psnr_data;
  PsnrSelectionOptions psnr_opts;
  psnr_opts.t_grid = default_run_config().t_grid;
  auto* psnr_cmd = tstar_cmd->add_subcommand("psnr", "largest t whose reconstruction PSNR clears a threshold");
  add_schedule_options(psnr_cmd, psnr_spec);
  add_score_options(psnr_cmd, psnr_score);
  psnr_cmd->add_option("--data", psnr_data, "validation dataset directory")->required()->check(CLI::ExistingDirectory);
  psnr_cmd->add_option("--threshold", psnr_opts.threshold_db, "dB")->capture_default_str();
  psnr_cmd->add_option("--grid", psnr_opts.t_grid)->capture_default_str();
  psnr_cmd->add_option("--samples", psnr_opts.samples_per_t, "validation samples per t (0 = all)");
  psnr_cmd->callback([&] {
    auto schedule = std::make_shared<const DiffusionSchedule>(psnr_spec.build());
    const auto score = psnr_score.load(schedule);
    psnr_opts.seed = derive_seed(g.seed, "select");
    psnr_opts.sanitize.threads = g.threads;
    const auto sel = select_by_psnr(*score, *schedule, load_dataset(psnr_data).samples, psnr_opts);
    json curve = json::array();
    for (const auto& p : sel.curve.points) {
      curve.push_back({{"t", p.t},
                       {"mean_db", p.mean.infinite ? json("inf") : json(p.mean.db)},
                       {"std_db", p.std_db},
                       {"n", p.n}});
    }
    print_json({{"t_star", sel.t_star}, {"threshold_db", psnr_opts.threshold_db}, {"curve", curve}});
  });

  // data generate
  SyntheticConfig gen_cfg;
  std::string gen_out;
  auto* data_cmd = app.add_subcommand("data", "toy datasets")->require_subcommand(1);
  auto* generate = data_cmd->add_subcommand("generate", "write the synthetic train/test splits and their law");
  generate->add_option("--out", gen_out, "output directory")->required();
  generate->add_option("--classes", gen_cfg.classes)->capture_default_str();
  generate->add_option("--dim", gen_cfg.dimension)->capture_default_str();
  generate->add_option("--train-per-class", gen_cfg.train_per_class)->capture_default_str();
  generate->add_option("--test-per-class", gen_cfg.test_per_class)->capture_default_str();
  generate->add_option("--separation", gen_cfg.separation)->capture_default_str();
  generate->add_option("--noise", gen_cfg.noise)->capture_default_str();
  generate->callback([&] {
    gen_cfg.seed = derive_seed(g.seed, "data");
    const auto data = generate_synthetic_dataset(gen_cfg);
    save_dataset(fs::path(gen_out) / "train", data.train);
    save_dataset(fs::path(gen_out) / "test", data.test);
    write_text(fs::path(gen_out) / "distribution.json", json(data.distribution).dump(2) + "\n");
    print_json({{"train", data.train.size()}, {"test", data.test.size()}, {"dimension", gen_cfg.dimension}});
  });

  // attack shortcut
  std::string atk_in, atk_out, atk_gran = "classwise";
  PerturbationBudget atk_budget;
  auto* attack_cmd = app.add_subcommand("attack", "availability attacks")->require_subcommand(1);
  auto* shortcut = attack_cmd->add_subcommand("shortcut", "class-wise shortcut perturbation");
  shortcut->add_option("--data", atk_in)->required()->check(CLI::ExistingDirectory);
  shortcut->add_option("--out", atk_out)->required();
  shortcut->add_option("--epsilon", atk_budget.epsilon)->capture_default_str();
  add_norm_option(shortcut, atk_budget.norm);
  shortcut->add_option("--granularity", atk_gran)->check(CLI::IsMember({"classwise", "samplewise"}));
  shortcut->callback([&] {
    const auto data = load_dataset(atk_in);
    const auto p = shortcut_attack(data, atk_budget, derive_seed(g.seed, "attack"),
                                   atk_gran == "samplewise" ? AttackGranularity::kSampleWise
                                                            : AttackGranularity::kClassWise);
    save_poisoned(atk_out, p);
    print_json({{"attack", p.attack}, {"max_norm", p.max_norm()}, {"within_budget", p.within_budget()}});
  });

  // train-score
  ScheduleSpec ts_spec;
  std::string ts_data, ts_out;
  EpsModelConfig ts_arch;
  ScoreTrainConfig ts_cfg;
  auto* train_score = app.add_subcommand("train-score", "fit an epsilon-prediction score model");
  add_schedule_options(train_score, ts_spec);
  train_score->add_option("--data", ts_data)->required()->check(CLI::ExistingDirectory);
  train_score->add_option("--out", ts_out, "checkpoint path")->required();
  train_score->add_option("--train-steps", ts_cfg.steps)->capture_default_str();
  train_score->add_option("--batch-size", ts_cfg.batch_size)->capture_default_str();
  train_score->add_option("--lr", ts_cfg.learning_rate)->capture_default_str();
  train_score->add_option("--hidden", ts_arch.hidden)->capture_default_str();
  train_score->callback([&] {
    const auto schedule = ts_spec.build();
    ts_cfg.seed = derive_seed(g.seed, "score");
    const auto r = train_score_model(load_dataset(ts_data).samples, schedule, ts_arch, ts_cfg);
    save_checkpoint(ts_out, *r.model, schedule, ts_cfg.seed);
    print_json({{"steps", r.losses.size()},
                {"final_loss", r.losses.empty() ? json(nullptr) : json(r.losses.back())},
                {"checkpoint", ts_out}});
  });

  // sanitize
  ScheduleSpec san_spec;
  ScoreArgs san_score;
  std::string san_in, san_out;
  int san_t = 100;
  bool san_noise = false, san_no_clamp = false;
  auto* sanitize = app.add_subcommand("sanitize", "forward-diffuse to t* and denoise back");
  add_schedule_options(sanitize, san_spec);
  add_score_options(sanitize, san_score);
  sanitize->add_option("--data", san_in)->required()->check(CLI::ExistingDirectory);
  sanitize->add_option("--out", san_out)->required();
  sanitize->add_option("--t-star", san_t)->capture_default_str();
  sanitize->add_flag("--last-step-noise", san_noise, "keep the noise term of the final reverse step");
  sanitize->add_flag("--no-clamp", san_no_clamp, "do not clamp outputs to [0, 1]");
  sanitize->callback([&] {
    auto schedule = std::make_shared<const DiffusionSchedule>(san_spec.build());
    const auto score = san_score.load(schedule);
    auto data = load_dataset(san_in);
    SanitizeOptions opts;
    opts.threads = g.threads;
    opts.last_step_noise = san_noise;
    if (san_no_clamp) opts.clamp.reset();
    const Tensor before = data.samples;
    data.samples = sanitize_batch(before, san_t, *schedule, *score, derive_seed(g.seed, "sanitize"), opts);
    save_dataset(san_out, data, {{"t_star", san_t}});
    print_json({{"t_star", san_t}, {"samples", data.size()}, {"psnr_vs_input_db", [&] {
                  const auto p = psnr(data.samples, before);
                  return p.infinite ? json("inf") : json(p.db);
                }()}});
  });

  // train-classifier / adv-train
  std::string cls_train, cls_eval, cls_out;
  ClassifierConfig cls_cfg;
  PgdConfig pgd{10, 0.0, 9.0 / 255.0, NormKind::kLinf};
  auto add_cls_options = [&](CLI::App* cmd) {
    cmd->add_option("--train", cls_train)->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--eval", cls_eval, "evaluation dataset (clean test split)")
        ->required()
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--out", cls_out, "output path prefix")->required();
    cmd->add_option("--epochs", cls_cfg.epochs)->capture_default_str();
    cmd->add_option("--batch-size", cls_cfg.batch_size)->capture_default_str();
    cmd->add_option("--lr", cls_cfg.learning_rate)->capture_default_str();
    cmd->add_option("--hidden", cls_cfg.hidden)->capture_default_str();
  };
  auto report_classifier = [](const Classifier& c) {
    print_json({{"final_accuracy", c.final_accuracy}, {"best_accuracy", c.best_accuracy}, {"best_epoch", c.best_epoch}});
  };
  auto* train_cls = app.add_subcommand("train-classifier", "standard training");
  add_cls_options(train_cls);
  train_cls->callback([&] {
    const auto model =
        train_classifier(load_dataset(cls_train), load_dataset(cls_eval), cls_cfg, derive_seed(g.seed, "train"));
    save_classifier(cls_out, model);
    report_classifier(model);
  });
  auto* adv = app.add_subcommand("adv-train", "PGD adversarial training");
  add_cls_options(adv);
  adv->add_option("--epsilon", pgd.epsilon)->capture_default_str();
  adv->add_option("--pgd-steps", pgd.steps)->capture_default_str();
  adv->add_option("--step-size", pgd.step_size, "0 selects epsilon / 4")->capture_default_str();
  add_norm_option(adv, pgd.norm);
  adv->callback([&] {
    const auto model = adversarial_train(load_dataset(cls_train), load_dataset(cls_eval), cls_cfg, pgd,
                                         derive_seed(g.seed, "train-adv"));
    save_classifier(cls_out, model);
    report_classifier(model);
  });

  // demo e2e
  std::string demo_config, demo_out;
  auto* demo_cmd = app.add_subcommand("demo", "end-to-end experiments")->require_subcommand(1);
  auto* e2e = demo_cmd->add_subcommand("e2e", "generate, poison, sanitise and train on the toy task");
  e2e->add_option("--config", demo_config, "JSON run config (defaults when omitted)")->check(CLI::ExistingFile);
  e2e->add_option("--out", demo_out, "run directory (overrides the config)");
  e2e->callback([&] {
    RunConfig cfg = default_run_config();
    if (!demo_config.empty()) {
      cfg = load_run_config(demo_config);
      if (app.get_option("--seed")->count() > 0) cfg.seed = g.seed;
    } else {
      cfg.seed = g.seed;
    }
    if (app.get_option("--threads")->count() > 0 || demo_config.empty()) cfg.threads = g.threads;
    if (!demo_out.empty()) cfg.output_dir = demo_out;
    const auto record = run_demo_e2e(cfg);
    print_json({{"status", record.status},
                {"output_dir", cfg.output_dir.string()},
                {"config_hash", record.config_hash},
                {"summary", record.summary}});
  });

  // selfcheck
  std::string check_dir;
  auto* check = app.add_subcommand("selfcheck", "re-verify the artifact hashes of a run");
  check->add_option("run_dir", check_dir)->required()->check(CLI::ExistingDirectory);
  check->callback([&] {
    const auto bad = selfcheck(check_dir);
    print_json({{"ok", bad.empty()}, {"mismatches", bad}});
    if (!bad.empty()) throw CLI::RuntimeError(3);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const avatar::Error& e) {
    fmt::print(stderr, "avatar: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "avatar: {}\n", e.what());
    return 1;
  }
  return 0;
}

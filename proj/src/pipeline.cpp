// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <functional>

#include "avatar/error.hpp"
#include "avatar/io.hpp"

namespace avatar {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- serialisation -------------------------------------------------------------------------------

DiffusionSchedule ScheduleSpec::build() const {
  switch (kind) {
    case ScheduleKind::kLinear:
      return DiffusionSchedule::linear(steps, beta_start, beta_end);
    case ScheduleKind::kCosine:
      return DiffusionSchedule::cosine(steps, s_offset, max_beta);
    case ScheduleKind::kCustom:
      break;
  }
  throw InvalidArgument("custom schedules cannot be built from a ScheduleSpec");
}

void to_json(json& j, const ScheduleSpec& s) {
  j = json{{"kind", std::string(to_string(s.kind))}, {"steps", s.steps}};
  if (s.kind == ScheduleKind::kLinear) {
    j["beta_start"] = s.beta_start;
    j["beta_end"] = s.beta_end;
  } else {
    j["s"] = s.s_offset;
    j["max_beta"] = s.max_beta;
  }
}

void from_json(const json& j, ScheduleSpec& s) {
  const auto kind = j.value("kind", std::string("linear"));
  if (kind == "linear") {
    s.kind = ScheduleKind::kLinear;
  } else if (kind == "cosine") {
    s.kind = ScheduleKind::kCosine;
  } else {
    throw InvalidArgument("unknown schedule kind '" + kind + "'");
  }
  s.steps = j.value("steps", s.steps);
  s.beta_start = j.value("beta_start", s.beta_start);
  s.beta_end = j.value("beta_end", s.beta_end);
  s.s_offset = j.value("s", s.s_offset);
  s.max_beta = j.value("max_beta", s.max_beta);
}

void to_json(json& j, const GaussianMixtureSpec& s) {
  j = json{{"dimension", s.dimension}, {"components", json::array()}};
  for (const auto& c : s.components) {
    j["components"].push_back({{"weight", c.weight}, {"mean", c.mean}, {"variance", c.variance}});
  }
}

void from_json(const json& j, GaussianMixtureSpec& s) {
  s.dimension = j.at("dimension").get<std::size_t>();
  s.components.clear();
  for (const auto& c : j.at("components")) {
    s.components.push_back(
        {c.at("weight").get<double>(), c.at("mean").get<std::vector<double>>(), c.at("variance").get<double>()});
  }
  s.validate();
}

namespace {

Tensor labels_tensor(const std::vector<int>& labels) {
  std::vector<float> v(labels.begin(), labels.end());
  return Tensor({static_cast<std::uint64_t>(labels.size())}, std::move(v));
}

std::string norm_name(NormKind k) { return std::string(to_string(k)); }

NormKind parse_norm(const std::string& s) {
  if (s == "linf") return NormKind::kLinf;
  if (s == "l2") return NormKind::kL2;
  throw InvalidArgument("unknown norm '" + s + "' (expected linf or l2)");
}

}  // namespace

void save_dataset(const fs::path& dir, const LabeledDataset& data, const json& extra_meta) {
  data.validate();
  fs::create_directories(dir);
  write_tensor(dir / "x.avt", data.samples);
  write_tensor(dir / "y.avt", labels_tensor(data.labels));
  json meta{{"classes", data.classes},
            {"split", std::string(to_string(data.split))},
            {"samples", data.size()},
            {"dimension", data.dimension()},
            {"labels", "0-based class index stored as float32"}};
  meta.update(extra_meta);
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

LabeledDataset load_dataset(const fs::path& dir) {
  LabeledDataset data;
  data.samples = read_tensor(dir / "x.avt");
  const Tensor y = read_tensor(dir / "y.avt");
  json meta;
  try {
    meta = json::parse(read_file(dir / "meta.json"));
  } catch (const json::exception& e) {
    throw FormatError("bad dataset meta.json in " + dir.string() + ": " + e.what());
  }
  data.classes = meta.at("classes").get<std::size_t>();
  data.split = meta.value("split", std::string("train")) == "test" ? Split::kTest : Split::kTrain;
  data.labels.reserve(y.size());
  for (float v : y.values()) {
    if (v != std::floor(v)) throw FormatError("non-integer label in " + dir.string());
    data.labels.push_back(static_cast<int>(v));
  }
  data.validate();
  return data;
}

void save_poisoned(const fs::path& dir, const PoisonedDataset& data) {
  save_dataset(dir, data.data,
               {{"attack", data.attack},
                {"budget", {{"norm", norm_name(data.budget.norm)}, {"epsilon", data.budget.epsilon}}},
                {"seed", std::to_string(data.seed)},
                {"max_perturbation_norm", data.max_norm()}});
  write_tensor(dir / "delta.avt", data.perturbations);
}

void save_classifier(const fs::path& path_prefix, const Classifier& model) {
  const auto params = model.network.parameters();
  write_tensor(fs::path(path_prefix.string() + ".avt"),
               Tensor({static_cast<std::uint64_t>(params.size())}, {params.begin(), params.end()}));
  json history = json::array();
  for (const auto& m : model.history) {
    history.push_back({{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"test_accuracy", m.test_accuracy}});
  }
  json desc{{"widths", model.network.widths()},
            {"activation", "relu"},
            {"classes", model.classes},
            {"final_accuracy", model.final_accuracy},
            {"best_accuracy", model.best_accuracy},
            {"best_epoch", model.best_epoch},
            {"history", history}};
  write_text(fs::path(path_prefix.string() + ".json"), desc.dump(2) + "\n");
}

// ---- run configuration ---------------------------------------------------------------------------

RunConfig default_run_config() { return RunConfig{}; }

void RunConfig::validate() const {
  if (threads == 0) throw InvalidArgument("threads must be >= 1");
  if (score_source == ScoreSource::kCheckpoint && !fs::exists(checkpoint)) {
    throw InvalidArgument("checkpoint " + checkpoint.string() + " does not exist");
  }
  if (select_by_psnr && t_grid.empty()) throw InvalidArgument("PSNR selection needs a t grid");
  if (!select_by_psnr && (fixed_t_star < 0 || fixed_t_star > schedule.steps)) {
    throw InvalidArgument("fixed t* outside the schedule");
  }
  for (int t : t_grid) {
    if (t < 0 || t > schedule.steps) throw InvalidArgument("t grid entry outside the schedule");
  }
  if (validation_size == 0 && select_by_psnr) throw InvalidArgument("PSNR selection needs validation samples");
}

void to_json(json& j, const RunConfig& c) {
  std::string source = c.score_source == ScoreSource::kOracle    ? "oracle"
                       : c.score_source == ScoreSource::kTrained ? "trained"
                                                                 : "checkpoint";
  j = json{
      {"command", c.command},
      {"seed", c.seed},
      {"threads", c.threads},
      {"output_dir", c.output_dir.string()},
      {"schedule", c.schedule},
      {"data",
       {{"classes", c.data.classes},
        {"clusters_per_class", c.data.clusters_per_class},
        {"train_per_class", c.data.train_per_class},
        {"test_per_class", c.data.test_per_class},
        {"validation_size", c.validation_size},
        {"dimension", c.data.dimension},
        {"separation", c.data.separation},
        {"noise", c.data.noise},
        {"center", c.data.center}}},
      {"attack",
       {{"norm", norm_name(c.attack.norm)},
        {"epsilon", c.attack.epsilon},
        {"granularity", c.granularity == AttackGranularity::kClassWise ? "classwise" : "samplewise"}}},
      {"score",
       {{"source", source},
        {"checkpoint", c.checkpoint.string()},
        {"arch", {{"hidden", c.score_arch.hidden}, {"time_embedding", c.score_arch.time_embedding}}},
        {"train",
         {{"steps", c.score_train.steps},
          {"batch_size", c.score_train.batch_size},
          {"learning_rate", c.score_train.learning_rate},
          {"final_learning_rate", c.score_train.final_learning_rate}}}}},
      {"selection",
       {{"policy", c.select_by_psnr ? "psnr" : "fixed"},
        {"t_star", c.fixed_t_star},
        {"threshold_db", c.psnr_threshold_db},
        {"grid", c.t_grid}}},
      {"classifier",
       {{"hidden", c.classifier.hidden},
        {"epochs", c.classifier.epochs},
        {"batch_size", c.classifier.batch_size},
        {"learning_rate", c.classifier.learning_rate},
        {"momentum", c.classifier.momentum},
        {"weight_decay", c.classifier.weight_decay},
        {"lr_decay", c.classifier.lr_decay},
        {"milestones", c.classifier.milestones}}},
      {"adversarial_training",
       {{"enabled", c.adversarial_training},
        {"epsilon", c.pgd.epsilon},
        {"steps", c.pgd.steps},
        {"step_size", c.pgd.step_size},
        {"norm", norm_name(c.pgd.norm)}}},
      {"noise_only_ablation", c.noise_only_ablation},
  };
}

void from_json(const json& j, RunConfig& c) {
  if (!j.contains("seed")) throw InvalidArgument("run config must set an explicit \"seed\"");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.command = j.value("command", c.command);
  c.threads = j.value("threads", c.threads);
  c.output_dir = j.value("output_dir", c.output_dir.string());
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<ScheduleSpec>();
  if (j.contains("data")) {
    const auto& d = j.at("data");
    c.data.classes = d.value("classes", c.data.classes);
    c.data.clusters_per_class = d.value("clusters_per_class", c.data.clusters_per_class);
    c.data.train_per_class = d.value("train_per_class", c.data.train_per_class);
    c.data.test_per_class = d.value("test_per_class", c.data.test_per_class);
    c.validation_size = d.value("validation_size", c.validation_size);
    c.data.dimension = d.value("dimension", c.data.dimension);
    c.data.separation = d.value("separation", c.data.separation);
    c.data.noise = d.value("noise", c.data.noise);
    c.data.center = d.value("center", c.data.center);
  }
  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    c.attack.norm = parse_norm(a.value("norm", norm_name(c.attack.norm)));
    c.attack.epsilon = a.value("epsilon", c.attack.epsilon);
    c.granularity = a.value("granularity", std::string("classwise")) == "samplewise" ? AttackGranularity::kSampleWise
                                                                                    : AttackGranularity::kClassWise;
  }
  if (j.contains("score")) {
    const auto& s = j.at("score");
    const auto source = s.value("source", std::string("oracle"));
    if (source == "oracle") {
      c.score_source = ScoreSource::kOracle;
    } else if (source == "trained") {
      c.score_source = ScoreSource::kTrained;
    } else if (source == "checkpoint") {
      c.score_source = ScoreSource::kCheckpoint;
    } else {
      throw InvalidArgument("unknown score source '" + source + "'");
    }
    c.checkpoint = s.value("checkpoint", c.checkpoint.string());
    if (s.contains("arch")) {
      c.score_arch.hidden = s["arch"].value("hidden", c.score_arch.hidden);
      c.score_arch.time_embedding = s["arch"].value("time_embedding", c.score_arch.time_embedding);
    }
    if (s.contains("train")) {
      const auto& t = s.at("train");
      c.score_train.steps = t.value("steps", c.score_train.steps);
      c.score_train.batch_size = t.value("batch_size", c.score_train.batch_size);
      c.score_train.learning_rate = t.value("learning_rate", c.score_train.learning_rate);
      c.score_train.final_learning_rate = t.value("final_learning_rate", c.score_train.final_learning_rate);
    }
  }
  if (j.contains("selection")) {
    const auto& s = j.at("selection");
    const auto policy = s.value("policy", std::string("psnr"));
    if (policy != "psnr" && policy != "fixed") throw InvalidArgument("selection policy must be psnr or fixed");
    c.select_by_psnr = policy == "psnr";
    c.fixed_t_star = s.value("t_star", c.fixed_t_star);
    c.psnr_threshold_db = s.value("threshold_db", c.psnr_threshold_db);
    c.t_grid = s.value("grid", c.t_grid);
  }
  if (j.contains("classifier")) {
    const auto& k = j.at("classifier");
    c.classifier.hidden = k.value("hidden", c.classifier.hidden);
    c.classifier.epochs = k.value("epochs", c.classifier.epochs);
    c.classifier.batch_size = k.value("batch_size", c.classifier.batch_size);
    c.classifier.learning_rate = k.value("learning_rate", c.classifier.learning_rate);
    c.classifier.momentum = k.value("momentum", c.classifier.momentum);
    c.classifier.weight_decay = k.value("weight_decay", c.classifier.weight_decay);
    c.classifier.lr_decay = k.value("lr_decay", c.classifier.lr_decay);
    c.classifier.milestones = k.value("milestones", c.classifier.milestones);
  }
  if (j.contains("adversarial_training")) {
    const auto& a = j.at("adversarial_training");
    c.adversarial_training = a.value("enabled", c.adversarial_training);
    c.pgd.epsilon = a.value("epsilon", c.pgd.epsilon);
    c.pgd.steps = a.value("steps", c.pgd.steps);
    c.pgd.step_size = a.value("step_size", c.pgd.step_size);
    c.pgd.norm = parse_norm(a.value("norm", norm_name(c.pgd.norm)));
  }
  c.noise_only_ablation = j.value("noise_only_ablation", c.noise_only_ablation);
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse run config " + path.string() + ": " + e.what());
  }
  return j.get<RunConfig>();
}

void to_json(json& j, const RunRecord& r) {
  json artifacts = json::array();
  for (const auto& a : r.artifacts) artifacts.push_back({{"path", a.path}, {"sha256", a.sha256}});
  json timings = json::object();
  for (const auto& [stage, secs] : r.timings_seconds) timings[stage] = secs;
  j = json{{"status", r.status},       {"error", r.error},     {"config_hash", r.config_hash},
           {"tool_version", r.tool_version}, {"config", r.config}, {"summary", r.summary},
           {"artifacts", artifacts},   {"timings_seconds", timings}};
}

void from_json(const json& j, RunRecord& r) {
  r.status = j.at("status").get<std::string>();
  r.error = j.value("error", std::string{});
  r.config_hash = j.value("config_hash", std::string{});
  r.tool_version = j.value("tool_version", std::string{});
  r.config = j.value("config", json::object());
  r.summary = j.value("summary", json::object());
  r.artifacts.clear();
  for (const auto& a : j.at("artifacts")) {
    r.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>()});
  }
  r.timings_seconds.clear();
  const json timings = j.value("timings_seconds", json::object());
  for (const auto& [k, v] : timings.items()) {
    r.timings_seconds.emplace_back(k, v.get<double>());
  }
}

std::string hash_json(const json& j) {
  const std::string text = j.dump();
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---- end-to-end ----------------------------------------------------------------------------------

namespace {

class RunContext {
 public:
  RunContext(const RunConfig& config, RunRecord& record) : config_(config), record_(record) {
    fs::create_directories(config.output_dir);
    metrics_.open(config.output_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics_) throw Error("cannot write metrics.jsonl in " + config.output_dir.string());
  }

  fs::path path(const std::string& rel) const { return config_.output_dir / rel; }

  void artifact(const std::string& rel) { record_.artifacts.push_back({rel, sha256_file(path(rel))}); }

  void metric(const std::string& stage, json values) {
    values["stage"] = stage;
    metrics_ << values.dump() << '\n';
    metrics_.flush();
  }

  template <typename Fn>
  auto stage(const std::string& name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto finish = [&] {
      const std::chrono::duration<double> secs = std::chrono::steady_clock::now() - start;
      record_.timings_seconds.emplace_back(name, secs.count());
    };
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      finish();
    } else {
      auto result = fn();
      finish();
      return result;
    }
  }

  void close_metrics() { metrics_.close(); }

 private:
  const RunConfig& config_;
  RunRecord& record_;
  std::ofstream metrics_;
};

json classifier_summary(const Classifier& c) {
  return {{"final_accuracy", c.final_accuracy}, {"best_accuracy", c.best_accuracy}, {"best_epoch", c.best_epoch}};
}

void write_record(const RunConfig& config, const RunRecord& record) {
  write_text(config.output_dir / "record.json", json(record).dump(2) + "\n");
}

}  // namespace

RunRecord run_demo_e2e(const RunConfig& config) {
  config.validate();
  RunRecord record;
  record.config = config;
  record.config_hash = hash_json(record.config);
  RunContext ctx(config, record);

  try {
    const auto schedule = std::make_shared<const DiffusionSchedule>(config.schedule.build());
    const std::uint64_t seed = config.seed;

    SyntheticConfig data_cfg = config.data;
    data_cfg.seed = derive_seed(seed, "data");
    const SyntheticData data = ctx.stage("generate", [&] { return generate_synthetic_dataset(data_cfg); });
    save_dataset(ctx.path("data/train"), data.train);
    save_dataset(ctx.path("data/test"), data.test);
    for (const char* f : {"data/train/x.avt", "data/train/y.avt", "data/test/x.avt", "data/test/y.avt"}) {
      ctx.artifact(f);
    }
    write_text(ctx.path("data/distribution.json"), json(data.distribution).dump(2) + "\n");
    ctx.artifact("data/distribution.json");
    ctx.metric("generate", {{"train", data.train.size()}, {"test", data.test.size()}, {"dimension", data_cfg.dimension}});

    const PoisonedDataset poisoned = ctx.stage("attack", [&] {
      return shortcut_attack(data.train, config.attack, derive_seed(seed, "attack"), config.granularity);
    });
    save_poisoned(ctx.path("data/poisoned"), poisoned);
    ctx.artifact("data/poisoned/x.avt");
    ctx.artifact("data/poisoned/delta.avt");
    ctx.metric("attack", {{"attack", poisoned.attack},
                          {"epsilon", config.attack.epsilon},
                          {"max_norm", poisoned.max_norm()},
                          {"within_budget", poisoned.within_budget()}});
    if (!poisoned.within_budget()) throw NumericalError("attack exceeded its declared budget");

    std::shared_ptr<const ScoreFunction> score = ctx.stage("score", [&]() -> std::shared_ptr<const ScoreFunction> {
      switch (config.score_source) {
        case ScoreSource::kOracle:
          return oracle_score(data.distribution, *schedule);
        case ScoreSource::kTrained: {
          ScoreTrainConfig tc = config.score_train;
          tc.seed = derive_seed(seed, "score");
          auto trained = train_score_model(data.train.samples, *schedule, config.score_arch, tc);
          save_checkpoint(ctx.path("models/score.avck"), *trained.model, *schedule, tc.seed);
          ctx.artifact("models/score.avck");
          ctx.metric("score", {{"source", "trained"},
                               {"steps", trained.losses.size()},
                               {"final_loss", trained.losses.empty() ? json(nullptr) : json(trained.losses.back())}});
          return trained.score;
        }
        case ScoreSource::kCheckpoint: {
          auto model = load_checkpoint(config.checkpoint, *schedule);
          return std::make_shared<const LearnedScore>(model, schedule);
        }
      }
      throw InvalidArgument("unknown score source");
    });

    SanitizeOptions sanitize_opts;
    sanitize_opts.threads = config.threads;

    const int t_star = ctx.stage("select", [&] {
      if (!config.select_by_psnr) return config.fixed_t_star;
      const auto validation = sample_dataset(data, config.validation_size, derive_seed(seed, "validation"), Split::kTest);
      PsnrSelectionOptions opts;
      opts.threshold_db = config.psnr_threshold_db;
      opts.t_grid = config.t_grid;
      opts.seed = derive_seed(seed, "select");
      opts.sanitize = sanitize_opts;
      const auto sel = select_by_psnr(*score, *schedule, validation.samples, opts);
      json rows = json::array();
      for (const auto& p : sel.curve.points) {
        rows.push_back({{"t", p.t},
                        {"mean_db", p.mean.infinite ? json(nullptr) : json(p.mean.db)},
                        {"infinite", p.mean.infinite},
                        {"std_db", p.std_db},
                        {"n", p.n}});
      }
      write_text(ctx.path("selection/psnr_curve.json"), rows.dump(2) + "\n");
      ctx.artifact("selection/psnr_curve.json");
      return sel.t_star;
    });
    ctx.metric("select", {{"t_star", t_star}, {"policy", config.select_by_psnr ? "psnr" : "fixed"}});

    LabeledDataset sanitized = poisoned.data;
    ctx.stage("sanitize", [&] {
      sanitized.samples = sanitize_batch(poisoned.data.samples, t_star, *schedule, *score,
                                         derive_seed(seed, "sanitize"), sanitize_opts);
    });
    save_dataset(ctx.path("data/sanitized"), sanitized, {{"t_star", t_star}});
    ctx.artifact("data/sanitized/x.avt");
    const double residual = psnr(sanitized.samples, data.train.samples).db;
    ctx.metric("sanitize", {{"t_star", t_star}, {"psnr_vs_clean_db", residual}});

    auto train_and_log = [&](const std::string& name, const LabeledDataset& train_set, const PgdConfig* pgd) {
      const auto model = ctx.stage("train-" + name, [&] {
        const auto s = derive_seed(seed, "train-" + name);
        return pgd ? adversarial_train(train_set, data.test, config.classifier, *pgd, s)
                   : train_classifier(train_set, data.test, config.classifier, s);
      });
      save_classifier(ctx.path("models/" + name), model);
      ctx.artifact("models/" + name + ".avt");
      ctx.metric("train-" + name, classifier_summary(model));
      record.summary[name] = classifier_summary(model);
      return model;
    };

    train_and_log("clean", data.train, nullptr);
    train_and_log("poisoned", poisoned.data, nullptr);
    train_and_log("sanitized", sanitized, nullptr);
    if (config.adversarial_training) train_and_log("adversarial", poisoned.data, &config.pgd);
    if (config.noise_only_ablation) {
      const auto noisy = noise_only_ablation(poisoned, t_star, *schedule, derive_seed(seed, "noise-only"));
      train_and_log("noise_only", noisy, nullptr);
    }

    record.summary["t_star"] = t_star;
    record.summary["chance"] = 1.0 / static_cast<double>(config.data.classes);
    ctx.close_metrics();
    ctx.artifact("metrics.jsonl");
    record.status = "ok";
  } catch (const std::exception& e) {
    record.status = "failed";
    record.error = e.what();
    ctx.close_metrics();
    write_record(config, record);
    throw;
  }
  write_record(config, record);
  return record;
}

std::vector<std::string> selfcheck(const fs::path& run_dir) {
  json j;
  try {
    j = json::parse(read_file(run_dir / "record.json"));
  } catch (const json::exception& e) {
    throw FormatError("cannot parse record.json: " + std::string(e.what()));
  }
  const auto record = j.get<RunRecord>();
  std::vector<std::string> bad;
  for (const auto& a : record.artifacts) {
    const auto p = run_dir / a.path;
    if (!fs::exists(p) || sha256_file(p) != a.sha256) bad.push_back(a.path);
  }
  return bad;
}

}  // namespace avatar

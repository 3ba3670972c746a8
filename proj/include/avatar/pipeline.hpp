// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avatar/bounds.hpp"
#include "avatar/diffusion.hpp"
#include "avatar/gaussian_oracle.hpp"
#include "avatar/poison_lab.hpp"
#include "avatar/schedule.hpp"
#include "avatar/score_training.hpp"
#include "avatar/selection.hpp"

namespace avatar {

inline constexpr const char* kToolVersion = "0.3.0";

// ---- schedule / mixture / dataset serialisation -------------------------------------------------

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kLinear;
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double s_offset = 0.008;
  double max_beta = 0.999;

  DiffusionSchedule build() const;
};

void to_json(nlohmann::json& j, const ScheduleSpec& s);
void from_json(const nlohmann::json& j, ScheduleSpec& s);
void to_json(nlohmann::json& j, const GaussianMixtureSpec& s);
void from_json(const nlohmann::json& j, GaussianMixtureSpec& s);

/// Dataset directory layout: x.avt (n x d), y.avt (n labels as float32), meta.json.
/// Poisoned datasets add delta.avt and the attack tag, budget and seed in meta.json.
void save_dataset(const std::filesystem::path& dir, const LabeledDataset& data,
                  const nlohmann::json& extra_meta = nlohmann::json::object());
LabeledDataset load_dataset(const std::filesystem::path& dir);
void save_poisoned(const std::filesystem::path& dir, const PoisonedDataset& data);

/// Classifier parameters as a 1-D AVT1 tensor plus a JSON descriptor.
void save_classifier(const std::filesystem::path& path_prefix, const Classifier& model);

// ---- end-to-end run ------------------------------------------------------------------------------

enum class ScoreSource { kOracle, kTrained, kCheckpoint };

struct RunConfig {
  std::string command = "demo e2e";
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::filesystem::path output_dir = "runs/demo";

  ScheduleSpec schedule;
  SyntheticConfig data;
  std::size_t validation_size = 200;

  PerturbationBudget attack;
  AttackGranularity granularity = AttackGranularity::kClassWise;

  ScoreSource score_source = ScoreSource::kOracle;
  std::filesystem::path checkpoint;
  EpsModelConfig score_arch;
  ScoreTrainConfig score_train;

  bool select_by_psnr = true;  ///< false: use fixed_t_star
  int fixed_t_star = 100;
  double psnr_threshold_db = 22.0;
  std::vector<int> t_grid = {5, 10, 15, 20, 25, 30, 40, 50, 75, 100, 150, 200, 300};

  ClassifierConfig classifier;
  bool adversarial_training = true;
  PgdConfig pgd{10, 0.0, 9.0 / 255.0, NormKind::kLinf};
  bool noise_only_ablation = true;

  /// Throws InvalidArgument for missing files or inconsistent settings.
  void validate() const;
};

/// Documented default toy configuration.
RunConfig default_run_config();

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults, except "seed" which must be present.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

struct ArtifactEntry {
  std::string path;  ///< relative to the run directory
  std::string sha256;
};

struct RunRecord {
  std::string status = "running";  ///< "ok" or "failed"
  std::string error;
  std::string config_hash;
  std::string tool_version = kToolVersion;
  nlohmann::json config;
  nlohmann::json summary = nlohmann::json::object();
  std::vector<ArtifactEntry> artifacts;
  std::vector<std::pair<std::string, double>> timings_seconds;
};

void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

/// generate -> attack -> score -> select t* -> sanitise -> train/evaluate
/// classifiers -> record. Artifacts and metrics.jsonl land in output_dir and
/// record.json is rewritten after the run (status "failed" on error, with
/// the exception rethrown).
RunRecord run_demo_e2e(const RunConfig& config);

/// Re-hashes every manifest entry of a run directory; returns the mismatching paths.
std::vector<std::string> selfcheck(const std::filesystem::path& run_dir);

/// sha256 of the canonical JSON serialisation.
std::string hash_json(const nlohmann::json& j);

}  // namespace avatar

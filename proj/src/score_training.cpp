// Copyright (C) 2026 The avatar-sanitizer Authors
// SPDX-License-Identifier: Apache-2.0

#include "avatar/score_training.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include <json.hpp>

#include "avatar/error.hpp"
#include "avatar/io.hpp"

namespace avatar {

namespace {

std::vector<std::size_t> network_widths(std::size_t data_dim, const EpsModelConfig& config) {
  std::vector<std::size_t> widths{data_dim + config.time_embedding};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(data_dim);
  return widths;
}

}  // namespace

void timestep_embedding(int t, std::size_t width, std::span<float> out) {
  const std::size_t half = width / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = static_cast<float>(std::sin(t * freq));
    out[half + k] = static_cast<float>(std::cos(t * freq));
  }
  if (width % 2 == 1) out[width - 1] = 0.0f;
}

EpsModel::EpsModel(std::size_t data_dim, EpsModelConfig config, RngStream& rng)
    : data_dim_(data_dim), config_(std::move(config)), net_(network_widths(data_dim_, config_), rng) {}

EpsModel::EpsModel(std::size_t data_dim, EpsModelConfig config, Mlp network)
    : data_dim_(data_dim), config_(std::move(config)), net_(std::move(network)) {
  if (net_.widths() != network_widths(data_dim_, config_)) {
    throw ShapeMismatch("network widths do not match the eps-model configuration");
  }
}

void EpsModel::predict(std::span<const double> x_t, int t, std::span<double> eps_hat) const {
  if (x_t.size() != data_dim_ || eps_hat.size() != data_dim_) throw ShapeMismatch("eps-model dimension mismatch");
  std::vector<float> input(data_dim_ + config_.time_embedding);
  for (std::size_t j = 0; j < data_dim_; ++j) input[j] = static_cast<float>(x_t[j]);
  timestep_embedding(t, config_.time_embedding, std::span(input).subspan(data_dim_));
  Mlp::Workspace ws;
  const auto out = net_.forward(input, 1, ws);
  for (std::size_t j = 0; j < data_dim_; ++j) eps_hat[j] = out[j];
}

void eps_to_score(std::span<const double> eps_hat, const DiffusionSchedule& schedule, int t, std::span<double> out) {
  if (t < 1) throw InvalidArgument("eps_to_score is undefined at t = 0 (zero noise scale)");
  const double scale = -1.0 / std::sqrt(1.0 - schedule.alpha_bar(t));
  for (std::size_t j = 0; j < eps_hat.size(); ++j) out[j] = scale * eps_hat[j];
}

Tensor eps_to_score(const Tensor& eps_hat, const DiffusionSchedule& schedule, int t) {
  if (t < 1) throw InvalidArgument("eps_to_score is undefined at t = 0 (zero noise scale)");
  const double scale = -1.0 / std::sqrt(1.0 - schedule.alpha_bar(t));
  Tensor out(eps_hat.dims());
  for (std::size_t i = 0; i < eps_hat.size(); ++i) out[i] = static_cast<float>(scale * eps_hat[i]);
  return out;
}

LearnedScore::LearnedScore(std::shared_ptr<const EpsModel> model, std::shared_ptr<const DiffusionSchedule> schedule)
    : model_(std::move(model)), schedule_(std::move(schedule)) {
  if (!model_ || !schedule_) throw InvalidArgument("learned score needs a model and a schedule");
}

void LearnedScore::evaluate_sample(std::span<const double> x, int t, std::span<double> out) const {
  model_->predict(x, t, out);
  eps_to_score(out, *schedule_, t, out);
}

ScoreTrainingResult train_score_model(const Tensor& data, const DiffusionSchedule& schedule,
                                      const EpsModelConfig& arch, const ScoreTrainConfig& cfg) {
  if (data.rows() == 0 || data.empty()) throw InvalidArgument("score training needs data");
  if (cfg.batch_size == 0) throw InvalidArgument("batch size must be positive");
  const std::size_t d = data.row_size();
  RngStream init_rng(cfg.seed, 0);
  auto model = std::make_shared<EpsModel>(d, arch, init_rng);
  Mlp& net = model->network();
  Adam adam(net.parameter_count());
  RngStream rng(cfg.seed, 1);

  const std::size_t width = d + arch.time_embedding;
  const std::size_t b = cfg.batch_size;
  std::vector<float> input(b * width), target(b * d), grad_out(b * d), grads(net.parameter_count());
  Mlp::Workspace ws;
  ScoreTrainingResult result;
  result.losses.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t n = 0; n < b; ++n) {
      const auto row = data.row(static_cast<std::size_t>(rng.below(data.rows())));
      const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
      const double a = schedule.alpha_bar(t);
      const double signal = std::sqrt(a), noise = std::sqrt(1.0 - a);
      float* in = input.data() + n * width;
      float* eps = target.data() + n * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double e = rng.normal();
        eps[j] = static_cast<float>(e);
        in[j] = static_cast<float>(signal * row[j] + noise * e);
      }
      timestep_embedding(t, arch.time_embedding, std::span(in + d, arch.time_embedding));
    }
    const auto pred = net.forward(input, b, ws);
    double loss = 0.0;
    const float scale = 2.0f / static_cast<float>(b * d);
    for (std::size_t k = 0; k < b * d; ++k) {
      const float r = pred[k] - target[k];
      loss += static_cast<double>(r) * r;
      grad_out[k] = scale * r;
    }
    loss /= static_cast<double>(b * d);
    if (!std::isfinite(loss)) {
      throw NumericalError("score training diverged at step " + std::to_string(step) + " (non-finite loss)");
    }
    result.losses.push_back(loss);
    std::fill(grads.begin(), grads.end(), 0.0f);
    net.backward(ws, grad_out, grads);
    const double progress = cfg.steps > 1 ? static_cast<double>(step) / static_cast<double>(cfg.steps - 1) : 1.0;
    const double lr = cfg.final_learning_rate + 0.5 * (cfg.learning_rate - cfg.final_learning_rate) *
                                                    (1.0 + std::cos(std::numbers::pi * progress));
    adam.step(net.parameters(), grads, lr);
  }
  if (!net.all_finite()) throw NumericalError("score training produced non-finite parameters");

  result.model = model;
  result.score = std::make_shared<const LearnedScore>(model, std::make_shared<const DiffusionSchedule>(schedule));
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const EpsModel& model, const DiffusionSchedule& schedule,
                     std::uint64_t seed) {
  nlohmann::json header{
      {"format", "avatar-eps-mlp"},
      {"data_dim", model.data_dim()},
      {"hidden", model.config().hidden},
      {"time_embedding", model.config().time_embedding},
      {"widths", model.network().widths()},
      {"parameter_count", model.network().parameter_count()},
      {"schedule", schedule.description()},
      {"schedule_fingerprint", std::to_string(schedule.fingerprint())},
      {"seed", std::to_string(seed)},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out{'A', 'V', 'C', 'K'};
  append_u32_le(out, 1);
  append_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (float v : model.network().parameters()) append_f32_le(out, v);
  write_file(path, out);
}

std::shared_ptr<const EpsModel> load_checkpoint(const std::filesystem::path& path, const DiffusionSchedule& schedule) {
  const auto bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "AVCK", 4) != 0) throw FormatError("not an AVCK checkpoint");
  if (load_u32_le(bytes.data() + 4) != 1) throw FormatError("unsupported checkpoint version");
  const std::uint64_t header_len = load_u64_le(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("schedule_fingerprint", std::string{}) != std::to_string(schedule.fingerprint())) {
    throw FormatError("checkpoint was trained with a different schedule (" +
                      header.value("schedule", std::string{"?"}) + ")");
  }
  EpsModelConfig config;
  config.hidden = header.at("hidden").get<std::vector<std::size_t>>();
  config.time_embedding = header.at("time_embedding").get<std::size_t>();
  const auto data_dim = header.at("data_dim").get<std::size_t>();
  Mlp net(header.at("widths").get<std::vector<std::size_t>>());
  const std::size_t payload = bytes.size() - 16 - header_len;
  if (payload != 4 * net.parameter_count()) throw FormatError("checkpoint parameter payload has the wrong size");
  auto params = net.parameters();
  const auto* p = bytes.data() + 16 + header_len;
  for (std::size_t k = 0; k < params.size(); ++k) params[k] = load_f32_le(p + 4 * k);
  return std::make_shared<const EpsModel>(data_dim, config, std::move(net));
}

}  // namespace avatar

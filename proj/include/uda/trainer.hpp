#pragma once

#include "uda/datasets.hpp"
#include "uda/losses.hpp"

#include <string>
#include <vector>

namespace uda {

struct DatasetSpec {
  std::string kind = "two_moons";  // two_moons | shifted_blobs | glyph_images
  // two_moons
  Index n_per_domain = 300;
  double noise_sigma = 0.1;
  double rotation_deg = 45.0;
  // shifted_blobs
  Index num_classes = 3;
  Index dim = 2;
  std::vector<double> shift = {2.0, 2.0};
  // glyph_images
  Index image_size = 16;
  std::string shift_kind = "brightness_bias";
  double shift_magnitude = 0.15;
};

DomainPair build_dataset(const DatasetSpec& spec, std::uint64_t seed);

struct Seeds {
  std::uint64_t model = 1;
  std::uint64_t data = 2;
  std::uint64_t augment = 3;
};

struct Preset {
  AdvKind adv = AdvKind::kNone;
  bool tc = false;
};

/// "source_only", "dann", "cdan", "cliv", each optionally "+tc".
Preset parse_preset(const std::string& s);

struct RunConfig {
  DatasetSpec dataset;
  std::string preset = "cliv+tc";
  LossWeights weights;
  MixSpec mix;
  bool use_mean_teacher = true;
  double beta_ema = 0.85;
  int epochs = 100;
  Index batch_size = 24;
  SgdConfig opt;
  double disc_lr_mult = 1.0;  // discriminator layers step at lr * this
  Seeds seeds;
  std::string output_dir = "runs";
  // architecture
  std::vector<Index> phi_hidden = {64, 64};
  Index repr_dim = 16;
  std::vector<Index> disc_hidden = {64};
  bool cliv_separate_heads = true;
  Index cdan_dim_cap = 4096;
};

RunConfig run_config_from_json_file(const std::string& path,
                                    const std::vector<std::string>& overrides = {});
std::string run_config_to_json(const RunConfig& cfg);

struct MetricsRecord {
  int epoch = 0;
  LossBreakdown loss;  // epoch mean over steps
  double source_acc = 0.0;
  double target_acc = 0.0;
  double lr = 0.0;
  double grl_lambda = 0.0;
};

struct TrainResult {
  ModelBundle model;
  std::vector<MetricsRecord> history;
};

/// Standard DANN ramp 2/(1+e^(-10p)) - 1 over training progress p in [0,1].
double grl_lambda(double progress);

/// Fraction of argmax matches; ties break toward the lowest class index.
double evaluate(const ModelBundle& bundle, const Tensor& x, const Tensor& y_onehot);

/// Thrown when a step produces a nonfinite loss; carries the diagnostics the
/// CLI prints before exiting with code 3.
struct TrainAbort : std::runtime_error {
  TrainAbort(int epoch_, int step_, LossBreakdown breakdown_, const std::string& what_);
  int epoch;
  int step;
  LossBreakdown breakdown;
};

TrainResult train(const RunConfig& cfg);
TrainResult train_on(const RunConfig& cfg, const DomainPair& pair);

void write_metrics_csv(const std::vector<MetricsRecord>& history, const std::string& path);

}  // namespace uda

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oneshot/corpus.hpp"
#include "oneshot/fourier.hpp"
#include "oneshot/privacy.hpp"
#include "oneshot/server.hpp"

namespace oneshot {

/// Every knob of one pipeline execution. Sub-seeds are not configured
/// directly; they are derived from `seed` per stage and client.
struct ExperimentConfig {
  /// Directory tree or corpus archive, or "shapes" for the built-in
  /// procedural corpus (shapes_per_class images per class).
  std::string corpus = "shapes";
  std::size_t shapes_per_class = 300;
  std::uint64_t shapes_seed = 7;
  std::size_t resolution = 32;
  double test_fraction = 0.2;   // held out for evaluation
  double proxy_fraction = 0.1;  // server-side autoencoder sample, never given to clients

  PartitionSpec partition;
  ModelSpec model;
  TrainConfig local;
  SelectionSpec selection;
  PerturbConfig perturb;
  AutoencoderSpec ae;
  AeTrainConfig ae_train;
  SynthesisConfig synthesis;
  ServerTrainConfig server;

  bool fedavg = true;
  bool ensemble = false;
  bool random_selection = true;
  bool no_ae = true;
  bool noise = true;
  bool fedmix = true;
  std::vector<double> noise_p{0.1, 0.2};
  NoiseConfig noise_cfg;
  /// Fourier lambdas for the privacy sweep (PSNR/SSIM only).
  std::vector<double> lambda_grid{0.1, 0.5, 0.8};

  std::filesystem::path out_dir = "runs/desk";
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  bool deterministic = false;

  /// Fills every sub-config's seed and shared fields from the top level.
  void resolve();
  void validate() const;
};

/// Flat `key = value` text; '#' starts a comment. Unknown keys, malformed
/// values and duplicate keys are InvalidArgument errors naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(config_to_text(c)) reproduces c.
std::string config_to_text(const ExperimentConfig& cfg);
/// Applies one `key=value` override.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

struct MethodResult {
  std::string method;
  double accuracy = 0.0;
  std::size_t distillates = 0;  // training items the server saw
};

struct PrivacyRow {
  std::string mode;   // fourier, laplace, gaussian, fedmix
  double param = 0.0; // lambda or p
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::size_t samples = 0;
};

struct ClientDiagnostics {
  int client_id = 0;
  std::size_t shard_size = 0;
  std::vector<std::size_t> class_histogram;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<int> covered_classes;
  std::size_t coreset_size = 0;
  double syn_initial_loss = 0.0;
  double syn_final_loss = 0.0;
  std::uint64_t payload_bytes = 0;
  std::vector<std::string> warnings;
};

struct ExperimentReport {
  std::vector<MethodResult> methods;
  std::vector<PrivacyRow> privacy;
  CostReport cost;
  std::vector<std::pair<std::string, double>> stage_seconds;
  std::vector<ClientDiagnostics> clients;
  double ae_reconstruction_error = 0.0;
  double mean_max_class_share = 0.0;
  std::string config_text;

  /// NaN when the method is absent.
  double accuracy(const std::string& method) const;
  const PrivacyRow* privacy_row(const std::string& mode, double param) const;
};

/// Stage names in execution order.
const std::vector<std::string>& stage_names();

/// Runs one stage against cfg.out_dir, consuming the artifacts earlier stages
/// left there. Throws StageError (stage name, client id) on failure.
void run_stage(const ExperimentConfig& cfg, const std::string& stage);

/// All stages in order, then the report is read back from reports/.
ExperimentReport run_pipeline(const ExperimentConfig& cfg);

/// Collects the per-stage outputs under out_dir into a report.
ExperimentReport collect_report(const std::filesystem::path& out_dir);

/// Writes report.json, methods.tsv, privacy.tsv, clients.tsv,
/// accuracy.svg and psnr_lambda.svg into `dir`. Returns notices (e.g. a
/// skipped plot).
std::vector<std::string> emit_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace oneshot

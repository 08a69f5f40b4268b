#pragma once

#include "st3d/imputation.hpp"
#include "st3d/msagnet.hpp"
#include "st3d/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace st3d {

enum class Method { asign3d, asign2d, overlap, similarity, propagation_only };

const char* to_string(Method m);
/// Throws UsageError on an unknown name.
Method method_from_string(const std::string& s);

/// Which layer of a test sample carries the known labels.
enum class KnownLayerRule { first, last };

const char* to_string(KnownLayerRule r);
KnownLayerRule known_layer_rule_from_string(const std::string& s);

struct SampleSummary {
  std::string sample_id;
  std::vector<int> layer_indices;  // ascending
};

std::vector<SampleSummary> summarize(const std::vector<SampleStack>& stacks);

struct FoldSpec {
  int fold_id = 0;
  std::vector<std::string> train_samples;
  std::vector<std::string> test_samples;
  std::map<std::string, int> known_layer_index;  // per test sample
  double known_ratio = 0.2;
};

/// Seeded partition of the samples into `n_folds` disjoint test sets; every
/// sample is tested exactly once. Sample lists keep input order.
std::vector<FoldSpec> make_folds(const std::vector<SampleSummary>& samples, int n_folds, KnownLayerRule rule,
                                 double known_ratio, std::uint64_t seed);

int known_layer_for(const SampleSummary& sample, KnownLayerRule rule);

/// Marks round(known_ratio * spot_count) spots of `known_layer_index` as known,
/// chosen by a seeded shuffle; capped at the layer size.
Mask select_known_spots(const SampleStack& stack, int known_layer_index, double known_ratio, std::uint64_t seed);

struct ExperimentConfig {
  Method method = Method::asign3d;
  int n_folds = 4;
  double known_ratio = 0.2;
  KnownLayerRule known_layer = KnownLayerRule::first;
  std::uint64_t seed = 0;
  std::size_t k_intra = kDefaultIntraK;
  std::size_t k_cross = kDefaultCrossK;
  std::size_t k_2d = kDefault2dK;
  PropagationConfig propagation;
  int similarity_m = kDefaultSimilarityNeighbors;
  /// feature_dim and gene_count are filled in from the data.
  ModelConfig model = ModelConfig::toy();
  TrainConfig train = TrainConfig::toy();
  /// Fixed fusion weight; otherwise chosen on a validation sample.
  std::optional<double> fusion_alpha;
  /// Folds run concurrently on up to this many threads.
  int jobs = 1;
};

struct SamplePrediction {
  std::string sample_id;
  std::vector<std::string> spot_ids;
  ImputationResult result;
  Mask eval_rows;  // unknown spots, the rows that were scored
};

struct FoldResult {
  FoldSpec spec;
  std::optional<std::string> validation_sample;
  double mse = 0.0;
  double mae = 0.0;
  double pcc = 0.0;
  int pcc_skipped_genes = 0;
  int eval_spots = 0;
  int unreached_spots = 0;
  std::optional<double> fusion_alpha;
  std::optional<double> first_train_loss;
  std::optional<double> final_train_loss;
  /// Every spot id whose label entered the training loss.
  std::vector<std::string> loss_spot_ids;
  std::vector<SamplePrediction> predictions;
};

struct RunReport {
  int schema_version = 1;
  ExperimentConfig config;
  std::vector<FoldResult> folds;
  double mse = 0.0;
  double mae = 0.0;
  double pcc = 0.0;
  double wall_clock_seconds = 0.0;
};

/// Cross-validated evaluation of one method. Metrics cover the unknown spots
/// of test samples; fold values average over test samples and the aggregate
/// averages over folds.
RunReport run_experiment(const std::vector<SampleStack>& samples, const ExperimentConfig& cfg);

/// Runs one fold; `samples` is the whole dataset.
FoldResult run_fold(const std::vector<SampleStack>& samples, const FoldSpec& fold, const ExperimentConfig& cfg);

/// Versioned JSON without wall-clock time, so equal runs give equal bytes.
std::string report_json(const RunReport& report);

/// Writes report.json, timing.json and predictions/<sample>.{expression,provenance}.tsv.
void write_run_outputs(const RunReport& report, const std::filesystem::path& dir);

/// Deterministic child seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace st3d

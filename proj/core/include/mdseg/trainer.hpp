#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "mdseg/augment.hpp"
#include "mdseg/cmmd.hpp"
#include "mdseg/io.hpp"
#include "mdseg/losses.hpp"
#include "mdseg/metrics.hpp"
#include "mdseg/synthetic.hpp"
#include "mdseg/unet.hpp"

namespace mdseg {

enum class Ablation { baseline, cpm, cpm_cmmd };
Ablation ablation_from_string(const std::string& s);
std::string to_string(Ablation a);

struct CmmdTrainConfig {
  int refresh_interval = 100;  // rerun clustering every R iterations
  int bank_size = 256;         // ring-buffer capacity per layer
  std::vector<int> layers;     // enabled encoder layers, 1-based; empty = all
  HdbscanConfig hdbscan;
};

struct TrainConfig {
  int iter_max = 3000;
  int batch_labeled = 2;
  int batch_unlabeled = 4;
  double lr = 0.01;       // SGD with momentum, constant rate
  double momentum = 0.9;
  double ema_alpha = 0.99;
  std::uint64_t seed = 1;
  int checkpoint_interval = 1000;  // 0 = only final
  UNetConfig model;
  AugConfig aug;
  CmmdTrainConfig cmmd;
};

void validate(const TrainConfig& c);

/// Execution counters proving the ablation gates (baseline and cpm must
/// never touch clustering, MMD, or the feature banks).
struct GatingCounters {
  long hdbscan_runs = 0;
  long mmd_evals = 0;
  long bank_pushes = 0;
};

struct DataSplits {
  std::vector<Tensor<float>> labeled_images;
  std::vector<Tensor<std::uint8_t>> labeled_masks;
  std::vector<Tensor<float>> unlabeled_images;
  std::vector<int> unlabeled_domains;  // metadata; never used in training
  std::vector<Tensor<float>> test_images;
  std::vector<Tensor<std::uint8_t>> test_masks;
  std::vector<int> test_domains;
};

DataSplits load_splits(const std::vector<ManifestItem>& manifest);

/// Frozen per-layer clustering state, refreshed every R iterations and
/// treated as constants in between (pseudo-centroids carry no gradient).
struct LayerCmmdState {
  bool active = false;
  Standardizer stand;
  std::vector<std::vector<double>> centroids;
  double sigma = 1.0;
  double anchor_yy = 0.0;              // precomputed YY term of the estimator
  Tensor<float> anchor;                // standardized anchor snapshot, n x d
};

/// Teacher-student training loop: CPM mixing, pseudo-labels, periodic
/// HDBSCAN refresh over feature banks, per-layer MMD, SGD + EMA.
class Trainer {
 public:
  Trainer(TrainConfig cfg, Ablation ablation, DataSplits data);

  /// One optimization step; iter is 0-based and must equal iteration().
  LossReport step(long iter);

  /// Steps from iteration() to iter_max with CSV log, cluster report and
  /// checkpoints under out_dir. Layout: train_log.csv, cluster_report.jsonl,
  /// train_stats.json, checkpoint_final/ (+ checkpoint_NNNNNN/ periodically).
  void run(const std::string& out_dir);

  void save_checkpoint(const std::string& dir) const;
  static Trainer load_checkpoint(const std::string& dir, DataSplits data);

  long iteration() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  const DataSplits& data() const { return data_; }
  Ablation ablation() const { return ablation_; }
  const ModelParams<float>& student() const { return student_; }
  const ModelParams<float>& teacher() const { return teacher_; }
  const GatingCounters& counters() const { return counters_; }
  const std::vector<LayerCmmdState>& cmmd_state() const { return cmmd_state_; }

 private:
  struct LayerBank {
    std::deque<std::vector<float>> unlabeled;  // pooled teacher features
    std::deque<std::vector<float>> labeled;    // pooled student features (anchor)
  };

  bool cmmd_on() const { return ablation_ == Ablation::cpm_cmmd; }
  bool cpm_on() const { return ablation_ != Ablation::baseline; }
  bool layer_enabled(std::size_t l) const;  // 1-based
  void push_bank(std::deque<std::vector<float>>& buf, const Tensor<float>& pooled);
  void refresh_clusters(long iter);

  TrainConfig cfg_;
  Ablation ablation_;
  DataSplits data_;
  UNet<float> net_;
  ModelParams<float> student_, teacher_;
  std::vector<Tensor<float>> momentum_;
  std::vector<LayerBank> banks_;             // per layer (size L)
  std::vector<LayerCmmdState> cmmd_state_;   // per layer (size L)
  GatingCounters counters_;
  long iter_ = 0;
  std::vector<std::string> cluster_report_rows_;  // JSONL, flushed by run()
};

// ---- evaluation ------------------------------------------------------

struct EvalRow {
  int domain = 0;  // 0 = macro average over domains
  int items = 0;
  double dc = 0, jc = 0;
  int surf_items = 0;  // items where surface distances were defined
  double hd = 0, asd = 0;
};

struct MetricsReport {
  std::vector<EvalRow> per_domain;
  EvalRow macro;
};

/// Argmax decoding; per-item foreground-class metrics averaged per domain,
/// then macro-averaged over domains. HD/ASD skip undefined items.
MetricsReport evaluate(const UNetConfig& mc, const ModelParams<float>& params,
                       const DataSplits& data);

std::string metrics_to_csv(const MetricsReport& r);
std::string metrics_to_json(const MetricsReport& r);

// ---- embedding dump --------------------------------------------------

struct EmbedResult {
  Tensor<float> features;   // n x d pooled student features at the layer
  Tensor<double> pca2;      // n x 2 projection
  std::vector<int> domains; // true-domain tags
  Silhouette sil;           // grouped by true domain, original feature space
  bool degenerate = false;  // no feature variance
};

EmbedResult embed_dump(const UNetConfig& mc, const ModelParams<float>& params,
                       const DataSplits& data, int layer);

/// Principal 2-D projection of centered rows (power iteration, deterministic).
Tensor<double> pca_2d(const Tensor<double>& x);

/// Static scatter plot of the projection colored by domain tag.
std::string embed_svg(const Tensor<double>& pca2, const std::vector<int>& domains);

}  // namespace mdseg

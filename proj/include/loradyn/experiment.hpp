// SPDX-License-Identifier: Apache-2.0
//
// Pretraining, fine-tuning lattices, manifests and merged reports.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loradyn/dataset.hpp"
#include "loradyn/lora.hpp"
#include "loradyn/probe.hpp"

namespace loradyn {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct ExperimentConfig {
  std::string phase = "grid";
  std::uint64_t seed = 1;
  std::string out = "results";
  int threads = 1;

  std::size_t d = 784, n = 1024, r = 32, classes = 10;
  double scale = 1.0;

  int pretrain_steps = 2000;
  double pretrain_lr = 1e-3;
  std::size_t batch = 64;
  int log_every = 100;

  std::string optimizer = "adam";
  int finetune_steps = 100;
  std::vector<double> lrs = {1e-4, 1e-3, 1e-2};
  std::vector<double> init_sizes = {0.01, 0.03, 0.1, 0.3, 1.0, 2.0};
  std::string init_param = "beta";  // beta: multiplier on 1/sqrt(fan_in); sigma: absolute standard deviation
  std::vector<std::string> schemes = {"init_a", "init_ab"};
  int seeds = 5;

  bool synthetic = false;  // no IDX paths needed when set
  std::size_t synthetic_train = 6400, synthetic_test = 2000;
  double shift_weight = 0.5;  // fine-tune task prototypes mix in a second prototype set
  int label_shift = 1;        // and relabel class k as k+1
  std::string pretrain_train_images, pretrain_train_labels, pretrain_test_images, pretrain_test_labels;
  std::string finetune_train_images, finetune_train_labels, finetune_test_images, finetune_test_labels;
  std::string checkpoint;

  std::vector<std::size_t> widths = {256, 512, 1024, 2048, 4096};
  std::size_t probe_rank = 8;
  std::string probe_scheme = "init_a";
  std::string a0, b0;  // empty: scheme default
  std::string eta = "-1/2";
  double lr_c = 0.2, lr_ratio = 1.0;
  std::string probe_optimizer = "adam";
  int probe_steps = 10, probe_seeds = 5;
  std::size_t out_dim = 0;
  double target_scale = 10.0;

  bool full_scale = false;
};

using KeyValues = std::map<std::string, std::string>;

KeyValues to_kv(const ExperimentConfig& cfg);
// Unknown keys and malformed values are rejected.
void apply_kv(ExperimentConfig& cfg, const KeyValues& kv);
KeyValues parse_kv_text(const std::string& text);
KeyValues load_kv_file(const std::string& path);
// Full protocol: n=4096, 10 seeds, the long lr and sigma grids, 2000 pretraining steps.
void apply_full_scale(ExperimentConfig& cfg);
ProbeConfig probe_config(const ExperimentConfig& cfg);

struct DataBundle {
  Dataset pretrain_train, pretrain_test, finetune_train, finetune_test;
};
DataBundle load_data(const ExperimentConfig& cfg);

struct PretrainLog {
  int step = 0;
  double train_loss = 0, test_loss = 0, test_accuracy = 0;
};

struct PretrainResult {
  ToyModel model;
  std::vector<PretrainLog> log;
};

PretrainResult pretrain(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test);

struct Evaluation {
  double loss = 0, accuracy = 0;
};
Evaluation evaluate(const ToyModel& model, const Dataset& ds);

// First-layer features of a dataset under a frozen model.
struct FeatureCache {
  Matrix h1;    // n x N
  Matrix w0h1;  // n x N
  std::vector<int> labels;
  std::vector<std::ptrdiff_t> column_of;  // dataset row -> cache column, -1 if absent
};
FeatureCache build_features(const ToyModel& model, const Dataset& ds, const std::vector<std::size_t>& rows);
FeatureCache build_features(const ToyModel& model, const Dataset& ds);
Evaluation evaluate_features(const ToyModel& model, const FeatureCache& fc);

struct CellKey {
  std::string scheme;
  double lr = 0;
  double init_size = 0;
  int seed = 0;
};

struct CellResult {
  CellKey key;
  double step0_loss = 0;
  double test_loss = 0;
  double test_accuracy = 0;
  int steps = 0;
  bool ok = false;
  std::string error;
};

struct GridResult {
  std::vector<CellResult> cells;  // sorted by (scheme, lr, init_size, seed)
};

struct FinetuneContext {
  const ToyModel* pretrained = nullptr;
  const Dataset* train = nullptr;
  const FeatureCache* train_features = nullptr;
  const FeatureCache* test_features = nullptr;
};

// Batch rows visited by each seed, shared by every cell with that seed.
std::vector<std::vector<std::size_t>> batch_schedule(const ExperimentConfig& cfg, std::size_t n_train, int seed);

CellResult finetune_cell(const ExperimentConfig& cfg, const FinetuneContext& ctx, const CellKey& key);

GridResult run_grid(const ExperimentConfig& cfg, const ToyModel& pretrained, const Dataset& ft_train,
                    const Dataset& ft_test, const std::vector<CellKey>& cells);
std::vector<CellKey> lattice(const ExperimentConfig& cfg);

struct BestCell {
  std::string scheme;
  double lr = 0;
  double best_init_size = 0;
  double mean_loss = 0, std_loss = 0, mean_accuracy = 0;
  int replicates = 0;
  bool complete = true;
};
// Per (scheme, lr): the init size with the lowest mean test loss over seeds.
std::vector<BestCell> best_over_init(const GridResult& g);
std::optional<BestCell> find_best(const std::vector<BestCell>& b, const std::string& scheme, double lr);

std::string grid_csv_header();
std::string grid_csv_row(const CellResult& c);
std::string grid_csv(const GridResult& g);
GridResult parse_grid_csv(const std::string& text);
std::string summary_csv(const GridResult& g);
std::string improvement_csv(const GridResult& g, const std::string& base = "init_a",
                            const std::string& other = "init_ab");
std::string summary_text(const GridResult& g, const ExperimentConfig& cfg);

std::string pretrain_log_csv(const std::vector<PretrainLog>& log);

// Manifest: the config, master seed, version, and the files produced.
std::string manifest_json(const ExperimentConfig& cfg, const std::vector<std::string>& outputs,
                          const std::map<std::string, std::string>& extra = {});
ExperimentConfig config_from_manifest(const std::string& path);

// Phase drivers; each writes its outputs and manifest.json under cfg.out and
// returns the list of files written (relative to cfg.out).
using LogFn = std::function<void(const std::string&)>;
std::vector<std::string> run_pretrain_phase(const ExperimentConfig& cfg, const LogFn& log = {});
std::vector<std::string> run_finetune_phase(const ExperimentConfig& cfg, const LogFn& log = {});
std::vector<std::string> run_grid_phase(const ExperimentConfig& cfg, const LogFn& log = {});
std::vector<std::string> run_probe_phase(const ExperimentConfig& cfg, const LogFn& log = {});

struct ReportOutput {
  std::string csv;
  std::string text;
};
// Merges the grid results of several run directories.
ReportOutput build_report(const std::vector<std::string>& dirs);
std::vector<std::string> run_report_phase(const std::vector<std::string>& dirs, const std::string& out,
                                          const LogFn& log = {});

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace loradyn

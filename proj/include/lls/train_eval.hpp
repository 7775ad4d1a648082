#pragma once

// Episodic trainer (SGD with a stepped learning-rate schedule), optional
// batch pre-training on the local classification loss, episodic evaluation
// with 95% confidence intervals, the ablation ladder runner, and feature
// norm heatmap export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lls/backbone.hpp"
#include "lls/data.hpp"
#include "lls/losses.hpp"
#include "lls/metric.hpp"
#include "lls/transfer.hpp"

namespace lls {

// Which training losses are active (the LAT ablation axis).
enum class LatMode { off, cls, cls_reg };

struct TrainConfig {
    int episodes_total = 2000;
    // (first episode index, learning rate), ascending indices
    // Losses are sums over samples/locations, so rates sit ~100x below the
    // usual mean-reduction scale; 0.05 reliably diverges here.
    std::vector<std::pair<int, double>> lr_schedule{{0, 0.0005}, {1200, 0.00005}, {1800, 0.000005}};
    double momentum = 0.9;
    LossWeights weights;
    MetricConfig metric;
    int way = 5;
    int shot = 5;
    std::uint64_t seed = 0;
    int pretrain_batches = 0;  // 0 disables pre-training
    int pretrain_batch_size = 32;
    double pretrain_lr = 0.1;
    LatMode lat = LatMode::cls_reg;
    bool leave_one_out = false;
    bool augment_images = true;

    double lr_at(int episode) const;
    void validate() const;
};

struct TrainLogRow {
    int episode;
    double lc, ls, lr_loss, j, learning_rate;
};

struct EvalReport {
    std::vector<double> per_episode_accuracy;
    double mean = 0.0;
    double ci95_halfwidth = 0.0;  // 1.96 * stddev / sqrt(n)
    std::string config_echo;

    static EvalReport from_accuracies(std::vector<double> accs, std::string config_echo = "");
};

enum class EvalMode { pooled_baseline, local };

// SGD on L_C over uniformly sampled base-split batches.
void pretrain(const Corpus& corpus, BackboneParams& params, const TrainConfig& config);

// Episode-based training of the full objective (or its LAT ablation subset).
BackboneParams train(const Corpus& corpus, const TrainConfig& config, const BackboneArch& arch,
                     std::vector<TrainLogRow>* log = nullptr);

// Feature extractor hook so stub embeddings can drive the harness in tests.
using Extractor = std::function<Tensor(const Tensor& image, int corpus_index)>;

EvalReport evaluate_with(const Corpus& corpus, const Extractor& extract,
                         const BackboneParams* params_for_lkt, Split split, int way, int shot,
                         int n_episodes, const MetricConfig& metric,
                         const std::optional<TransferConfig>& transfer, EvalMode mode,
                         std::uint64_t seed, int workers = 1, int queries_per_class = 15);

EvalReport evaluate(const Corpus& corpus, const BackboneParams& params, Split split, int way,
                    int shot, int n_episodes, const MetricConfig& metric,
                    const std::optional<TransferConfig>& transfer, EvalMode mode,
                    std::uint64_t seed, int workers = 1);

struct AblationConfig {
    TrainConfig train;
    int eval_episodes = 400;
    Split eval_split = Split::novel;
    int eval_way = 5;
    double gamma = 0.6;
    double beta = 0.8;
    double softmax_scale = 10.0;
    int workers = 1;
};

struct AblationRow {
    std::string lat, lsm, lkt;
    double acc_1shot, ci_1shot;
    double acc_5shot, ci_5shot;
};

// The six-row ladder: three checkpoints (one per LAT mode) evaluated pooled,
// then the strongest checkpoint under Loc, Loc+Mat, and Loc+Mat plus LKT.
std::vector<AblationRow> run_ablation(const Corpus& corpus, const AblationConfig& config);

// Per-location L2 norm grid: min-max scaled PGM plus raw-value CSV.
void export_heatmap(const BackboneParams& params, const Tensor& image,
                    const std::filesystem::path& out_prefix);

void write_training_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);
void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);
std::string eval_summary_line(const EvalReport& report);

}  // namespace lls

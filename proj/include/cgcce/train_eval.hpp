#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgcce/cfd_decoder.hpp"
#include "cgcce/data_pipeline.hpp"
#include "cgcce/losses_metrics.hpp"

namespace cgcce {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// lr_min + (lr0 - lr_min)(1 + cos(pi * epoch / (total - 1))) / 2.
double cosine_lr(int epoch, int total, double lr0, double lr_min);

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Decoupled weight decay: w -= lr * wd * w, then the bias-corrected Adam step.
class AdamW {
public:
    AdamW(std::vector<Var> params, AdamWOptions opts = {});
    void step(double lr);
    [[nodiscard]] std::int64_t steps() const noexcept { return t_; }
    [[nodiscard]] const std::vector<Tensor>& first_moments() const noexcept { return m_; }
    [[nodiscard]] const std::vector<Tensor>& second_moments() const noexcept { return v_; }

private:
    std::vector<Var> params_;
    AdamWOptions opts_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::int64_t t_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_f1 = 0.0;
    double val_iou = 0.0;
    double lr = 0.0;
    bool operator==(const EpochRecord&) const = default;
};

std::string history_csv_header();
std::string history_csv_row(const EpochRecord& r);
void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

struct TrainOptions {
    int epochs = 300;
    int batch = 8;
    std::uint64_t seed = 0;
    double lr0 = 5e-4;
    double lr_min = -1.0;  // negative means lr0 / 100
    AdamWOptions adamw;
    std::string checkpoint_path;  // written on every strict val-F1 improvement
    std::string history_path;     // rewritten after every epoch
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_f1 = -1.0;
    std::vector<Tensor> best_parameters;  // ParameterStore order
    std::int64_t steps = 0;
};

/// Builds the network from cfg and opts.seed and trains it end to end.
TrainResult train(const ModelConfig& cfg, const std::vector<BiTemporalSample>& train_set,
                  const std::vector<BiTemporalSample>& val_set, const TrainOptions& opts);
TrainResult train(const ModelConfig& cfg, const DatasetManifest& manifest, const TrainOptions& opts);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> parameters;
    nlohmann::json state;  // epoch, best_f1, lr, seed, ...
    std::uint32_t version = kCheckpointVersion;
};

void save_checkpoint(const std::string& path, const CgcceNet& net, const nlohmann::json& state);
Checkpoint load_checkpoint(const std::string& path);
/// Network with the checkpoint's configuration and parameters.
CgcceNet restore_network(const Checkpoint& ckpt);

/// Dataset-global confusion at cfg.threshold. Samples are processed in
/// batches of `batch`; shards take whole batches and run concurrently.
ConfusionCounts evaluate_counts(const CgcceNet& net, const std::vector<BiTemporalSample>& samples, int batch = 8,
                                int shards = 1);
MetricReport evaluate(const CgcceNet& net, const std::vector<BiTemporalSample>& samples, int batch = 8,
                      int shards = 1);
MetricReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest, const std::string& split,
                      int shards = 1);

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    double f1 = 0.0;
    double iou = 0.0;
};

/// "full", then each of gccm, cgrr, scem, cfd switched off.
const std::vector<std::string>& ablation_variants();
ModelConfig ablation_config(const ModelConfig& base, const std::string& variant);

struct AblationOptions {
    TrainOptions train;  // seed and paths are overridden per run
    std::string split = "val";
    std::function<void(const AblationRow&)> on_row;
};

std::vector<AblationRow> ablate(const ModelConfig& cfg, const std::vector<BiTemporalSample>& train_set,
                                const std::vector<BiTemporalSample>& val_set,
                                const std::vector<BiTemporalSample>& eval_set, const std::vector<std::uint64_t>& seeds,
                                const AblationOptions& opts);
std::vector<AblationRow> ablate(const ModelConfig& cfg, const DatasetManifest& manifest,
                                const std::vector<std::uint64_t>& seeds, const AblationOptions& opts);
/// Per-run rows followed by one "mean" row per variant.
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct ModelCost {
    std::int64_t params = 0;
    std::int64_t flops = 0;
    [[nodiscard]] double params_m() const { return static_cast<double>(params) / 1e6; }
    [[nodiscard]] double flops_g() const { return static_cast<double>(flops) / 1e9; }
};

/// Trainable scalars, and 2 x MACs of one forward pass on a 3 x 256 x 256 pair.
ModelCost count_params_flops(const ModelConfig& cfg);

}  // namespace cgcce

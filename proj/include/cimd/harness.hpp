#pragma once

#include "cimd/data.hpp"
#include "cimd/metrics.hpp"
#include "cimd/model.hpp"
#include "cimd/objectives.hpp"
#include "cimd/params.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace cimd {

enum class TrainMode { Cimd, DdpmDetSeg, DdpmProbSeg };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
    TrainMode mode = TrainMode::Cimd;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    bool schedule_rescale = true;
    LossWeights weights;
    double learning_rate = 1e-4;
    int batch_size = 8;
    int steps = 1000;
    std::uint64_t seed = 0;
    CovarianceMode covariance_mode = CovarianceMode::AxisAligned;
    // Full mode only: keep the strictly-lower Cholesky head at its zero initialisation.
    bool freeze_offdiag = false;
    int eval_samples = 4;
    int checkpoint_every = 0;  // 0 disables intermediate checkpoints
    int log_every = 1;
    int latent_dim = 6;
    std::vector<int> amb_filters{32, 64, 128, 192};
    int base_channels = 32;
    std::vector<int> channel_multipliers{1, 2, 4};
    int time_embed_dim = 32;

    void validate() const;
    // The ddpm-* arms have no ambiguity nets, so beta is reported as 0 for them.
    LossWeights effective_weights() const;
    ModelConfig model_config(int image_size, int prior_channels) const;

    nlohmann::json to_json() const;
    // Flat "key = value" text, '#' starts a comment. Unknown keys are an error.
    static TrainConfig parse(const std::string& text);
    static TrainConfig load(const std::string& path);
    // Apply one key/value pair; throws std::invalid_argument naming the key on bad input.
    void set(const std::string& key, const std::string& value);
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Checkpoint {
    ModelConfig model;
    ParamMap params;
    nlohmann::json info = nlohmann::json::object();
};

// Binary layout in docs/checkpoint_format.md.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
// FNV-1a 64 of the file bytes, as 16 hex digits.
std::string file_hash(const std::string& path);

struct TrainOptions {
    std::ostream* log = nullptr;  // NDJSON, one LossReport per logged step
    std::string checkpoint_path;  // written every checkpoint_every steps, at the end and on abort
    std::function<void(int step, const LossReport&)> on_step;
};

struct TrainResult {
    ModelConfig model;
    ParamMap params;
    std::vector<LossReport> losses;
};

// Throws DiagnosticError on a non-finite loss; the parameters from before the failing
// step are written to checkpoint_path first.
TrainResult train(const TrainConfig& cfg, const std::vector<AmbiguousSample>& data, const TrainOptions& opt = {});

// Produces the predicted MaskSet for data[index].
using MaskSource = std::function<MaskSet(const AmbiguousSample& sample, std::size_t index)>;

// Draws n masks per image through the sampler; image i uses its own seed derived from (seed, i).
MaskSource model_mask_source(const Model& model, const ParamMap& params, int n, std::uint64_t seed,
                             double threshold = 0.0);

struct EvaluationResult {
    TestsetReport report;
    std::vector<MaskSet> predictions;
};

EvaluationResult evaluate(const std::vector<AmbiguousSample>& data, const MaskSource& source,
                          const MetricOptions& opt = {});
// Checks the dataset against the checkpoint's model config first.
EvaluationResult evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<AmbiguousSample>& data, int n,
                                     std::uint64_t seed, const MetricOptions& opt = {});

double blank_fraction(const std::vector<MaskSet>& sets);

nlohmann::json report_to_json(const TestsetReport& r);

struct ArmResult {
    TrainMode mode = TrainMode::Cimd;
    std::string label;
    EvaluationResult eval;
    double blank_fraction = 0.0;
    int blank_draws = 0;
    double final_l_simple = 0.0;
    ParamMap params;
};

struct AblationOptions {
    std::vector<TrainMode> arms{TrainMode::Cimd, TrainMode::DdpmProbSeg, TrainMode::DdpmDetSeg};
    int n = 4;
    std::uint64_t eval_seed = 1;
    std::function<void(const std::string&)> progress;
};

struct AblationReport {
    std::vector<ArmResult> arms;
};

// Trains each arm from base_cfg (only the mode differs) and evaluates on test data.
AblationReport run_ablation(const std::vector<AmbiguousSample>& train_data, const std::vector<AmbiguousSample>& test_data,
                            const TrainConfig& base_cfg, const AblationOptions& opt = {});
nlohmann::json ablation_to_json(const AblationReport& r);

}  // namespace cimd

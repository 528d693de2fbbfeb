#ifndef TACT_TRAIN_HPP
#define TACT_TRAIN_HPP

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tact/adam.hpp"
#include "tact/dataset.hpp"
#include "tact/model.hpp"

// Training loop with periodic optimizer resets, evaluation (accuracy,
// confusion matrix, latent export), and the ablation harness.

namespace tact::train {

struct TrainConfig {
    float lr = 5e-5f;
    std::size_t max_epochs = 300;
    std::size_t batch_size = 8;
    std::size_t reset_period_epochs = 10;
    std::size_t early_stop_patience = 50;  // epochs without val-accuracy improvement
    double stop_at_train_accuracy = 0;     // > 0: stop once the training passes reach it
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

using Confusion = std::array<std::array<std::size_t, 4>, 4>;  // rows = true label

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0, train_accuracy = 0;
    double val_loss = 0, val_accuracy = 0;
};

struct RunReport {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val_accuracy = 0;
    double test_accuracy = 0;
    Confusion confusion{};
    std::string checkpoint_path;
    std::vector<std::string> latent_ids;      // one per test trial
    std::vector<std::vector<float>> latents;  // d_model values each

    std::string to_json() const;
};

// assembled split held in memory for the trainer
struct TrialSet {
    std::vector<std::string> ids;
    std::vector<data::ModelInputSequence> items;
};

TrialSet load_split(const std::string& dataset_dir, const data::Manifest& manifest,
                    const std::vector<std::string>& ids, const data::InputMask& mask);

// pure helpers, unit-testable without a model
Confusion confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted);
double accuracy_of(const Confusion& c);

struct EvalResult {
    double accuracy = 0;
    Confusion confusion{};
    std::vector<int> predicted;
    std::vector<std::vector<float>> latents;
};

EvalResult evaluate(model::Model<float>& m, const TrialSet& set);

// called at the start of every epoch, after any optimizer reset and before
// the first batch
using EpochObserver =
    std::function<void(std::size_t epoch, const nn::AdamState<float>& state)>;

// Trains on splits.train, early-stops on splits.val accuracy, evaluates the
// best checkpoint on splits.test. Writes model.ckpt, report.json,
// confusion.csv, and latents.csv under out_dir (creates it).
RunReport train(const model::ModelConfig& model_config, const TrainConfig& train_config,
                const std::string& dataset_dir, const data::Splits& splits,
                const std::string& out_dir, const EpochObserver& observer = {});

// -------------------------------------------------------------- ablation

struct AblationSpec {
    std::string name;
    model::FlowBackbone backbone = model::FlowBackbone::CNNStar;
    model::ClassifierKind classifier = model::ClassifierKind::Transformer;
    data::InputMask mask;
};

struct AblationRow {
    AblationSpec spec;
    double test_accuracy = 0;
    double runtime_s = 0;
    std::uint64_t seed = 0;
    std::string error;  // non-empty when the row failed
};

std::vector<AblationRow> ablate(const std::vector<AblationSpec>& grid,
                                const model::ModelConfig& base_model,
                                const TrainConfig& base_train, const std::string& dataset_dir,
                                const data::Splits& splits, const std::string& out_dir);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace tact::train

#endif

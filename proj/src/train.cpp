#include "tact/train.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "tact/checkpoint.hpp"
#include "tact/errors.hpp"
#include "tact/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace tact::train {

void TrainConfig::validate() const {
    if (lr <= 0) throw format_error("train config: lr must be positive");
    if (max_epochs == 0) throw format_error("train config: max_epochs must be >= 1");
    if (batch_size == 0) throw format_error("train config: batch_size must be >= 1");
    if (reset_period_epochs == 0)
        throw format_error("train config: reset_period_epochs must be >= 1");
}

std::string TrainConfig::to_json() const {
    ordered_json j;
    j["lr"] = lr;
    j["max_epochs"] = max_epochs;
    j["batch_size"] = batch_size;
    j["reset_period_epochs"] = reset_period_epochs;
    j["early_stop_patience"] = early_stop_patience;
    j["stop_at_train_accuracy"] = stop_at_train_accuracy;
    j["seed"] = seed;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw format_error(std::string("train config: invalid JSON: ") + e.what());
    }
    TrainConfig c;
    try {
        if (j.contains("lr")) c.lr = j["lr"];
        if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"];
        if (j.contains("batch_size")) c.batch_size = j["batch_size"];
        if (j.contains("reset_period_epochs")) c.reset_period_epochs = j["reset_period_epochs"];
        if (j.contains("early_stop_patience")) c.early_stop_patience = j["early_stop_patience"];
        if (j.contains("stop_at_train_accuracy"))
            c.stop_at_train_accuracy = j["stop_at_train_accuracy"];
        if (j.contains("seed")) c.seed = j["seed"];
    } catch (const json::exception& e) {
        throw format_error(std::string("train config: bad field type: ") + e.what());
    }
    c.validate();
    return c;
}

std::string RunReport::to_json() const {
    ordered_json j;
    j["best_epoch"] = best_epoch;
    j["best_val_accuracy"] = best_val_accuracy;
    j["test_accuracy"] = test_accuracy;
    j["confusion"] = confusion;
    // file name only: reports stay byte-identical wherever the run lands
    j["checkpoint"] = fs::path(checkpoint_path).filename().string();
    j["epochs"] = ordered_json::array();
    for (const auto& e : epochs)
        j["epochs"].push_back({{"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"train_accuracy", e.train_accuracy},
                               {"val_loss", e.val_loss},
                               {"val_accuracy", e.val_accuracy}});
    return j.dump(2);
}

TrialSet load_split(const std::string& dataset_dir, const data::Manifest& manifest,
                    const std::vector<std::string>& ids, const data::InputMask& mask) {
    TrialSet set;
    set.ids = ids;
    set.items.reserve(ids.size());
    for (const auto& id : ids) {
        const data::PooledTrial pooled = data::ensure_pooled(dataset_dir, manifest.find(id));
        set.items.push_back(data::assemble_inputs(pooled, mask));
    }
    return set;
}

Confusion confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted) {
    if (truth.size() != predicted.size())
        throw format_error("confusion_matrix: label/prediction length mismatch");
    Confusion c{};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] > 3 || predicted[i] < 0 || predicted[i] > 3)
            throw format_error("confusion_matrix: class outside {0,1,2,3}");
        c[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])] += 1;
    }
    return c;
}

double accuracy_of(const Confusion& c) {
    std::size_t total = 0, diag = 0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            total += c[i][j];
            if (i == j) diag += c[i][j];
        }
    return total == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(total);
}

namespace {

int argmax4(const TensorF& probs) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.numel()); ++i)
        if (probs.data[static_cast<std::size_t>(i)] > probs.data[static_cast<std::size_t>(best)])
            best = i;
    return best;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot create " + path);
    out << text;
    if (!out) throw io_error("short write on " + path);
}

std::string confusion_csv(const Confusion& c) {
    std::ostringstream os;
    os << "true\\pred,0,1,2,3\n";
    for (std::size_t i = 0; i < 4; ++i) {
        os << i;
        for (std::size_t j = 0; j < 4; ++j) os << ',' << c[i][j];
        os << '\n';
    }
    return os.str();
}

std::string latents_csv(const std::vector<std::string>& ids,
                        const std::vector<int>& labels,
                        const std::vector<std::vector<float>>& latents) {
    std::ostringstream os;
    os << "id,label";
    const std::size_t d = latents.empty() ? 0 : latents[0].size();
    for (std::size_t i = 0; i < d; ++i) os << ",z" << i;
    os << '\n';
    for (std::size_t r = 0; r < ids.size(); ++r) {
        os << ids[r] << ',' << labels[r];
        char buf[32];
        for (float v : latents[r]) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
            os << ',' << buf;
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace

EvalResult evaluate(model::Model<float>& m, const TrialSet& set) {
    EvalResult res;
    std::vector<int> truth;
    nn::StepContext ctx;  // eval mode
    for (const auto& seq : set.items) {
        const auto in = model::SeqInput<float>::from(seq);
        auto out = m.forward(in, ctx);
        res.predicted.push_back(argmax4(out.probs));
        truth.push_back(seq.label);
        res.latents.emplace_back(out.latent.data.begin(), out.latent.data.end());
    }
    res.confusion = confusion_matrix(truth, res.predicted);
    res.accuracy = accuracy_of(res.confusion);
    return res;
}

RunReport train(const model::ModelConfig& model_config, const TrainConfig& train_config,
                const std::string& dataset_dir, const data::Splits& splits,
                const std::string& out_dir, const EpochObserver& observer) {
    train_config.validate();
    model_config.validate();
    if (splits.train.empty()) throw format_error("train: empty training split");
    if (splits.val.empty()) throw format_error("train: empty validation split");

    const data::Manifest manifest = data::Manifest::load(dataset_dir);
    const TrialSet train_set =
        load_split(dataset_dir, manifest, splits.train, model_config.input_mask);
    const TrialSet val_set = load_split(dataset_dir, manifest, splits.val, model_config.input_mask);

    model::ModelConfig cfg = model_config;
    cfg.init_seed = train_config.seed;
    model::Model<float> m(cfg);

    nn::AdamState<float> adam;
    adam.lr = train_config.lr;
    adam.init(m.registry);

    fs::create_directories(out_dir);
    const std::string ckpt_path = out_dir + "/model.ckpt";

    RunReport report;
    report.checkpoint_path = ckpt_path;
    double best_val = -1.0;
    std::size_t best_epoch = 0, since_best = 0;

    std::vector<std::size_t> order(train_set.items.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        if (epoch > 1 && epoch % train_config.reset_period_epochs == 0) nn::adam_reset(adam);
        if (observer) observer(epoch, adam);

        auto shuffle_rng = make_rng(derive_seed(train_config.seed, 0xe90cULL, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0;
        std::size_t correct = 0;
        std::size_t done = 0;
        while (done < order.size()) {
            const std::size_t batch_end = std::min(done + train_config.batch_size, order.size());
            const std::size_t batch_n = batch_end - done;
            m.registry.zero_grads();
            for (std::size_t i = done; i < batch_end; ++i) {
                const auto& seq = train_set.items[order[i]];
                nn::StepContext ctx;
                ctx.training = true;
                ctx.dropout_seed = derive_seed(train_config.seed, epoch, i);
                try {
                    const auto in = model::SeqInput<float>::from(seq);
                    auto out = m.forward(in, ctx);
                    const float loss = nn::cross_entropy(out.logits, seq.label);
                    if (!std::isfinite(loss))
                        throw numeric_error("loss is not finite");
                    loss_sum += loss;
                    if (argmax4(out.probs) == seq.label) ++correct;
                    m.backward(nn::cross_entropy_backward(out.logits, seq.label));
                } catch (const numeric_error& e) {
                    throw numeric_error("training diverged at epoch " + std::to_string(epoch) +
                                        ", batch item " + std::to_string(i) + ": " + e.what());
                }
            }
            if (batch_n > 1) {
                const float inv = 1.f / static_cast<float>(batch_n);
                for (auto& e : m.registry.entries)
                    if (e.grad)
                        for (auto& g : e.grad->data) g *= inv;
            }
            try {
                nn::adam_step(m.registry, adam);
            } catch (const numeric_error& e) {
                throw numeric_error("training diverged at epoch " + std::to_string(epoch) + ": " +
                                    e.what());
            }
            done = batch_end;
        }

        // validation in eval mode
        double val_loss = 0;
        std::size_t val_correct = 0;
        {
            nn::StepContext ctx;
            for (const auto& seq : val_set.items) {
                const auto in = model::SeqInput<float>::from(seq);
                auto out = m.forward(in, ctx);
                val_loss += nn::cross_entropy(out.logits, seq.label);
                if (argmax4(out.probs) == seq.label) ++val_correct;
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_set.items.size());
        stats.train_accuracy =
            static_cast<double>(correct) / static_cast<double>(train_set.items.size());
        stats.val_loss = val_loss / static_cast<double>(val_set.items.size());
        stats.val_accuracy =
            static_cast<double>(val_correct) / static_cast<double>(val_set.items.size());
        report.epochs.push_back(stats);

        if (stats.val_accuracy > best_val) {
            best_val = stats.val_accuracy;
            best_epoch = epoch;
            since_best = 0;
            model::save_checkpoint(m, ckpt_path);
        } else {
            ++since_best;
        }
        if (train_config.stop_at_train_accuracy > 0 &&
            stats.train_accuracy >= train_config.stop_at_train_accuracy)
            break;
        if (train_config.early_stop_patience > 0 && since_best >= train_config.early_stop_patience)
            break;
    }

    report.best_epoch = best_epoch;
    report.best_val_accuracy = best_val;

    // evaluate the best checkpoint on the test split
    model::Model<float> best = model::load_checkpoint(ckpt_path);
    if (!splits.test.empty()) {
        const TrialSet test_set =
            load_split(dataset_dir, manifest, splits.test, model_config.input_mask);
        const EvalResult res = evaluate(best, test_set);
        report.test_accuracy = res.accuracy;
        report.confusion = res.confusion;
        report.latent_ids = test_set.ids;
        report.latents = res.latents;

        std::vector<int> labels;
        for (const auto& seq : test_set.items) labels.push_back(seq.label);
        write_text(out_dir + "/confusion.csv", confusion_csv(res.confusion));
        write_text(out_dir + "/latents.csv", latents_csv(test_set.ids, labels, res.latents));
    }
    write_text(out_dir + "/report.json", report.to_json() + "\n");
    return report;
}

std::vector<AblationRow> ablate(const std::vector<AblationSpec>& grid,
                                const model::ModelConfig& base_model,
                                const TrainConfig& base_train, const std::string& dataset_dir,
                                const data::Splits& splits, const std::string& out_dir) {
    std::vector<AblationRow> rows;
    fs::create_directories(out_dir);
    for (const auto& spec : grid) {
        AblationRow row;
        row.spec = spec;
        row.seed = base_train.seed;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            model::ModelConfig mc = base_model;
            mc.flow_backbone = spec.backbone;
            mc.classifier = spec.classifier;
            mc.input_mask = spec.mask;
            const RunReport rep =
                train(mc, base_train, dataset_dir, splits, out_dir + "/" + spec.name);
            row.test_accuracy = rep.test_accuracy;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        row.runtime_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(std::move(row));
    }
    write_text(out_dir + "/ablation.csv", ablation_csv(rows));
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "name,backbone,classifier,s1_flow_mags,s2_flow_mags,s1_flow_angles,wrench,"
          "joint_states,test_accuracy_pct,seed,runtime_s,error\n";
    for (const auto& r : rows) {
        os << r.spec.name << ',' << model::to_string(r.spec.backbone) << ','
           << model::to_string(r.spec.classifier) << ',' << (r.spec.mask.s1_flow ? 1 : 0) << ','
           << (r.spec.mask.s2_flow ? 1 : 0) << ',' << (r.spec.mask.flow_angles ? 1 : 0) << ','
           << (r.spec.mask.wrench ? 1 : 0) << ',' << (r.spec.mask.joints ? 1 : 0) << ',';
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", r.test_accuracy * 100.0);
        os << buf << ',' << r.seed << ',';
        std::snprintf(buf, sizeof buf, "%.3f", r.runtime_s);
        os << buf << ',' << r.error << '\n';
    }
    return os.str();
}

}  // namespace tact::train

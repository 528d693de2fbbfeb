#include <doctest.h>

#include <filesystem>

#include "tact/checkpoint.hpp"
#include "tact/dataset.hpp"
#include "tact/sim.hpp"
#include "tact/stream.hpp"
#include "tact/train.hpp"

using namespace tact;
namespace fs = std::filesystem;

namespace {

sim::SimConfig micro_sim(bool zero_noise) {
    sim::SimConfig c = sim::SimConfig::cloth_profile();
    c.trial_duration_s = 1.0;
    c.sine_period_s = 1.0;
    c.sample_rate_hz = 6.0;
    c.raw_height = 96;
    c.raw_width = 128;
    c.motion_gain_px = 3.0;
    if (zero_noise) {
        c.noise.flow_jitter_px = 0;
        c.noise.wrench_n = 0;
        c.noise.joint_rad = 0;
        c.noise.slip_trial_sigma = 0;
    }
    return c;
}

model::ModelConfig micro_model() {
    model::ModelConfig c;
    c.flow_backbone = model::FlowBackbone::CNNStar;
    c.classifier = model::ClassifierKind::Transformer;
    c.d_model = 16;
    c.nhead = 2;
    c.num_layers = 1;
    c.d_ff = 32;
    c.flow_feature_dim = 6;
    c.wrench_feature_dim = 4;
    c.joint_feature_dim = 2;
    c.mlp_hidden = 8;
    c.head_hidden = 8;
    c.cnn_channels = {4, 6, 6, 8};
    c.sequence_length = 6;
    return c;
}

// builds (or reuses) a small zero-noise dataset and returns its directory
std::string micro_dataset(const std::string& tag, std::size_t per_class, std::uint64_t seed,
                          bool zero_noise = true) {
    const std::string dir = "/tmp/tact_train_" + tag;
    if (fs::exists(dir + "/manifest.json")) return dir;
    fs::remove_all(dir);
    const sim::SimConfig c = micro_sim(zero_noise);
    const auto trials = sim::synth_dataset({per_class, per_class, per_class, per_class}, "cloth",
                                           c, seed);
    data::save_dataset(trials, dir, "cloth", c.to_json());
    return dir;
}

train::TrainConfig micro_train(std::size_t epochs, std::uint64_t seed) {
    train::TrainConfig t;
    t.lr = 1e-3f;  // small model; the production default 5e-5 is far too slow here
    t.max_epochs = epochs;
    t.batch_size = 2;
    t.early_stop_patience = epochs;  // disabled unless a test wants it
    t.seed = seed;
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("confusion matrix of a perfect predictor is diagonal") {
    std::vector<int> truth, pred;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 14; ++i) {
            truth.push_back(c);
            pred.push_back(c);
        }
    const train::Confusion m = train::confusion_matrix(truth, pred);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(m[i][j] == (i == j ? 14u : 0u));
    CHECK(train::accuracy_of(m) == 1.0);
}

TEST_CASE("uniform random predictions sit near chance level") {
    auto rng = make_rng(1234);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<int> truth, pred;
    for (int i = 0; i < 200; ++i) {
        truth.push_back(i % 4);
        pred.push_back(cls(rng));
    }
    const double acc = train::accuracy_of(train::confusion_matrix(truth, pred));
    CHECK(acc > 0.15);
    CHECK(acc < 0.35);
}

TEST_CASE("accuracy always equals trace over sum") {
    auto rng = make_rng(77);
    std::uniform_int_distribution<int> cls(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> truth, pred;
        for (int i = 0; i < 37; ++i) {
            truth.push_back(cls(rng));
            pred.push_back(cls(rng));
        }
        const train::Confusion m = train::confusion_matrix(truth, pred);
        std::size_t total = 0, diag = 0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                total += m[i][j];
                if (i == j) diag += m[i][j];
            }
        CHECK(total == 37);
        CHECK(train::accuracy_of(m) ==
              doctest::Approx(static_cast<double>(diag) / 37.0).epsilon(1e-12));
    }
}

TEST_CASE("training runs, early-stops on val accuracy, and learns above chance") {
    const std::string dir = micro_dataset("ds6", 6, 11);
    const data::Manifest m = data::Manifest::load(dir);
    data::SplitSpec spec;
    spec.rng_seed = 3;
    const data::Splits splits = data::make_splits(m, spec);
    REQUIRE(splits.train.size() == 16);
    REQUIRE(splits.val.size() == 4);
    REQUIRE(splits.test.size() == 4);

    const std::string out = "/tmp/tact_train_out_a";
    fs::remove_all(out);
    const train::RunReport rep =
        train::train(micro_model(), micro_train(60, 5), dir, splits, out);

    REQUIRE(!rep.epochs.empty());
    // best val accuracy is the max the loop observed
    double best = 0;
    for (const auto& e : rep.epochs) best = std::max(best, e.val_accuracy);
    CHECK(rep.best_val_accuracy == doctest::Approx(best));
    // zero-noise classes should be learnable well above chance
    CHECK(rep.epochs.back().train_accuracy > 0.5);

    // confusion matrix row sums equal per-class test counts
    std::size_t total = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        std::size_t row = 0;
        for (std::size_t j = 0; j < 4; ++j) row += rep.confusion[i][j];
        CHECK(row == 1);  // 4 test trials, one per class
        total += row;
    }
    CHECK(total == splits.test.size());
    CHECK(rep.test_accuracy == doctest::Approx(train::accuracy_of(rep.confusion)));

    // outputs exist
    CHECK(fs::exists(out + "/model.ckpt"));
    CHECK(fs::exists(out + "/report.json"));
    CHECK(fs::exists(out + "/confusion.csv"));
    CHECK(fs::exists(out + "/latents.csv"));
    CHECK(rep.latents.size() == splits.test.size());
    CHECK(rep.latents[0].size() == micro_model().d_model);

    // the saved checkpoint reproduces the best validation accuracy
    model::Model<float> best_model = model::load_checkpoint(rep.checkpoint_path);
    const train::TrialSet val_set =
        train::load_split(dir, m, splits.val, micro_model().input_mask);
    const train::EvalResult ev = train::evaluate(best_model, val_set);
    CHECK(ev.accuracy == doctest::Approx(rep.best_val_accuracy));
}

TEST_CASE("training is deterministic under a fixed seed") {
    const std::string dir = micro_dataset("ds6", 6, 11);
    const data::Manifest m = data::Manifest::load(dir);
    const data::Splits splits = data::make_splits(m, data::SplitSpec{});
    const auto cfg = micro_train(6, 9);
    const train::RunReport a = train::train(micro_model(), cfg, dir, splits, "/tmp/tact_det_a");
    const train::RunReport b = train::train(micro_model(), cfg, dir, splits, "/tmp/tact_det_b");
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
        CHECK(a.epochs[i].val_accuracy == b.epochs[i].val_accuracy);
    }
    CHECK(a.test_accuracy == b.test_accuracy);
}

TEST_CASE("optimizer resets land exactly on the scheduled epochs") {
    const std::string dir = micro_dataset("ds6", 6, 11);
    const data::Manifest m = data::Manifest::load(dir);
    const data::Splits splits = data::make_splits(m, data::SplitSpec{});

    std::vector<std::pair<std::size_t, bool>> observed;  // epoch -> moments all zero?
    auto observer = [&](std::size_t epoch, const nn::AdamState<float>& st) {
        bool all_zero = st.step_count == 0;
        for (const auto& t : st.first_moment)
            for (float v : t.data) all_zero = all_zero && v == 0.f;
        for (const auto& t : st.second_moment)
            for (float v : t.data) all_zero = all_zero && v == 0.f;
        observed.emplace_back(epoch, all_zero);
    };
    auto cfg = micro_train(12, 2);
    cfg.reset_period_epochs = 10;
    train::train(micro_model(), cfg, dir, splits, "/tmp/tact_reset_out", observer);
    REQUIRE(observed.size() == 12);
    for (const auto& [epoch, zero] : observed) {
        if (epoch == 1 || epoch == 10)
            CHECK(zero);  // fresh state and the scheduled reset
        else
            CHECK(!zero);
    }
}

TEST_CASE("reset period changes the parameter trajectory") {
    const std::string dir = micro_dataset("ds6", 6, 11);
    const data::Manifest m = data::Manifest::load(dir);
    const data::Splits splits = data::make_splits(m, data::SplitSpec{});
    auto cfg1 = micro_train(4, 4);
    cfg1.reset_period_epochs = 1;  // resets at the start of epochs 2, 3, 4
    cfg1.early_stop_patience = 0;
    auto cfg10 = cfg1;
    cfg10.reset_period_epochs = 10;  // never fires in 4 epochs
    const train::RunReport r1 = train::train(micro_model(), cfg1, dir, splits, "/tmp/tact_rp1");
    const train::RunReport r10 = train::train(micro_model(), cfg10, dir, splits, "/tmp/tact_rp10");
    bool differs = false;
    for (std::size_t i = 1; i < r1.epochs.size(); ++i)
        differs = differs || r1.epochs[i].train_loss != r10.epochs[i].train_loss;
    CHECK(differs);
}

TEST_CASE("training can stop once train accuracy reaches a target") {
    const std::string dir = micro_dataset("ds6", 6, 11);
    const data::Manifest m = data::Manifest::load(dir);
    const data::Splits splits = data::make_splits(m, data::SplitSpec{});
    auto cfg = micro_train(30, 3);
    cfg.stop_at_train_accuracy = 0.01;  // any epoch satisfies this
    const train::RunReport rep =
        train::train(micro_model(), cfg, dir, splits, "/tmp/tact_stopacc");
    CHECK(rep.epochs.size() == 1);
    CHECK(rep.epochs[0].train_accuracy >= 0.01);
}

TEST_CASE("empty validation split is rejected") {
    const std::string dir = micro_dataset("ds6", 6, 11);
    const data::Manifest m = data::Manifest::load(dir);
    data::SplitSpec spec;
    spec.train = 1.0;
    spec.val = 0.0;
    spec.test = 0.0;
    const data::Splits splits = data::make_splits(m, spec);
    CHECK_THROWS_AS(train::train(micro_model(), micro_train(3, 1), dir, splits, "/tmp/tact_noval"),
                    format_error);
}

TEST_CASE("ablation grid trains every row and records failures without stopping") {
    const std::string dir = micro_dataset("ds6", 6, 11);
    const data::Manifest m = data::Manifest::load(dir);
    const data::Splits splits = data::make_splits(m, data::SplitSpec{});

    std::vector<train::AblationSpec> grid;
    train::AblationSpec full;
    full.name = "full_cnnstar_transformer";
    grid.push_back(full);
    train::AblationSpec naive;
    naive.name = "s1_naive_direct";
    naive.backbone = model::FlowBackbone::NaiveCNN;
    naive.classifier = model::ClassifierKind::DirectHead;
    naive.mask.s2_flow = false;
    naive.mask.wrench = false;
    naive.mask.joints = false;
    naive.mask.flow_angles = false;
    grid.push_back(naive);
    train::AblationSpec broken;
    broken.name = "broken_mask";
    broken.mask.s1_flow = false;
    broken.mask.s2_flow = false;
    broken.mask.wrench = false;
    broken.mask.joints = false;
    grid.push_back(broken);

    const std::string out = "/tmp/tact_ablate_out";
    fs::remove_all(out);
    const auto rows =
        train::ablate(grid, micro_model(), micro_train(3, 8), dir, splits, out);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].error.empty());
    CHECK(rows[1].error.empty());
    CHECK(!rows[2].error.empty());
    CHECK(fs::exists(out + "/ablation.csv"));

    // identical spec and seed reproduce the same accuracy
    const auto rows2 =
        train::ablate({grid[0]}, micro_model(), micro_train(3, 8), dir, splits, out + "_b");
    CHECK(rows2[0].test_accuracy == rows[0].test_accuracy);
}

TEST_CASE("stream classifier warms up, then emits every emit_every ticks") {
    model::ModelConfig mc = micro_model();
    model::Model<float> m(mc);
    const std::size_t window = 4;
    stream::StreamClassifier sc(m, window, 3);

    const sim::SimConfig c = micro_sim(true);
    const sim::TrialRecord rec = sim::synth_trial(2, "cloth", c, 50);

    std::size_t emissions = 0, warming = 0, classified = 0;
    for (std::size_t k = 0; k < rec.frames_s1.size(); ++k) {
        stream::StreamTick tick;
        tick.t = static_cast<double>(k) / c.sample_rate_hz;
        tick.s1 = rec.frames_s1[k];
        tick.s2 = rec.frames_s2[k];
        tick.wrench = rec.wrench[k];
        tick.joints = rec.joints[k];
        auto e = sc.push(tick);
        if (e) {
            ++emissions;
            if (e->warming_up)
                ++warming;
            else {
                ++classified;
                CHECK(e->latency_ms >= 0.0);
                float s = 0;
                for (float p : e->probs) s += p;
                CHECK(s == doctest::Approx(1.f).epsilon(1e-5));
            }
        }
    }
    // 7 ticks -> emissions at ticks 3 and 6; window 4 needs 5 ticks, so the
    // first emission is still warming up and the second classifies
    CHECK(emissions == 2);
    CHECK(warming == 1);
    CHECK(classified == 1);
}

TEST_CASE("a feed shorter than the window only reports warming up") {
    model::Model<float> m(micro_model());
    stream::StreamClassifier sc(m, 10, 3);
    const sim::SimConfig c = micro_sim(true);
    const sim::TrialRecord rec = sim::synth_trial(1, "cloth", c, 51);
    std::size_t classified = 0;
    for (std::size_t k = 0; k < rec.frames_s1.size(); ++k) {
        stream::StreamTick tick;
        tick.t = static_cast<double>(k) / c.sample_rate_hz;
        tick.s1 = rec.frames_s1[k];
        tick.s2 = rec.frames_s2[k];
        tick.wrench = rec.wrench[k];
        tick.joints = rec.joints[k];
        auto e = sc.push(tick);
        if (e && !e->warming_up) ++classified;
    }
    CHECK(classified == 0);
    CHECK(!sc.warmed_up());
}

TEST_CASE("async stream matches the sync emission count and never misorders") {
    model::ModelConfig mc = micro_model();
    model::Model<float> m(mc);
    stream::AsyncStreamClassifier async(m, 3, 2);
    const sim::SimConfig c = micro_sim(true);
    const sim::TrialRecord rec = sim::synth_trial(0, "cloth", c, 52);
    std::size_t due = 0;
    for (std::size_t k = 0; k < rec.frames_s1.size(); ++k) {
        stream::StreamTick tick;
        tick.t = static_cast<double>(k) / c.sample_rate_hz;
        tick.s1 = rec.frames_s1[k];
        tick.s2 = rec.frames_s2[k];
        tick.wrench = rec.wrench[k];
        tick.joints = rec.joints[k];
        async.push(tick);
        if ((k + 1) % 2 == 0) ++due;
    }
    async.finish();
    const auto emissions = async.take_emissions();
    CHECK(emissions.size() + async.dropped_emissions() == due);
    for (std::size_t i = 1; i < emissions.size(); ++i)
        CHECK(emissions[i].tick_index > emissions[i - 1].tick_index);
}

TEST_SUITE_END();

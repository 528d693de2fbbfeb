#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "tact/dataset.hpp"
#include "tact/sim.hpp"

using namespace tact;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
    const std::string dir = std::string("/tmp/tact_test_") + tag;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

sim::SimConfig tiny_config() {
    sim::SimConfig c = sim::SimConfig::cloth_profile();
    c.trial_duration_s = 2.0;
    c.sine_period_s = 1.0;
    c.motion_gain_px = 6.25;
    c.sample_rate_hz = 10.0;
    c.raw_height = 96;
    c.raw_width = 128;
    return c;
}

data::Manifest synthetic_manifest(std::size_t per_class) {
    data::Manifest m;
    for (int label = 0; label < 4; ++label)
        for (std::size_t i = 0; i < per_class; ++i) {
            data::ManifestEntry e;
            e.id = "t" + std::to_string(label) + "_" + std::to_string(i);
            e.label = label;
            e.path = "trials/" + e.id + ".json";
            e.frame_count = 161;
            m.entries.push_back(e);
        }
    return m;
}

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("trial save and load round trips bit-exactly") {
    const std::string dir = fresh_dir("roundtrip");
    sim::SimConfig c = tiny_config();
    const sim::TrialRecord rec = sim::synth_trial(2, "cloth", c, 31);
    const data::ManifestEntry entry = data::save_trial(rec, dir, "trial_a");
    CHECK(entry.label == 2);
    CHECK(entry.frame_count == rec.frames_s1.size());
    const sim::TrialRecord back = data::load_trial(dir, entry);
    CHECK(back == rec);
}

TEST_CASE("corrupting a byte is caught by the checksum") {
    const std::string dir = fresh_dir("corrupt");
    const sim::TrialRecord rec = sim::synth_trial(1, "cloth", tiny_config(), 32);
    const data::ManifestEntry entry = data::save_trial(rec, dir, "trial_b");
    const std::string bin = dir + "/trials/trial_b.bin";
    {
        std::fstream f(bin, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(1000);
        char byte;
        f.seekg(1000);
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0x40);
        f.seekp(1000);
        f.write(&byte, 1);
    }
    CHECK_THROWS_WITH_AS(data::load_trial(dir, entry), doctest::Contains("checksum"),
                         format_error);
}

TEST_CASE("truncated payload is rejected with a diagnostic") {
    const std::string dir = fresh_dir("truncate");
    const sim::TrialRecord rec = sim::synth_trial(0, "cloth", tiny_config(), 33);
    const data::ManifestEntry entry = data::save_trial(rec, dir, "trial_c");
    const std::string bin = dir + "/trials/trial_c.bin";
    const auto size = fs::file_size(bin);
    fs::resize_file(bin, size - 16);
    CHECK_THROWS_WITH_AS(data::load_trial(dir, entry), doctest::Contains("truncated"),
                         format_error);
}

TEST_CASE("manifest load is lazy: trial files are only touched on demand") {
    const std::string dir = fresh_dir("lazy");
    data::Manifest m = synthetic_manifest(142);  // 568 entries, no trial files on disk
    m.save(dir);
    const data::Manifest loaded = data::Manifest::load(dir);
    CHECK(loaded.entries.size() == 568);
    CHECK_THROWS_AS(data::load_trial(dir, loaded.entries[0]), io_error);
}

TEST_CASE("manifest rejects duplicate ids and bad labels") {
    data::Manifest m = synthetic_manifest(2);
    m.entries[1].id = m.entries[0].id;
    CHECK_THROWS_AS(m.validate(), format_error);
    data::Manifest bad = synthetic_manifest(2);
    bad.entries[0].label = 7;
    CHECK_THROWS_AS(bad.validate(), format_error);
}

TEST_CASE("cloth-sized manifest splits into the documented test set") {
    const data::Manifest m = synthetic_manifest(92);  // 368 trials
    data::SplitSpec spec;
    spec.rng_seed = 0;
    const data::Splits s = data::make_splits(m, spec);
    CHECK(s.train.size() == 256);
    CHECK(s.val.size() == 56);
    CHECK(s.test.size() == 56);
    // 14 per class in test
    std::array<int, 4> per_class{};
    for (const auto& id : s.test) per_class[static_cast<std::size_t>(id[1] - '0')] += 1;
    for (int c = 0; c < 4; ++c) CHECK(per_class[static_cast<std::size_t>(c)] == 14);
}

TEST_CASE("paper-sized manifest splits to a 32-trial test set, 8 per class") {
    const data::Manifest m = synthetic_manifest(50);  // 200 trials
    const data::Splits s = data::make_splits(m, data::SplitSpec{});
    CHECK(s.test.size() == 32);
    std::array<int, 4> per_class{};
    for (const auto& id : s.test) per_class[static_cast<std::size_t>(id[1] - '0')] += 1;
    for (int c = 0; c < 4; ++c) CHECK(per_class[static_cast<std::size_t>(c)] == 8);
    // stratification: per-class counts within 1 of the exact fraction
    CHECK(std::abs(static_cast<double>(per_class[0]) - 0.15 * 50) < 1.0);
    std::array<int, 4> train_per_class{};
    for (const auto& id : s.train) train_per_class[static_cast<std::size_t>(id[1] - '0')] += 1;
    for (int c = 0; c < 4; ++c)
        CHECK(std::abs(static_cast<double>(train_per_class[static_cast<std::size_t>(c)]) -
                       0.70 * 50) < 1.0);
}

TEST_CASE("degenerate fractions put everything in train") {
    const data::Manifest m = synthetic_manifest(5);
    data::SplitSpec spec;
    spec.train = 1.0;
    spec.val = 0.0;
    spec.test = 0.0;
    const data::Splits s = data::make_splits(m, spec);
    CHECK(s.train.size() == 20);
    CHECK(s.val.empty());
    CHECK(s.test.empty());
}

TEST_CASE("splits are deterministic, disjoint, and exhaustive") {
    const data::Manifest m = synthetic_manifest(9);
    data::SplitSpec spec;
    spec.rng_seed = 123;
    const data::Splits a = data::make_splits(m, spec);
    const data::Splits b = data::make_splits(m, spec);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);

    spec.rng_seed = 124;
    const data::Splits c = data::make_splits(m, spec);
    CHECK(a.train != c.train);

    std::set<std::string> all;
    for (const auto& id : a.train) all.insert(id);
    for (const auto& id : a.val) all.insert(id);
    for (const auto& id : a.test) all.insert(id);
    CHECK(all.size() == m.entries.size());
}

TEST_CASE("splits reject bad fractions and empty classes") {
    const data::Manifest m = synthetic_manifest(3);
    data::SplitSpec bad;
    bad.train = 0.8;
    bad.val = 0.3;
    bad.test = 0.15;
    CHECK_THROWS_AS(data::make_splits(m, bad), format_error);

    data::Manifest missing;
    for (const auto& e : m.entries)
        if (e.label != 2) missing.entries.push_back(e);
    CHECK_THROWS_AS(data::make_splits(missing, data::SplitSpec{}), format_error);
}

TEST_CASE("a 161-frame trial builds a 160-step model input sequence") {
    sim::SimConfig c = tiny_config();
    c.trial_duration_s = 16.0;
    c.sine_period_s = 4.0;
    c.motion_gain_px = 25.0;
    const sim::TrialRecord rec = sim::synth_trial(1, "cloth", c, 34);
    REQUIRE(rec.frames_s1.size() == 161);
    const data::ModelInputSequence seq = data::build_model_inputs(rec, data::InputMask{});
    CHECK(seq.length == 160);
    CHECK(seq.s1_flow.size() == 160);
    CHECK(seq.s2_flow.size() == 160);
    CHECK(seq.wrench.size() == 160);
    CHECK(seq.joints.size() == 160);
    CHECK(seq.s1_flow[0].shape == std::vector<std::size_t>{2, 96, 128});
}

TEST_CASE("masking keeps only the enabled modalities and channels") {
    const sim::TrialRecord rec = sim::synth_trial(0, "cloth", tiny_config(), 35);
    data::InputMask mask;
    mask.s2_flow = false;
    mask.wrench = false;
    mask.joints = false;
    mask.flow_angles = false;
    const data::ModelInputSequence seq = data::build_model_inputs(rec, mask);
    CHECK(!seq.s1_flow.empty());
    CHECK(seq.s1_flow[0].shape == std::vector<std::size_t>{1, 96, 128});
    CHECK(seq.s2_flow.empty());
    CHECK(seq.wrench.empty());
    CHECK(seq.joints.empty());

    data::InputMask none;
    none.s1_flow = none.s2_flow = none.wrench = none.joints = false;
    CHECK_THROWS_AS(data::build_model_inputs(rec, none), format_error);
}

TEST_CASE("higher-rate recordings are sub-sampled to 10 Hz first") {
    sim::SimConfig c = tiny_config();
    c.sample_rate_hz = 20.0;
    c.trial_duration_s = 2.0;  // 41 frames at 20 Hz
    const sim::TrialRecord rec = sim::synth_trial(0, "cloth", c, 39);
    REQUIRE(rec.frames_s1.size() == 41);
    const data::PooledTrial p = data::preprocess_trial(rec);
    CHECK(p.steps == 20);  // 21 frames after sub-sampling
    // kept samples are the even-index originals
    CHECK(p.wrench[1] == rec.wrench[2]);
    CHECK(p.joints[3] == rec.joints[6]);

    sim::TrialRecord odd = rec;
    odd.sample_rate_hz = 15.0;  // not an integer multiple of 10
    CHECK_THROWS_AS(data::preprocess_trial(odd), format_error);
}

TEST_CASE("zero-motion trial stays below the flow noise floor") {
    sim::SimConfig c = tiny_config();
    c.motion_gain_px = 0.0;
    c.noise.flow_jitter_px = 0.0;
    c.noise.slip_trial_sigma = 0.0;
    const sim::TrialRecord rec = sim::synth_trial(0, "cloth", c, 36);
    const data::ModelInputSequence seq = data::build_model_inputs(rec, data::InputMask{});
    for (const auto& t : seq.s1_flow) {
        const std::size_t plane = t.shape[1] * t.shape[2];
        for (std::size_t i = 0; i < plane; ++i) CHECK(t.data[i] < 0.3f);
    }
}

TEST_CASE("pooled cache equals a fresh preprocessing bit-exactly") {
    const std::string dir = fresh_dir("cache");
    const sim::TrialRecord rec = sim::synth_trial(3, "cloth", tiny_config(), 37);
    const data::ManifestEntry entry = data::save_trial(rec, dir, "trial_d");

    const data::PooledTrial first = data::ensure_pooled(dir, entry);  // computes + stores
    CHECK(data::has_pooled(dir, "trial_d"));
    const data::PooledTrial cached = data::ensure_pooled(dir, entry);  // loads
    const data::PooledTrial fresh = data::preprocess_trial(rec);
    CHECK(cached == first);
    CHECK(cached == fresh);
}

TEST_CASE("import stub reports unmet expectations") {
    const std::string missing = fresh_dir("import_missing");
    fs::remove_all(missing);
    data::ImportReport rep = data::validate_import(missing);
    CHECK(!rep.ok);
    REQUIRE(!rep.problems.empty());

    const std::string empty = fresh_dir("import_empty");
    rep = data::validate_import(empty);
    CHECK(!rep.ok);
    CHECK(rep.problems[0] == "manifest.json not found");

    const std::string good = fresh_dir("import_good");
    const sim::TrialRecord rec = sim::synth_trial(0, "cloth", tiny_config(), 38);
    data::Manifest m;
    m.entries.push_back(data::save_trial(rec, good, "trial_e"));
    m.save(good);
    rep = data::validate_import(good);
    CHECK(rep.ok);
    CHECK(rep.trials_checked == 1);

    // break a checksum: the report should name the trial instead of throwing
    const std::string broken = fresh_dir("import_broken");
    data::Manifest m2;
    m2.entries.push_back(data::save_trial(rec, broken, "trial_f"));
    m2.save(broken);
    {
        std::fstream f(broken + "/trials/trial_f.bin",
                       std::ios::in | std::ios::out | std::ios::binary);
        char byte = 0x7f;
        f.seekp(10);
        f.write(&byte, 1);
    }
    rep = data::validate_import(broken);
    CHECK(!rep.ok);
    REQUIRE(rep.problems.size() == 1);
    CHECK(rep.problems[0].find("trial_f") != std::string::npos);
}

TEST_SUITE_END();

#ifndef TACT_DATASET_HPP
#define TACT_DATASET_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tact/flow.hpp"
#include "tact/sim.hpp"
#include "tact/tensor.hpp"

// Canonical on-disk trial format, preprocessing cache, stratified splits,
// and model-input assembly.
//
// Directory layout:
//   <dir>/manifest.json
//   <dir>/trials/<id>.json   sidecar (metadata + array table + checksum)
//   <dir>/trials/<id>.bin    frames as 8-bit grayscale, wrench/joints as
//                            little-endian 32-bit floats
//   <dir>/cache/<id>.pooled.json / .pooled.bin   pooled flow sequences

namespace tact::data {

inline constexpr int kFormatVersion = 1;

std::uint64_t fnv1a64(const std::uint8_t* bytes, std::size_t n);

struct ManifestEntry {
    std::string id;
    int label = 0;
    std::string path;  // sidecar path relative to the dataset dir
    std::size_t frame_count = 0;
    std::uint64_t checksum = 0;
};

struct Manifest {
    int version = kFormatVersion;
    std::string material = "cloth";
    std::vector<ManifestEntry> entries;

    const ManifestEntry& find(const std::string& id) const;
    void validate() const;  // unique ids, labels in {0..3}

    static Manifest load(const std::string& dataset_dir);
    void save(const std::string& dataset_dir) const;
};

// trial I/O; round trips are bit-exact (frames live on the 8-bit grid)
ManifestEntry save_trial(const sim::TrialRecord& record, const std::string& dataset_dir,
                         const std::string& id);
sim::TrialRecord load_trial(const std::string& dataset_dir, const ManifestEntry& entry);

// write a whole synthetic dataset: trials plus manifest plus config snapshot
Manifest save_dataset(const std::vector<sim::TrialRecord>& trials,
                      const std::string& dataset_dir, const std::string& material,
                      const std::string& config_json);

// ------------------------------------------------------------------ splits

struct SplitSpec {
    double train = 0.70, val = 0.15, test = 0.15;
    std::uint64_t rng_seed = 0;
    bool stratified = true;  // always true; field kept for the record
};

struct Splits {
    std::vector<std::string> train, val, test;
};

// Stratified per class: largest-remainder allocation (ties favor test, then
// val), deterministic shuffle per class under the seed.
Splits make_splits(const Manifest& manifest, const SplitSpec& spec);

// ------------------------------------------------------ preprocessing cache

// One preprocessed trial: both sensors pooled to [2,96,128] per step with
// wrench/joints aligned to the earlier frame of each flow step.
struct PooledTrial {
    int label = 0;
    std::size_t steps = 0;
    std::size_t grid_h = flow::kPooledRows, grid_w = flow::kPooledCols;
    std::vector<TensorF> s1, s2;  // [2, grid_h, grid_w] each step
    std::vector<std::array<float, 6>> wrench;
    std::vector<std::array<float, 4>> joints;

    bool operator==(const PooledTrial&) const = default;
};

PooledTrial preprocess_trial(const sim::TrialRecord& record);

void save_pooled(const std::string& dataset_dir, const std::string& id, const PooledTrial& p);
PooledTrial load_pooled(const std::string& dataset_dir, const std::string& id);
bool has_pooled(const std::string& dataset_dir, const std::string& id);

// load from cache, or preprocess and store first
PooledTrial ensure_pooled(const std::string& dataset_dir, const ManifestEntry& entry);

// ------------------------------------------------------------ model inputs

struct InputMask {
    bool s1_flow = true;
    bool s2_flow = true;
    bool flow_angles = true;  // adds the direction channel to enabled flows
    bool wrench = true;
    bool joints = true;

    bool any() const { return s1_flow || s2_flow || wrench || joints; }
    bool operator==(const InputMask&) const = default;
};

struct ModelInputSequence {
    int label = 0;
    std::size_t length = 0;
    std::vector<TensorF> s1_flow, s2_flow;  // [C,96,128], C = flow_angles ? 2 : 1
    std::vector<std::array<float, 6>> wrench;
    std::vector<std::array<float, 4>> joints;
};

ModelInputSequence assemble_inputs(const PooledTrial& pooled, const InputMask& mask);

// full path: preprocess + align + mask
ModelInputSequence build_model_inputs(const sim::TrialRecord& record, const InputMask& mask);

// -------------------------------------------------------------- import stub

// Validates an external directory against this format and reports unmet
// expectations instead of guessing at foreign layouts.
struct ImportReport {
    bool ok = false;
    std::size_t trials_checked = 0;
    std::vector<std::string> problems;
};

ImportReport validate_import(const std::string& dataset_dir);

}  // namespace tact::data

#endif

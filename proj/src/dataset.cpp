#include "tact/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "tact/errors.hpp"
#include "tact/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk format is little-endian; big-endian hosts unsupported");

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace tact::data {

std::uint64_t fnv1a64(const std::uint8_t* bytes, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff n = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(buf.data()), n);
    if (!in) throw io_error("short read on " + path);
    return buf;
}

void write_file(const std::string& path, const void* bytes, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot create " + path);
    out.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(n));
    if (!out) throw io_error("short write on " + path);
}

std::string read_text(const std::string& path) {
    const auto buf = read_file(path);
    return std::string(buf.begin(), buf.end());
}

json parse_json_file(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw format_error(path + ": invalid JSON: " + e.what());
    }
}

void append_bytes(std::vector<std::uint8_t>& blob, const void* p, std::size_t n) {
    const auto* b = reinterpret_cast<const std::uint8_t*>(p);
    blob.insert(blob.end(), b, b + n);
}

}  // namespace

// ---------------------------------------------------------------- manifest

const ManifestEntry& Manifest::find(const std::string& id) const {
    for (const auto& e : entries)
        if (e.id == id) return e;
    throw format_error("manifest: unknown trial id '" + id + "'");
}

void Manifest::validate() const {
    if (version != kFormatVersion)
        throw format_error("manifest: unsupported format version " + std::to_string(version));
    std::vector<std::string> ids;
    for (const auto& e : entries) {
        if (e.label < 0 || e.label > 3)
            throw format_error("manifest: trial '" + e.id + "' has label " +
                               std::to_string(e.label) + " outside {0,1,2,3}");
        ids.push_back(e.id);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw format_error("manifest: duplicate trial ids");
}

Manifest Manifest::load(const std::string& dataset_dir) {
    const json j = parse_json_file(dataset_dir + "/manifest.json");
    Manifest m;
    try {
        m.version = j.at("version");
        m.material = j.at("material");
        for (const auto& e : j.at("trials")) {
            ManifestEntry me;
            me.id = e.at("id");
            me.label = e.at("label");
            me.path = e.at("path");
            me.frame_count = e.at("frame_count");
            me.checksum = std::stoull(e.at("checksum").get<std::string>(), nullptr, 16);
            m.entries.push_back(std::move(me));
        }
    } catch (const json::exception& e) {
        throw format_error(dataset_dir + "/manifest.json: " + e.what());
    }
    m.validate();
    return m;
}

void Manifest::save(const std::string& dataset_dir) const {
    ordered_json j;
    j["version"] = version;
    j["material"] = material;
    j["trials"] = ordered_json::array();
    for (const auto& e : entries) {
        char cs[17];
        std::snprintf(cs, sizeof cs, "%016llx", static_cast<unsigned long long>(e.checksum));
        j["trials"].push_back({{"id", e.id},
                               {"label", e.label},
                               {"path", e.path},
                               {"frame_count", e.frame_count},
                               {"checksum", std::string(cs)}});
    }
    fs::create_directories(dataset_dir);
    const std::string text = j.dump(2) + "\n";
    write_file(dataset_dir + "/manifest.json", text.data(), text.size());
}

// ------------------------------------------------------------------ trials

namespace {

void frames_to_bytes(const std::vector<flow::Frame>& frames, std::vector<std::uint8_t>& blob) {
    for (const auto& f : frames)
        for (float v : f.intensity) {
            const float c = std::min(1.f, std::max(0.f, v));
            blob.push_back(static_cast<std::uint8_t>(std::lround(c * 255.f)));
        }
}

}  // namespace

ManifestEntry save_trial(const sim::TrialRecord& record, const std::string& dataset_dir,
                         const std::string& id) {
    if (record.frames_s1.empty() || record.frames_s1.size() != record.frames_s2.size() ||
        record.wrench.size() != record.frames_s1.size() ||
        record.joints.size() != record.frames_s1.size())
        throw format_error("save_trial: inconsistent sequence lengths");

    const std::size_t h = record.frames_s1[0].height, w = record.frames_s1[0].width;
    const std::size_t nframes = record.frames_s1.size();

    std::vector<std::uint8_t> blob;
    blob.reserve(2 * nframes * h * w + nframes * (6 + 4) * 4);
    const std::size_t off_s1 = blob.size();
    frames_to_bytes(record.frames_s1, blob);
    const std::size_t off_s2 = blob.size();
    frames_to_bytes(record.frames_s2, blob);
    const std::size_t off_wrench = blob.size();
    for (const auto& s : record.wrench) append_bytes(blob, s.data(), 6 * sizeof(float));
    const std::size_t off_joints = blob.size();
    for (const auto& s : record.joints) append_bytes(blob, s.data(), 4 * sizeof(float));

    const std::uint64_t checksum = fnv1a64(blob.data(), blob.size());

    ordered_json j;
    j["version"] = kFormatVersion;
    j["id"] = id;
    j["label"] = record.label;
    j["material"] = record.material;
    j["sample_rate_hz"] = record.sample_rate_hz;
    j["frame_count"] = nframes;
    j["height"] = h;
    j["width"] = w;
    char cs[17];
    std::snprintf(cs, sizeof cs, "%016llx", static_cast<unsigned long long>(checksum));
    j["checksum"] = std::string(cs);
    j["arrays"] = {
        {"frames_s1", {{"dtype", "u8"}, {"offset", off_s1}, {"bytes", off_s2 - off_s1}}},
        {"frames_s2", {{"dtype", "u8"}, {"offset", off_s2}, {"bytes", off_wrench - off_s2}}},
        {"wrench",
         {{"dtype", "f32le"}, {"offset", off_wrench}, {"bytes", off_joints - off_wrench}}},
        {"joints",
         {{"dtype", "f32le"}, {"offset", off_joints}, {"bytes", blob.size() - off_joints}}}};

    fs::create_directories(fs::path(dataset_dir) / "trials");
    const std::string rel_json = "trials/" + id + ".json";
    const std::string text = j.dump(2) + "\n";
    write_file(dataset_dir + "/" + rel_json, text.data(), text.size());
    write_file(dataset_dir + "/trials/" + id + ".bin", blob.data(), blob.size());

    return ManifestEntry{id, record.label, rel_json, nframes, checksum};
}

sim::TrialRecord load_trial(const std::string& dataset_dir, const ManifestEntry& entry) {
    const json j = parse_json_file(dataset_dir + "/" + entry.path);
    sim::TrialRecord rec;
    std::size_t nframes, h, w;
    std::uint64_t want_checksum;
    std::size_t off_s1, off_s2, off_wrench, off_joints, bytes_joints;
    try {
        if (j.at("version").get<int>() != kFormatVersion)
            throw format_error(entry.path + ": unsupported trial format version");
        rec.label = j.at("label");
        rec.material = j.at("material");
        rec.sample_rate_hz = j.at("sample_rate_hz");
        nframes = j.at("frame_count");
        h = j.at("height");
        w = j.at("width");
        want_checksum = std::stoull(j.at("checksum").get<std::string>(), nullptr, 16);
        off_s1 = j.at("arrays").at("frames_s1").at("offset");
        off_s2 = j.at("arrays").at("frames_s2").at("offset");
        off_wrench = j.at("arrays").at("wrench").at("offset");
        off_joints = j.at("arrays").at("joints").at("offset");
        bytes_joints = j.at("arrays").at("joints").at("bytes");
    } catch (const json::exception& e) {
        throw format_error(entry.path + ": " + e.what());
    }

    const std::string bin_path =
        dataset_dir + "/" + entry.path.substr(0, entry.path.size() - 5) + ".bin";
    const std::vector<std::uint8_t> blob = read_file(bin_path);
    if (off_joints + bytes_joints != blob.size())
        throw format_error(bin_path + ": truncated payload (expected " +
                           std::to_string(off_joints + bytes_joints) + " bytes, found " +
                           std::to_string(blob.size()) + ")");
    const std::uint64_t got_checksum = fnv1a64(blob.data(), blob.size());
    if (got_checksum != want_checksum)
        throw format_error(bin_path + ": checksum mismatch (payload corrupted)");
    if (entry.checksum != 0 && entry.checksum != want_checksum)
        throw format_error(entry.path + ": checksum disagrees with the manifest");

    auto bytes_to_frames = [&](std::size_t off, std::vector<flow::Frame>& out) {
        out.assign(nframes, flow::Frame(h, w));
        for (std::size_t f = 0; f < nframes; ++f)
            for (std::size_t i = 0; i < h * w; ++i)
                out[f].intensity[i] = static_cast<float>(blob[off + f * h * w + i]) / 255.f;
    };
    bytes_to_frames(off_s1, rec.frames_s1);
    bytes_to_frames(off_s2, rec.frames_s2);
    rec.wrench.assign(nframes, {});
    std::memcpy(rec.wrench.data(), blob.data() + off_wrench, nframes * 6 * sizeof(float));
    rec.joints.assign(nframes, {});
    std::memcpy(rec.joints.data(), blob.data() + off_joints, nframes * 4 * sizeof(float));
    return rec;
}

Manifest save_dataset(const std::vector<sim::TrialRecord>& trials, const std::string& dataset_dir,
                      const std::string& material, const std::string& config_json) {
    Manifest m;
    m.material = material;
    std::size_t index = 0;
    for (const auto& t : trials) {
        char id[32];
        std::snprintf(id, sizeof id, "%s_%05zu_l%d", material.c_str(), index, t.label);
        m.entries.push_back(save_trial(t, dataset_dir, id));
        ++index;
    }
    m.save(dataset_dir);
    if (!config_json.empty()) {
        const std::string path = dataset_dir + "/sim_config.json";
        write_file(path, config_json.data(), config_json.size());
    }
    return m;
}

// ------------------------------------------------------------------ splits

Splits make_splits(const Manifest& manifest, const SplitSpec& spec) {
    const double sum = spec.train + spec.val + spec.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw format_error("make_splits: fractions sum to " + std::to_string(sum) + ", not 1");
    if (spec.train < 0 || spec.val < 0 || spec.test < 0)
        throw format_error("make_splits: negative fraction");

    std::array<std::vector<std::string>, 4> by_class;
    for (const auto& e : manifest.entries) by_class[static_cast<std::size_t>(e.label)].push_back(e.id);
    for (std::size_t c = 0; c < 4; ++c)
        if (by_class[c].empty())
            throw format_error("make_splits: class " + std::to_string(c) + " has no trials");

    Splits out;
    for (std::size_t c = 0; c < 4; ++c) {
        auto ids = by_class[c];
        auto rng = make_rng(derive_seed(spec.rng_seed, 0x5eedULL, c));
        std::shuffle(ids.begin(), ids.end(), rng);

        const std::size_t n = ids.size();
        const double exact[3] = {spec.train * n, spec.val * n, spec.test * n};
        std::size_t counts[3] = {static_cast<std::size_t>(exact[0]),
                                 static_cast<std::size_t>(exact[1]),
                                 static_cast<std::size_t>(exact[2])};
        std::size_t assigned = counts[0] + counts[1] + counts[2];
        // largest remainder; ties favor test (2), then val (1), then train (0)
        while (assigned < n) {
            int best = 2;
            double best_frac = -1.0;
            for (int s = 2; s >= 0; --s) {
                const double frac = exact[s] - static_cast<double>(counts[s]);
                if (frac > best_frac + 1e-12) {
                    best_frac = frac;
                    best = s;
                }
            }
            counts[best] += 1;
            ++assigned;
        }

        std::size_t i = 0;
        for (std::size_t k = 0; k < counts[0]; ++k) out.train.push_back(ids[i++]);
        for (std::size_t k = 0; k < counts[1]; ++k) out.val.push_back(ids[i++]);
        for (std::size_t k = 0; k < counts[2]; ++k) out.test.push_back(ids[i++]);
    }
    return out;
}

// ------------------------------------------------------ preprocessing cache

namespace {

// inputs recorded above 10 Hz are sub-sampled down to it first
constexpr double kTargetRateHz = 10.0;

template <class T>
std::vector<T> subsample(const std::vector<T>& v, std::size_t stride) {
    std::vector<T> out;
    out.reserve(v.size() / stride + 1);
    for (std::size_t i = 0; i < v.size(); i += stride) out.push_back(v[i]);
    return out;
}

}  // namespace

PooledTrial preprocess_trial(const sim::TrialRecord& record) {
    if (record.frames_s1.size() < 2)
        throw format_error("preprocess_trial: trial has fewer than 2 frames");

    std::size_t stride = 1;
    if (record.sample_rate_hz > kTargetRateHz + 1e-9) {
        const double ratio = record.sample_rate_hz / kTargetRateHz;
        stride = static_cast<std::size_t>(std::lround(ratio));
        if (std::abs(ratio - static_cast<double>(stride)) > 1e-6)
            throw format_error("preprocess_trial: sample rate " +
                               std::to_string(record.sample_rate_hz) +
                               " Hz is not an integer multiple of 10 Hz");
    }
    const sim::TrialRecord* rec = &record;
    sim::TrialRecord reduced;
    if (stride > 1) {
        reduced.label = record.label;
        reduced.material = record.material;
        reduced.sample_rate_hz = kTargetRateHz;
        reduced.frames_s1 = subsample(record.frames_s1, stride);
        reduced.frames_s2 = subsample(record.frames_s2, stride);
        reduced.wrench = subsample(record.wrench, stride);
        reduced.joints = subsample(record.joints, stride);
        rec = &reduced;
    }
    const sim::TrialRecord& r = *rec;
    if (r.frames_s1.size() < 2)
        throw format_error("preprocess_trial: fewer than 2 frames after 10 Hz sub-sampling");

    PooledTrial p;
    p.label = r.label;
    p.steps = r.frames_s1.size() - 1;
    const auto s1 = flow::preprocess_sequence(r.frames_s1);
    const auto s2 = flow::preprocess_sequence(r.frames_s2);

    auto to_tensor = [](const flow::PooledFlow& pf) {
        TensorF t({2, pf.grid_h, pf.grid_w});
        std::copy(pf.magnitude.begin(), pf.magnitude.end(), t.ptr());
        std::copy(pf.direction.begin(), pf.direction.end(), t.ptr() + pf.grid_h * pf.grid_w);
        return t;
    };
    for (const auto& pf : s1) p.s1.push_back(to_tensor(pf));
    for (const auto& pf : s2) p.s2.push_back(to_tensor(pf));
    p.grid_h = s1[0].grid_h;
    p.grid_w = s1[0].grid_w;

    // sample k pairs with the flow between frames k and k+1
    p.wrench.assign(r.wrench.begin(), r.wrench.begin() + static_cast<std::ptrdiff_t>(p.steps));
    p.joints.assign(r.joints.begin(), r.joints.begin() + static_cast<std::ptrdiff_t>(p.steps));
    return p;
}

namespace {

std::string pooled_json_path(const std::string& dir, const std::string& id) {
    return dir + "/cache/" + id + ".pooled.json";
}
std::string pooled_bin_path(const std::string& dir, const std::string& id) {
    return dir + "/cache/" + id + ".pooled.bin";
}

}  // namespace

bool has_pooled(const std::string& dataset_dir, const std::string& id) {
    return fs::exists(pooled_json_path(dataset_dir, id)) &&
           fs::exists(pooled_bin_path(dataset_dir, id));
}

void save_pooled(const std::string& dataset_dir, const std::string& id, const PooledTrial& p) {
    std::vector<std::uint8_t> blob;
    const std::size_t plane = p.grid_h * p.grid_w;
    blob.reserve(p.steps * (4 * plane + 10) * sizeof(float));
    for (std::size_t k = 0; k < p.steps; ++k) {
        append_bytes(blob, p.s1[k].ptr(), 2 * plane * sizeof(float));
        append_bytes(blob, p.s2[k].ptr(), 2 * plane * sizeof(float));
        append_bytes(blob, p.wrench[k].data(), 6 * sizeof(float));
        append_bytes(blob, p.joints[k].data(), 4 * sizeof(float));
    }
    ordered_json j;
    j["version"] = kFormatVersion;
    j["id"] = id;
    j["label"] = p.label;
    j["steps"] = p.steps;
    j["grid_h"] = p.grid_h;
    j["grid_w"] = p.grid_w;
    char cs[17];
    std::snprintf(cs, sizeof cs, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(blob.data(), blob.size())));
    j["checksum"] = std::string(cs);
    fs::create_directories(fs::path(dataset_dir) / "cache");
    const std::string text = j.dump(2) + "\n";
    write_file(pooled_json_path(dataset_dir, id), text.data(), text.size());
    write_file(pooled_bin_path(dataset_dir, id), blob.data(), blob.size());
}

PooledTrial load_pooled(const std::string& dataset_dir, const std::string& id) {
    const json j = parse_json_file(pooled_json_path(dataset_dir, id));
    PooledTrial p;
    std::uint64_t want;
    try {
        if (j.at("version").get<int>() != kFormatVersion)
            throw format_error(id + ": unsupported pooled-cache version");
        p.label = j.at("label");
        p.steps = j.at("steps");
        p.grid_h = j.at("grid_h");
        p.grid_w = j.at("grid_w");
        want = std::stoull(j.at("checksum").get<std::string>(), nullptr, 16);
    } catch (const json::exception& e) {
        throw format_error(pooled_json_path(dataset_dir, id) + ": " + e.what());
    }
    const auto blob = read_file(pooled_bin_path(dataset_dir, id));
    if (fnv1a64(blob.data(), blob.size()) != want)
        throw format_error(pooled_bin_path(dataset_dir, id) + ": checksum mismatch");
    const std::size_t plane = p.grid_h * p.grid_w;
    const std::size_t stride = (4 * plane + 10) * sizeof(float);
    if (blob.size() != p.steps * stride)
        throw format_error(pooled_bin_path(dataset_dir, id) + ": truncated payload");

    p.s1.assign(p.steps, TensorF({2, p.grid_h, p.grid_w}));
    p.s2.assign(p.steps, TensorF({2, p.grid_h, p.grid_w}));
    p.wrench.assign(p.steps, {});
    p.joints.assign(p.steps, {});
    for (std::size_t k = 0; k < p.steps; ++k) {
        const std::uint8_t* at = blob.data() + k * stride;
        std::memcpy(p.s1[k].ptr(), at, 2 * plane * sizeof(float));
        at += 2 * plane * sizeof(float);
        std::memcpy(p.s2[k].ptr(), at, 2 * plane * sizeof(float));
        at += 2 * plane * sizeof(float);
        std::memcpy(p.wrench[k].data(), at, 6 * sizeof(float));
        at += 6 * sizeof(float);
        std::memcpy(p.joints[k].data(), at, 4 * sizeof(float));
    }
    return p;
}

PooledTrial ensure_pooled(const std::string& dataset_dir, const ManifestEntry& entry) {
    if (has_pooled(dataset_dir, entry.id)) return load_pooled(dataset_dir, entry.id);
    const PooledTrial p = preprocess_trial(load_trial(dataset_dir, entry));
    save_pooled(dataset_dir, entry.id, p);
    return p;
}

// ------------------------------------------------------------ model inputs

ModelInputSequence assemble_inputs(const PooledTrial& pooled, const InputMask& mask) {
    if (!mask.any()) throw format_error("assemble_inputs: input mask enables nothing");
    if (pooled.steps == 0) throw format_error("assemble_inputs: empty sequence after alignment");
    ModelInputSequence seq;
    seq.label = pooled.label;
    seq.length = pooled.steps;

    auto strip = [&](const TensorF& t) {
        if (mask.flow_angles) return t;
        TensorF mag({1, t.shape[1], t.shape[2]});
        std::copy(t.ptr(), t.ptr() + t.shape[1] * t.shape[2], mag.ptr());
        return mag;
    };
    if (mask.s1_flow)
        for (const auto& t : pooled.s1) seq.s1_flow.push_back(strip(t));
    if (mask.s2_flow)
        for (const auto& t : pooled.s2) seq.s2_flow.push_back(strip(t));
    if (mask.wrench) seq.wrench = pooled.wrench;
    if (mask.joints) seq.joints = pooled.joints;
    return seq;
}

ModelInputSequence build_model_inputs(const sim::TrialRecord& record, const InputMask& mask) {
    return assemble_inputs(preprocess_trial(record), mask);
}

// -------------------------------------------------------------- import stub

ImportReport validate_import(const std::string& dataset_dir) {
    ImportReport rep;
    if (!fs::exists(dataset_dir)) {
        rep.problems.push_back("directory does not exist: " + dataset_dir);
        return rep;
    }
    if (!fs::exists(dataset_dir + "/manifest.json")) {
        rep.problems.push_back("manifest.json not found");
        return rep;
    }
    Manifest m;
    try {
        m = Manifest::load(dataset_dir);
    } catch (const std::exception& e) {
        rep.problems.push_back(std::string("manifest rejected: ") + e.what());
        return rep;
    }
    for (const auto& e : m.entries) {
        const std::string sidecar = dataset_dir + "/" + e.path;
        if (!fs::exists(sidecar)) {
            rep.problems.push_back("missing sidecar " + e.path);
            continue;
        }
        try {
            (void)load_trial(dataset_dir, e);
            ++rep.trials_checked;
        } catch (const std::exception& ex) {
            rep.problems.push_back(std::string("trial '") + e.id + "' rejected: " + ex.what());
        }
    }
    rep.ok = rep.problems.empty() && !m.entries.empty();
    if (m.entries.empty()) rep.problems.push_back("manifest lists no trials");
    return rep;
}

}  // namespace tact::data

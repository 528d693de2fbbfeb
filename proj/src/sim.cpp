#include "tact/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>
#include <omp.h>

#include "tact/errors.hpp"
#include "tact/rng.hpp"

namespace tact::sim {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

float quantize_u8(float v) {
    v = std::min(1.f, std::max(0.f, v));
    return static_cast<float>(std::lround(v * 255.f)) / 255.f;
}

}  // namespace

void SimConfig::validate() const {
    if (trial_duration_s <= 0 || sample_rate_hz <= 0 || sine_period_s <= 0)
        throw format_error("sim config: durations and rates must be positive");
    const double cycles = trial_duration_s / sine_period_s;
    if (std::abs(cycles - std::round(cycles)) > 1e-9)
        throw format_error("sim config: sine_period_s must divide trial_duration_s");
    if (raw_height == 0 || raw_width == 0)
        throw format_error("sim config: empty raw resolution");
    for (std::size_t c = 0; c < 4; ++c) {
        if (slip_fraction[c] < 0.0 || slip_fraction[c] >= 1.0)
            throw format_error("sim config: slip_fraction[" + std::to_string(c) +
                               "] outside [0,1)");
        // ties permitted so the degenerate all-equal configuration stays usable
        if (c > 0 && slip_fraction[c] < slip_fraction[c - 1])
            throw format_error("sim config: slip_fraction must be non-decreasing");
    }
    if (noise.flow_jitter_px < 0 || noise.wrench_n < 0 || noise.joint_rad < 0 ||
        noise.slip_trial_sigma < 0)
        throw format_error("sim config: negative noise level");
}

SimConfig SimConfig::cloth_profile() {
    SimConfig c;
    c.slip_fraction = {0.05, 0.25, 0.50, 0.75};
    c.noise.slip_trial_sigma = 0.02;
    return c;
}

SimConfig SimConfig::paper_profile() {
    SimConfig c;
    c.slip_fraction = {0.05, 0.30, 0.45, 0.55};
    c.noise.slip_trial_sigma = 0.05;
    return c;
}

SimConfig SimConfig::for_material(const std::string& material) {
    if (material == "cloth") return cloth_profile();
    if (material == "paper") return paper_profile();
    throw format_error("sim: unknown material '" + material + "' (expected cloth or paper)");
}

std::string SimConfig::to_json() const {
    nlohmann::ordered_json j;
    j["trial_duration_s"] = trial_duration_s;
    j["sample_rate_hz"] = sample_rate_hz;
    j["sine_period_s"] = sine_period_s;
    j["raw_height"] = raw_height;
    j["raw_width"] = raw_width;
    j["slip_fraction"] = slip_fraction;
    j["contact_force_setpoint_n"] = contact_force_setpoint_n;
    j["noise"] = {{"flow_jitter_px", noise.flow_jitter_px},
                  {"wrench_n", noise.wrench_n},
                  {"joint_rad", noise.joint_rad},
                  {"slip_trial_sigma", noise.slip_trial_sigma}};
    j["rng_seed"] = rng_seed;
    j["motion_gain_px"] = motion_gain_px;
    j["shear_gain_n"] = shear_gain_n;
    j["grasp_pose_rad"] = grasp_pose_rad;
    j["rub_amplitude_rad"] = rub_amplitude_rad;
    return j.dump(2);
}

SimConfig SimConfig::from_json(const std::string& text) { return from_json(text, SimConfig{}); }

SimConfig SimConfig::from_json(const std::string& text, const SimConfig& base) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("sim config: invalid JSON: ") + e.what());
    }
    SimConfig c = base;
    try {
        if (j.contains("trial_duration_s")) c.trial_duration_s = j["trial_duration_s"];
        if (j.contains("sample_rate_hz")) c.sample_rate_hz = j["sample_rate_hz"];
        if (j.contains("sine_period_s")) c.sine_period_s = j["sine_period_s"];
        if (j.contains("raw_height")) c.raw_height = j["raw_height"];
        if (j.contains("raw_width")) c.raw_width = j["raw_width"];
        if (j.contains("slip_fraction")) c.slip_fraction = j["slip_fraction"];
        if (j.contains("contact_force_setpoint_n"))
            c.contact_force_setpoint_n = j["contact_force_setpoint_n"];
        if (j.contains("noise")) {
            const auto& n = j["noise"];
            if (n.contains("flow_jitter_px")) c.noise.flow_jitter_px = n["flow_jitter_px"];
            if (n.contains("wrench_n")) c.noise.wrench_n = n["wrench_n"];
            if (n.contains("joint_rad")) c.noise.joint_rad = n["joint_rad"];
            if (n.contains("slip_trial_sigma")) c.noise.slip_trial_sigma = n["slip_trial_sigma"];
        }
        if (j.contains("rng_seed")) c.rng_seed = j["rng_seed"];
        if (j.contains("motion_gain_px")) c.motion_gain_px = j["motion_gain_px"];
        if (j.contains("shear_gain_n")) c.shear_gain_n = j["shear_gain_n"];
        if (j.contains("grasp_pose_rad")) c.grasp_pose_rad = j["grasp_pose_rad"];
        if (j.contains("rub_amplitude_rad")) c.rub_amplitude_rad = j["rub_amplitude_rad"];
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("sim config: bad field type: ") + e.what());
    }
    c.validate();
    return c;
}

std::array<double, 4> joint_trajectory(double t, const SimConfig& config) {
    if (t < 0.0 || t > config.trial_duration_s)
        throw format_error("joint_trajectory: t=" + std::to_string(t) + " outside [0," +
                           std::to_string(config.trial_duration_s) + "]");
    const double phase = kTau * std::fmod(t, config.sine_period_s) / config.sine_period_s;
    const double s = std::sin(phase);
    std::array<double, 4> q;
    for (std::size_t i = 0; i < 4; ++i)
        q[i] = config.grasp_pose_rad[i] + config.rub_amplitude_rad[i] * s;
    return q;
}

double commanded_position(double t, const SimConfig& config) {
    const double phase = kTau * std::fmod(t, config.sine_period_s) / config.sine_period_s;
    return config.motion_gain_px * std::sin(phase);
}

flow::Frame render_pattern(std::uint64_t seed, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw format_error("render_pattern: empty resolution");
    auto rng = make_rng(derive_seed(seed, 0xfadeULL));
    std::uniform_real_distribution<float> u(0.f, 1.f);
    flow::Frame noise_fine(height, width), noise_coarse(height, width);
    for (auto& v : noise_fine.intensity) v = u(rng);
    for (auto& v : noise_coarse.intensity) v = u(rng);
    noise_fine = flow::gaussian_blur(noise_fine, 1.2);
    noise_coarse = flow::gaussian_blur(noise_coarse, 4.0);

    flow::Frame f(height, width);
    for (std::size_t i = 0; i < f.intensity.size(); ++i)
        f.intensity[i] = 0.55f * noise_fine.intensity[i] + 0.45f * noise_coarse.intensity[i];

    float lo = 1e9f, hi = -1e9f;
    for (float v : f.intensity) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = std::max(1e-6f, hi - lo);
    for (auto& v : f.intensity) v = quantize_u8((v - lo) / span);
    return f;
}

double gradient_richness(const flow::Frame& frame) {
    std::size_t rich = 0;
    for (std::size_t y = 0; y < frame.height; ++y)
        for (std::size_t x = 0; x < frame.width; ++x) {
            const double gx = (frame.at_clamped(y, static_cast<std::ptrdiff_t>(x) + 1) -
                               frame.at_clamped(y, static_cast<std::ptrdiff_t>(x) - 1)) *
                              0.5;
            const double gy = (frame.at_clamped(static_cast<std::ptrdiff_t>(y) + 1, x) -
                               frame.at_clamped(static_cast<std::ptrdiff_t>(y) - 1, x)) *
                              0.5;
            if (std::hypot(gx, gy) > 0.05) ++rich;
        }
    return static_cast<double>(rich) / static_cast<double>(frame.height * frame.width);
}

namespace {

struct TrialKinematics {
    double slip_eff = 0.0;
    std::vector<double> disp_s1;  // cumulative x-displacement per frame
};

TrialKinematics compute_kinematics(int label, const SimConfig& config, std::uint64_t seed) {
    if (label < 0 || label > 3)
        throw format_error("synth_trial: label " + std::to_string(label) + " outside {0,1,2,3}");
    auto noise_rng = make_rng(derive_seed(seed, 3));
    std::normal_distribution<double> gauss(0.0, 1.0);
    double slip = config.slip_fraction[static_cast<std::size_t>(label)];
    if (config.noise.slip_trial_sigma > 0)
        slip += config.noise.slip_trial_sigma * gauss(noise_rng);
    slip = std::clamp(slip, 0.0, 0.98);

    const std::size_t steps = config.steps();
    const double dt = 1.0 / config.sample_rate_hz;
    TrialKinematics kin;
    kin.slip_eff = slip;
    kin.disp_s1.assign(steps + 1, 0.0);
    for (std::size_t k = 0; k < steps; ++k) {
        const double cmd_step =
            commanded_position((k + 1) * dt, config) - commanded_position(k * dt, config);
        double d = cmd_step * (1.0 - slip);
        if (config.noise.flow_jitter_px > 0)
            d += config.noise.flow_jitter_px * gauss(noise_rng);
        kin.disp_s1[k + 1] = kin.disp_s1[k] + d;
    }
    return kin;
}

}  // namespace

std::vector<double> surface_displacements(int label, const SimConfig& config,
                                          std::uint64_t seed) {
    return compute_kinematics(label, config, seed).disp_s1;
}

TrialRecord synth_trial(int label, const std::string& material, const SimConfig& config,
                        std::uint64_t seed) {
    if (material != "cloth" && material != "paper")
        throw format_error("synth_trial: unknown material '" + material + "'");
    if (label < 0 || label > 3)
        throw format_error("synth_trial: label " + std::to_string(label) + " outside {0,1,2,3}");
    config.validate();

    const std::size_t frames = config.frame_count();
    const double dt = 1.0 / config.sample_rate_hz;

    TrialRecord rec;
    rec.label = label;
    rec.material = material;
    rec.sample_rate_hz = config.sample_rate_hz;

    // sensor 1 surface positions; sensor 2 sees the mirrored motion with its
    // own jitter stream
    const TrialKinematics kin = compute_kinematics(label, config, seed);
    const std::vector<double>& disp_s1 = kin.disp_s1;
    std::vector<double> disp_s2(frames, 0.0);
    {
        auto rng2 = make_rng(derive_seed(seed, 4));
        std::normal_distribution<double> step_jitter(0.0, 1.0);
        for (std::size_t k = 1; k < frames; ++k) {
            double d = -(disp_s1[k] - disp_s1[k - 1]);
            // remove s1's jitter? no: mirrored commanded motion, own jitter
            if (config.noise.flow_jitter_px > 0)
                d += config.noise.flow_jitter_px * step_jitter(rng2);
            disp_s2[k] = disp_s2[k - 1] + d;
        }
    }

    const flow::Frame pattern_s1 =
        render_pattern(derive_seed(seed, 1), config.raw_height, config.raw_width);
    const flow::Frame pattern_s2 =
        render_pattern(derive_seed(seed, 2), config.raw_height, config.raw_width);

    rec.frames_s1.resize(frames);
    rec.frames_s2.resize(frames);
    const std::ptrdiff_t nf = static_cast<std::ptrdiff_t>(frames);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < nf; ++k) {
        auto warp = [&](const flow::Frame& pattern, double d) {
            flow::Frame out(config.raw_height, config.raw_width);
            for (std::size_t y = 0; y < config.raw_height; ++y)
                for (std::size_t x = 0; x < config.raw_width; ++x)
                    out.at(y, x) = quantize_u8(
                        flow::bilinear_sample(pattern, static_cast<double>(x) - d, y));
            return out;
        };
        rec.frames_s1[static_cast<std::size_t>(k)] = warp(pattern_s1, disp_s1[k]);
        rec.frames_s2[static_cast<std::size_t>(k)] = warp(pattern_s2, disp_s2[k]);
    }

    // wrench and joints, one sample per frame; the tangential force tracks
    // the same effective transmitted fraction as the surface motion
    auto wrench_rng = make_rng(derive_seed(seed, 5));
    auto joint_rng = make_rng(derive_seed(seed, 6));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double transmitted = 1.0 - kin.slip_eff;

    rec.wrench.resize(frames);
    rec.joints.resize(frames);
    for (std::size_t k = 0; k < frames; ++k) {
        const double t = k * dt;
        const double phase = kTau * std::fmod(t, config.sine_period_s) / config.sine_period_s;
        std::array<float, 6> w{};
        w[0] = static_cast<float>(config.shear_gain_n * transmitted * std::cos(phase) +
                                  config.noise.wrench_n * gauss(wrench_rng));
        w[1] = static_cast<float>(config.noise.wrench_n * gauss(wrench_rng));
        w[2] = static_cast<float>(config.contact_force_setpoint_n +
                                  config.noise.wrench_n * gauss(wrench_rng));
        for (std::size_t a = 3; a < 6; ++a)
            w[a] = static_cast<float>(0.1 * config.noise.wrench_n * gauss(wrench_rng));
        rec.wrench[k] = w;

        const std::array<double, 4> q = joint_trajectory(t, config);
        std::array<float, 4> jq;
        for (std::size_t a = 0; a < 4; ++a)
            jq[a] = static_cast<float>(q[a] + config.noise.joint_rad * gauss(joint_rng));
        rec.joints[k] = jq;
    }
    return rec;
}

std::uint64_t trial_seed(std::uint64_t master, int label, std::size_t index) {
    return derive_seed(master, static_cast<std::uint64_t>(label),
                       static_cast<std::uint64_t>(index));
}

std::vector<TrialRecord> synth_dataset(const std::array<std::size_t, 4>& counts,
                                       const std::string& material, const SimConfig& config,
                                       std::uint64_t seed) {
    for (std::size_t c = 0; c < 4; ++c)
        if (counts[c] < 1)
            throw format_error("synth_dataset: counts must be >= 1 per class");
    std::vector<TrialRecord> out;
    for (int c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < counts[static_cast<std::size_t>(c)]; ++i)
            out.push_back(synth_trial(c, material, config, trial_seed(seed, c, i)));
    return out;
}

}  // namespace tact::sim

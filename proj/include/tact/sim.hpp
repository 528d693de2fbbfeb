#ifndef TACT_SIM_HPP
#define TACT_SIM_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tact/flow.hpp"

// Synthetic rubbing-trial generator. Stands in for the gripper and sensors:
// renders a patterned sensor surface, displaces it under a class-dependent
// stick/slip model, and emits frames, 6-axis wrench, and joint trajectories.

namespace tact::sim {

struct NoiseConfig {
    double flow_jitter_px = 0.2;     // per-step random displacement of the surface
    double wrench_n = 0.05;          // per-sample force noise
    double joint_rad = 0.005;        // per-sample joint angle noise
    double slip_trial_sigma = 0.02;  // per-trial jitter of the effective slip fraction
};

struct SimConfig {
    double trial_duration_s = 16.0;
    double sample_rate_hz = 10.0;
    double sine_period_s = 4.0;
    std::size_t raw_height = 768;
    std::size_t raw_width = 1024;
    // slip at the gel/material interface per class; class 0 grips hardest
    std::array<double, 4> slip_fraction{0.05, 0.25, 0.50, 0.75};
    double contact_force_setpoint_n = 1.0;
    NoiseConfig noise;
    std::uint64_t rng_seed = 0;

    // rubbing motion
    double motion_gain_px = 25.0;  // tangential surface travel amplitude
    double shear_gain_n = 1.5;     // peak tangential force at zero slip
    std::array<double, 4> grasp_pose_rad{-0.5, 1.8, 0.5, -1.8};
    std::array<double, 4> rub_amplitude_rad{0.0, 0.2, 0.0, -0.2};

    std::size_t steps() const {
        return static_cast<std::size_t>(trial_duration_s * sample_rate_hz + 0.5);
    }
    std::size_t frame_count() const { return steps() + 1; }

    // throws format_error on violated invariants
    void validate() const;

    // material profiles; paper packs classes 2/3 closer together
    static SimConfig cloth_profile();
    static SimConfig paper_profile();
    static SimConfig for_material(const std::string& material);

    std::string to_json() const;
    // fields present in the JSON override the base configuration
    static SimConfig from_json(const std::string& text, const SimConfig& base);
    static SimConfig from_json(const std::string& text);
};

struct TrialRecord {
    int label = 0;  // number of grasped layers, 0..3
    std::string material = "cloth";
    double sample_rate_hz = 10.0;
    std::vector<flow::Frame> frames_s1, frames_s2;     // frame_count() frames
    std::vector<std::array<float, 6>> wrench;          // per frame: Fx Fy Fz Tx Ty Tz
    std::vector<std::array<float, 4>> joints;          // per frame: 4 joint angles

    bool operator==(const TrialRecord&) const = default;
};

// Sinusoidal rubbing profile superposed on the grasp pose. t in [0, duration].
std::array<double, 4> joint_trajectory(double t, const SimConfig& config);

// Commanded tangential surface position at time t, in pixels.
double commanded_position(double t, const SimConfig& config);

// Reproducible random blob texture, quantized to the 8-bit grid.
flow::Frame render_pattern(std::uint64_t seed, std::size_t height, std::size_t width);

// Fraction of pixels whose central-difference gradient magnitude exceeds 0.05.
double gradient_richness(const flow::Frame& frame);

// Cumulative sensor-surface x-displacement per frame for sensor 1 (length
// frame_count()); sensor 2 mirrors it. Exposed for closed-form tests.
std::vector<double> surface_displacements(int label, const SimConfig& config,
                                          std::uint64_t seed);

TrialRecord synth_trial(int label, const std::string& material, const SimConfig& config,
                        std::uint64_t seed);

// per-trial seed stream used by synth_dataset; exposed so callers can
// generate the same dataset incrementally
std::uint64_t trial_seed(std::uint64_t master, int label, std::size_t index);

// counts[c] trials per class, class-major order, distinct derived seeds
std::vector<TrialRecord> synth_dataset(const std::array<std::size_t, 4>& counts,
                                       const std::string& material, const SimConfig& config,
                                       std::uint64_t seed);

}  // namespace tact::sim

#endif

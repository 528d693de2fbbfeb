#ifndef TACT_FLOW_HPP
#define TACT_FLOW_HPP

#include <cstddef>
#include <vector>

#include "tact/tensor.hpp"

// Dense optical flow between consecutive sensor frames: local polynomial
// expansion, coarse-to-fine displacement estimation, and block-average
// pooling to the model's 96x128 magnitude/direction grid.

namespace tact::flow {

// Grayscale frame, intensities in [0,1].
struct Frame {
    std::size_t height = 0, width = 0;
    std::vector<float> intensity;

    Frame() = default;
    Frame(std::size_t h, std::size_t w) : height(h), width(w), intensity(h * w, 0.f) {}

    float& at(std::size_t y, std::size_t x) { return intensity[y * width + x]; }
    float at(std::size_t y, std::size_t x) const { return intensity[y * width + x]; }

    // replicate-border access
    float at_clamped(std::ptrdiff_t y, std::ptrdiff_t x) const {
        y = std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(y, height - 1));
        x = std::max<std::ptrdiff_t>(0, std::min<std::ptrdiff_t>(x, width - 1));
        return intensity[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
    }

    void clamp01() {
        for (float& v : intensity) v = std::min(1.f, std::max(0.f, v));
    }

    bool operator==(const Frame&) const = default;
};

// Per-pixel displacement in pixels; x right, y down.
struct FlowField {
    std::size_t height = 0, width = 0;
    std::vector<float> u, v;

    FlowField() = default;
    FlowField(std::size_t h, std::size_t w) : height(h), width(w), u(h * w, 0.f), v(h * w, 0.f) {}
};

// Block-averaged flow as (magnitude, direction) channels. Direction is
// radians in [-pi, pi); the zero vector maps to direction 0.
struct PooledFlow {
    std::size_t grid_h = 0, grid_w = 0;
    std::vector<float> magnitude, direction;

    PooledFlow() = default;
    PooledFlow(std::size_t h, std::size_t w)
        : grid_h(h), grid_w(w), magnitude(h * w, 0.f), direction(h * w, 0.f) {}
};

// Coefficients of the local quadratic model fitted at every pixel:
//   f(p + (dx,dy)) ~ c + bx dx + by dy + axx dx^2 + ayy dy^2 + axy dx dy
struct PolyExpansion {
    std::size_t height = 0, width = 0;
    // six planes, each height*width: c, bx, by, axx, ayy, axy
    std::vector<float> c, bx, by, axx, ayy, axy;
};

struct FarnebackParams {
    int levels = 3;          // pyramid levels including full resolution
    double pyr_scale = 0.5;
    int win = 15;            // box filter size for the normal equations
    int iters = 3;           // refinement iterations per level
    int poly_n = 5;          // expansion window half-size
    double poly_sigma = 1.2;
};

// Gaussian-windowed weighted least squares via separable correlations; the
// per-pixel direct solve lives in the serial reference and must agree.
PolyExpansion polynomial_expansion(const Frame& frame, int n = 5, double sigma = 1.2);

FlowField farneback_flow(const Frame& prev, const Frame& next,
                         const FarnebackParams& params = {});

// (u,v) averaged per factor x factor block, then converted to polar.
PooledFlow pool_flow(const FlowField& field, std::size_t factor);

// Consecutive-pair flow, pooled; pooling factor = height / 96 unless
// overridden. Input frames are assumed already at 10 Hz.
std::vector<PooledFlow> preprocess_sequence(const std::vector<Frame>& frames,
                                            std::size_t pool_factor = 0,
                                            const FarnebackParams& params = {});

// ------------------------------------------------------------- utilities

float bilinear_sample(const Frame& f, double x, double y);
Frame resize_bilinear(const Frame& f, std::size_t out_h, std::size_t out_w);
Frame gaussian_blur(const Frame& f, double sigma);

// Rec.601 luminance for external RGB sources (interleaved r,g,b in [0,1]).
Frame luminance_from_rgb(std::size_t h, std::size_t w, const std::vector<float>& rgb);

inline constexpr std::size_t kPooledRows = 96;
inline constexpr std::size_t kPooledCols = 128;

}  // namespace tact::flow

#endif

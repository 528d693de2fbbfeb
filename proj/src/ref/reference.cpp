#include "tact/reference.hpp"

#include <array>
#include <cmath>

namespace tact::ref {

flow::PooledFlow block_average_pool(const flow::FlowField& field, std::size_t factor) {
    const std::size_t gh = field.height / factor, gw = field.width / factor;
    flow::PooledFlow out(gh, gw);
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
            double su = 0, sv = 0;
            for (std::size_t dy = 0; dy < factor; ++dy)
                for (std::size_t dx = 0; dx < factor; ++dx) {
                    const std::size_t i = (gy * factor + dy) * field.width + gx * factor + dx;
                    su += field.u[i];
                    sv += field.v[i];
                }
            su /= static_cast<double>(factor * factor);
            sv /= static_cast<double>(factor * factor);
            out.magnitude[gy * gw + gx] = static_cast<float>(std::hypot(su, sv));
            float dir = (su == 0.0 && sv == 0.0) ? 0.f : static_cast<float>(std::atan2(sv, su));
            if (dir >= static_cast<float>(M_PI)) dir = -static_cast<float>(M_PI);
            out.direction[gy * gw + gx] = dir;
        }
    return out;
}

namespace {

// solve 6x6 Ax=b by Gaussian elimination with partial pivoting
std::array<double, 6> solve6(std::array<std::array<double, 6>, 6> a, std::array<double, 6> b) {
    for (int col = 0; col < 6; ++col) {
        int piv = col;
        for (int r = col + 1; r < 6; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (int r = col + 1; r < 6; ++r) {
            const double f = a[r][col] / a[col][col];
            for (int j = col; j < 6; ++j) a[r][j] -= f * a[col][j];
            b[r] -= f * b[col];
        }
    }
    std::array<double, 6> x{};
    for (int r = 5; r >= 0; --r) {
        double s = b[r];
        for (int j = r + 1; j < 6; ++j) s -= a[r][j] * x[j];
        x[r] = s / a[r][r];
    }
    return x;
}

}  // namespace

flow::PolyExpansion poly_expansion_wls(const flow::Frame& frame, int n, double sigma) {
    const std::size_t h = frame.height, w = frame.width;
    std::vector<double> g(2 * n + 1);
    double gs = 0;
    for (int i = -n; i <= n; ++i) {
        g[i + n] = std::exp(-(double)(i * i) / (2.0 * sigma * sigma));
        gs += g[i + n];
    }
    for (double& v : g) v /= gs;

    flow::PolyExpansion out;
    out.height = h;
    out.width = w;
    out.c.assign(h * w, 0.f);
    out.bx.assign(h * w, 0.f);
    out.by.assign(h * w, 0.f);
    out.axx.assign(h * w, 0.f);
    out.ayy.assign(h * w, 0.f);
    out.axy.assign(h * w, 0.f);

    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::array<std::array<double, 6>, 6> G{};
            std::array<double, 6> m{};
            for (int dy = -n; dy <= n; ++dy)
                for (int dx = -n; dx <= n; ++dx) {
                    const double wgt = g[dy + n] * g[dx + n];
                    const double f = frame.at_clamped(static_cast<std::ptrdiff_t>(y) + dy,
                                                      static_cast<std::ptrdiff_t>(x) + dx);
                    const double phi[6] = {1.0,
                                           static_cast<double>(dx),
                                           static_cast<double>(dy),
                                           static_cast<double>(dx) * dx,
                                           static_cast<double>(dy) * dy,
                                           static_cast<double>(dx) * dy};
                    for (int a = 0; a < 6; ++a) {
                        m[a] += wgt * phi[a] * f;
                        for (int b = 0; b < 6; ++b) G[a][b] += wgt * phi[a] * phi[b];
                    }
                }
            const std::array<double, 6> r = solve6(G, m);
            const std::size_t i = y * w + x;
            out.c[i] = static_cast<float>(r[0]);
            out.bx[i] = static_cast<float>(r[1]);
            out.by[i] = static_cast<float>(r[2]);
            out.axx[i] = static_cast<float>(r[3]);
            out.ayy[i] = static_cast<float>(r[4]);
            out.axy[i] = static_cast<float>(r[5]);
        }
    return out;
}

}  // namespace tact::ref

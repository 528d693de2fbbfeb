#include "tact/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <omp.h>

#include "tact/errors.hpp"

namespace tact::flow {

namespace {

std::vector<double> gaussian_kernel(int n, double sigma) {
    std::vector<double> g(2 * n + 1);
    double s = 0;
    for (int i = -n; i <= n; ++i) {
        g[i + n] = std::exp(-(double)(i * i) / (2.0 * sigma * sigma));
        s += g[i + n];
    }
    for (double& v : g) v /= s;
    return g;
}

// Gauss-Jordan inverse with partial pivoting; used for the 6x6 normal matrix.
std::array<std::array<double, 6>, 6> invert6(std::array<std::array<double, 6>, 6> a) {
    std::array<std::array<double, 6>, 6> inv{};
    for (int i = 0; i < 6; ++i) inv[i][i] = 1.0;
    for (int col = 0; col < 6; ++col) {
        int piv = col;
        for (int r = col + 1; r < 6; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(inv[col], inv[piv]);
        const double d = a[col][col];
        if (std::abs(d) < 1e-300) throw numeric_error("polynomial_expansion: singular normal matrix");
        for (int j = 0; j < 6; ++j) {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for (int r = 0; r < 6; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (int j = 0; j < 6; ++j) {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    return inv;
}

std::vector<float> resize_plane(const std::vector<float>& src, std::size_t h, std::size_t w,
                                std::size_t oh, std::size_t ow) {
    std::vector<float> dst(oh * ow);
    const double sy = static_cast<double>(h) / static_cast<double>(oh);
    const double sx = static_cast<double>(w) / static_cast<double>(ow);
    const std::ptrdiff_t nrows = static_cast<std::ptrdiff_t>(oh);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t oy = 0; oy < nrows; ++oy) {
        const double fy = (oy + 0.5) * sy - 0.5;
        const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(std::floor(fy));
        const double wy = fy - y0;
        const std::size_t yc0 = std::clamp<std::ptrdiff_t>(y0, 0, h - 1);
        const std::size_t yc1 = std::clamp<std::ptrdiff_t>(y0 + 1, 0, h - 1);
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const double fx = (ox + 0.5) * sx - 0.5;
            const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(std::floor(fx));
            const double wx = fx - x0;
            const std::size_t xc0 = std::clamp<std::ptrdiff_t>(x0, 0, w - 1);
            const std::size_t xc1 = std::clamp<std::ptrdiff_t>(x0 + 1, 0, w - 1);
            const double top = src[yc0 * w + xc0] * (1 - wx) + src[yc0 * w + xc1] * wx;
            const double bot = src[yc1 * w + xc0] * (1 - wx) + src[yc1 * w + xc1] * wx;
            dst[oy * ow + ox] = static_cast<float>(top * (1 - wy) + bot * wy);
        }
    }
    return dst;
}

// 5-plane structure holding the flow normal equations per pixel:
// [G00, G01, G11, h0, h1]
struct NormalEq {
    std::size_t height = 0, width = 0;
    std::vector<float> m[5];
    NormalEq(std::size_t h, std::size_t w) : height(h), width(w) {
        for (auto& p : m) p.assign(h * w, 0.f);
    }
};

void update_matrices(const PolyExpansion& r1, const PolyExpansion& r2, const FlowField& fl,
                     NormalEq& eq) {
    static const float border_taper[5] = {0.14f, 0.14f, 0.4472f, 0.4472f, 0.4472f};
    const std::size_t h = r1.height, w = r1.width;
    const std::ptrdiff_t nrows = static_cast<std::ptrdiff_t>(h);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t y = 0; y < nrows; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const float du = fl.u[i], dv = fl.v[i];
            const double fx = x + du, fy = y + dv;
            const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(std::lround(fx));
            const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(std::lround(fy));

            double a11 = r1.axx[i], a22 = r1.ayy[i], a12 = r1.axy[i] * 0.5;
            double db_x, db_y;
            if (xi >= 0 && xi < static_cast<std::ptrdiff_t>(w) && yi >= 0 &&
                yi < static_cast<std::ptrdiff_t>(h)) {
                const std::size_t j = static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xi);
                a11 = (a11 + r2.axx[j]) * 0.5;
                a22 = (a22 + r2.ayy[j]) * 0.5;
                a12 = (r1.axy[i] + r2.axy[j]) * 0.25;
                // the A*d term must use the same rounded displacement the
                // second expansion was sampled at, or integer shifts never
                // become fixed points of the iteration
                const double rdx = static_cast<double>(xi) - static_cast<double>(x);
                const double rdy = static_cast<double>(yi) - static_cast<double>(y);
                db_x = 0.5 * (r1.bx[i] - r2.bx[j]) + a11 * rdx + a12 * rdy;
                db_y = 0.5 * (r1.by[i] - r2.by[j]) + a12 * rdx + a22 * rdy;
            } else {
                // no correspondence available: keep the prior displacement
                db_x = a11 * du + a12 * dv;
                db_y = a12 * du + a22 * dv;
            }

            // attenuate the unreliable image border
            const std::size_t bx_l = x, bx_r = w - 1 - x;
            const std::size_t by_t = static_cast<std::size_t>(y), by_b = h - 1 - y;
            double scale = 1.0;
            if (bx_l < 5) scale *= border_taper[bx_l];
            if (bx_r < 5) scale *= border_taper[bx_r];
            if (by_t < 5) scale *= border_taper[by_t];
            if (by_b < 5) scale *= border_taper[by_b];
            a11 *= scale;
            a22 *= scale;
            a12 *= scale;
            db_x *= scale;
            db_y *= scale;

            eq.m[0][i] = static_cast<float>(a11 * a11 + a12 * a12);
            eq.m[1][i] = static_cast<float>((a11 + a22) * a12);
            eq.m[2][i] = static_cast<float>(a22 * a22 + a12 * a12);
            eq.m[3][i] = static_cast<float>(a11 * db_x + a12 * db_y);
            eq.m[4][i] = static_cast<float>(a12 * db_x + a22 * db_y);
        }
    }
}

// Box blur with replicate border, window 2m+1, separable running sums.
void box_blur_plane(std::vector<float>& plane, std::size_t h, std::size_t w, int m) {
    const double inv = 1.0 / (2 * m + 1);
    std::vector<float> tmp(h * w);
    const std::ptrdiff_t nrows = static_cast<std::ptrdiff_t>(h);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t y = 0; y < nrows; ++y) {
        const float* row = plane.data() + static_cast<std::size_t>(y) * w;
        float* out = tmp.data() + static_cast<std::size_t>(y) * w;
        auto rc = [&](std::ptrdiff_t x) {
            return row[std::clamp<std::ptrdiff_t>(x, 0, w - 1)];
        };
        double s = 0;
        for (int k = -m; k <= m; ++k) s += rc(k);
        out[0] = static_cast<float>(s * inv);
        for (std::size_t x = 1; x < w; ++x) {
            s += rc(static_cast<std::ptrdiff_t>(x) + m) - rc(static_cast<std::ptrdiff_t>(x) - m - 1);
            out[x] = static_cast<float>(s * inv);
        }
    }
    const std::ptrdiff_t ncols = static_cast<std::ptrdiff_t>(w);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t x = 0; x < ncols; ++x) {
        auto cc = [&](std::ptrdiff_t y) {
            return tmp[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(y, 0, h - 1)) * w +
                       static_cast<std::size_t>(x)];
        };
        double s = 0;
        for (int k = -m; k <= m; ++k) s += cc(k);
        plane[x] = static_cast<float>(s * inv);
        for (std::size_t y = 1; y < h; ++y) {
            s += cc(static_cast<std::ptrdiff_t>(y) + m) - cc(static_cast<std::ptrdiff_t>(y) - m - 1);
            plane[y * w + x] = static_cast<float>(s * inv);
        }
    }
}

void solve_flow(const NormalEq& eq, FlowField& fl) {
    const std::size_t n = eq.height * eq.width;
    const std::ptrdiff_t pn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < pn; ++i) {
        const double g00 = eq.m[0][i], g01 = eq.m[1][i], g11 = eq.m[2][i];
        const double h0 = eq.m[3][i], h1 = eq.m[4][i];
        const double det = g00 * g11 - g01 * g01 + 1e-3;
        fl.u[i] = static_cast<float>((g11 * h0 - g01 * h1) / det);
        fl.v[i] = static_cast<float>((g00 * h1 - g01 * h0) / det);
    }
}

}  // namespace

float bilinear_sample(const Frame& f, double x, double y) {
    const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(std::floor(x));
    const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(std::floor(y));
    const double wx = x - x0, wy = y - y0;
    const double top = f.at_clamped(y0, x0) * (1 - wx) + f.at_clamped(y0, x0 + 1) * wx;
    const double bot = f.at_clamped(y0 + 1, x0) * (1 - wx) + f.at_clamped(y0 + 1, x0 + 1) * wx;
    return static_cast<float>(top * (1 - wy) + bot * wy);
}

Frame resize_bilinear(const Frame& f, std::size_t out_h, std::size_t out_w) {
    Frame out(out_h, out_w);
    out.intensity = resize_plane(f.intensity, f.height, f.width, out_h, out_w);
    return out;
}

Frame gaussian_blur(const Frame& f, double sigma) {
    if (sigma <= 1e-6) return f;
    const int r = std::max(1, static_cast<int>(std::lround(sigma * 2.5)));
    const std::vector<double> g = gaussian_kernel(r, sigma);
    Frame tmp(f.height, f.width), out(f.height, f.width);
    const std::ptrdiff_t nrows = static_cast<std::ptrdiff_t>(f.height);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t y = 0; y < nrows; ++y)
        for (std::size_t x = 0; x < f.width; ++x) {
            double s = 0;
            for (int k = -r; k <= r; ++k)
                s += g[k + r] * f.at_clamped(y, static_cast<std::ptrdiff_t>(x) + k);
            tmp.at(static_cast<std::size_t>(y), x) = static_cast<float>(s);
        }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t y = 0; y < nrows; ++y)
        for (std::size_t x = 0; x < f.width; ++x) {
            double s = 0;
            for (int k = -r; k <= r; ++k)
                s += g[k + r] * tmp.at_clamped(y + k, static_cast<std::ptrdiff_t>(x));
            out.at(static_cast<std::size_t>(y), x) = static_cast<float>(s);
        }
    return out;
}

Frame luminance_from_rgb(std::size_t h, std::size_t w, const std::vector<float>& rgb) {
    if (rgb.size() != h * w * 3) throw shape_error("luminance_from_rgb: buffer size mismatch");
    Frame out(h, w);
    for (std::size_t i = 0; i < h * w; ++i)
        out.intensity[i] = 0.299f * rgb[3 * i] + 0.587f * rgb[3 * i + 1] + 0.114f * rgb[3 * i + 2];
    return out;
}

PolyExpansion polynomial_expansion(const Frame& frame, int n, double sigma) {
    if (n < 1 || n % 2 == 0)
        throw format_error("polynomial_expansion: window half-size must be odd and >= 1");
    if (sigma <= 0) throw format_error("polynomial_expansion: sigma must be > 0");
    if (frame.height < static_cast<std::size_t>(2 * n + 1) ||
        frame.width < static_cast<std::size_t>(2 * n + 1))
        throw shape_error("polynomial_expansion: frame smaller than expansion window");

    const std::size_t h = frame.height, w = frame.width;
    const std::vector<double> g = gaussian_kernel(n, sigma);

    // Normal matrix over basis (1, x, y, x^2, y^2, xy); odd moments vanish.
    double s_w = 0, s_x2 = 0, s_x4 = 0, s_x2y2 = 0;
    for (int yy = -n; yy <= n; ++yy)
        for (int xx = -n; xx <= n; ++xx) {
            const double wgt = g[yy + n] * g[xx + n];
            s_w += wgt;
            s_x2 += wgt * xx * xx;
            s_x4 += wgt * xx * xx * xx * xx;
            s_x2y2 += wgt * xx * xx * yy * yy;
        }
    std::array<std::array<double, 6>, 6> G{};
    G[0][0] = s_w;
    G[1][1] = G[2][2] = s_x2;
    G[3][3] = G[4][4] = s_x4;
    G[5][5] = s_x2y2;
    G[0][3] = G[3][0] = G[0][4] = G[4][0] = s_x2;
    G[3][4] = G[4][3] = s_x2y2;
    const auto invG = invert6(G);

    PolyExpansion out;
    out.height = h;
    out.width = w;
    out.c.assign(h * w, 0.f);
    out.bx.assign(h * w, 0.f);
    out.by.assign(h * w, 0.f);
    out.axx.assign(h * w, 0.f);
    out.ayy.assign(h * w, 0.f);
    out.axy.assign(h * w, 0.f);

    // vertical pass: correlate columns with g, g*y, g*y^2
    std::vector<double> row0(h * w), row1(h * w), row2(h * w);
    const std::ptrdiff_t nrows = static_cast<std::ptrdiff_t>(h);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t y = 0; y < nrows; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double m0 = 0, m1 = 0, m2 = 0;
            for (int k = -n; k <= n; ++k) {
                const double f = frame.at_clamped(y + k, static_cast<std::ptrdiff_t>(x));
                const double gk = g[k + n];
                m0 += gk * f;
                m1 += gk * k * f;
                m2 += gk * k * k * f;
            }
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            row0[i] = m0;
            row1[i] = m1;
            row2[i] = m2;
        }

    // horizontal pass + solve
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t y = 0; y < nrows; ++y) {
        const std::size_t base = static_cast<std::size_t>(y) * w;
        auto clampx = [&](std::ptrdiff_t x) {
            return base + static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(x, 0, w - 1));
        };
        for (std::size_t x = 0; x < w; ++x) {
            double m_c = 0, m_x = 0, m_y = 0, m_xx = 0, m_yy = 0, m_xy = 0;
            for (int k = -n; k <= n; ++k) {
                const std::size_t j = clampx(static_cast<std::ptrdiff_t>(x) + k);
                const double gk = g[k + n];
                m_c += gk * row0[j];
                m_x += gk * k * row0[j];
                m_xx += gk * k * k * row0[j];
                m_y += gk * row1[j];
                m_xy += gk * k * row1[j];
                m_yy += gk * row2[j];
            }
            const double m[6] = {m_c, m_x, m_y, m_xx, m_yy, m_xy};
            double r[6];
            for (int a = 0; a < 6; ++a) {
                double s = 0;
                for (int b = 0; b < 6; ++b) s += invG[a][b] * m[b];
                r[a] = s;
            }
            const std::size_t i = base + x;
            out.c[i] = static_cast<float>(r[0]);
            out.bx[i] = static_cast<float>(r[1]);
            out.by[i] = static_cast<float>(r[2]);
            out.axx[i] = static_cast<float>(r[3]);
            out.ayy[i] = static_cast<float>(r[4]);
            out.axy[i] = static_cast<float>(r[5]);
        }
    }
    return out;
}

FlowField farneback_flow(const Frame& prev, const Frame& next, const FarnebackParams& params) {
    if (prev.height != next.height || prev.width != next.width)
        throw shape_error("farneback_flow: frame dimensions differ");
    if (prev.height == 0 || prev.width == 0) throw shape_error("farneback_flow: empty frame");

    const std::size_t h = prev.height, w = prev.width;
    const std::size_t win_px = static_cast<std::size_t>(2 * params.poly_n + 1);
    if (h < win_px || w < win_px)
        throw shape_error("farneback_flow: frame smaller than expansion window");

    // clip pyramid so the coarsest level stays workable
    int levels = std::max(1, params.levels);
    const std::size_t min_size = 32;
    while (levels > 1) {
        const double sc = std::pow(params.pyr_scale, levels - 1);
        if (std::min(h, w) * sc >= static_cast<double>(min_size)) break;
        --levels;
    }

    // Work in the classic 0..255 intensity range; the 2x2 solve regularizer
    // is calibrated for it and [0,1] inputs would be swamped by it.
    Frame prev_s = prev, next_s = next;
    for (float& v : prev_s.intensity) v *= 255.f;
    for (float& v : next_s.intensity) v *= 255.f;

    FlowField fl;
    std::size_t prev_lh = 0, prev_lw = 0;
    for (int k = levels - 1; k >= 0; --k) {
        const double sc = std::pow(params.pyr_scale, k);
        const std::size_t lh = k == 0 ? h : static_cast<std::size_t>(std::lround(h * sc));
        const std::size_t lw = k == 0 ? w : static_cast<std::size_t>(std::lround(w * sc));

        Frame i1, i2;
        if (k == 0) {
            i1 = prev_s;
            i2 = next_s;
        } else {
            const double blur_sigma = (1.0 / sc - 1.0) * 0.5;
            i1 = resize_bilinear(gaussian_blur(prev_s, blur_sigma), lh, lw);
            i2 = resize_bilinear(gaussian_blur(next_s, blur_sigma), lh, lw);
        }

        if (prev_lh == 0) {
            fl = FlowField(lh, lw);
        } else {
            FlowField up(lh, lw);
            up.u = resize_plane(fl.u, prev_lh, prev_lw, lh, lw);
            up.v = resize_plane(fl.v, prev_lh, prev_lw, lh, lw);
            const float ru = static_cast<float>(static_cast<double>(lw) / prev_lw);
            const float rv = static_cast<float>(static_cast<double>(lh) / prev_lh);
            for (auto& val : up.u) val *= ru;
            for (auto& val : up.v) val *= rv;
            fl = std::move(up);
        }

        const PolyExpansion r1 = polynomial_expansion(i1, params.poly_n, params.poly_sigma);
        const PolyExpansion r2 = polynomial_expansion(i2, params.poly_n, params.poly_sigma);
        NormalEq eq(lh, lw);
        const int m = std::max(1, params.win / 2);
        for (int it = 0; it < std::max(1, params.iters); ++it) {
            update_matrices(r1, r2, fl, eq);
            for (auto& plane : eq.m) box_blur_plane(plane, lh, lw, m);
            solve_flow(eq, fl);
        }
        prev_lh = lh;
        prev_lw = lw;
    }
    return fl;
}

PooledFlow pool_flow(const FlowField& field, std::size_t factor) {
    if (factor == 0 || field.height % factor != 0 || field.width % factor != 0)
        throw shape_error("pool_flow: factor " + std::to_string(factor) +
                          " does not divide field " + std::to_string(field.height) + "x" +
                          std::to_string(field.width));
    const std::size_t gh = field.height / factor, gw = field.width / factor;
    PooledFlow out(gh, gw);
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    const std::ptrdiff_t nrows = static_cast<std::ptrdiff_t>(gh);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t gy = 0; gy < nrows; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
            double su = 0, sv = 0;
            for (std::size_t dy = 0; dy < factor; ++dy) {
                const std::size_t y = static_cast<std::size_t>(gy) * factor + dy;
                const std::size_t rowbase = y * field.width + gx * factor;
                for (std::size_t dx = 0; dx < factor; ++dx) {
                    su += field.u[rowbase + dx];
                    sv += field.v[rowbase + dx];
                }
            }
            su *= inv;
            sv *= inv;
            const std::size_t i = static_cast<std::size_t>(gy) * gw + gx;
            out.magnitude[i] = static_cast<float>(std::hypot(su, sv));
            float dir = (su == 0.0 && sv == 0.0) ? 0.f : static_cast<float>(std::atan2(sv, su));
            if (dir >= static_cast<float>(M_PI)) dir = -static_cast<float>(M_PI);
            out.direction[i] = dir;
        }
    }
    return out;
}

std::vector<PooledFlow> preprocess_sequence(const std::vector<Frame>& frames,
                                            std::size_t pool_factor,
                                            const FarnebackParams& params) {
    if (frames.size() < 2)
        throw format_error("preprocess_sequence: need at least 2 frames, got " +
                           std::to_string(frames.size()));
    const std::size_t h = frames[0].height, w = frames[0].width;
    for (const Frame& f : frames)
        if (f.height != h || f.width != w)
            throw shape_error("preprocess_sequence: inconsistent frame dimensions");
    if (pool_factor == 0) {
        if (h % kPooledRows != 0 || w % kPooledCols != 0 || h / kPooledRows != w / kPooledCols)
            throw shape_error("preprocess_sequence: resolution " + std::to_string(h) + "x" +
                              std::to_string(w) + " is not a multiple of the 96x128 grid");
        pool_factor = h / kPooledRows;
    }

    std::vector<PooledFlow> out(frames.size() - 1);
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        out[i] = pool_flow(farneback_flow(frames[i], frames[i + 1], params), pool_factor);
    return out;
}

}  // namespace tact::flow

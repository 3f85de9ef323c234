#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "resfit/errors.hpp"

namespace resfit::detail {

struct LmOptions {
    int max_iterations = 200;
    double relative_tolerance = 1e-10;
    double damping_init = 1e-3;
    std::vector<double> scale; // per-parameter reference scales (>0)
    std::vector<double> lo;    // box bounds, applied after each step
    std::vector<double> hi;
};

struct LmResult {
    std::vector<double> params;
    double ssr = 0.0;
    int n_iterations = 0;
    bool converged = false;
    std::vector<double> jacobian;  // row-major n x p at the solution
    std::vector<double> residuals; // at the solution
};

// Solves (N + lambda diag(N)) dx = g for a dense symmetric p x p system.
// Returns false if elimination hits a zero pivot.
inline bool solve_damped(std::vector<double> n_mat, std::vector<double> g,
                         double lambda, std::size_t p, std::vector<double>& dx) {
    for (std::size_t i = 0; i < p; ++i) {
        n_mat[i * p + i] *= (1.0 + lambda);
        if (n_mat[i * p + i] == 0.0) {
            // Keep a flat direction solvable; the step component stays 0.
            n_mat[i * p + i] = 1e-300;
        }
    }
    for (std::size_t col = 0; col < p; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < p; ++r) {
            if (std::abs(n_mat[r * p + col]) > std::abs(n_mat[piv * p + col])) piv = r;
        }
        if (n_mat[piv * p + col] == 0.0) return false;
        if (piv != col) {
            for (std::size_t c = 0; c < p; ++c) {
                std::swap(n_mat[piv * p + c], n_mat[col * p + c]);
            }
            std::swap(g[piv], g[col]);
        }
        for (std::size_t r = col + 1; r < p; ++r) {
            const double m = n_mat[r * p + col] / n_mat[col * p + col];
            for (std::size_t c = col; c < p; ++c) {
                n_mat[r * p + c] -= m * n_mat[col * p + c];
            }
            g[r] -= m * g[col];
        }
    }
    dx.assign(p, 0.0);
    for (std::size_t i = p; i-- > 0;) {
        double s = g[i];
        for (std::size_t c = i + 1; c < p; ++c) s -= n_mat[i * p + c] * dx[c];
        dx[i] = s / n_mat[i * p + i];
    }
    return true;
}

// Inverts the symmetric p x p matrix by Gauss-Jordan with diagonal
// pre-scaling; returns false when the scaled pivot drops below 1e-12
// (rank deficiency at working precision).
inline bool invert_spd(const std::vector<double>& n_mat, std::size_t p,
                       std::vector<double>& inv) {
    std::vector<double> d(p);
    for (std::size_t i = 0; i < p; ++i) {
        const double nii = n_mat[i * p + i];
        if (!(nii > 0.0)) return false;
        d[i] = 1.0 / std::sqrt(nii);
    }
    // a = D N D has unit diagonal; invert a, then inv = D a^-1 D.
    std::vector<double> a(p * p);
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            a[r * p + c] = n_mat[r * p + c] * d[r] * d[c];
        }
    }
    std::vector<double> e(p * p, 0.0);
    for (std::size_t i = 0; i < p; ++i) e[i * p + i] = 1.0;
    for (std::size_t col = 0; col < p; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col; r < p; ++r) {
            if (std::abs(a[r * p + col]) > std::abs(a[piv * p + col])) piv = r;
        }
        if (std::abs(a[piv * p + col]) < 1e-12) return false;
        if (piv != col) {
            for (std::size_t c = 0; c < p; ++c) {
                std::swap(a[piv * p + c], a[col * p + c]);
                std::swap(e[piv * p + c], e[col * p + c]);
            }
        }
        const double inv_piv = 1.0 / a[col * p + col];
        for (std::size_t c = 0; c < p; ++c) {
            a[col * p + c] *= inv_piv;
            e[col * p + c] *= inv_piv;
        }
        for (std::size_t r = 0; r < p; ++r) {
            if (r == col) continue;
            const double m = a[r * p + col];
            if (m == 0.0) continue;
            for (std::size_t c = 0; c < p; ++c) {
                a[r * p + c] -= m * a[col * p + c];
                e[r * p + c] -= m * e[col * p + c];
            }
        }
    }
    inv.assign(p * p, 0.0);
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < p; ++c) {
            inv[r * p + c] = e[r * p + c] * d[r] * d[c];
        }
    }
    return true;
}

// Damped iterative least squares (Levenberg-Marquardt flavor) over a
// residual/Jacobian callback: eval(params, residuals, jacobian) where
// residuals = data - model and jacobian holds d(model)/d(param), row-major
// n x p. Convergence: accepted step with every |dx_i| below
// relative_tolerance * max(|p_i|, scale_i).
template <typename Eval>
LmResult lm_minimize(Eval&& eval, std::vector<double> params, const LmOptions& opt) {
    const std::size_t p = params.size();
    if (!opt.scale.empty() && opt.scale.size() != p) {
        throw data_error("lm_minimize: scale size mismatch");
    }
    const auto clamp_params = [&](std::vector<double>& v) {
        if (opt.lo.size() == p) {
            for (std::size_t i = 0; i < p; ++i) v[i] = std::max(v[i], opt.lo[i]);
        }
        if (opt.hi.size() == p) {
            for (std::size_t i = 0; i < p; ++i) v[i] = std::min(v[i], opt.hi[i]);
        }
    };
    clamp_params(params);

    std::vector<double> r;
    std::vector<double> jac;
    eval(params, r, jac);
    const std::size_t n = r.size();
    auto ssr_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return s;
    };
    double ssr = ssr_of(r);

    double lambda = opt.damping_init;
    LmResult out;
    out.params = params;
    out.ssr = ssr;
    out.jacobian = jac;
    out.residuals = r;

    std::vector<double> n_mat(p * p);
    std::vector<double> g(p);
    std::vector<double> dx;
    std::vector<double> trial(p);
    std::vector<double> r_trial;
    std::vector<double> jac_trial;

    for (int iter = 1; iter <= opt.max_iterations; ++iter) {
        out.n_iterations = iter;
        // Normal equations from the current Jacobian.
        std::fill(n_mat.begin(), n_mat.end(), 0.0);
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = &jac[i * p];
            for (std::size_t a = 0; a < p; ++a) {
                g[a] += row[a] * r[i];
                for (std::size_t b = a; b < p; ++b) {
                    n_mat[a * p + b] += row[a] * row[b];
                }
            }
        }
        for (std::size_t a = 0; a < p; ++a) {
            for (std::size_t b = 0; b < a; ++b) n_mat[a * p + b] = n_mat[b * p + a];
        }

        if (!solve_damped(n_mat, g, lambda, p, dx)) {
            lambda = std::min(lambda * 10.0, 1e14);
            continue;
        }
        for (std::size_t i = 0; i < p; ++i) trial[i] = params[i] + dx[i];
        clamp_params(trial);

        eval(trial, r_trial, jac_trial);
        const double ssr_trial = ssr_of(r_trial);
        if (ssr_trial <= ssr) {
            bool small = true;
            for (std::size_t i = 0; i < p; ++i) {
                const double ref =
                    std::max(std::abs(params[i]),
                             opt.scale.empty() ? 1.0 : opt.scale[i]);
                if (std::abs(trial[i] - params[i]) >
                    opt.relative_tolerance * ref) {
                    small = false;
                    break;
                }
            }
            params = trial;
            r = std::move(r_trial);
            jac = std::move(jac_trial);
            r_trial = {};
            jac_trial = {};
            ssr = ssr_trial;
            lambda = std::max(lambda / 3.0, 1e-14);
            out.params = params;
            out.ssr = ssr;
            out.jacobian = jac;
            out.residuals = r;
            if (small) {
                out.converged = true;
                return out;
            }
        } else {
            lambda = std::min(lambda * 4.0, 1e14);
        }
    }
    return out;
}

} // namespace resfit::detail

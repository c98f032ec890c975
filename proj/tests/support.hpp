// Independent reference computations shared by the test binaries.
#pragma once

#include "panelnow/midas_dict.hpp"
#include "panelnow/panel_data.hpp"
#include "panelnow/tuning.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

// Design with correlated columns, one group per block of `sizes`.
inline panelnow::MidasDesign random_design(std::mt19937_64& rng, int n, const std::vector<int>& sizes, int n_entities = 1,
                                           double corr = 0.3)
{
    std::normal_distribution<double> z;
    int p = 0;
    for (int s : sizes) p += s;
    panelnow::MidasDesign d;
    d.X.resize(n, p);
    VectorXd common(n);
    for (int r = 0; r < n; ++r) common(r) = z(rng);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < p; ++c) d.X(r, c) = std::sqrt(corr) * common(r) + std::sqrt(1.0 - corr) * z(rng);
    int g = 0;
    for (int s : sizes) {
        for (int k = 0; k < s; ++k) {
            d.column_group.push_back(g);
            d.column_names.push_back("x" + std::to_string(d.column_group.size()));
        }
        ++g;
    }
    for (int r = 0; r < n; ++r) {
        d.row_entity.push_back(r % n_entities);
        d.row_period.push_back(r / n_entities);
    }
    d.n_entities = n_entities;
    d.y = VectorXd::Zero(n);
    return d;
}

inline VectorXd sparse_response(std::mt19937_64& rng, const panelnow::MidasDesign& d, int active, double noise = 1.0)
{
    std::normal_distribution<double> z;
    VectorXd b = VectorXd::Zero(d.cols());
    for (int j = 0; j < std::min<int>(active, static_cast<int>(d.cols())); ++j) b(j) = (j % 2 ? -1.0 : 1.0) * (1.0 + 0.5 * j);
    VectorXd y = d.X * b;
    for (Eigen::Index r = 0; r < y.size(); ++r) y(r) += 0.7 + noise * z(rng);
    return y;
}

inline std::vector<int> all_rows(const panelnow::MidasDesign& d)
{
    std::vector<int> r(static_cast<std::size_t>(d.rows()));
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = static_cast<int>(k);
    return r;
}

// Least squares with an intercept column prepended; returns (intercept, slopes...).
inline VectorXd ols_with_intercept(const MatrixXd& X, const VectorXd& y)
{
    MatrixXd A(X.rows(), X.cols() + 1);
    A.col(0).setOnes();
    A.rightCols(X.cols()) = X;
    return A.colPivHouseholderQr().solve(y);
}

// Sum over groups of the l2 norm, and the l1 norm.
inline double group_norm_sum(const VectorXd& b, const std::vector<std::vector<int>>& groups)
{
    double s = 0.0;
    for (const auto& g : groups) {
        double q = 0.0;
        for (int j : g) q += b(j) * b(j);
        s += std::sqrt(q);
    }
    return s;
}

// 1/2 |u - v|^2 + t (gamma |u|_1 + (1 - gamma) sum_G |u_G|_2).
inline double prox_objective(const VectorXd& u, const VectorXd& v, const std::vector<std::vector<int>>& groups, double t,
                             double gamma)
{
    return 0.5 * (u - v).squaredNorm() + t * (gamma * u.lpNorm<1>() + (1.0 - gamma) * group_norm_sum(u, groups));
}

// ADMM on the split u = z: l1 part on u, group part on z.  Uses only the two elementary proxes.
inline VectorXd prox_admm(const VectorXd& v, const std::vector<std::vector<int>>& groups, double t, double gamma,
                          int iters = 20000)
{
    const double rho = 1.0;
    VectorXd u = v, z = v, w = VectorXd::Zero(v.size());
    for (int it = 0; it < iters; ++it) {
        // u = argmin 1/2|u-v|^2 + t gamma |u|_1 + rho/2 |u - z + w|^2
        const VectorXd c = (v + rho * (z - w)) / (1.0 + rho);
        const double thr = t * gamma / (1.0 + rho);
        for (Eigen::Index j = 0; j < u.size(); ++j)
            u(j) = std::copysign(std::max(std::abs(c(j)) - thr, 0.0), c(j));
        const VectorXd zold = z;
        const VectorXd a = u + w;
        for (const auto& g : groups) {
            double q = 0.0;
            for (int j : g) q += a(j) * a(j);
            const double nrm = std::sqrt(q);
            const double f = nrm > 0 ? std::max(0.0, 1.0 - t * (1.0 - gamma) / (rho * nrm)) : 0.0;
            for (int j : g) z(j) = f * a(j);
        }
        w += u - z;
        if ((u - z).norm() < 1e-15 && (z - zold).norm() < 1e-15) break;
    }
    return z;
}

// Coarse-to-fine grid search over R^2; slow but assumption-free.
inline Eigen::Vector2d grid_minimize_2d(const std::function<double(const Eigen::Vector2d&)>& f, Eigen::Vector2d centre,
                                        double half_width)
{
    for (int level = 0; level < 40; ++level) {
        Eigen::Vector2d best = centre;
        double fb = f(centre);
        const int m = 20;
        for (int i = -m; i <= m; ++i)
            for (int j = -m; j <= m; ++j) {
                const Eigen::Vector2d x = centre + half_width / m * Eigen::Vector2d(i, j);
                const double fx = f(x);
                if (fx < fb) {
                    fb = fx;
                    best = x;
                }
            }
        centre = best;
        half_width *= 0.25;
    }
    return centre;
}

// |y - A c|^2 / n + 2 lambda (gamma |c|_1 + (1 - gamma) sum_G |c_G|_2), every coefficient penalised.
inline double sg_objective(const MatrixXd& A, const VectorXd& y, const VectorXd& c,
                           const std::vector<std::vector<int>>& groups, double lambda, double gamma)
{
    const double n = static_cast<double>(y.size());
    return (y - A * c).squaredNorm() / n + 2.0 * lambda * (gamma * c.lpNorm<1>() + (1.0 - gamma) * group_norm_sum(c, groups));
}

// Accelerated proximal gradient with adaptive restart, restricted to the pure LASSO (gamma = 1)
// and pure group LASSO (gamma = 0) penalties whose proxes are elementary.
inline VectorXd fista_reference(const MatrixXd& A, const VectorXd& y, const std::vector<std::vector<int>>& groups,
                                double lambda, double gamma, int iters = 200000)
{
    const double n = static_cast<double>(y.size());
    const MatrixXd H = 2.0 * A.transpose() * A / n;
    const VectorXd b = 2.0 * A.transpose() * y / n;
    const double L = Eigen::SelfAdjointEigenSolver<MatrixXd>(H).eigenvalues().maxCoeff();
    const double step = 1.0 / L;
    auto prox = [&](VectorXd v) {
        const double t = 2.0 * lambda * step;
        if (gamma == 1.0) {
            for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = std::copysign(std::max(std::abs(v(j)) - t, 0.0), v(j));
        } else {
            for (const auto& g : groups) {
                double q = 0.0;
                for (int j : g) q += v(j) * v(j);
                const double f = q > 0 ? std::max(0.0, 1.0 - t / std::sqrt(q)) : 0.0;
                for (int j : g) v(j) *= f;
            }
        }
        return v;
    };
    VectorXd x = VectorXd::Zero(A.cols()), yk = x;
    double tk = 1.0;
    for (int it = 0; it < iters; ++it) {
        const VectorXd xn = prox(yk - step * (H * yk - b));
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
        if ((yk - xn).dot(xn - x) > 0) { // restart
            yk = xn;
            tk = 1.0;
        } else {
            yk = xn + (tk - 1.0) / tn * (xn - x);
            tk = tn;
        }
        const double moved = (xn - x).norm();
        x = xn;
        if (moved < 1e-15 * std::max(1.0, x.norm())) break;
    }
    return x;
}

// Type-7 quantile by sorting.
inline double sorted_quantile(std::vector<double> v, double p)
{
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// N entities, T periods, one monthly stream with a real MIDAS signal.
inline panelnow::MidasDesign toy_panel_design(int N, int T, std::uint64_t seed)
{
    using namespace panelnow;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    PanelDataset d;
    for (int i = 0; i < N; ++i) d.entity_ids.push_back("e" + std::to_string(i));
    const int total = T + 4;
    for (int p = 0; p < total; ++p) d.period_labels.push_back(p);
    CovariateStream s;
    s.name = "x";
    s.freq = {3, 4};
    s.values.resize(N, total * 3);
    for (int i = 0; i < N; ++i) {
        double prev = 0.0;
        for (int h = 0; h < total * 3; ++h) s.values(i, h) = prev = 0.6 * prev + z(rng);
    }
    d.covariates.push_back(s);
    d.targets.resize(N, total);
    d.observed = BoolMatrix::Constant(N, total, true);
    const auto w = beta_weights(12, 1.0, 3.0).values;
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < total; ++t) {
            double sig = 0.0;
            if (t >= 4)
                for (int j = 0; j < 12; ++j) sig += w(j) * s.values(i, t * 3 - 1 - j);
            d.targets(i, t) = 0.3 * i + 2.0 * sig + 0.5 * z(rng);
        }
    return build_design(d, legendre_dictionary(12, 3), Rational{0, 1}, 0, 4, total);
}

inline panelnow::TuningOptions tight(std::vector<double> gammas, int n_lambda)
{
    using namespace panelnow;
    TuningOptions o;
    o.grid.gammas = std::move(gammas);
    o.grid.n_lambda = n_lambda;
    o.solver.tol = 1e-12;
    o.solver.max_iter = 100000;
    return o;
}

// Fold loop written out directly: fit on out-of-fold rows, score the held-out rows.
inline double brute_force_cv(const panelnow::MidasDesign& d, const panelnow::FoldPlan& plan,
                             const panelnow::PenaltySpec& structure, double lambda, double gamma,
                             const panelnow::SolverOptions& so)
{
    using namespace panelnow;
    double sse = 0.0;
    int count = 0;
    for (int f = 0; f < plan.k; ++f) {
        std::vector<int> train, test;
        for (int r = 0; r < d.rows(); ++r)
            (plan.assignment[static_cast<std::size_t>(d.row_entity[static_cast<std::size_t>(r)])] == f ? test : train).push_back(r);
        const MidasDesign tr = d.subset(train);
        PenaltySpec s = structure;
        s.lambda = lambda;
        s.gamma = gamma;
        const FitResult fit_f = fit(tr, tr.y, s, so);
        std::map<int, std::pair<double, int>> resid;
        for (int r : test) {
            auto& acc = resid[d.row_entity[static_cast<std::size_t>(r)]];
            acc.first += d.y(r) - d.X.row(r).dot(fit_f.beta);
            acc.second += 1;
        }
        for (int r : test) {
            const int e = d.row_entity[static_cast<std::size_t>(r)];
            const double a = structure.intercept == InterceptMode::pooled ? fit_f.alpha(0) : resid[e].first / resid[e].second;
            const double err = d.y(r) - a - d.X.row(r).dot(fit_f.beta);
            sse += err * err;
            ++count;
        }
    }
    return sse / count;
}

} // namespace testsupport

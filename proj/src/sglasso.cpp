#include "panelnow/sglasso.hpp"

#include "panelnow/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace panelnow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double soft(double z, double t)
{
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

// Smallest lambda with |S(c, lambda a)|_2 <= lambda g.
double block_threshold(const Eigen::VectorXd& c, double a, double g)
{
    const double cinf = c.cwiseAbs().maxCoeff();
    if (cinf == 0.0) return 0.0;
    if (a <= 0.0 && g <= 0.0) return std::numeric_limits<double>::infinity();
    if (a <= 0.0) return c.norm() / g;
    if (g <= 0.0) return cinf / a;
    auto excess = [&](double lam) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < c.size(); ++j) {
            const double v = std::abs(c(j)) - lam * a;
            if (v > 0) s += v * v;
        }
        return std::sqrt(s) - lam * g;
    };
    double lo = 0.0, hi = cinf / a;
    for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) > 0 ? lo : hi) = mid;
    }
    return hi;
}

} // namespace

const char* to_string(PenaltyKind k) { return k == PenaltyKind::sg_lasso ? "sg_lasso" : "elastic_net"; }

const char* to_string(InterceptMode m)
{
    switch (m) {
    case InterceptMode::pooled: return "pooled";
    case InterceptMode::fixed_effects: return "fixed_effects";
    case InterceptMode::grouped_fixed_effects: return "grouped_fixed_effects";
    }
    return "unknown";
}

PenaltyKind penalty_kind_from_string(const std::string& s)
{
    if (s == "sg_lasso" || s == "sg-lasso") return PenaltyKind::sg_lasso;
    if (s == "elastic_net" || s == "elnet") return PenaltyKind::elastic_net;
    throw ValidationError("unknown penalty kind '" + s + "'");
}

InterceptMode intercept_mode_from_string(const std::string& s)
{
    if (s == "pooled") return InterceptMode::pooled;
    if (s == "fixed_effects" || s == "fe") return InterceptMode::fixed_effects;
    if (s == "grouped_fixed_effects" || s == "grouped_fe") return InterceptMode::grouped_fixed_effects;
    throw ValidationError("unknown intercept mode '" + s + "'");
}

void PenaltySpec::validate() const
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
}

int FitResult::df() const
{
    const int b0 = static_cast<int>(support.size());
    switch (intercept) {
    case InterceptMode::pooled: return b0 + 1;
    case InterceptMode::fixed_effects: {
        int n = 0;
        for (Eigen::Index i = 0; i < alpha.size(); ++i)
            if (!std::isnan(alpha(i))) ++n;
        return b0 + n;
    }
    case InterceptMode::grouped_fixed_effects: return b0 + alpha_nonzero;
    }
    return b0;
}

Eigen::VectorXd prox_sg(const Eigen::VectorXd& v, const std::vector<std::vector<int>>& groups, double step,
                        double lambda, double gamma)
{
    Eigen::VectorXd u = v;
    const double t1 = step * lambda * gamma;
    const double t2 = step * lambda * (1.0 - gamma);
    for (const auto& g : groups) {
        double norm2 = 0.0;
        for (int j : g) {
            u(j) = soft(v(j), t1);
            norm2 += u(j) * u(j);
        }
        const double norm = std::sqrt(norm2);
        const double shrink = norm > t2 ? 1.0 - t2 / norm : 0.0;
        for (int j : g) u(j) *= shrink;
    }
    return u;
}

std::vector<double> lambda_grid(double lambda_max, int size, double min_ratio)
{
    if (size < 2) throw ValidationError("lambda grid needs at least 2 points");
    if (!(min_ratio > 0.0 && min_ratio < 1.0)) throw ValidationError("lambda_min_ratio must lie in (0, 1)");
    std::vector<double> out(static_cast<std::size_t>(size));
    const double lo = std::log(min_ratio);
    for (int k = 0; k < size; ++k)
        out[static_cast<std::size_t>(k)] = lambda_max * std::exp(lo * k / (size - 1));
    out.back() = lambda_max * min_ratio;
    return out;
}

Problem::Problem(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& rows,
                 const PenaltySpec& structure)
    : spec_(structure)
{
    spec_.validate();
    if (y.size() != design.rows())
        throw DimensionError("y has " + std::to_string(y.size()) + " entries but the design has " +
                             std::to_string(design.rows()) + " rows");
    if (rows.empty()) throw ValidationError("no training rows");
    n_ = static_cast<int>(rows.size());
    p_ = static_cast<int>(design.cols());
    n_entities_ = std::max(design.n_entities, 1);
    for (int r : rows) {
        if (r < 0 || r >= design.rows()) throw DimensionError("row index out of range");
        if (!std::isfinite(y(r)) || !design.X.row(r).allFinite())
            throw ValidationError("missing value in training row " + std::to_string(r));
        n_entities_ = std::max(n_entities_, design.row_entity[static_cast<std::size_t>(r)] + 1);
    }

    std::vector<int> col_group = spec_.groups.empty() ? design.column_group : spec_.groups;
    if (static_cast<int>(col_group.size()) != p_)
        throw DimensionError("group map covers " + std::to_string(col_group.size()) + " of " + std::to_string(p_) +
                             " columns");

    // Intercept handling: either an explicit internal column block or a within transform.
    const bool within_pooled = spec_.intercept == InterceptMode::pooled && !spec_.penalize_intercept;
    const bool within_fe = spec_.intercept == InterceptMode::fixed_effects;

    Eigen::MatrixXd Z(n_, p_);
    Eigen::VectorXd yv(n_);
    for (int r = 0; r < n_; ++r) {
        Z.row(r) = design.X.row(rows[static_cast<std::size_t>(r)]);
        yv(r) = y(rows[static_cast<std::size_t>(r)]);
    }

    if (within_pooled) {
        xbar_ = Z.colwise().mean().transpose();
        ybar_ = yv.mean();
        Z.rowwise() -= xbar_.transpose();
        yv.array() -= ybar_;
    } else if (within_fe) {
        entity_xbar_ = Eigen::MatrixXd::Zero(n_entities_, p_);
        entity_ybar_ = Eigen::VectorXd::Zero(n_entities_);
        entity_count_.assign(static_cast<std::size_t>(n_entities_), 0);
        for (int r = 0; r < n_; ++r) {
            const int e = design.row_entity[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
            entity_xbar_.row(e) += Z.row(r);
            entity_ybar_(e) += yv(r);
            ++entity_count_[static_cast<std::size_t>(e)];
        }
        for (int e = 0; e < n_entities_; ++e) {
            const int c = entity_count_[static_cast<std::size_t>(e)];
            if (c > 0) {
                entity_xbar_.row(e) /= c;
                entity_ybar_(e) /= c;
            }
        }
        for (int r = 0; r < n_; ++r) {
            const int e = design.row_entity[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
            Z.row(r) -= entity_xbar_.row(e);
            yv(r) -= entity_ybar_(e);
        }
    }

    scale_ = Eigen::VectorXd::Ones(p_);
    if (spec_.standardize) {
        for (int j = 0; j < p_; ++j) {
            const double mean = Z.col(j).mean();
            const double sd = std::sqrt((Z.col(j).array() - mean).square().mean());
            if (sd > 1e-12 * std::max(1.0, std::abs(mean))) scale_(j) = sd;
        }
        for (int j = 0; j < p_; ++j) Z.col(j) /= scale_(j);
    }
    has_slopes_ = p_ > 0 && Z.cwiseAbs().maxCoeff() > 0.0;

    // Internal columns preceding the design columns.
    Eigen::MatrixXd lead;
    if (spec_.intercept == InterceptMode::pooled && spec_.penalize_intercept) {
        lead = Eigen::MatrixXd::Ones(n_, 1);
    } else if (spec_.intercept == InterceptMode::grouped_fixed_effects) {
        const std::vector<int>& labels =
            spec_.intercept_groups.empty() ? design.entity_group : spec_.intercept_groups;
        if (static_cast<int>(labels.size()) < n_entities_)
            throw ValidationError("grouped fixed effects need an industry group for every entity");
        std::vector<int> present(static_cast<std::size_t>(n_entities_), -1);
        for (int r = 0; r < n_; ++r) {
            const int e = design.row_entity[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
            if (present[static_cast<std::size_t>(e)] < 0) present[static_cast<std::size_t>(e)] = 0;
        }
        // Dummy columns ordered by industry group so that each group is contiguous.
        std::map<int, std::vector<int>> by_group;
        for (int e = 0; e < n_entities_; ++e)
            if (present[static_cast<std::size_t>(e)] == 0) by_group[labels[static_cast<std::size_t>(e)]].push_back(e);
        for (const auto& [g, ents] : by_group)
            for (int e : ents) {
                present[static_cast<std::size_t>(e)] = static_cast<int>(alpha_entity_.size());
                alpha_entity_.push_back(e);
            }
        lead = Eigen::MatrixXd::Zero(n_, static_cast<Eigen::Index>(alpha_entity_.size()));
        for (int r = 0; r < n_; ++r) {
            const int e = design.row_entity[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])];
            lead(r, present[static_cast<std::size_t>(e)]) = 1.0;
        }
        int col = 0;
        for (const auto& [g, ents] : by_group) {
            Block b;
            b.type = Block::Type::alpha;
            for (std::size_t k = 0; k < ents.size(); ++k) b.cols.push_back(col++);
            b.size_weight = std::sqrt(static_cast<double>(ents.size()));
            blocks_.push_back(std::move(b));
        }
    }
    offset_ = static_cast<int>(lead.cols());
    if (spec_.intercept == InterceptMode::pooled && spec_.penalize_intercept) {
        Block b;
        b.type = Block::Type::intercept;
        b.cols = {0};
        blocks_.push_back(std::move(b));
    }

    const int m = offset_ + p_;
    Eigen::MatrixXd full(n_, m);
    if (offset_ > 0) full.leftCols(offset_) = lead;
    full.rightCols(p_) = Z;
    gram_ = Eigen::MatrixXd::Zero(m, m);
    gram_.selfadjointView<Eigen::Lower>().rankUpdate(full.transpose(), 1.0 / n_);
    gram_.triangularView<Eigen::StrictlyUpper>() = gram_.transpose();
    xty_ = full.transpose() * yv / n_;
    yty_ = yv.squaredNorm() / n_;
    if (spec_.intercept == InterceptMode::pooled && spec_.penalize_intercept) {
        const double mean = yv.mean();
        null_rss_ = (yv.array() - mean).square().sum();
    } else {
        null_rss_ = yv.squaredNorm();
    }

    // Slope blocks: design groups for sg-LASSO, single coordinates for the elastic net.
    if (spec_.kind == PenaltyKind::elastic_net) {
        for (int j = 0; j < p_; ++j) {
            Block b;
            b.cols = {offset_ + j};
            blocks_.push_back(std::move(b));
        }
    } else {
        int ng = 0;
        for (int g : col_group) {
            if (g < 0) throw ValidationError("negative group id");
            ng = std::max(ng, g + 1);
        }
        std::vector<std::vector<int>> members(static_cast<std::size_t>(ng));
        for (int j = 0; j < p_; ++j) members[static_cast<std::size_t>(col_group[static_cast<std::size_t>(j)])].push_back(offset_ + j);
        for (auto& cols : members) {
            if (cols.empty()) continue;
            Block b;
            b.cols = std::move(cols);
            blocks_.push_back(std::move(b));
        }
    }

    col_block_.assign(static_cast<std::size_t>(m), -1);
    singletons_ = true;
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        for (int j : blocks_[bi].cols) col_block_[static_cast<std::size_t>(j)] = static_cast<int>(bi);
        singletons_ = singletons_ && blocks_[bi].cols.size() == 1;
    }
    for (int j = 0; j < m; ++j)
        if (col_block_[static_cast<std::size_t>(j)] < 0) singletons_ = false;

    for (auto& b : blocks_) {
        const auto s = static_cast<Eigen::Index>(b.cols.size());
        b.q.resize(s, s);
        for (Eigen::Index a = 0; a < s; ++a)
            for (Eigen::Index c = 0; c < s; ++c) b.q(a, c) = gram_(b.cols[static_cast<std::size_t>(a)], b.cols[static_cast<std::size_t>(c)]);
        if (s == 1) {
            b.lipschitz = b.q(0, 0);
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.q, Eigen::EigenvaluesOnly);
            b.lipschitz = es.eigenvalues().maxCoeff();
        }
    }
}

Problem::Weights Problem::weights(const Block& b, double lambda, double gamma) const
{
    Weights w;
    switch (b.type) {
    case Block::Type::alpha:
        w.group = lambda * b.size_weight;
        break;
    case Block::Type::intercept:
    case Block::Type::slope:
        if (spec_.kind == PenaltyKind::sg_lasso) {
            w.l1 = lambda * gamma;
            w.group = lambda * (1.0 - gamma);
        } else {
            w.l1 = lambda * gamma;
            w.ridge = lambda * (1.0 - gamma);
        }
        break;
    }
    return w;
}

double Problem::lambda_max(double gamma) const
{
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
    if (!has_slopes_ && offset_ == 0) throw NumericalError("lambda_max: design is identically zero");
    // The elastic net at gamma = 0 never zeroes coefficients; borrow the gamma = 1e-3 bound.
    const double g_eff = spec_.kind == PenaltyKind::elastic_net ? std::max(gamma, 1e-3) : gamma;
    double lmax = 0.0;
    for (const auto& b : blocks_) {
        Eigen::VectorXd c(static_cast<Eigen::Index>(b.cols.size()));
        for (std::size_t k = 0; k < b.cols.size(); ++k) c(static_cast<Eigen::Index>(k)) = xty_(b.cols[k]);
        const Weights w = weights(b, 1.0, g_eff);
        lmax = std::max(lmax, block_threshold(c, w.l1, w.group));
    }
    return lmax;
}

double Problem::sweep(Eigen::VectorXd& theta, Eigen::VectorXd& grad, double lambda, double gamma,
                      const std::vector<char>* only, double tol) const
{
    double max_change = 0.0;
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        if (only && !(*only)[bi]) continue;
        const Block& b = blocks_[bi];
        if (b.lipschitz <= 0.0) continue;
        const Weights w = weights(b, lambda, gamma);
        if (b.cols.size() == 1) {
            const int j = b.cols[0];
            const double q = b.q(0, 0);
            const double z = q * theta(j) - grad(j);
            const double nv = soft(z, w.l1 + w.group) / (q + w.ridge);
            const double d = nv - theta(j);
            if (d != 0.0) {
                grad.noalias() += gram_.col(j) * d;
                theta(j) = nv;
                max_change = std::max(max_change, std::abs(d) * q);
            }
            continue;
        }
        const auto s = static_cast<Eigen::Index>(b.cols.size());
        Eigen::VectorXd tb(s), gb(s);
        for (Eigen::Index k = 0; k < s; ++k) {
            tb(k) = theta(b.cols[static_cast<std::size_t>(k)]);
            gb(k) = grad(b.cols[static_cast<std::size_t>(k)]);
        }
        if (tb.isZero(0.0)) {
            double n2 = 0.0;
            for (Eigen::Index k = 0; k < s; ++k) {
                const double v = soft(gb(k), w.l1);
                n2 += v * v;
            }
            if (std::sqrt(n2) <= w.group) continue;
        }
        const Eigen::VectorXd t0 = tb;
        const double step = 1.0 / b.lipschitz;
        Eigen::VectorXd u(s);
        for (int inner = 0; inner < 1000; ++inner) {
            double n2 = 0.0;
            for (Eigen::Index k = 0; k < s; ++k) {
                u(k) = soft(tb(k) - step * gb(k), step * w.l1);
                n2 += u(k) * u(k);
            }
            const double nu = std::sqrt(n2);
            const double shrink = nu > step * w.group ? (1.0 - step * w.group / nu) / (1.0 + step * w.ridge) : 0.0;
            u *= shrink;
            const Eigen::VectorXd d = u - tb;
            const double dmax = d.cwiseAbs().maxCoeff();
            if (dmax == 0.0) break;
            gb.noalias() += b.q * d;
            tb = u;
            if (dmax * b.lipschitz < 0.01 * tol) break;
        }
        const Eigen::VectorXd delta = tb - t0;
        for (Eigen::Index k = 0; k < s; ++k) {
            const double d = delta(k);
            if (d == 0.0) continue;
            const int j = b.cols[static_cast<std::size_t>(k)];
            grad.noalias() += gram_.col(j) * d;
            theta(j) = tb(k);
            max_change = std::max(max_change, std::abs(d) * gram_(j, j));
        }
    }
    return max_change;
}

double Problem::kkt_internal(const Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lambda,
                             double gamma) const
{
    double worst = 0.0;
    std::vector<char> covered(static_cast<std::size_t>(theta.size()), 0);
    for (const auto& b : blocks_) {
        const Weights w = weights(b, lambda, gamma);
        double tn2 = 0.0;
        for (int j : b.cols) {
            tn2 += theta(j) * theta(j);
            covered[static_cast<std::size_t>(j)] = 1;
        }
        if (tn2 == 0.0) {
            double n2 = 0.0;
            for (int j : b.cols) {
                const double v = soft(grad(j), w.l1);
                n2 += v * v;
            }
            worst = std::max(worst, std::sqrt(n2) - w.group);
            continue;
        }
        const double tn = std::sqrt(tn2);
        for (int j : b.cols) {
            if (theta(j) != 0.0) {
                const double r = grad(j) + w.l1 * (theta(j) > 0 ? 1.0 : -1.0) + w.group * theta(j) / tn +
                                 w.ridge * theta(j);
                worst = std::max(worst, std::abs(r));
            } else {
                worst = std::max(worst, std::abs(grad(j)) - w.l1);
            }
        }
    }
    for (Eigen::Index j = 0; j < theta.size(); ++j)
        if (!covered[static_cast<std::size_t>(j)]) worst = std::max(worst, std::abs(grad(j)));
    return std::max(worst, 0.0);
}

double Problem::penalty_internal(const Eigen::VectorXd& theta, double lambda, double gamma) const
{
    double pen = 0.0;
    for (const auto& b : blocks_) {
        const Weights w = weights(b, lambda, gamma);
        double l1 = 0.0, l2 = 0.0;
        for (int j : b.cols) {
            l1 += std::abs(theta(j));
            l2 += theta(j) * theta(j);
        }
        pen += w.l1 * l1 + w.group * std::sqrt(l2) + 0.5 * w.ridge * l2;
    }
    return pen;
}

FitResult Problem::to_result(const Eigen::VectorXd& theta, double lambda, double gamma) const
{
    FitResult f;
    f.lambda = lambda;
    f.gamma = gamma;
    f.intercept = spec_.intercept;
    f.state = theta;
    f.n_obs = n_;
    f.beta = theta.tail(p_).cwiseQuotient(scale_);
    for (int j = 0; j < p_; ++j)
        if (f.beta(j) != 0.0) f.support.push_back(j);
    switch (spec_.intercept) {
    case InterceptMode::pooled:
        f.alpha.resize(1);
        f.alpha(0) = spec_.penalize_intercept ? theta(0) : ybar_ - xbar_.dot(f.beta);
        break;
    case InterceptMode::fixed_effects:
        f.alpha = Eigen::VectorXd::Constant(n_entities_, kNaN);
        for (int e = 0; e < n_entities_; ++e)
            if (entity_count_[static_cast<std::size_t>(e)] > 0)
                f.alpha(e) = entity_ybar_(e) - entity_xbar_.row(e).dot(f.beta);
        break;
    case InterceptMode::grouped_fixed_effects:
        f.alpha = Eigen::VectorXd::Constant(n_entities_, kNaN);
        for (std::size_t k = 0; k < alpha_entity_.size(); ++k) {
            f.alpha(alpha_entity_[k]) = theta(static_cast<Eigen::Index>(k));
            if (theta(static_cast<Eigen::Index>(k)) != 0.0) ++f.alpha_nonzero;
        }
        break;
    }
    const Eigen::VectorXd qt = gram_ * theta;
    const double rss_n = std::max(yty_ - 2.0 * xty_.dot(theta) + theta.dot(qt), 0.0);
    f.rss = rss_n * n_;
    f.objective = rss_n + 2.0 * penalty_internal(theta, lambda, gamma);
    return f;
}

Eigen::VectorXd Problem::to_internal(const FitResult& fit) const
{
    if (fit.state.size() == offset_ + p_) return fit.state;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(offset_ + p_);
    if (fit.beta.size() != p_) throw DimensionError("fit does not match the design width");
    theta.tail(p_) = fit.beta.cwiseProduct(scale_);
    if (spec_.intercept == InterceptMode::pooled && spec_.penalize_intercept) theta(0) = fit.alpha(0);
    if (spec_.intercept == InterceptMode::grouped_fixed_effects)
        for (std::size_t k = 0; k < alpha_entity_.size(); ++k)
            theta(static_cast<Eigen::Index>(k)) = fit.alpha(alpha_entity_[k]);
    return theta;
}

FitResult Problem::solve(double lambda, double gamma, const SolverOptions& opts, const FitResult* warm) const
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be finite and >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
    const int m = offset_ + p_;
    Eigen::VectorXd theta = warm ? to_internal(*warm) : Eigen::VectorXd::Zero(m);
    Eigen::VectorXd grad = gram_ * theta - xty_;
    std::vector<char> active(blocks_.size(), 0);
    std::vector<double> trace;
    auto loss = [&]() { return 0.5 * (theta.dot(grad) - xty_.dot(theta)) + 0.5 * yty_; };

    // Singleton problems: once coordinate descent stalls, try a direct solve on the support.
    constexpr double polish_at = 1e-5;
    constexpr int polish_delay = 8;
    int iter = 0;
    bool converged = false;
    double kkt = kkt_internal(theta, grad, lambda, gamma);
    if (opts.record_trace) trace.push_back(2.0 * (loss() + penalty_internal(theta, lambda, gamma)));
    if (kkt <= opts.tol) converged = true;
    while (!converged && iter < opts.max_iter) {
        sweep(theta, grad, lambda, gamma, nullptr, opts.tol);
        ++iter;
        if (opts.record_trace) trace.push_back(2.0 * (loss() + penalty_internal(theta, lambda, gamma)));
        for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
            bool nz = false;
            for (int j : blocks_[bi].cols) nz = nz || theta(j) != 0.0;
            active[bi] = nz;
        }
        int next_polish = singletons_ ? iter + polish_delay : opts.max_iter + 1;
        int gap = 2 * polish_delay;
        while (iter < opts.max_iter) {
            const double change = sweep(theta, grad, lambda, gamma, &active, opts.tol);
            ++iter;
            if (opts.record_trace) trace.push_back(2.0 * (loss() + penalty_internal(theta, lambda, gamma)));
            if (change < 0.1 * opts.tol) break;
            if (iter >= next_polish && change < polish_at) {
                if (polish(theta, lambda, gamma)) {
                    grad = gram_ * theta - xty_;
                    if (opts.record_trace) trace.push_back(2.0 * (loss() + penalty_internal(theta, lambda, gamma)));
                    break;
                }
                next_polish = iter + gap;
                gap = std::min(2 * gap, 256);
            }
        }
        grad = gram_ * theta - xty_;
        kkt = kkt_internal(theta, grad, lambda, gamma);
        converged = kkt <= opts.tol;
    }
    FitResult f = to_result(theta, lambda, gamma);
    f.kkt = kkt;
    f.iterations = iter;
    f.converged = converged;
    f.trace = std::move(trace);
    return f;
}

bool Problem::polish(Eigen::VectorXd& theta, double lambda, double gamma) const
{
    // With every block a single coordinate and the signs of the support fixed, the objective
    // is a quadratic on the support; solve it directly and keep it only if no sign flips.
    std::vector<int> act;
    for (Eigen::Index j = 0; j < theta.size(); ++j)
        if (theta(j) != 0.0) act.push_back(static_cast<int>(j));
    if (act.empty()) return false;
    const auto a = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd m(a, a);
    Eigen::VectorXd rhs(a);
    for (Eigen::Index r = 0; r < a; ++r) {
        const int j = act[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < a; ++c) m(r, c) = gram_(j, act[static_cast<std::size_t>(c)]);
        const Weights w = weights(blocks_[static_cast<std::size_t>(col_block_[static_cast<std::size_t>(j)])], lambda, gamma);
        const double sgn = theta(j) > 0 ? 1.0 : -1.0;
        m(r, r) += w.ridge;
        rhs(r) = xty_(j) - (w.l1 + w.group) * sgn;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd sol = llt.solve(rhs);
    if (!sol.allFinite()) return false;
    for (Eigen::Index r = 0; r < a; ++r) {
        const double old = theta(act[static_cast<std::size_t>(r)]);
        if (sol(r) == 0.0 || (sol(r) > 0) != (old > 0)) return false;
    }
    Eigen::VectorXd cand = theta;
    for (Eigen::Index r = 0; r < a; ++r) cand(act[static_cast<std::size_t>(r)]) = sol(r);
    auto value = [&](const Eigen::VectorXd& t) {
        return 0.5 * t.dot(gram_ * t) - xty_.dot(t) + penalty_internal(t, lambda, gamma);
    };
    if (value(cand) > value(theta)) return false;
    theta = std::move(cand);
    return true;
}

RegPath Problem::path(double gamma, const std::vector<double>& lambdas, const SolverOptions& opts,
                      bool stop_on_saturation) const
{
    RegPath p;
    const FitResult* warm = nullptr;
    double prev_rss = null_rss_;
    for (double lam : lambdas) {
        p.fits.push_back(solve(lam, gamma, opts, warm));
        p.lambdas.push_back(lam);
        warm = &p.fits.back();
        if (stop_on_saturation && null_rss_ > 0.0) {
            const double rss = p.fits.back().rss;
            const double dev_ratio = 1.0 - rss / null_rss_;
            const bool flat = p.fits.size() > 1 && (prev_rss - rss) < 1e-5 * null_rss_;
            if (dev_ratio > 0.999 || flat) {
                p.truncated = p.lambdas.size() < lambdas.size();
                break;
            }
            prev_rss = rss;
        }
    }
    return p;
}

double Problem::kkt_residual(const FitResult& fit) const
{
    const Eigen::VectorXd theta = to_internal(fit);
    const Eigen::VectorXd grad = gram_ * theta - xty_;
    return kkt_internal(theta, grad, fit.lambda, fit.gamma);
}

double Problem::objective(const FitResult& fit) const
{
    const Eigen::VectorXd theta = to_internal(fit);
    const double rss_n = yty_ - 2.0 * xty_.dot(theta) + theta.dot(gram_ * theta);
    return rss_n + 2.0 * penalty_internal(theta, fit.lambda, fit.gamma);
}

namespace {

std::vector<int> all_rows(const MidasDesign& design, const Eigen::VectorXd& y)
{
    if (y.size() != design.rows())
        throw DimensionError("y has " + std::to_string(y.size()) + " entries but the design has " +
                             std::to_string(design.rows()) + " rows");
    std::vector<int> rows(static_cast<std::size_t>(design.rows()));
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
}

} // namespace

FitResult fit(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec, const SolverOptions& opts)
{
    Problem prob(design, y, all_rows(design, y), spec);
    return prob.solve(spec.lambda, spec.gamma, opts);
}

double lambda_max(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec)
{
    Problem prob(design, y, all_rows(design, y), spec);
    return prob.lambda_max(spec.gamma);
}

RegPath fit_path(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec, int grid_size,
                 double lambda_min_ratio, const SolverOptions& opts)
{
    Problem prob(design, y, all_rows(design, y), spec);
    return prob.path(spec.gamma, lambda_grid(prob.lambda_max(spec.gamma), grid_size, lambda_min_ratio), opts);
}

FitResult fit_elastic_net(const MidasDesign& design, const Eigen::VectorXd& y, double lambda, double gamma,
                          InterceptMode mode, const SolverOptions& opts)
{
    PenaltySpec spec;
    spec.kind = PenaltyKind::elastic_net;
    spec.lambda = lambda;
    spec.gamma = gamma;
    spec.intercept = mode;
    return fit(design, y, spec, opts);
}

double kkt_residual(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec, const FitResult& fit)
{
    FitResult f = fit;
    f.state.resize(0);
    return Problem(design, y, all_rows(design, y), spec).kkt_residual(f);
}

double objective_value(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec,
                       const FitResult& fit)
{
    FitResult f = fit;
    f.state.resize(0);
    return Problem(design, y, all_rows(design, y), spec).objective(f);
}

double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x, int entity, const FitResult& fit)
{
    const double a = fit.alpha.size() == 1 ? fit.alpha(0) : fit.alpha(entity);
    return a + x.dot(fit.beta);
}

Eigen::VectorXd predict(const MidasDesign& design, const std::vector<int>& rows, const FitResult& fit)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k)
        out(static_cast<Eigen::Index>(k)) =
            predict_row(design.X.row(rows[k]), design.row_entity[static_cast<std::size_t>(rows[k])], fit);
    return out;
}

std::string fit_to_json(const FitResult& fit, const MidasDesign* design)
{
    auto num = [](double v) -> nlohmann::ordered_json {
        if (std::isfinite(v)) return v;
        return nullptr;
    };
    nlohmann::ordered_json j;
    j["lambda"] = fit.lambda;
    j["gamma"] = fit.gamma;
    j["intercept_mode"] = to_string(fit.intercept);
    j["alpha"] = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < fit.alpha.size(); ++i) j["alpha"].push_back(num(fit.alpha(i)));
    j["beta"] = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < fit.beta.size(); ++i) j["beta"].push_back(fit.beta(i));
    if (design && static_cast<Eigen::Index>(design->column_names.size()) == fit.beta.size())
        j["columns"] = design->column_names;
    j["support"] = fit.support;
    j["df"] = fit.df();
    j["objective"] = fit.objective;
    j["rss"] = fit.rss;
    j["n_obs"] = fit.n_obs;
    j["diagnostics"] = {{"kkt_residual", fit.kkt}, {"iterations", fit.iterations}, {"converged", fit.converged}};
    return j.dump(2) + "\n";
}

} // namespace panelnow

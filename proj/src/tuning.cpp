#include "panelnow/tuning.hpp"

#include "panelnow/error.hpp"
#include "panelnow/io_util.hpp"
#include "panelnow/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace panelnow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

const char* to_string(Criterion c)
{
    switch (c) {
    case Criterion::cv: return "cv";
    case Criterion::bic: return "bic";
    case Criterion::aic: return "aic";
    case Criterion::aicc: return "aicc";
    }
    return "unknown";
}

Criterion criterion_from_string(const std::string& s)
{
    if (s == "cv") return Criterion::cv;
    if (s == "bic") return Criterion::bic;
    if (s == "aic") return Criterion::aic;
    if (s == "aicc") return Criterion::aicc;
    throw ValidationError("unknown selection criterion '" + s + "'");
}

FoldPlan FoldPlan::blocked(int n_units, int k)
{
    if (k < 2) throw ValidationError("CV needs at least 2 folds");
    if (n_units < k)
        throw ValidationError("cannot split " + std::to_string(n_units) + " units into " + std::to_string(k) +
                              " folds");
    FoldPlan p;
    p.k = k;
    p.assignment.resize(static_cast<std::size_t>(n_units));
    for (int u = 0; u < n_units; ++u)
        p.assignment[static_cast<std::size_t>(u)] =
            static_cast<int>(static_cast<long>(u) * k / n_units);
    return p;
}

FoldPlan FoldPlan::shuffled(int n_units, int k, std::uint64_t seed)
{
    FoldPlan base = blocked(n_units, k);
    std::vector<int> perm(static_cast<std::size_t>(n_units));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    for (int i = n_units - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
    }
    FoldPlan p = base;
    for (int u = 0; u < n_units; ++u)
        p.assignment[static_cast<std::size_t>(perm[static_cast<std::size_t>(u)])] = base.assignment[static_cast<std::size_t>(u)];
    return p;
}

FoldPlan FoldPlan::from_folds(const std::vector<std::vector<int>>& folds, int n_units)
{
    FoldPlan p;
    p.k = static_cast<int>(folds.size());
    p.assignment.assign(static_cast<std::size_t>(n_units), -1);
    for (int f = 0; f < p.k; ++f)
        for (int u : folds[static_cast<std::size_t>(f)]) {
            if (u < 0 || u >= n_units) throw ValidationError("fold plan names unknown unit " + std::to_string(u));
            if (p.assignment[static_cast<std::size_t>(u)] >= 0)
                throw ValidationError("unit " + std::to_string(u) + " appears in more than one fold");
            p.assignment[static_cast<std::size_t>(u)] = f;
        }
    p.validate(n_units);
    return p;
}

void FoldPlan::validate(int n_units) const
{
    if (k < 2) throw ValidationError("CV needs at least 2 folds");
    if (static_cast<int>(assignment.size()) != n_units)
        throw ValidationError("fold plan covers " + std::to_string(assignment.size()) + " units, expected " +
                              std::to_string(n_units));
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (std::size_t u = 0; u < assignment.size(); ++u) {
        const int f = assignment[u];
        if (f < 0 || f >= k) throw ValidationError("unit " + std::to_string(u) + " is not assigned to a fold");
        ++count[static_cast<std::size_t>(f)];
    }
    for (int f = 0; f < k; ++f)
        if (count[static_cast<std::size_t>(f)] == 0) throw ValidationError("fold " + std::to_string(f) + " is empty");
}

std::vector<int> FoldPlan::members(int fold) const
{
    std::vector<int> out;
    for (std::size_t u = 0; u < assignment.size(); ++u)
        if (assignment[u] == fold) out.push_back(static_cast<int>(u));
    return out;
}

void TuningGrid::validate() const
{
    if (gammas.empty()) throw ValidationError("gamma grid is empty");
    for (double g : gammas)
        if (!(g >= 0.0 && g <= 1.0)) throw ValidationError("gamma grid values must lie in [0, 1]");
    if (n_lambda < 2) throw ValidationError("n_lambda must be >= 2");
    if (!(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0))
        throw ValidationError("lambda_min_ratio must lie in (0, 1)");
}

double bic_value(double rss, double nt, double sigma2, double df)
{
    return rss / (nt * sigma2) + std::log(nt) / nt * df;
}

double aic_value(double rss, double nt, double sigma2, double df) { return rss / (nt * sigma2) + 2.0 / nt * df; }

double aicc_value(double rss, double nt, double sigma2, double df)
{
    const double denom = nt - df - 1.0;
    if (denom <= 0.0) return kInf;
    return rss / (nt * sigma2) + 2.0 * df / denom;
}

double criterion_value(Criterion c, double rss, double nt, double sigma2, double df)
{
    switch (c) {
    case Criterion::bic: return bic_value(rss, nt, sigma2, df);
    case Criterion::aic: return aic_value(rss, nt, sigma2, df);
    case Criterion::aicc: return aicc_value(rss, nt, sigma2, df);
    case Criterion::cv: break;
    }
    throw ValidationError("cv is not an information criterion");
}

std::vector<int> row_folds(const MidasDesign& design, const std::vector<int>& rows, const FoldPlan& plan, CvUnit unit)
{
    std::vector<int> out(rows.size());
    if (unit == CvUnit::entity) {
        plan.validate(std::max(design.n_entities, 1));
        for (std::size_t r = 0; r < rows.size(); ++r)
            out[r] = plan.assignment[static_cast<std::size_t>(design.row_entity[static_cast<std::size_t>(rows[r])])];
        return out;
    }
    std::set<int> periods;
    for (int r : rows) periods.insert(design.row_period[static_cast<std::size_t>(r)]);
    plan.validate(static_cast<int>(periods.size()));
    std::map<int, int> rank;
    for (int p : periods) rank.emplace(p, static_cast<int>(rank.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        out[r] = plan.assignment[static_cast<std::size_t>(rank[design.row_period[static_cast<std::size_t>(rows[r])]])];
    return out;
}

namespace {

struct FoldOutcome {
    // [gamma][lambda] held-out sum of squared errors; NaN past a truncated path
    std::vector<std::vector<double>> sse;
    double count = 0.0;
    int nonconverged = 0;
};

FoldOutcome run_fold(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& train,
                     const std::vector<int>& test, const PenaltySpec& structure, const TuningOptions& opts,
                     const std::vector<std::vector<double>>& grids)
{
    FoldOutcome out;
    Problem prob(design, y, train, structure);
    out.count = static_cast<double>(test.size());
    const bool fe = structure.intercept != InterceptMode::pooled;
    for (std::size_t g = 0; g < opts.grid.gammas.size(); ++g) {
        const RegPath path = prob.path(opts.grid.gammas[g], grids[g], opts.solver, opts.grid.stop_on_saturation);
        std::vector<double> sse(grids[g].size(), kNaN);
        for (std::size_t l = 0; l < path.fits.size(); ++l) {
            const FitResult& f = path.fits[l];
            if (!f.converged) ++out.nonconverged;
            std::map<int, std::pair<double, int>> own; // held-out entity -> (sum of y - x b, count)
            Eigen::VectorXd xb(static_cast<Eigen::Index>(test.size()));
            for (std::size_t k = 0; k < test.size(); ++k) {
                xb(static_cast<Eigen::Index>(k)) = design.X.row(test[k]).dot(f.beta);
                if (fe) {
                    auto& acc = own[design.row_entity[static_cast<std::size_t>(test[k])]];
                    acc.first += y(test[k]) - xb(static_cast<Eigen::Index>(k));
                    acc.second += 1;
                }
            }
            double s = 0.0;
            for (std::size_t k = 0; k < test.size(); ++k) {
                const int e = design.row_entity[static_cast<std::size_t>(test[k])];
                double a = 0.0;
                if (!fe) {
                    a = f.alpha(0);
                } else if (e < f.alpha.size() && std::isfinite(f.alpha(e))) {
                    a = f.alpha(e);
                } else if (opts.heldout == HeldoutIntercept::own_mean) {
                    const auto& acc = own[e];
                    a = acc.first / acc.second;
                }
                const double err = y(test[k]) - a - xb(static_cast<Eigen::Index>(k));
                s += err * err;
            }
            sse[l] = s;
        }
        out.sse.push_back(std::move(sse));
    }
    return out;
}

void finish_report(TuningReport& rep, const std::vector<double>& gammas, int n_lambda)
{
    double best = kInf;
    int best_idx = -1;
    rep.best_per_gamma.clear();
    for (std::size_t g = 0; g < gammas.size(); ++g) {
        double gb = kInf;
        int gi = -1;
        for (int l = 0; l < n_lambda; ++l) {
            const auto idx = static_cast<int>(g) * n_lambda + l;
            const auto& cv = rep.surface[static_cast<std::size_t>(idx)];
            if (!cv.finite) continue;
            if (cv.value < gb) {
                gb = cv.value;
                gi = idx;
            }
        }
        if (gi < 0) throw NumericalError(std::string("no finite ") + to_string(rep.criterion) + " value for gamma " +
                                         io::format_double(gammas[g]));
        rep.best_per_gamma.push_back(rep.surface[static_cast<std::size_t>(gi)]);
        if (gb < best) {
            best = gb;
            best_idx = gi;
        }
    }
    rep.best = rep.surface[static_cast<std::size_t>(best_idx)];
    if (rep.best.lambda_index == 0 || rep.best.lambda_index == n_lambda - 1) {
        rep.boundary = true;
        rep.warnings.push_back(std::string(to_string(rep.criterion)) + " selected lambda at the grid boundary (index " +
                               std::to_string(rep.best.lambda_index) + ")");
    }
}

} // namespace

std::vector<TuningReport> tune(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& rows,
                               const PenaltySpec& structure, const std::vector<Criterion>& criteria,
                               const TuningOptions& opts, const FoldPlan* plan)
{
    opts.grid.validate();
    if (criteria.empty()) throw ValidationError("no selection criterion requested");
    const auto& gammas = opts.grid.gammas;
    const int G = static_cast<int>(gammas.size());
    const int L = opts.grid.n_lambda;
    const double nt = static_cast<double>(rows.size());

    Problem full(design, y, rows, structure);
    std::vector<std::vector<double>> grids;
    for (double g : gammas) {
        double lmax = full.lambda_max(g);
        if (!(lmax > 0.0)) lmax = 1e-12;
        grids.push_back(lambda_grid(lmax, L, opts.grid.lambda_min_ratio));
    }

    const bool want_cv = std::find(criteria.begin(), criteria.end(), Criterion::cv) != criteria.end();

    // Full-sample paths, plus one job per CV fold.
    std::vector<RegPath> paths(static_cast<std::size_t>(G));
    std::vector<FoldOutcome> folds;
    std::vector<std::vector<int>> train, test;
    if (want_cv) {
        FoldPlan local;
        int n_units = 0;
        if (opts.unit == CvUnit::entity) {
            n_units = std::max(design.n_entities, 1);
        } else {
            std::set<int> periods;
            for (int r : rows) periods.insert(design.row_period[static_cast<std::size_t>(r)]);
            n_units = static_cast<int>(periods.size());
        }
        if (!plan) local = FoldPlan::blocked(n_units, opts.folds);
        const FoldPlan& fp = plan ? *plan : local;
        const std::vector<int> rf = row_folds(design, rows, fp, opts.unit);
        train.assign(static_cast<std::size_t>(fp.k), {});
        test.assign(static_cast<std::size_t>(fp.k), {});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (int f = 0; f < fp.k; ++f)
                (rf[r] == f ? test : train)[static_cast<std::size_t>(f)].push_back(rows[r]);
        }
        for (int f = 0; f < fp.k; ++f) {
            if (test[static_cast<std::size_t>(f)].empty())
                throw ValidationError("CV fold " + std::to_string(f) + " holds out no observations");
            if (train[static_cast<std::size_t>(f)].empty())
                throw ValidationError("CV fold " + std::to_string(f) + " leaves an empty training set");
            if (opts.unit == CvUnit::entity && structure.intercept != InterceptMode::pooled) {
                std::set<int> ents;
                for (int r : train[static_cast<std::size_t>(f)]) ents.insert(design.row_entity[static_cast<std::size_t>(r)]);
                if (ents.size() < 2)
                    throw ValidationError("CV fold " + std::to_string(f) + " leaves fewer than 2 training entities");
            }
        }
        folds.resize(static_cast<std::size_t>(fp.k));
    }

    const int jobs = G + static_cast<int>(folds.size());
    parallel_for(jobs, opts.threads, [&](int j) {
        if (j < G) {
            paths[static_cast<std::size_t>(j)] = full.path(gammas[static_cast<std::size_t>(j)], grids[static_cast<std::size_t>(j)], opts.solver,
                                                           opts.grid.stop_on_saturation);
        } else {
            const auto f = static_cast<std::size_t>(j - G);
            folds[f] = run_fold(design, y, train[f], test[f], structure, opts, grids);
        }
    });

    int full_nonconv = 0;
    for (const auto& p : paths)
        for (const auto& f : p.fits)
            if (!f.converged) ++full_nonconv;

    std::vector<TuningReport> out;
    for (Criterion c : criteria) {
        TuningReport rep;
        rep.criterion = c;
        rep.nonconverged = full_nonconv;
        if (c == Criterion::cv) {
            double count = 0.0;
            for (const auto& f : folds) {
                count += f.count;
                rep.nonconverged += f.nonconverged;
            }
            for (int g = 0; g < G; ++g)
                for (int l = 0; l < L; ++l) {
                    CriterionValue cv;
                    cv.criterion = c;
                    cv.gamma = gammas[static_cast<std::size_t>(g)];
                    cv.lambda = grids[static_cast<std::size_t>(g)][static_cast<std::size_t>(l)];
                    cv.gamma_index = g;
                    cv.lambda_index = l;
                    double s = 0.0;
                    for (const auto& f : folds) s += f.sse[static_cast<std::size_t>(g)][static_cast<std::size_t>(l)];
                    cv.value = s / count;
                    cv.finite = std::isfinite(cv.value);
                    const auto& p = paths[static_cast<std::size_t>(g)];
                    cv.df_hat = static_cast<std::size_t>(l) < p.fits.size() ? p.fits[static_cast<std::size_t>(l)].df() : kNaN;
                    cv.sigma2_hat = kNaN;
                    rep.surface.push_back(cv);
                }
        } else {
            for (int g = 0; g < G; ++g) {
                const auto& p = paths[static_cast<std::size_t>(g)];
                double ref = kNaN;
                if (opts.sigma2 == Sigma2Rule::path_reference) {
                    for (std::size_t l = 0; l < p.fits.size(); ++l) {
                        const double df = p.fits[l].df();
                        if (df <= nt / 2.0) ref = p.fits[l].rss / (nt - df);
                    }
                    if (std::isnan(ref)) ref = p.fits.front().rss / std::max(nt - p.fits.front().df(), 1.0);
                    ref = std::max(ref, 1e-12);
                }
                for (int l = 0; l < L; ++l) {
                    CriterionValue cv;
                    cv.criterion = c;
                    cv.gamma = gammas[static_cast<std::size_t>(g)];
                    cv.lambda = grids[static_cast<std::size_t>(g)][static_cast<std::size_t>(l)];
                    cv.gamma_index = g;
                    cv.lambda_index = l;
                    if (static_cast<std::size_t>(l) >= p.fits.size()) {
                        cv.value = kNaN;
                        cv.df_hat = kNaN;
                        cv.sigma2_hat = kNaN;
                        cv.finite = false;
                    } else {
                        const FitResult& f = p.fits[static_cast<std::size_t>(l)];
                        cv.df_hat = f.df();
                        cv.sigma2_hat = opts.sigma2 == Sigma2Rule::per_point
                                            ? std::max(nt - cv.df_hat > 0 ? f.rss / (nt - cv.df_hat) : kInf, 1e-12)
                                            : ref;
                        cv.value = criterion_value(c, f.rss, nt, cv.sigma2_hat, cv.df_hat);
                        cv.finite = std::isfinite(cv.value);
                    }
                    rep.surface.push_back(cv);
                }
            }
        }
        finish_report(rep, gammas, L);
        for (const auto& b : rep.best_per_gamma)
            rep.fit_per_gamma.push_back(paths[static_cast<std::size_t>(b.gamma_index)].fits[static_cast<std::size_t>(b.lambda_index)]);
        rep.fit = paths[static_cast<std::size_t>(rep.best.gamma_index)].fits[static_cast<std::size_t>(rep.best.lambda_index)];
        out.push_back(std::move(rep));
    }
    return out;
}

TuningReport cv_select(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& rows,
                       const PenaltySpec& structure, const TuningOptions& opts, const FoldPlan* plan)
{
    return std::move(tune(design, y, rows, structure, {Criterion::cv}, opts, plan).front());
}

TuningReport ic_select(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& rows,
                       const PenaltySpec& structure, Criterion criterion, const TuningOptions& opts)
{
    if (criterion == Criterion::cv) throw ValidationError("ic_select needs bic, aic or aicc");
    return std::move(tune(design, y, rows, structure, {criterion}, opts).front());
}

std::string tuning_report_json(const TuningReport& report)
{
    auto num = [](double v) -> nlohmann::ordered_json {
        if (std::isfinite(v)) return v;
        if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
        return nullptr;
    };
    auto row = [&](const CriterionValue& c) {
        nlohmann::ordered_json j;
        j["criterion"] = to_string(c.criterion);
        j["gamma"] = c.gamma;
        j["lambda"] = c.lambda;
        j["value"] = num(c.value);
        j["df"] = num(c.df_hat);
        j["sigma2"] = num(c.sigma2_hat);
        return j;
    };
    nlohmann::ordered_json j;
    j["criterion"] = to_string(report.criterion);
    j["selected"] = row(report.best);
    j["boundary"] = report.boundary;
    j["nonconverged_fits"] = report.nonconverged;
    j["warnings"] = report.warnings;
    j["best_per_gamma"] = nlohmann::ordered_json::array();
    for (const auto& b : report.best_per_gamma) j["best_per_gamma"].push_back(row(b));
    j["surface"] = nlohmann::ordered_json::array();
    for (const auto& s : report.surface) j["surface"].push_back(row(s));
    j["fit"] = nlohmann::ordered_json::parse(fit_to_json(report.fit));
    return j.dump(2) + "\n";
}

std::string tuning_surface_csv(const std::vector<TuningReport>& reports)
{
    std::string out = "criterion,gamma,lambda_index,lambda,value,df,sigma2,selected\n";
    for (const auto& r : reports)
        for (const auto& s : r.surface) {
            const bool sel = s.gamma_index == r.best.gamma_index && s.lambda_index == r.best.lambda_index;
            out += std::string(to_string(s.criterion)) + "," + io::format_double(s.gamma) + "," +
                   std::to_string(s.lambda_index) + "," + io::format_double(s.lambda) + "," +
                   io::format_double(s.value) + "," + io::format_double(s.df_hat) + "," +
                   io::format_double(s.sigma2_hat) + "," + (sel ? "1" : "0") + "\n";
        }
    return out;
}

} // namespace panelnow

#include "panelnow/nowcast_eval.hpp"

#include "panelnow/error.hpp"
#include "panelnow/io_util.hpp"
#include "panelnow/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <set>

namespace panelnow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

std::string cell(double v)
{
    if (!std::isfinite(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

const Eigen::MatrixXd& require_series(const PanelDataset& d, const std::string& name)
{
    const Eigen::MatrixXd* s = d.find_series(name);
    if (!s) throw ValidationError("panel has no series '" + name + "'");
    return *s;
}

bool row_finite(const MidasDesign& d, int r) { return d.X.row(r).allFinite(); }

PenaltySpec structure_for(const NowcastModel& m)
{
    PenaltySpec s;
    s.kind = m.penalty;
    s.penalize_intercept = m.penalize_intercept;
    s.standardize = m.standardize;
    switch (m.kind) {
    case ModelKind::individual:
    case ModelKind::pooled: s.intercept = InterceptMode::pooled; break;
    case ModelKind::fixed_effects: s.intercept = InterceptMode::fixed_effects; break;
    case ModelKind::grouped_fixed_effects: s.intercept = InterceptMode::grouped_fixed_effects; break;
    }
    return s;
}

Dictionary dictionary_for(const NowcastModel& m, int k_max)
{
    if (m.penalty == PenaltyKind::elastic_net) return unrestricted_dictionary(k_max);
    return make_dictionary(m.dictionary, k_max, m.degree);
}

int common_k_max(const PanelDataset& data)
{
    if (data.covariates.empty()) throw ValidationError("nowcasting needs at least one covariate stream");
    const int k = data.covariates.front().freq.k_max();
    for (const auto& c : data.covariates)
        if (c.freq.k_max() != k)
            throw ValidationError("covariate streams must share one lag window length for a single dictionary");
    return k;
}

double mse_of(const Eigen::MatrixXd& err) { return panel_mse(err); }

Eigen::MatrixXd mask_like(const Eigen::MatrixXd& err, const Eigen::MatrixXd& mask)
{
    Eigen::MatrixXd out = err;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index t = 0; t < out.cols(); ++t)
            if (!std::isfinite(mask(i, t))) out(i, t) = kNaN;
    return out;
}

Eigen::MatrixXd drop_entities(const Eigen::MatrixXd& err, const std::vector<int>& entities)
{
    Eigen::MatrixXd out = err;
    for (int i : entities) out.row(i).setConstant(kNaN);
    return out;
}

} // namespace

const char* to_string(ModelKind k)
{
    switch (k) {
    case ModelKind::individual: return "individual";
    case ModelKind::pooled: return "pooled";
    case ModelKind::fixed_effects: return "fixed_effects";
    case ModelKind::grouped_fixed_effects: return "grouped_fixed_effects";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& s)
{
    if (s == "individual") return ModelKind::individual;
    if (s == "pooled") return ModelKind::pooled;
    if (s == "fixed_effects" || s == "fe") return ModelKind::fixed_effects;
    if (s == "grouped_fixed_effects" || s == "grouped_fe") return ModelKind::grouped_fixed_effects;
    throw ValidationError("unknown model kind '" + s + "'");
}

std::string NowcastModel::label() const
{
    if (!name.empty()) return name;
    return std::string(to_string(kind)) + "_" + to_string(criterion);
}

void NowcastModel::validate() const
{
    if (degree < 1) throw ValidationError("model.degree must be >= 1");
    if (ar_lags < 0) throw ValidationError("model.ar_lags must be >= 0");
    tuning.grid.validate();
    if (tuning.folds < 2) throw ValidationError("model.folds must be >= 2");
}

void EvalPlan::validate(const PanelDataset& data) const
{
    if (initial_window < 1) throw ValidationError("plan.initial_window must be >= 1");
    if (initial_window >= data.n_periods())
        throw ValidationError("plan.initial_window " + std::to_string(initial_window) + " leaves no evaluation periods in " +
                              std::to_string(data.n_periods()));
    if (horizon_offsets.empty()) throw ValidationError("plan.horizon_offsets must not be empty");
    for (int h : horizon_offsets) horizon_tau(data, h);
    if (threads < 1) throw ValidationError("plan.threads must be >= 1");
}

int EvalPlan::evaluation_periods(const PanelDataset& data) const { return data.n_periods() - initial_window; }

Rational horizon_tau(const PanelDataset& data, int offset)
{
    if (data.covariates.empty()) throw ValidationError("horizons need at least one covariate stream");
    const int nh = data.covariates.front().freq.n_high;
    for (const auto& c : data.covariates)
        if (c.freq.n_high != nh) throw ValidationError("horizon offsets need streams with a common n_high");
    if (offset < 0 || offset > nh)
        throw ValidationError("horizon offset " + std::to_string(offset) + " outside [0, " + std::to_string(nh) + "]");
    return Rational{nh - offset, nh};
}

Predictions expanding_nowcast(const PanelDataset& data, const NowcastModel& model, const EvalPlan& plan,
                              int horizon_offset)
{
    model.validate();
    plan.validate(data);
    const Rational tau = horizon_tau(data, horizon_offset);
    const int k_max = common_k_max(data);
    const int first = first_usable_period(data, tau, model.ar_lags);
    if (plan.initial_window <= first)
        throw ValidationError("plan.initial_window must exceed the first usable period " + std::to_string(first));
    if (model.kind == ModelKind::grouped_fixed_effects && !data.has_groups())
        throw ValidationError("grouped fixed effects need group labels");

    const int N = data.n_entities();
    const int T = data.n_periods();
    const MidasDesign design = build_design(data, dictionary_for(model, k_max), tau, model.ar_lags, first, T);
    const PenaltySpec structure = structure_for(model);

    std::vector<std::vector<int>> rows_at(static_cast<std::size_t>(T));
    for (int r = 0; r < static_cast<int>(design.rows()); ++r)
        rows_at[static_cast<std::size_t>(design.row_period[static_cast<std::size_t>(r)])].push_back(r);

    Predictions out;
    out.method = model.label();
    out.target = data.target_name;
    out.horizon = horizon_offset;
    out.first_eval = plan.initial_window;
    out.values = Eigen::MatrixXd::Constant(N, T, kNaN);
    const int n_eval = T - plan.initial_window;
    const bool panel = model.kind != ModelKind::individual;
    if (panel) out.fits.resize(static_cast<std::size_t>(n_eval));
    std::vector<int> nonconv(static_cast<std::size_t>(n_eval), 0);

    TuningOptions topts = model.tuning;
    topts.threads = 1;
    if (!panel) topts.unit = CvUnit::time_block;
    const std::vector<Criterion> crit{model.criterion};

    parallel_for(n_eval, plan.threads, [&](int e) {
        const int t = plan.initial_window + e;
        std::vector<int> train;
        for (int p = first; p < t; ++p)
            for (int r : rows_at[static_cast<std::size_t>(p)])
                if (std::isfinite(design.y(r)) && row_finite(design, r)) train.push_back(r);
        for (int r : train)
            if (design.row_period[static_cast<std::size_t>(r)] >= t)
                throw LookAheadError("training row dated at or after the nowcast period");
        const auto& target_rows = rows_at[static_cast<std::size_t>(t)];
        if (panel) {
            FitResult f = tune(design, design.y, train, structure, crit, topts).front().fit;
            if (!f.converged) ++nonconv[static_cast<std::size_t>(e)];
            for (int r : target_rows) {
                if (!row_finite(design, r)) continue;
                const int i = design.row_entity[static_cast<std::size_t>(r)];
                out.values(i, t) = predict_row(design.X.row(r), i, f);
            }
            out.fits[static_cast<std::size_t>(e)] = std::move(f);
            return;
        }
        std::vector<std::vector<int>> by_entity(static_cast<std::size_t>(N));
        for (int r : train) by_entity[static_cast<std::size_t>(design.row_entity[static_cast<std::size_t>(r)])].push_back(r);
        for (int r : target_rows) {
            if (!row_finite(design, r)) continue;
            const int i = design.row_entity[static_cast<std::size_t>(r)];
            const auto& own = by_entity[static_cast<std::size_t>(i)];
            if (static_cast<int>(own.size()) < 2 * topts.folds) continue;
            const FitResult f = tune(design, design.y, own, structure, crit, topts).front().fit;
            if (!f.converged) ++nonconv[static_cast<std::size_t>(e)];
            out.values(i, t) = predict_row(design.X.row(r), 0, f);
        }
    });

    for (int c : nonconv) out.nonconverged += c;
    for (int i = 0; i < N; ++i)
        for (int t = plan.initial_window; t < T; ++t)
            if (data.observed(i, t) && !std::isfinite(out.values(i, t))) ++out.excluded;
    return out;
}

Predictions rw_benchmark(const PanelDataset& data, int first_eval)
{
    Predictions p;
    p.method = "RW";
    p.target = data.target_name;
    p.first_eval = first_eval;
    p.values = Eigen::MatrixXd::Constant(data.n_entities(), data.n_periods(), kNaN);
    for (int i = 0; i < data.n_entities(); ++i)
        for (int t = std::max(first_eval, 1); t < data.n_periods(); ++t) {
            if (data.observed(i, t - 1)) p.values(i, t) = data.targets(i, t - 1);
            else if (data.observed(i, t)) ++p.excluded;
        }
    return p;
}

Predictions consensus_benchmark(const PanelDataset& data, const std::string& series, int first_eval)
{
    const Eigen::MatrixXd& c = require_series(data, series);
    Predictions p;
    p.method = "Consensus";
    p.target = data.target_name;
    p.first_eval = first_eval;
    p.values = Eigen::MatrixXd::Constant(data.n_entities(), data.n_periods(), kNaN);
    for (int i = 0; i < data.n_entities(); ++i)
        for (int t = std::max(first_eval, 0); t < data.n_periods(); ++t) {
            if (std::isfinite(c(i, t))) p.values(i, t) = c(i, t);
            else if (data.observed(i, t)) ++p.excluded;
        }
    return p;
}

void validate_decomposition(const PanelDataset& data, const std::string& return_series,
                            const std::string& error_series, double tol)
{
    const Eigen::MatrixXd& r = require_series(data, return_series);
    const Eigen::MatrixXd& e = require_series(data, error_series);
    const Eigen::MatrixXd* off = data.known_offsets();
    if (!off) throw ValidationError("panel has no known_offset series");
    for (int i = 0; i < data.n_entities(); ++i)
        for (int t = 0; t < data.n_periods(); ++t) {
            if (!data.observed(i, t)) continue;
            const double gap = data.targets(i, t) - (r(i, t) - e(i, t) + (*off)(i, t));
            if (!(std::abs(gap) <= tol))
                throw ValidationError("decomposition identity fails for entity '" + data.entity_ids[static_cast<std::size_t>(i)] +
                                      "' period " + std::to_string(data.period_labels[static_cast<std::size_t>(t)]) +
                                      " (gap " + io::format_double(gap) + ")");
        }
}

Eigen::MatrixXd aggregate_components(const Eigen::MatrixXd& r_hat, const Eigen::MatrixXd& e_hat,
                                     const Eigen::MatrixXd& offset)
{
    if (r_hat.rows() != e_hat.rows() || r_hat.cols() != e_hat.cols() || r_hat.rows() != offset.rows() ||
        r_hat.cols() != offset.cols())
        throw DimensionError("component predictions and offsets are not aligned");
    return r_hat - e_hat + offset;
}

MseDecomposition decompose_mse(const Eigen::MatrixXd& r, const Eigen::MatrixXd& r_hat, const Eigen::MatrixXd& e,
                               const Eigen::MatrixXd& e_hat, const Eigen::MatrixXd& offset)
{
    for (const Eigen::MatrixXd* m : {&r_hat, &e, &e_hat, &offset})
        if (m->rows() != r.rows() || m->cols() != r.cols()) throw DimensionError("decomposition inputs are not aligned");
    MseDecomposition d;
    double ss = 0.0, sr = 0.0, se = 0.0, sc = 0.0;
    for (Eigen::Index i = 0; i < r.rows(); ++i)
        for (Eigen::Index t = 0; t < r.cols(); ++t) {
            const double er = r(i, t) - r_hat(i, t);
            const double ee = e(i, t) - e_hat(i, t);
            const double pe = r(i, t) - e(i, t) + offset(i, t);
            const double s_hat = r_hat(i, t) - e_hat(i, t) + offset(i, t);
            const double es = pe - s_hat;
            if (!std::isfinite(er) || !std::isfinite(ee) || !std::isfinite(es)) continue;
            ss += es * es;
            sr += er * er;
            se += ee * ee;
            sc += er * ee;
            ++d.n;
        }
    if (d.n == 0) return d;
    const double n = d.n;
    d.mse_s = ss / n;
    d.mse_r = sr / n;
    d.mse_e = se / n;
    d.cross = sc / n;
    d.gap = d.mse_s - (d.mse_r + d.mse_e - 2.0 * d.cross);
    return d;
}

Eigen::MatrixXd forecast_errors(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& predicted, int first_eval)
{
    if (actual.rows() != predicted.rows() || actual.cols() != predicted.cols())
        throw DimensionError("actual and predicted panels differ in shape");
    Eigen::MatrixXd e = Eigen::MatrixXd::Constant(actual.rows(), actual.cols(), kNaN);
    for (Eigen::Index i = 0; i < actual.rows(); ++i)
        for (Eigen::Index t = std::max<Eigen::Index>(first_eval, 0); t < actual.cols(); ++t) {
            const double v = actual(i, t) - predicted(i, t);
            if (std::isfinite(v)) e(i, t) = v;
        }
    return e;
}

std::vector<Eigen::MatrixXd> common_cells(const std::vector<Eigen::MatrixXd>& errs)
{
    if (errs.empty()) return {};
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(errs.front().rows(), errs.front().cols());
    for (const auto& e : errs) {
        if (e.rows() != mask.rows() || e.cols() != mask.cols()) throw DimensionError("error panels differ in shape");
        for (Eigen::Index i = 0; i < e.rows(); ++i)
            for (Eigen::Index t = 0; t < e.cols(); ++t)
                if (!std::isfinite(e(i, t))) mask(i, t) = kNaN;
    }
    std::vector<Eigen::MatrixXd> out;
    for (const auto& e : errs) out.push_back(mask_like(e, mask));
    return out;
}

Eigen::VectorXd entity_mse(const Eigen::MatrixXd& err)
{
    Eigen::VectorXd m(err.rows());
    for (Eigen::Index i = 0; i < err.rows(); ++i) {
        double s = 0.0;
        int n = 0;
        for (Eigen::Index t = 0; t < err.cols(); ++t)
            if (std::isfinite(err(i, t))) {
                s += err(i, t) * err(i, t);
                ++n;
            }
        m(i) = n ? s / n : kNaN;
    }
    return m;
}

double panel_mse(const Eigen::MatrixXd& err)
{
    const Eigen::VectorXd m = entity_mse(err);
    double s = 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < m.size(); ++i)
        if (std::isfinite(m(i))) {
            s += m(i);
            ++n;
        }
    return n ? s / n : kNaN;
}

DmResult dm_test(const std::vector<double>& err_a, const std::vector<double>& err_b)
{
    if (err_a.size() != err_b.size()) throw DimensionError("DM test needs equal-length error series");
    if (err_a.size() < 2) throw ValidationError("DM test needs at least two observations");
    std::vector<double> d;
    for (std::size_t t = 0; t < err_a.size(); ++t) {
        if (!std::isfinite(err_a[t]) || !std::isfinite(err_b[t])) continue;
        d.push_back(err_a[t] * err_a[t] - err_b[t] * err_b[t]);
    }
    DmResult res;
    res.n = static_cast<int>(d.size());
    res.clusters = 1;
    if (res.n < 2) throw ValidationError("DM test needs at least two aligned observations");
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= res.n;
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    var /= res.n;
    res.mean_diff = mean;
    if (var == 0.0) {
        if (mean == 0.0) return res;
        throw NumericalError("DM statistic undefined: loss differential has zero variance and nonzero mean");
    }
    res.statistic = mean / std::sqrt(var / res.n);
    res.p_value = normal_cdf(res.statistic);
    return res;
}

DmResult dm_test_pooled(const Eigen::MatrixXd& err_a, const Eigen::MatrixXd& err_b)
{
    if (err_a.rows() != err_b.rows() || err_a.cols() != err_b.cols())
        throw DimensionError("DM test needs aligned error panels");
    std::vector<std::vector<double>> by_entity;
    DmResult res;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < err_a.rows(); ++i) {
        std::vector<double> d;
        for (Eigen::Index t = 0; t < err_a.cols(); ++t) {
            const double a = err_a(i, t), b = err_b(i, t);
            if (!std::isfinite(a) || !std::isfinite(b)) continue;
            d.push_back(a * a - b * b);
            sum += d.back();
        }
        if (!d.empty()) by_entity.push_back(std::move(d));
    }
    for (const auto& d : by_entity) res.n += static_cast<int>(d.size());
    res.clusters = static_cast<int>(by_entity.size());
    if (res.n < 2) throw ValidationError("DM test needs at least two aligned observations");
    const double mean = sum / res.n;
    res.mean_diff = mean;
    double var = 0.0;
    for (const auto& d : by_entity) {
        double s = 0.0;
        for (double v : d) s += v - mean;
        var += s * s;
    }
    var /= static_cast<double>(res.n) * res.n;
    if (var == 0.0) {
        bool all_zero = true;
        for (const auto& d : by_entity)
            for (double v : d) all_zero = all_zero && v == 0.0;
        if (all_zero) return res;
        throw NumericalError("DM statistic undefined: loss differential has zero clustered variance");
    }
    res.statistic = mean / std::sqrt(var);
    res.p_value = normal_cdf(res.statistic);
    return res;
}

Eigen::VectorXd group_intercepts(const FitResult& fit, const std::vector<int>& entity_group, int n_groups)
{
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_groups);
    Eigen::VectorXi count = Eigen::VectorXi::Zero(n_groups);
    if (fit.alpha.size() == 1) return Eigen::VectorXd::Constant(n_groups, fit.alpha(0));
    if (static_cast<std::size_t>(fit.alpha.size()) != entity_group.size())
        throw DimensionError("fit has " + std::to_string(fit.alpha.size()) + " intercepts for " +
                             std::to_string(entity_group.size()) + " labelled entities");
    for (std::size_t i = 0; i < entity_group.size(); ++i) {
        const int g = entity_group[i];
        if (g < 0 || g >= n_groups) throw ValidationError("group label out of range");
        const double a = fit.alpha(static_cast<Eigen::Index>(i));
        if (!std::isfinite(a)) continue;
        sum(g) += a;
        ++count(g);
    }
    Eigen::VectorXd out(n_groups);
    for (int g = 0; g < n_groups; ++g) out(g) = count(g) ? sum(g) / count(g) : kNaN;
    return out;
}

Predictions impute_and_nowcast(const Predictions& trained, const PanelDataset& train, const PanelDataset& heldout,
                               const NowcastModel& model)
{
    if (trained.fits.empty()) throw ValidationError("imputation needs per-period panel fits");
    if (!train.has_groups() || !heldout.has_groups()) throw ValidationError("imputation needs group labels on both panels");
    if (heldout.n_periods() != train.n_periods()) throw ValidationError("held-out panel must share the training periods");
    const std::set<int> known(train.group_labels.begin(), train.group_labels.end());
    std::string unseen;
    for (int i = 0; i < heldout.n_entities(); ++i)
        if (!known.count(heldout.group_labels[static_cast<std::size_t>(i)]))
            unseen += (unseen.empty() ? "" : ", ") + heldout.entity_ids[static_cast<std::size_t>(i)];
    if (!unseen.empty()) throw ValidationError("held-out entities with groups unseen in training: " + unseen);
    const int n_groups = *std::max_element(train.group_labels.begin(), train.group_labels.end()) + 1;

    const Rational tau = horizon_tau(heldout, trained.horizon);
    const int first = first_usable_period(heldout, tau, model.ar_lags);
    const int T = heldout.n_periods();
    const MidasDesign design = build_design(heldout, dictionary_for(model, common_k_max(heldout)), tau, model.ar_lags,
                                            first, T);
    Predictions out;
    out.method = trained.method + "_imputed";
    out.target = heldout.target_name;
    out.horizon = trained.horizon;
    out.first_eval = trained.first_eval;
    out.values = Eigen::MatrixXd::Constant(heldout.n_entities(), T, kNaN);
    for (int r = 0; r < static_cast<int>(design.rows()); ++r) {
        const int t = design.row_period[static_cast<std::size_t>(r)];
        const int e = t - trained.first_eval;
        if (e < 0 || e >= static_cast<int>(trained.fits.size())) continue;
        if (!row_finite(design, r)) continue;
        const FitResult& f = trained.fits[static_cast<std::size_t>(e)];
        if (f.beta.size() != design.cols()) throw DimensionError("trained slopes do not match the held-out design");
        const Eigen::VectorXd g = group_intercepts(f, train.group_labels, n_groups);
        const int i = design.row_entity[static_cast<std::size_t>(r)];
        const double a = g(heldout.group_labels[static_cast<std::size_t>(i)]);
        out.values(i, t) = a + design.X.row(r).dot(f.beta);
    }
    for (int i = 0; i < heldout.n_entities(); ++i)
        for (int t = out.first_eval; t < T; ++t)
            if (heldout.observed(i, t) && !std::isfinite(out.values(i, t))) ++out.excluded;
    return out;
}

double quantile_type7(std::vector<double> v, double p)
{
    if (v.empty()) throw ValidationError("quantile of an empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile level must lie in [0, 1]");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

BoxStats box_stats(const std::vector<double>& v)
{
    BoxStats b;
    b.n = static_cast<int>(v.size());
    if (v.empty()) {
        b.q1 = b.median = b.q3 = b.mean = kNaN;
        return b;
    }
    b.q1 = quantile_type7(v, 0.25);
    b.median = quantile_type7(v, 0.5);
    b.q3 = quantile_type7(v, 0.75);
    double s = 0.0;
    for (double x : v) s += x;
    b.mean = s / b.n;
    return b;
}

MseSummary summarize(const Eigen::VectorXd& mse, const std::vector<int>& groups, int bins, double outlier_k)
{
    if (bins < 1) throw ValidationError("histogram needs at least one bin");
    if (!groups.empty() && static_cast<Eigen::Index>(groups.size()) != mse.size())
        throw DimensionError("group labels do not match the entity count");
    MseSummary s;
    for (Eigen::Index i = 0; i < mse.size(); ++i)
        if (std::isfinite(mse(i))) {
            s.entity_mse.push_back(mse(i));
            s.entity_index.push_back(static_cast<int>(i));
        }
    s.box = box_stats(s.entity_mse);
    if (s.entity_mse.empty()) return s;
    s.iqr = s.box.q3 - s.box.q1;
    s.outlier_fence = s.box.q3 + outlier_k * s.iqr;
    for (std::size_t k = 0; k < s.entity_mse.size(); ++k)
        if (s.entity_mse[k] > s.outlier_fence) s.outliers.push_back(s.entity_index[k]);

    const auto [lo_it, hi_it] = std::minmax_element(s.entity_mse.begin(), s.entity_mse.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        s.bin_edges = {lo, hi};
        s.bin_counts = {static_cast<int>(s.entity_mse.size())};
    } else {
        const double w = (hi - lo) / bins;
        for (int b = 0; b <= bins; ++b) s.bin_edges.push_back(b == bins ? hi : lo + b * w);
        s.bin_counts.assign(static_cast<std::size_t>(bins), 0);
        for (double v : s.entity_mse) {
            int b = static_cast<int>((v - lo) / w);
            b = std::clamp(b, 0, bins - 1);
            ++s.bin_counts[static_cast<std::size_t>(b)];
        }
    }
    if (!groups.empty()) {
        std::map<int, std::vector<double>> per;
        for (std::size_t k = 0; k < s.entity_mse.size(); ++k)
            per[groups[static_cast<std::size_t>(s.entity_index[k])]].push_back(s.entity_mse[k]);
        for (const auto& [g, v] : per) s.by_group.emplace(g, box_stats(v));
    }
    return s;
}

void SynthConfig::validate() const
{
    if (N < 2) throw ValidationError("synth.N must be >= 2");
    if (T < 3) throw ValidationError("synth.T must be >= 3");
    if (n_high < 1 || n_low_lags < 1) throw ValidationError("synth.n_high and synth.n_low_lags must be >= 1");
    if (signal_streams < 1 || noise_streams < 0) throw ValidationError("synth stream counts invalid");
    if (groups < 1) throw ValidationError("synth.groups must be >= 1");
    if (!(std::abs(rho) < 1.0)) throw ValidationError("synth.rho must lie in (-1, 1)");
    if (!(sigma_r >= 0.0 && sigma_e >= 0.0 && consensus_noise >= 0.0)) throw ValidationError("synth scales must be >= 0");
    if (!(std::abs(offset_persistence) < 1.0)) throw ValidationError("synth.offset_persistence must lie in (-1, 1)");
    if (heldout_entities < 0) throw ValidationError("synth.heldout_entities must be >= 0");
    if (!(heldout_missing >= 0.0 && heldout_missing < 1.0)) throw ValidationError("synth.heldout_missing must lie in [0, 1)");
}

SynthEmpirical synth_empirical(const SynthConfig& cfg)
{
    cfg.validate();
    const int total = cfg.N + cfg.heldout_entities;
    const int T = cfg.T;
    const int nh = cfg.n_high;
    const int K = cfg.signal_streams + cfg.noise_streams;
    const FrequencySpec freq{nh, cfg.n_low_lags};
    std::mt19937_64 rng(io::split_seed(cfg.seed, 0));
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    // Stream loadings on the period mean of each signal stream; returns and analyst errors load differently.
    const double br[] = {0.8, -0.5, 0.4};
    const double be[] = {-0.3, 0.6, 0.5};
    Eigen::VectorXd group_r(cfg.groups), group_e(cfg.groups);
    for (int g = 0; g < cfg.groups; ++g) {
        group_r(g) = u(rng);
        group_e(g) = u(rng);
    }

    std::vector<Eigen::MatrixXd> x(static_cast<std::size_t>(K), Eigen::MatrixXd(total, static_cast<Eigen::Index>(T) * nh));
    Eigen::MatrixXd r(total, T), e(total, T), off(total, T), pe(total, T), cons(total, T);
    std::vector<int> group(static_cast<std::size_t>(total));
    const double innov = std::sqrt(1.0 - cfg.rho * cfg.rho);
    const double phi = cfg.offset_persistence;
    for (int i = 0; i < total; ++i) {
        std::mt19937_64 er(io::split_seed(cfg.seed, static_cast<std::uint64_t>(i) + 1));
        group[static_cast<std::size_t>(i)] = i % cfg.groups;
        for (int k = 0; k < K; ++k) {
            double v = z(er);
            for (int b = 0; b < 200; ++b) v = cfg.rho * v + innov * z(er);
            for (Eigen::Index h = 0; h < x[static_cast<std::size_t>(k)].cols(); ++h) {
                v = cfg.rho * v + innov * z(er);
                x[static_cast<std::size_t>(k)](i, h) = v;
            }
        }
        const int g = group[static_cast<std::size_t>(i)];
        const double ar = group_r(g) + 0.25 * z(er);
        const double ae = group_e(g) + 0.25 * z(er);
        const double mu = 2.5 + 0.5 * z(er);
        double o = mu + 0.2 / std::sqrt(1.0 - phi * phi) * z(er);
        for (int t = 0; t < T; ++t) {
            o = mu + phi * (o - mu) + 0.2 * z(er);
            double sr = ar, se = ae;
            for (int k = 0; k < cfg.signal_streams; ++k) {
                const double m = x[static_cast<std::size_t>(k)].row(i).segment(static_cast<Eigen::Index>(t) * nh, nh).mean();
                sr += br[k % 3] * m;
                se += be[k % 3] * m;
            }
            const double a = z(er), b = z(er);
            r(i, t) = sr + cfg.sigma_r * a;
            e(i, t) = se + cfg.sigma_e * (-0.2 * a + std::sqrt(0.96) * b);
            off(i, t) = o;
            pe(i, t) = r(i, t) - e(i, t) + off(i, t);
            cons(i, t) = pe(i, t) + cfg.consensus_noise * z(er);
        }
    }

    auto slice = [&](int begin, int count, const char* prefix, double missing, std::uint64_t stream) {
        PanelDataset d;
        std::mt19937_64 mr(io::split_seed(cfg.seed, stream));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int i = 0; i < count; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i + 1);
            d.entity_ids.emplace_back(buf);
            d.group_labels.push_back(group[static_cast<std::size_t>(begin + i)]);
        }
        for (int t = 0; t < T; ++t) d.period_labels.push_back(t + 1);
        d.target_name = "pe";
        for (int k = 0; k < K; ++k) {
            CovariateStream s;
            s.name = (k < cfg.signal_streams ? "s" : "n") +
                     std::to_string(k < cfg.signal_streams ? k + 1 : k - cfg.signal_streams + 1);
            s.freq = freq;
            s.values = x[static_cast<std::size_t>(k)].middleRows(begin, count);
            d.covariates.push_back(std::move(s));
        }
        d.targets = pe.middleRows(begin, count);
        d.observed = BoolMatrix::Constant(count, T, true);
        Eigen::MatrixXd rr = r.middleRows(begin, count), ee = e.middleRows(begin, count),
                        cc = cons.middleRows(begin, count);
        for (int i = 0; i < count; ++i)
            for (int t = 0; t < T; ++t)
                if (missing > 0.0 && unit(mr) < missing) {
                    d.targets(i, t) = kNaN;
                    d.observed(i, t) = false;
                    rr(i, t) = ee(i, t) = cc(i, t) = kNaN;
                }
        d.series["return"] = rr;
        d.series["analyst_error"] = ee;
        d.series["consensus"] = cc;
        d.series["known_offset"] = off.middleRows(begin, count);
        d.validate();
        return d;
    };
    SynthEmpirical out;
    out.train = slice(0, cfg.N, "f", 0.0, static_cast<std::uint64_t>(total) + 1);
    if (cfg.heldout_entities > 0)
        out.heldout = slice(cfg.N, cfg.heldout_entities, "h", cfg.heldout_missing, static_cast<std::uint64_t>(total) + 2);
    return out;
}

namespace {

struct ModelRun {
    Predictions pe, r, e;
    Eigen::MatrixXd s;
};

ModelRun run_model(const PanelDataset& data, const PanelDataset* rdata, const PanelDataset* edata,
                   const NowcastModel& m, const EvalPlan& plan, int h)
{
    ModelRun run;
    run.pe = expanding_nowcast(data, m, plan, h);
    if (rdata) {
        run.r = expanding_nowcast(*rdata, m, plan, h);
        run.e = expanding_nowcast(*edata, m, plan, h);
        run.s = aggregate_components(run.r.values, run.e.values, *data.known_offsets());
    }
    return run;
}

double p_of(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return dm_test_pooled(a, b).p_value; }

std::vector<MethodRow> imputation_rows(const PanelDataset& data, const PanelDataset& heldout,
                                       const std::vector<ModelRun>& grouped, const std::vector<NowcastModel>& models,
                                       const EvalPlan& plan, const StudyOptions& opts)
{
    const StudyColumns& col = opts.columns;
    const bool comp = opts.components;
    const int first = plan.initial_window;
    if (comp) validate_decomposition(heldout, col.return_series, col.error_series);
    const Eigen::MatrixXd& hy = heldout.targets;
    const Predictions hcons = consensus_benchmark(heldout, col.consensus_series, first);
    std::vector<Eigen::MatrixXd> ev{forecast_errors(hy, hcons.values, first)};
    for (std::size_t k = 0; k < grouped.size(); ++k) {
        const Predictions p = impute_and_nowcast(grouped[k].pe, data, heldout, models[k]);
        ev.push_back(forecast_errors(hy, p.values, first));
        if (comp) {
            const Predictions pr = impute_and_nowcast(grouped[k].r, data, heldout, models[k]);
            const Predictions pe = impute_and_nowcast(grouped[k].e, data, heldout, models[k]);
            ev.push_back(forecast_errors(hy, aggregate_components(pr.values, pe.values, *heldout.known_offsets()), first));
        }
    }
    ev = common_cells(ev);
    std::vector<MethodRow> rows;
    MethodRow cr{"Consensus", {mse_of(ev[0]), kNaN, kNaN, kNaN}, {}, {}, true};
    cr.p_rw.fill(kNaN);
    cr.p_cons.fill(kNaN);
    rows.push_back(cr);
    const std::size_t step = comp ? 2 : 1;
    for (std::size_t k = 0; k < grouped.size(); ++k) {
        MethodRow row;
        row.name = to_string(models[k].criterion);
        row.value.fill(kNaN);
        row.p_rw.fill(kNaN);
        row.p_cons.fill(kNaN);
        const auto& a = ev[1 + k * step];
        row.value[0] = mse_of(a) / mse_of(ev[0]);
        row.p_cons[0] = p_of(a, ev[0]);
        if (comp) {
            const auto& b = ev[2 + k * step];
            row.value[1] = mse_of(b) / mse_of(ev[0]);
            row.p_cons[1] = p_of(b, ev[0]);
        }
        rows.push_back(row);
    }
    return rows;
}

std::vector<NowcastModel> grouped_variants(const NowcastModel& base, const std::vector<Criterion>& criteria)
{
    std::vector<NowcastModel> out;
    for (Criterion c : criteria) {
        NowcastModel g = base;
        g.kind = ModelKind::grouped_fixed_effects;
        g.criterion = c;
        g.name = std::string("grouped_fe_") + to_string(c);
        out.push_back(g);
    }
    return out;
}

} // namespace

std::vector<MethodRow> imputation_table(const PanelDataset& train, const PanelDataset& heldout, const NowcastModel& base,
                                        const EvalPlan& plan, const StudyOptions& opts)
{
    plan.validate(train);
    if (!train.has_groups()) throw ValidationError("imputation needs group labels on the training panel");
    const int h0 = *std::min_element(plan.horizon_offsets.begin(), plan.horizon_offsets.end());
    PanelDataset rdata, edata;
    if (opts.components) {
        validate_decomposition(train, opts.columns.return_series, opts.columns.error_series);
        rdata = with_target(train, opts.columns.return_series);
        edata = with_target(train, opts.columns.error_series);
    }
    const auto models = grouped_variants(base, opts.criteria);
    std::vector<ModelRun> runs;
    for (const auto& m : models)
        runs.push_back(run_model(train, opts.components ? &rdata : nullptr, opts.components ? &edata : nullptr, m, plan, h0));
    return imputation_rows(train, heldout, runs, models, plan, opts);
}

NowcastReport run_study(const PanelDataset& data, const PanelDataset* heldout, const std::vector<NowcastModel>& models,
                        const EvalPlan& plan, const StudyOptions& opts)
{
    if (models.empty()) throw ValidationError("nowcast study needs at least one model");
    plan.validate(data);
    const StudyColumns& col = opts.columns;
    const bool comp = opts.components;
    if (comp) validate_decomposition(data, col.return_series, col.error_series);
    require_series(data, col.consensus_series);
    const int first = plan.initial_window;
    const int h0 = *std::min_element(plan.horizon_offsets.begin(), plan.horizon_offsets.end());

    NowcastReport rep;
    rep.evaluation_periods = plan.evaluation_periods(data);
    PanelDataset rdata, edata;
    if (comp) {
        rdata = with_target(data, col.return_series);
        edata = with_target(data, col.error_series);
    }
    const PanelDataset* rp = comp ? &rdata : nullptr;
    const PanelDataset* ep = comp ? &edata : nullptr;

    const Eigen::MatrixXd& y = data.targets;
    const Predictions rw = rw_benchmark(data, first);
    const Predictions cons = consensus_benchmark(data, col.consensus_series, first);
    Eigen::MatrixXd err_rw = forecast_errors(y, rw.values, first);
    Eigen::MatrixXd err_cons = forecast_errors(y, cons.values, first);
    Eigen::MatrixXd err_rw_r, err_rw_e;
    if (comp) {
        err_rw_r = forecast_errors(rdata.targets, rw_benchmark(rdata, first).values, first);
        err_rw_e = forecast_errors(edata.targets, rw_benchmark(edata, first).values, first);
    }

    std::vector<ModelRun> runs;
    for (const auto& m : models) {
        runs.push_back(run_model(data, rp, ep, m, plan, h0));
        rep.model_names.push_back(m.label());
    }

    // Every column is compared on the cells where all methods have a prediction.
    std::vector<Eigen::MatrixXd> errs{err_rw, err_cons};
    if (comp) {
        errs.push_back(err_rw_r);
        errs.push_back(err_rw_e);
    }
    for (const auto& run : runs) {
        errs.push_back(forecast_errors(y, run.pe.values, first));
        if (comp) {
            errs.push_back(forecast_errors(y, run.s, first));
            errs.push_back(forecast_errors(rdata.targets, run.r.values, first));
            errs.push_back(forecast_errors(edata.targets, run.e.values, first));
        }
    }
    errs = common_cells(errs);
    const std::size_t per = comp ? 4 : 1;
    const std::size_t base = comp ? 4 : 2;

    // Outliers: entities flagged under any method in the direct-target columns.
    std::set<int> flagged;
    auto flag = [&](const Eigen::MatrixXd& err) {
        for (int i : summarize(entity_mse(err), {}, opts.histogram_bins, opts.outlier_k).outliers) flagged.insert(i);
    };
    flag(errs[0]);
    flag(errs[1]);
    for (std::size_t m = 0; m < runs.size(); ++m) {
        flag(errs[base + m * per]);
        if (comp) flag(errs[base + m * per + 1]);
    }
    rep.outliers.assign(flagged.begin(), flagged.end());

    auto build_table = [&](const std::vector<Eigen::MatrixXd>& ev) {
        std::vector<MethodRow> rows;
        const double nan = kNaN;
        MethodRow rwr{"RW", {mse_of(ev[0]), nan, comp ? mse_of(ev[2]) : nan, comp ? mse_of(ev[3]) : nan}, {}, {}, true};
        rwr.p_rw.fill(nan);
        rwr.p_cons.fill(nan);
        MethodRow cr{"Consensus", {mse_of(ev[1]), nan, nan, nan}, {}, {}, true};
        cr.p_rw.fill(nan);
        cr.p_cons.fill(nan);
        rows.push_back(rwr);
        rows.push_back(cr);
        for (std::size_t m = 0; m < runs.size(); ++m) {
            MethodRow row;
            row.name = rep.model_names[m];
            row.value.fill(nan);
            row.p_rw.fill(nan);
            row.p_cons.fill(nan);
            const auto& pe_err = ev[base + m * per];
            row.value[0] = mse_of(pe_err) / mse_of(ev[1]);
            row.p_rw[0] = p_of(pe_err, ev[0]);
            row.p_cons[0] = p_of(pe_err, ev[1]);
            if (comp) {
                const auto& s_err = ev[base + m * per + 1];
                const auto& r_err = ev[base + m * per + 2];
                const auto& e_err = ev[base + m * per + 3];
                row.value[1] = mse_of(s_err) / mse_of(ev[1]);
                row.value[2] = mse_of(r_err) / mse_of(ev[2]);
                row.value[3] = mse_of(e_err) / mse_of(ev[3]);
                row.p_rw[1] = p_of(s_err, ev[0]);
                row.p_rw[2] = p_of(r_err, ev[2]);
                row.p_rw[3] = p_of(e_err, ev[3]);
                row.p_cons[1] = p_of(s_err, ev[1]);
            }
            rows.push_back(row);
        }
        return rows;
    };
    rep.table_all = build_table(errs);
    if (!rep.outliers.empty()) {
        std::vector<Eigen::MatrixXd> trimmed;
        for (const auto& e : errs) trimmed.push_back(drop_entities(e, rep.outliers));
        rep.table_trimmed = build_table(trimmed);
    }

    if (comp)
        for (const auto& run : runs) {
            rep.decompositions.push_back(
                decompose_mse(rdata.targets, run.r.values, edata.targets, run.e.values, *data.known_offsets()));
        }
    if (comp) {
        double sr = 0, se = 0, srr = 0, see = 0, sre = 0;
        int n = 0;
        for (int i = 0; i < data.n_entities(); ++i)
            for (int t = first; t < data.n_periods(); ++t) {
                const double a = rdata.targets(i, t), b = edata.targets(i, t);
                if (!std::isfinite(a) || !std::isfinite(b)) continue;
                sr += a;
                se += b;
                srr += a * a;
                see += b * b;
                sre += a * b;
                ++n;
            }
        if (n > 1) {
            const double cov = sre / n - (sr / n) * (se / n);
            const double vr = srr / n - (sr / n) * (sr / n);
            const double ve = see / n - (se / n) * (se / n);
            rep.component_corr = cov / std::sqrt(vr * ve);
        }
    }

    const Eigen::MatrixXd& best_err = comp ? errs[base + 1] : errs[base];
    rep.best_summary = summarize(entity_mse(best_err), data.group_labels, opts.histogram_bins, opts.outlier_k);

    // Grouped fixed effects per criterion, reused for parameter imputation.
    const bool want_grouped = data.has_groups() && (opts.grouped_table || (opts.imputation && heldout));
    std::vector<ModelRun> grouped;
    std::vector<NowcastModel> grouped_models;
    if (want_grouped) {
        grouped_models = grouped_variants(models.front(), opts.criteria);
        for (const auto& g : grouped_models) grouped.push_back(run_model(data, rp, ep, g, plan, h0));
    }
    if (want_grouped && opts.grouped_table) {
        for (std::size_t k = 0; k < grouped.size(); ++k) {
            std::vector<Eigen::MatrixXd> ev{err_cons, forecast_errors(y, grouped[k].pe.values, first)};
            if (comp) ev.push_back(forecast_errors(y, grouped[k].s, first));
            ev = common_cells(ev);
            MethodRow row;
            row.name = to_string(opts.criteria[k]);
            row.value.fill(kNaN);
            row.p_rw.fill(kNaN);
            row.p_cons.fill(kNaN);
            row.value[0] = mse_of(ev[1]) / mse_of(ev[0]);
            row.p_cons[0] = p_of(ev[1], ev[0]);
            if (comp) {
                row.value[1] = mse_of(ev[2]) / mse_of(ev[0]);
                row.p_cons[1] = p_of(ev[2], ev[0]);
            }
            rep.grouped.push_back(row);
        }
    }
    if (want_grouped && opts.imputation && heldout)
        rep.imputed = imputation_rows(data, *heldout, grouped, grouped_models, plan, opts);

    if (opts.daily_updates) {
        std::vector<int> hs = plan.horizon_offsets;
        std::sort(hs.begin(), hs.end(), std::greater<int>());
        std::vector<Eigen::MatrixXd> ev;
        for (int h : hs) {
            const ModelRun run = h == h0 ? runs.front() : run_model(data, rp, ep, models.front(), plan, h);
            ev.push_back(forecast_errors(y, comp ? run.s : run.pe.values, first));
        }
        ev = common_cells(ev);
        for (std::size_t k = 0; k < hs.size(); ++k) {
            const Eigen::VectorXd m = entity_mse(ev[k]);
            std::vector<double> v;
            for (Eigen::Index i = 0; i < m.size(); ++i)
                if (std::isfinite(m(i))) v.push_back(m(i));
            rep.daily.push_back(HorizonSummary{hs[k], box_stats(v)});
        }
    }
    return rep;
}

namespace {

std::string table_rows(const std::string& panel, const std::vector<MethodRow>& rows)
{
    std::string out;
    for (const auto& r : rows) {
        out += panel + "," + r.name;
        for (double v : r.value) out += "," + cell(v);
        out += '\n';
        if (r.benchmark) continue;
        out += panel + "," + r.name + " DM p-val RW";
        for (double v : r.p_rw) out += "," + cell(v);
        out += '\n';
        out += panel + "," + r.name + " DM p-val Cons.";
        for (double v : r.p_cons) out += "," + cell(v);
        out += '\n';
    }
    return out;
}

std::string two_column(const std::vector<MethodRow>& rows)
{
    std::string out = "row,pe_hat,S_hat,p_cons_pe,p_cons_S\n";
    for (const auto& r : rows)
        out += r.name + "," + cell(r.value[0]) + "," + cell(r.value[1]) + "," + cell(r.p_cons[0]) + "," +
               cell(r.p_cons[1]) + "\n";
    return out;
}

} // namespace

std::string table3_csv(const NowcastReport& r)
{
    std::string out = "panel,row,pe_hat,S_hat,r_hat,ea_hat\n";
    out += table_rows("all", r.table_all);
    if (!r.table_trimmed.empty()) out += table_rows("outliers_removed", r.table_trimmed);
    return out;
}

std::string table4_csv(const NowcastReport& r) { return two_column(r.grouped); }

std::string table5_csv(const NowcastReport& r) { return two_column(r.imputed); }

std::string table5_csv(const std::vector<MethodRow>& imputed) { return two_column(imputed); }

std::string daily_updates_csv(const NowcastReport& r)
{
    std::string out = "horizon,n,q1,median,q3,mean\n";
    for (const auto& h : r.daily)
        out += std::to_string(h.horizon) + "," + std::to_string(h.box.n) + "," + cell(h.box.q1) + "," +
               cell(h.box.median) + "," + cell(h.box.q3) + "," + cell(h.box.mean) + "\n";
    return out;
}

std::string mse_distribution_csv(const NowcastReport& r)
{
    const MseSummary& s = r.best_summary;
    std::string out = "section,key,value1,value2,value3,value4,n\n";
    for (std::size_t b = 0; b < s.bin_counts.size(); ++b)
        out += "histogram," + std::to_string(b) + "," + cell(s.bin_edges[b]) + "," + cell(s.bin_edges[b + 1]) + "," +
               std::to_string(s.bin_counts[b]) + ",,\n";
    out += "box,all," + cell(s.box.q1) + "," + cell(s.box.median) + "," + cell(s.box.q3) + "," + cell(s.box.mean) + "," +
           std::to_string(s.box.n) + "\n";
    for (const auto& [g, b] : s.by_group)
        out += "box,group" + std::to_string(g) + "," + cell(b.q1) + "," + cell(b.median) + "," + cell(b.q3) + "," +
               cell(b.mean) + "," + std::to_string(b.n) + "\n";
    for (int i : r.outliers) out += "outlier," + std::to_string(i) + ",,,,,\n";
    return out;
}

} // namespace panelnow

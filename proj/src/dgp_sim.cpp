#include "panelnow/dgp_sim.hpp"

#include "panelnow/error.hpp"
#include "panelnow/io_util.hpp"
#include "panelnow/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <set>

namespace panelnow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fixed4(double v)
{
    if (!std::isfinite(v)) return io::format_double(v);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

class ErrorDraw {
public:
    ErrorDraw(bool student, bool normalize) : student_(student), scale_(normalize ? std::sqrt(3.0 / 5.0) : 1.0) {}

    double operator()(std::mt19937_64& rng)
    {
        if (student_) return scale_ * t_(rng);
        return normal_(rng);
    }

private:
    bool student_;
    double scale_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::student_t_distribution<double> t_{5.0};
};

} // namespace

const char* to_string(Scenario s)
{
    switch (s) {
    case Scenario::baseline: return "baseline";
    case Scenario::student_t5: return "student_t5";
    case Scenario::large_dimensional: return "large_dimensional";
    }
    return "unknown";
}

const char* to_string(DgpIntercept m) { return m == DgpIntercept::pooled_draw ? "pooled_draw" : "fixed_effects_draws"; }

const char* to_string(Estimator e) { return e == Estimator::sg_lasso_midas ? "sg_lasso_midas" : "elnet_umidas"; }

const char* to_string(LagWeights w) { return w == LagWeights::normalized ? "normalized" : "density_at_lag"; }

LagWeights lag_weights_from_string(const std::string& s)
{
    if (s == "normalized") return LagWeights::normalized;
    if (s == "density_at_lag") return LagWeights::density_at_lag;
    throw ValidationError("unknown lag weight layout '" + s + "'");
}

Scenario scenario_from_string(const std::string& s)
{
    if (s == "baseline") return Scenario::baseline;
    if (s == "student_t5") return Scenario::student_t5;
    if (s == "large_dimensional") return Scenario::large_dimensional;
    throw ValidationError("unknown scenario '" + s + "'");
}

DgpIntercept dgp_intercept_from_string(const std::string& s)
{
    if (s == "pooled_draw" || s == "pooled") return DgpIntercept::pooled_draw;
    if (s == "fixed_effects_draws" || s == "fixed_effects") return DgpIntercept::fixed_effects_draws;
    throw ValidationError("unknown DGP intercept mode '" + s + "'");
}

Estimator estimator_from_string(const std::string& s)
{
    if (s == "sg_lasso_midas" || s == "sg_lasso") return Estimator::sg_lasso_midas;
    if (s == "elnet_umidas" || s == "elnet") return Estimator::elnet_umidas;
    throw ValidationError("unknown estimator '" + s + "'");
}

int DgpConfig::noise_streams() const
{
    if (k_noise >= 0) return k_noise;
    return scenario == Scenario::large_dimensional ? 94 : 24;
}

int DgpConfig::presample() const
{
    FrequencySpec f{n_high, n_low_lags};
    const int need = f.k_max() - visible_steps(f, tau);
    return (need <= 0 ? 0 : (need + n_high - 1) / n_high);
}

double DgpConfig::error_variance() const
{
    return scenario == Scenario::student_t5 && !normalize_t ? 5.0 / 3.0 : 1.0;
}

void DgpConfig::validate() const
{
    if (N < 1 || T < 1) throw ValidationError("N and T must be positive");
    if (k_relevant < 0 || noise_streams() < 0 || total_streams() < 1)
        throw ValidationError("stream counts must be nonnegative with at least one stream");
    FrequencySpec{n_high, n_low_lags}.validate();
    if (!(std::abs(rho) < 1.0)) throw ValidationError("rho must lie in (-1, 1)");
    if (replications < 1) throw ValidationError("replications must be >= 1");
    if (burn_in < 0) throw ValidationError("burn_in must be >= 0");
    visible_steps(FrequencySpec{n_high, n_low_lags}, tau);
}

std::pair<double, double> relevant_beta(int k)
{
    switch (k % 3) {
    case 0: return {1.0, 3.0};
    case 1: return {2.0, 3.0};
    default: return {2.0, 2.0};
    }
}

Eigen::VectorXd relevant_lag_weights(const DgpConfig& cfg, int k)
{
    const int k_max = cfg.n_high * cfg.n_low_lags;
    const auto [a, b] = relevant_beta(k);
    if (cfg.lag_weights == LagWeights::normalized) return beta_weights(k_max, a, b).values;
    const double norm = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b));
    Eigen::VectorXd w = Eigen::VectorXd::Zero(k_max);
    for (int j = 0; j < k_max; ++j) {
        const double s = static_cast<double>(j) / cfg.n_high;
        if (s < 1.0) w(j) = norm * std::pow(s, a - 1.0) * std::pow(1.0 - s, b - 1.0) / k_max;
    }
    return w;
}

Eigen::VectorXd fixed_effect_draws(const DgpConfig& cfg)
{
    std::mt19937_64 rng(io::split_seed(cfg.seed, 0));
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    Eigen::VectorXd a(cfg.N);
    for (int i = 0; i < cfg.N; ++i) a(i) = u(rng);
    return a;
}

PanelDataset simulate_panel(const DgpConfig& cfg, int replication, Eigen::MatrixXd* conditional_mean)
{
    cfg.validate();
    if (replication < 0) throw ValidationError("replication index must be >= 0");
    const int N = cfg.N;
    const int P = cfg.total_periods();
    const int nh = cfg.n_high;
    const int K = cfg.total_streams();
    const FrequencySpec freq{nh, cfg.n_low_lags};
    const int k_max = freq.k_max();
    const int vis = visible_steps(freq, cfg.tau);

    std::mt19937_64 rng(io::split_seed(cfg.seed, static_cast<std::uint64_t>(replication) + 1));
    ErrorDraw draw(cfg.scenario == Scenario::student_t5, cfg.normalize_t);

    Eigen::VectorXd alpha;
    if (cfg.intercept == DgpIntercept::pooled_draw) {
        std::uniform_real_distribution<double> u(-4.0, 4.0);
        alpha = Eigen::VectorXd::Constant(N, u(rng));
    } else {
        alpha = fixed_effect_draws(cfg);
    }

    PanelDataset d;
    for (int i = 0; i < N; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "e%03d", i + 1);
        d.entity_ids.emplace_back(buf);
    }
    for (int t = 0; t < P; ++t) d.period_labels.push_back(t + 1);
    d.target_name = "y";
    for (int k = 0; k < K; ++k) {
        CovariateStream s;
        s.name = "x" + std::to_string(k + 1);
        s.freq = freq;
        s.values.resize(N, static_cast<Eigen::Index>(P) * nh);
        d.covariates.push_back(std::move(s));
    }
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) {
            double x = 0.0;
            for (int b = 0; b < cfg.burn_in; ++b) x = cfg.rho * x + draw(rng);
            auto& v = d.covariates[static_cast<std::size_t>(k)].values;
            for (Eigen::Index h = 0; h < v.cols(); ++h) {
                x = cfg.rho * x + draw(rng);
                v(i, h) = x;
            }
        }

    std::vector<Eigen::VectorXd> weights;
    for (int k = 0; k < cfg.k_relevant; ++k) weights.push_back(relevant_lag_weights(cfg, k));

    const int first = cfg.presample();
    d.targets = Eigen::MatrixXd::Constant(N, P, kNaN);
    d.observed = BoolMatrix::Constant(N, P, false);
    Eigen::MatrixXd cm = Eigen::MatrixXd::Constant(N, P, kNaN);
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < P; ++t) {
            const double u = draw(rng);
            if (t < first) continue;
            const long newest = static_cast<long>(t) * nh + vis - 1;
            double mean = alpha(i);
            for (int k = 0; k < cfg.k_relevant; ++k) {
                const auto& v = d.covariates[static_cast<std::size_t>(k)].values;
                for (int j = 0; j < k_max; ++j) mean += weights[static_cast<std::size_t>(k)](j) * v(i, newest - j);
            }
            cm(i, t) = mean;
            d.targets(i, t) = mean + u;
            d.observed(i, t) = true;
        }
    if (conditional_mean) *conditional_mean = std::move(cm);
    d.validate();
    return d;
}

void ExperimentSpec::validate() const
{
    dgp.validate();
    tuning.grid.validate();
    if (estimators.empty()) throw ValidationError("no estimators requested");
    if (criteria.empty()) throw ValidationError("no selection criteria requested");
    if (legendre_degree < 1) throw ValidationError("legendre_degree must be >= 1");
    if (ar_lags < 0) throw ValidationError("ar_lags must be >= 0");
    if (threads < 1) throw ValidationError("threads must be >= 1");
}

const McResultCell& ExperimentResult::cell(Estimator e, Criterion c, const std::string& gamma_label) const
{
    for (const auto& x : cells)
        if (x.estimator == e && x.selection == c && x.gamma_label == gamma_label) return x;
    throw ValidationError(std::string("no cell for ") + to_string(e) + "/" + to_string(c) + "/" + gamma_label);
}

namespace {

struct RepOutcome {
    std::vector<double> loss;    // per cell, NaN when excluded
    std::vector<double> loss_cm;
    double null_loss = 0.0;
};

void mean_se(const std::vector<double>& v, double& mean, double& se, int& n)
{
    double s = 0.0;
    n = 0;
    for (double x : v)
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    mean = n > 0 ? s / n : kNaN;
    double ss = 0.0;
    for (double x : v)
        if (std::isfinite(x)) ss += (x - mean) * (x - mean);
    se = n > 1 ? std::sqrt(ss / (n - 1) / n) : kNaN;
}

} // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec)
{
    spec.validate();
    const DgpConfig& cfg = spec.dgp;
    const auto& gammas = spec.tuning.grid.gammas;
    const int G = static_cast<int>(gammas.size());
    const InterceptMode mode =
        cfg.intercept == DgpIntercept::pooled_draw ? InterceptMode::pooled : InterceptMode::fixed_effects;
    const int k_max = cfg.n_high * cfg.n_low_lags;
    const int first = cfg.presample() + spec.ar_lags;
    const int t_now = cfg.presample() + cfg.T;
    if (first >= t_now) throw ValidationError("no in-sample periods left after the lag presample");

    // Cell layout: estimator x criterion x (gamma grid..., selected).
    const int per_crit = G + 1;
    const int n_cells = static_cast<int>(spec.estimators.size() * spec.criteria.size()) * per_crit;

    TuningOptions topts = spec.tuning;
    topts.threads = 1;

    std::vector<RepOutcome> reps(static_cast<std::size_t>(cfg.replications));
    parallel_for(cfg.replications, spec.threads, [&](int r) {
        Eigen::MatrixXd cm;
        const PanelDataset data = simulate_panel(cfg, r, &cm);
        RepOutcome out;
        out.loss.assign(static_cast<std::size_t>(n_cells), kNaN);
        out.loss_cm.assign(static_cast<std::size_t>(n_cells), kNaN);
        bool null_done = false;
        for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
            const bool sg = spec.estimators[e] == Estimator::sg_lasso_midas;
            const Dictionary dict =
                sg ? make_dictionary(spec.sg_dictionary, k_max, spec.legendre_degree) : unrestricted_dictionary(k_max);
            const MidasDesign design = build_design(data, dict, cfg.tau, spec.ar_lags, first, t_now + 1);
            std::vector<int> train, test;
            for (int row = 0; row < design.rows(); ++row)
                (design.row_period[static_cast<std::size_t>(row)] < t_now ? train : test).push_back(row);

            if (!null_done) {
                // Intercept-only benchmark: pooled mean or entity means of the training targets.
                Eigen::VectorXd sum = Eigen::VectorXd::Zero(cfg.N), cnt = Eigen::VectorXd::Zero(cfg.N);
                double all = 0.0;
                for (int row : train) {
                    sum(design.row_entity[static_cast<std::size_t>(row)]) += design.y(row);
                    cnt(design.row_entity[static_cast<std::size_t>(row)]) += 1.0;
                    all += design.y(row);
                }
                all /= static_cast<double>(train.size());
                double s = 0.0;
                for (int row : test) {
                    const int i = design.row_entity[static_cast<std::size_t>(row)];
                    const double pred = mode == InterceptMode::pooled ? all : sum(i) / cnt(i);
                    s += (design.y(row) - pred) * (design.y(row) - pred);
                }
                out.null_loss = s / static_cast<double>(test.size());
                null_done = true;
            }

            PenaltySpec structure;
            structure.kind = sg ? PenaltyKind::sg_lasso : PenaltyKind::elastic_net;
            structure.intercept = mode;
            structure.penalize_intercept = spec.penalize_intercept;
            structure.standardize = spec.standardize;
            const auto reports = tune(design, design.y, train, structure, spec.criteria, topts);

            auto score = [&](const FitResult& f, double& loss, double& loss_cm) {
                if (!f.converged) return;
                double s = 0.0, s_cm = 0.0;
                for (int row : test) {
                    const double pred = predict_row(design.X.row(row), design.row_entity[static_cast<std::size_t>(row)], f);
                    const int i = design.row_entity[static_cast<std::size_t>(row)];
                    const int t = design.row_period[static_cast<std::size_t>(row)];
                    s += (design.y(row) - pred) * (design.y(row) - pred);
                    s_cm += (cm(i, t) - pred) * (cm(i, t) - pred);
                }
                loss = s / static_cast<double>(test.size());
                loss_cm = cfg.error_variance() + s_cm / static_cast<double>(test.size());
            };
            for (std::size_t c = 0; c < spec.criteria.size(); ++c) {
                const auto base = static_cast<std::size_t>((static_cast<int>(e * spec.criteria.size() + c)) * per_crit);
                const TuningReport& rep = reports[c];
                for (int g = 0; g < G; ++g)
                    score(rep.fit_per_gamma[static_cast<std::size_t>(g)], out.loss[base + static_cast<std::size_t>(g)],
                          out.loss_cm[base + static_cast<std::size_t>(g)]);
                score(rep.fit, out.loss[base + static_cast<std::size_t>(G)], out.loss_cm[base + static_cast<std::size_t>(G)]);
            }
        }
        reps[static_cast<std::size_t>(r)] = std::move(out);
    });

    ExperimentResult res;
    res.spec = spec;
    for (std::size_t e = 0; e < spec.estimators.size(); ++e)
        for (std::size_t c = 0; c < spec.criteria.size(); ++c) {
            std::vector<McResultCell> block;
            for (int g = 0; g <= G; ++g) {
                const auto idx = static_cast<std::size_t>(static_cast<int>(e * spec.criteria.size() + c) * per_crit + g);
                McResultCell cell;
                cell.estimator = spec.estimators[e];
                cell.intercept = mode;
                cell.selection = spec.criteria[c];
                cell.gamma = g < G ? gammas[static_cast<std::size_t>(g)] : kNaN;
                cell.gamma_label = g < G ? io::format_double(gammas[static_cast<std::size_t>(g)]) : "selected";
                for (const auto& r : reps) {
                    cell.loss.push_back(r.loss[idx]);
                    cell.loss_cm.push_back(r.loss_cm[idx]);
                }
                int n = 0;
                mean_se(cell.loss, cell.msfe, cell.mc_se, n);
                mean_se(cell.loss_cm, cell.msfe_cm, cell.mc_se_cm, n);
                cell.replications = n;
                cell.excluded = cfg.replications - n;
                block.push_back(std::move(cell));
            }
            int best = 0;
            for (int g = 1; g < G; ++g)
                if (block[static_cast<std::size_t>(g)].msfe < block[static_cast<std::size_t>(best)].msfe) best = g;
            McResultCell b = block[static_cast<std::size_t>(best)];
            b.gamma_label = "best";
            block.push_back(std::move(b));
            for (auto& x : block) res.cells.push_back(std::move(x));
        }
    for (const auto& r : reps) res.null_loss.push_back(r.null_loss);
    int n = 0;
    mean_se(res.null_loss, res.null_msfe, res.null_mc_se, n);
    for (const auto& c : res.cells)
        if (std::abs(c.msfe - cfg.error_variance()) <= 2.0 * c.mc_se) ++res.oracle_flags;
    return res;
}

PairedComparison paired_compare(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size()) throw DimensionError("paired comparison needs equal-length loss series");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::isfinite(a[i]) && std::isfinite(b[i])) d.push_back(a[i] - b[i]);
    PairedComparison pc;
    pc.n = static_cast<int>(d.size());
    if (pc.n < 2) throw NumericalError("paired comparison needs at least 2 common replications");
    double m = 0.0;
    for (double x : d) m += x;
    m /= pc.n;
    double ss = 0.0;
    for (double x : d) ss += (x - m) * (x - m);
    pc.mean_diff = m;
    pc.se = std::sqrt(ss / (pc.n - 1) / pc.n);
    pc.ci_low = m - 1.959963984540054 * pc.se;
    pc.ci_high = m + 1.959963984540054 * pc.se;
    pc.p_less = pc.se > 0 ? 0.5 * std::erfc(-(m / pc.se) / std::sqrt(2.0)) : (m < 0 ? 0.0 : (m > 0 ? 1.0 : 0.5));
    return pc;
}

Preset make_preset(const std::string& name, int replications, std::uint64_t seed)
{
    Preset p;
    p.name = name;
    auto add = [&](Scenario sc, DgpIntercept im, int N, int T) {
        ExperimentSpec s;
        s.dgp.scenario = sc;
        s.dgp.intercept = im;
        s.dgp.N = N;
        s.dgp.T = T;
        s.dgp.replications = replications;
        s.dgp.seed = seed;
        p.experiments.push_back(s);
    };
    const std::vector<std::pair<int, int>> sizes{{25, 50}, {75, 50}, {25, 100}};
    const std::vector<Scenario> scenarios{Scenario::baseline, Scenario::student_t5, Scenario::large_dimensional};
    if (name == "table1" || name == "table2") {
        const DgpIntercept im = name == "table1" ? DgpIntercept::pooled_draw : DgpIntercept::fixed_effects_draws;
        for (Scenario sc : scenarios)
            for (auto [N, T] : sizes) add(sc, im, N, T);
    } else if (name == "baseline-pooled") {
        for (auto [N, T] : sizes) add(Scenario::baseline, DgpIntercept::pooled_draw, N, T);
    } else if (name == "baseline-fe") {
        for (auto [N, T] : sizes) add(Scenario::baseline, DgpIntercept::fixed_effects_draws, N, T);
    } else {
        throw ValidationError("unknown preset '" + name + "' (table1, table2, baseline-pooled, baseline-fe)");
    }
    return p;
}

namespace {

std::string size_label(const ExperimentResult& r)
{
    return std::to_string(r.spec.dgp.N) + "/" + std::to_string(r.spec.dgp.T);
}

} // namespace

std::string msfe_table_csv(const std::vector<ExperimentResult>& results, bool with_se)
{
    // Column keys in first-seen order.
    std::vector<std::pair<Estimator, std::string>> cols;
    std::vector<std::tuple<std::string, std::string, Criterion>> rows;
    std::map<std::tuple<std::string, std::string, Criterion, Estimator, std::string>, const McResultCell*> cell;
    for (const auto& r : results)
        for (const auto& c : r.cells) {
            if (c.gamma_label != "best") continue;
            const std::pair<Estimator, std::string> ck{c.estimator, size_label(r)};
            if (std::find(cols.begin(), cols.end(), ck) == cols.end()) cols.push_back(ck);
            const std::tuple<std::string, std::string, Criterion> rk{to_string(c.intercept), to_string(r.spec.dgp.scenario),
                                                                     c.selection};
            if (std::find(rows.begin(), rows.end(), rk) == rows.end()) rows.push_back(rk);
            cell[{std::get<0>(rk), std::get<1>(rk), c.selection, c.estimator, ck.second}] = &c;
        }
    std::stable_sort(cols.begin(), cols.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string out = "intercept,scenario,criterion";
    for (const auto& [e, s] : cols) {
        out += std::string(",") + to_string(e) + " " + s;
        if (with_se) out += std::string(",") + to_string(e) + " " + s + " se";
    }
    out += "\n";
    for (const auto& [im, sc, cr] : rows) {
        out += im + "," + sc + "," + to_string(cr);
        for (const auto& [e, s] : cols) {
            auto it = cell.find({im, sc, cr, e, s});
            out += "," + (it == cell.end() ? std::string() : fixed4(it->second->msfe));
            if (with_se) out += "," + (it == cell.end() ? std::string() : fixed4(it->second->mc_se));
        }
        out += "\n";
    }
    return out;
}

std::string gamma_table_csv(const std::vector<ExperimentResult>& results)
{
    std::vector<double> gammas;
    for (const auto& r : results)
        for (double g : r.spec.tuning.grid.gammas)
            if (std::find(gammas.begin(), gammas.end(), g) == gammas.end()) gammas.push_back(g);
    std::sort(gammas.begin(), gammas.end());
    std::string out = "intercept,scenario,criterion,estimator,N/T";
    for (double g : gammas) out += ",gamma=" + io::format_double(g);
    out += ",best_gamma\n";
    for (const auto& r : results)
        for (Criterion cr : r.spec.criteria)
            for (Estimator e : r.spec.estimators) {
                out += std::string(to_string(r.cells.front().intercept)) + "," + to_string(r.spec.dgp.scenario) + "," +
                       to_string(cr) + "," + to_string(e) + "," + size_label(r);
                for (double g : gammas) {
                    const std::string label = io::format_double(g);
                    std::string v;
                    for (const auto& c : r.cells)
                        if (c.estimator == e && c.selection == cr && c.gamma_label == label) v = fixed4(c.msfe);
                    out += "," + v;
                }
                out += "," + io::format_double(r.cell(e, cr, "best").gamma) + "\n";
            }
    return out;
}

std::string cells_long_csv(const std::vector<ExperimentResult>& results)
{
    std::string out = "intercept,scenario,N,T,estimator,criterion,gamma,msfe,mc_se,msfe_cm,mc_se_cm,replications,excluded\n";
    for (const auto& r : results) {
        for (const auto& c : r.cells)
            out += std::string(to_string(c.intercept)) + "," + to_string(r.spec.dgp.scenario) + "," +
                   std::to_string(r.spec.dgp.N) + "," + std::to_string(r.spec.dgp.T) + "," + to_string(c.estimator) + "," +
                   to_string(c.selection) + "," + c.gamma_label + "," + io::format_double(c.msfe) + "," +
                   io::format_double(c.mc_se) + "," + io::format_double(c.msfe_cm) + "," +
                   io::format_double(c.mc_se_cm) + "," + std::to_string(c.replications) + "," +
                   std::to_string(c.excluded) + "\n";
        out += std::string(to_string(r.cells.front().intercept)) + "," + to_string(r.spec.dgp.scenario) + "," +
               std::to_string(r.spec.dgp.N) + "," + std::to_string(r.spec.dgp.T) + ",intercept_only,none,NA," +
               io::format_double(r.null_msfe) + "," + io::format_double(r.null_mc_se) + ",NA,NA," +
               std::to_string(r.null_loss.size()) + ",0\n";
    }
    return out;
}

} // namespace panelnow

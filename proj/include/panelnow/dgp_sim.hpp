#pragma once

#include "panelnow/midas_dict.hpp"
#include "panelnow/panel_data.hpp"
#include "panelnow/tuning.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace panelnow {

enum class Scenario { baseline, student_t5, large_dimensional };
enum class DgpIntercept { pooled_draw, fixed_effects_draws };
enum class Estimator { sg_lasso_midas, elnet_umidas };

/// How the Beta lag weights of the relevant streams are laid out.
enum class LagWeights {
    normalized,     ///< Beta density on the interior grid (j+1)/(k_max+1), summing to one
    density_at_lag, ///< Beta density at s = j / n_high divided by k_max, zero for s >= 1
};

const char* to_string(Scenario s);
const char* to_string(DgpIntercept m);
const char* to_string(Estimator e);
const char* to_string(LagWeights w);
LagWeights lag_weights_from_string(const std::string& s);
Scenario scenario_from_string(const std::string& s);
DgpIntercept dgp_intercept_from_string(const std::string& s);
Estimator estimator_from_string(const std::string& s);

struct DgpConfig {
    Scenario scenario = Scenario::baseline;
    int N = 25;
    int T = 50;          ///< in-sample periods; one more period is simulated for the nowcast
    int k_relevant = 6;
    int k_noise = -1;    ///< -1: 24, or 94 for the large-dimensional scenario
    int n_high = 3;
    int n_low_lags = 4;
    double rho = 0.6;
    DgpIntercept intercept = DgpIntercept::pooled_draw;
    std::uint64_t seed = 20240601;
    int replications = 200;
    int burn_in = 200;   ///< high-frequency AR steps discarded before period 0
    Rational tau{1, 3};
    bool normalize_t = false; ///< rescale t(5) draws to unit variance
    LagWeights lag_weights = LagWeights::normalized;

    int noise_streams() const;
    int total_streams() const { return k_relevant + noise_streams(); }
    /// Periods before the first in-sample period, enough for one full lag window.
    int presample() const;
    int total_periods() const { return presample() + T + 1; }
    /// Variance of the regression error u.
    double error_variance() const;
    void validate() const;
};

/// Beta(a, b) weight parameters of relevant stream k (0-based), cycling (1,3), (2,3), (2,2).
std::pair<double, double> relevant_beta(int k);

/// Lag coefficients of relevant stream k under cfg.lag_weights.
Eigen::VectorXd relevant_lag_weights(const DgpConfig& cfg, int k);

/// Fixed effects held across every replication of an experiment.
Eigen::VectorXd fixed_effect_draws(const DgpConfig& cfg);

/// One replication.  `conditional_mean`, when given, receives E[y | x] (N x periods).
PanelDataset simulate_panel(const DgpConfig& cfg, int replication, Eigen::MatrixXd* conditional_mean = nullptr);

struct ExperimentSpec {
    DgpConfig dgp;
    std::vector<Estimator> estimators{Estimator::sg_lasso_midas, Estimator::elnet_umidas};
    std::vector<Criterion> criteria{Criterion::cv, Criterion::bic, Criterion::aic, Criterion::aicc};
    TuningOptions tuning;
    DictionaryKind sg_dictionary = DictionaryKind::legendre;
    int legendre_degree = 3;
    int ar_lags = 0;
    bool penalize_intercept = true;
    bool standardize = true;
    int threads = 1;

    void validate() const;
};

/// One MSFE cell.  `gamma_label` is a grid value, "best" (lowest MSFE over the gamma
/// grid) or "selected" (gamma chosen jointly with lambda by the criterion).
struct McResultCell {
    Estimator estimator = Estimator::sg_lasso_midas;
    InterceptMode intercept = InterceptMode::pooled;
    Criterion selection = Criterion::cv;
    std::string gamma_label;
    double gamma = 0.0;       ///< NaN for "selected"
    double msfe = 0.0;        ///< mean realised squared nowcast error
    double mc_se = 0.0;
    double msfe_cm = 0.0;     ///< error variance + mean squared distance to E[y | x]
    double mc_se_cm = 0.0;
    int replications = 0;
    int excluded = 0;         ///< replications dropped for solver non-convergence
    std::vector<double> loss;    ///< per replication realised MSFE (NaN when excluded)
    std::vector<double> loss_cm; ///< per replication conditional-mean MSFE
};

struct ExperimentResult {
    ExperimentSpec spec;
    std::vector<McResultCell> cells;
    double null_msfe = 0.0; ///< intercept-only nowcast
    double null_mc_se = 0.0;
    std::vector<double> null_loss;
    int oracle_flags = 0;   ///< cells statistically indistinguishable from the error variance

    const McResultCell& cell(Estimator e, Criterion c, const std::string& gamma_label) const;
};

ExperimentResult run_experiment(const ExperimentSpec& spec);

/// Paired comparison of two cells over common replications: mean(a - b) with a normal CI.
struct PairedComparison {
    double mean_diff = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double p_less = 0.0; ///< one-sided p-value for H1: a < b
    int n = 0;
};
PairedComparison paired_compare(const std::vector<double>& a, const std::vector<double>& b);

/// Named experiment families: "table1", "table2" (all scenarios and sizes), "baseline-pooled".
struct Preset {
    std::string name;
    std::vector<ExperimentSpec> experiments;
};
Preset make_preset(const std::string& name, int replications, std::uint64_t seed);

/// Table 1/2 layout: one row per (scenario, criterion), one column per (estimator, N/T).
std::string msfe_table_csv(const std::vector<ExperimentResult>& results, bool with_se);
/// Per-gamma layout: one row per (criterion, estimator, N/T), one column per gamma.
std::string gamma_table_csv(const std::vector<ExperimentResult>& results);
/// Every cell in long form, including MC standard errors and exclusion counts.
std::string cells_long_csv(const std::vector<ExperimentResult>& results);

} // namespace panelnow

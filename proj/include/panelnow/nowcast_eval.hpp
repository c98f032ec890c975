#pragma once

#include "panelnow/midas_dict.hpp"
#include "panelnow/panel_data.hpp"
#include "panelnow/sglasso.hpp"
#include "panelnow/tuning.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace panelnow {

enum class ModelKind { individual, pooled, fixed_effects, grouped_fixed_effects };

const char* to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct NowcastModel {
    std::string name;
    ModelKind kind = ModelKind::pooled;
    PenaltyKind penalty = PenaltyKind::sg_lasso;
    DictionaryKind dictionary = DictionaryKind::legendre;
    int degree = 3;
    int ar_lags = 1;
    Criterion criterion = Criterion::cv;
    TuningOptions tuning;
    bool penalize_intercept = true;
    bool standardize = true;

    std::string label() const;
    void validate() const;
};

struct EvalPlan {
    int initial_window = 25;            ///< first evaluated period index
    std::vector<int> horizon_offsets{0}; ///< high-frequency steps before period end
    int threads = 1;

    void validate(const PanelDataset& data) const;
    int evaluation_periods(const PanelDataset& data) const;
};

/// Share of the period visible `offset` steps before its end; every stream must share n_high.
Rational horizon_tau(const PanelDataset& data, int offset);

/// N x T predictions; NaN where no prediction exists.
struct Predictions {
    std::string method;
    std::string target;
    int horizon = 0;
    int first_eval = 0;
    Eigen::MatrixXd values;
    std::vector<FitResult> fits; ///< panel models: one per evaluated period
    int nonconverged = 0;
    int excluded = 0;            ///< observed target cells left without a prediction
};

/// Re-tunes and re-fits the model on every period before t, then predicts period t.
Predictions expanding_nowcast(const PanelDataset& data, const NowcastModel& model, const EvalPlan& plan,
                              int horizon_offset);

/// Previous-period target carried forward.
Predictions rw_benchmark(const PanelDataset& data, int first_eval);
/// Pass-through of `series`; observed targets without a consensus value are excluded and counted.
Predictions consensus_benchmark(const PanelDataset& data, const std::string& series, int first_eval);

/// Rejects data where target != return - analyst_error + known_offset beyond `tol` on any cell.
void validate_decomposition(const PanelDataset& data, const std::string& return_series,
                            const std::string& error_series, double tol = 1e-10);

/// S = r_hat - e_hat + known offset.
Eigen::MatrixXd aggregate_components(const Eigen::MatrixXd& r_hat, const Eigen::MatrixXd& e_hat,
                                     const Eigen::MatrixXd& offset);

/// Sample terms of MSE(S) = MSE(r) + MSE(e) - 2 E[(r - r_hat)(e - e_hat)] over cells where all are present.
struct MseDecomposition {
    double mse_s = 0.0;
    double mse_r = 0.0;
    double mse_e = 0.0;
    double cross = 0.0;
    double gap = 0.0; ///< mse_s - (mse_r + mse_e - 2 cross)
    int n = 0;
};
MseDecomposition decompose_mse(const Eigen::MatrixXd& r, const Eigen::MatrixXd& r_hat, const Eigen::MatrixXd& e,
                               const Eigen::MatrixXd& e_hat, const Eigen::MatrixXd& offset);

/// actual - predicted for periods >= first_eval where both exist; NaN elsewhere.
Eigen::MatrixXd forecast_errors(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& predicted, int first_eval);
/// Errors restricted to cells present in every matrix of `errs`.
std::vector<Eigen::MatrixXd> common_cells(const std::vector<Eigen::MatrixXd>& errs);
/// Per-entity mean squared error, NaN for entities without cells.
Eigen::VectorXd entity_mse(const Eigen::MatrixXd& err);
/// Average of per-entity MSEs.
double panel_mse(const Eigen::MatrixXd& err);

struct DmResult {
    double statistic = 0.0;
    double p_value = 0.5; ///< one-sided, H1: a is more accurate than b
    double mean_diff = 0.0;
    int n = 0;
    int clusters = 0;
};
/// Squared-error loss differential of two aligned error series, plain variance.
DmResult dm_test(const std::vector<double>& err_a, const std::vector<double>& err_b);
/// Pooled over entities; variance clustered by entity.  NaN cells in either matrix are skipped.
DmResult dm_test_pooled(const Eigen::MatrixXd& err_a, const Eigen::MatrixXd& err_b);

/// Mean of trained intercepts within each group; NaN for groups without trained entities.
Eigen::VectorXd group_intercepts(const FitResult& fit, const std::vector<int>& entity_group, int n_groups);

/// Predictions for held-out entities from per-period trained panel fits (`trained.fits`), using
/// the trained slopes and the group-mean intercept of each entity's group.
Predictions impute_and_nowcast(const Predictions& trained, const PanelDataset& train, const PanelDataset& heldout,
                               const NowcastModel& model);

double quantile_type7(std::vector<double> v, double p);

struct BoxStats {
    double q1 = 0.0, median = 0.0, q3 = 0.0, mean = 0.0;
    int n = 0;
};
BoxStats box_stats(const std::vector<double>& v);

struct MseSummary {
    std::vector<double> entity_mse; ///< entities with cells only
    std::vector<int> entity_index;
    BoxStats box;
    double iqr = 0.0;
    double outlier_fence = 0.0;
    std::vector<int> outliers;      ///< entity indices above Q3 + k IQR
    std::vector<double> bin_edges;
    std::vector<int> bin_counts;
    std::map<int, BoxStats> by_group;
};
MseSummary summarize(const Eigen::VectorXd& entity_mse, const std::vector<int>& groups, int bins = 20,
                     double outlier_k = 3.0);

/// Synthetic stand-in for the firm panel: covariates drive returns and analyst errors,
/// the consensus is the realised ratio plus noise.
struct SynthConfig {
    int N = 210;
    int T = 67;
    int n_high = 60;
    int n_low_lags = 1;
    int signal_streams = 3;
    int noise_streams = 3;
    int groups = 10;
    double rho = 0.9;
    double sigma_r = 1.0;
    double sigma_e = 1.0;
    double consensus_noise = 2.0;
    double offset_persistence = 0.9;
    int heldout_entities = 60;
    double heldout_missing = 0.3;
    std::uint64_t seed = 20240601;

    void validate() const;
};
struct SynthEmpirical {
    PanelDataset train;
    PanelDataset heldout;
};
SynthEmpirical synth_empirical(const SynthConfig& cfg);

/// Series names used by the study driver.
struct StudyColumns {
    std::string return_series = "return";
    std::string error_series = "analyst_error";
    std::string consensus_series = "consensus";
};

struct StudyOptions {
    StudyColumns columns;
    bool components = true;
    int histogram_bins = 20;
    double outlier_k = 3.0;
    std::vector<Criterion> criteria{Criterion::cv, Criterion::bic, Criterion::aic, Criterion::aicc};
    bool grouped_table = true;
    bool imputation = true;
    bool daily_updates = true;
};

/// One table row.  Columns: direct target, component sum, return, analyst error.  Benchmark rows
/// hold MSEs; model rows hold MSE ratios with one-sided DM p-values against each benchmark.
struct MethodRow {
    std::string name;
    std::array<double, 4> value{};
    std::array<double, 4> p_rw{};
    std::array<double, 4> p_cons{};
    bool benchmark = false;
};

struct HorizonSummary {
    int horizon = 0;
    BoxStats box;
};

struct NowcastReport {
    std::vector<MethodRow> table_all;
    std::vector<MethodRow> table_trimmed;
    std::vector<int> outliers;
    std::vector<MethodRow> grouped; ///< grouped FE per criterion, ratios to consensus
    std::vector<MethodRow> imputed; ///< first row: consensus MSE on held-out cells
    std::vector<HorizonSummary> daily;
    MseSummary best_summary;        ///< per-entity MSE of the first model, direct target
    std::vector<MseDecomposition> decompositions; ///< per model
    std::vector<std::string> model_names;
    double component_corr = 0.0;
    int evaluation_periods = 0;
};

NowcastReport run_study(const PanelDataset& data, const PanelDataset* heldout, const std::vector<NowcastModel>& models,
                        const EvalPlan& plan, const StudyOptions& opts);

/// Grouped fixed effects tuned by each of `opts.criteria` on `train`, applied to `heldout` by
/// parameter imputation.  First row: consensus MSE on the held-out cells; then ratios to it.
std::vector<MethodRow> imputation_table(const PanelDataset& train, const PanelDataset& heldout, const NowcastModel& base,
                                        const EvalPlan& plan, const StudyOptions& opts);

std::string table3_csv(const NowcastReport& r);
std::string table4_csv(const NowcastReport& r);
std::string table5_csv(const NowcastReport& r);
std::string table5_csv(const std::vector<MethodRow>& imputed);
std::string daily_updates_csv(const NowcastReport& r);
std::string mse_distribution_csv(const NowcastReport& r);

} // namespace panelnow

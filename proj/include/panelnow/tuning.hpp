#pragma once

#include "panelnow/sglasso.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace panelnow {

enum class Criterion { cv, bic, aic, aicc };

const char* to_string(Criterion c);
Criterion criterion_from_string(const std::string& s);

/// Assignment of CV units (entities, or contiguous time blocks for single-entity models) to folds.
struct FoldPlan {
    int k = 5;
    std::vector<int> assignment; ///< unit -> fold id in [0, k)

    /// Contiguous blocks of units in id order.
    static FoldPlan blocked(int n_units, int k);
    /// Seeded random permutation, then blocked.
    static FoldPlan shuffled(int n_units, int k, std::uint64_t seed);
    /// From explicit fold membership lists; rejects units listed twice or missing.
    static FoldPlan from_folds(const std::vector<std::vector<int>>& folds, int n_units);

    void validate(int n_units) const;
    std::vector<int> members(int fold) const;
};

struct TuningGrid {
    std::vector<double> gammas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    int n_lambda = 50;
    double lambda_min_ratio = 1e-3;
    /// Stop each path once the training fit saturates (deviance ratio above 0.999).
    bool stop_on_saturation = false;

    void validate() const;
};

/// How sigma^2 in the information criteria is estimated.
enum class Sigma2Rule {
    path_reference, ///< RSS/(NT - df) of the least penalised fit on the gamma path with df <= NT/2
    per_point,      ///< RSS/(NT - df) of the fit being scored
};

/// Intercept used when predicting held-out entities in FE modes.
enum class HeldoutIntercept { own_mean, zero };

enum class CvUnit { entity, time_block };

struct TuningOptions {
    TuningGrid grid;
    SolverOptions solver;
    Sigma2Rule sigma2 = Sigma2Rule::path_reference;
    HeldoutIntercept heldout = HeldoutIntercept::own_mean;
    CvUnit unit = CvUnit::entity;
    int folds = 5;
    int threads = 1;
};

struct CriterionValue {
    Criterion criterion = Criterion::cv;
    double lambda = 0.0;
    double gamma = 0.0;
    double value = 0.0;
    double df_hat = 0.0;
    double sigma2_hat = 0.0;
    int gamma_index = 0;
    int lambda_index = 0;
    bool finite = true;
};

struct TuningReport {
    Criterion criterion = Criterion::cv;
    std::vector<CriterionValue> surface; ///< gamma-major, then lambda in grid order
    CriterionValue best;
    FitResult fit;                       ///< full-sample fit at `best`
    std::vector<CriterionValue> best_per_gamma;
    std::vector<FitResult> fit_per_gamma;
    bool boundary = false;
    int nonconverged = 0;
    std::vector<std::string> warnings;
};

double bic_value(double rss, double nt, double sigma2, double df);
double aic_value(double rss, double nt, double sigma2, double df);
/// +infinity when NT - df - 1 <= 0.
double aicc_value(double rss, double nt, double sigma2, double df);
double criterion_value(Criterion c, double rss, double nt, double sigma2, double df);

/// Every requested criterion from one set of full-sample paths (and CV folds when asked for).
std::vector<TuningReport> tune(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& rows,
                               const PenaltySpec& structure, const std::vector<Criterion>& criteria,
                               const TuningOptions& opts, const FoldPlan* plan = nullptr);

TuningReport cv_select(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& rows,
                       const PenaltySpec& structure, const TuningOptions& opts, const FoldPlan* plan = nullptr);
TuningReport ic_select(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& rows,
                       const PenaltySpec& structure, Criterion criterion, const TuningOptions& opts);

/// Fold id of each of `rows` (entity folds, or contiguous time blocks ordered by period).
std::vector<int> row_folds(const MidasDesign& design, const std::vector<int>& rows, const FoldPlan& plan,
                           CvUnit unit);

std::string tuning_report_json(const TuningReport& report);
std::string tuning_surface_csv(const std::vector<TuningReport>& reports);

} // namespace panelnow

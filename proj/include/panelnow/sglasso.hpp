#pragma once

#include "panelnow/midas_dict.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace panelnow {

enum class PenaltyKind { sg_lasso, elastic_net };
enum class InterceptMode { pooled, fixed_effects, grouped_fixed_effects };

const char* to_string(PenaltyKind k);
const char* to_string(InterceptMode m);
PenaltyKind penalty_kind_from_string(const std::string& s);
InterceptMode intercept_mode_from_string(const std::string& s);

/// Penalty and intercept structure of one estimator.
///
/// sg-LASSO minimises  |y - mu - X b|^2 / n + 2 lambda Omega(b)  with
/// Omega(b) = gamma |b|_1 + (1 - gamma) sum_G |b_G|_2.  The elastic net replaces Omega with
/// gamma |b|_1 + (1 - gamma) |b|_2^2 / 2.  In pooled mode the intercept sits in its own
/// singleton group and is penalised along with b unless `penalize_intercept` is false.
/// Fixed effects are never penalised; grouped fixed effects carry a group-LASSO penalty
/// lambda * sqrt(|G|) * |alpha_G|_2 over industry groups.
struct PenaltySpec {
    double lambda = 0.0;
    double gamma = 1.0;
    PenaltyKind kind = PenaltyKind::sg_lasso;
    InterceptMode intercept = InterceptMode::pooled;
    std::vector<int> intercept_groups; ///< grouped FE: entity -> industry group (default: design.entity_group)
    std::vector<int> groups;           ///< column -> group override (default: design.column_group)
    bool penalize_intercept = true;
    bool standardize = true;

    void validate() const;
};

struct SolverOptions {
    double tol = 1e-8;    ///< bound on the KKT residual of the standardised problem
    int max_iter = 10000; ///< block sweeps
    bool record_trace = false;
};

struct FitResult {
    Eigen::VectorXd alpha; ///< size 1 (pooled) or N (FE modes); NaN for entities without training rows
    Eigen::VectorXd beta;  ///< original column scale
    std::vector<int> support;
    double objective = 0.0; ///< |r|^2/n + 2 lambda * penalty, on the standardised scale
    double kkt = 0.0;
    int iterations = 0;
    bool converged = false;
    double lambda = 0.0;
    double gamma = 0.0;
    InterceptMode intercept = InterceptMode::pooled;
    double rss = 0.0;        ///< training residual sum of squares
    int n_obs = 0;
    int alpha_nonzero = 0;   ///< nonzero entries of alpha (grouped FE df)
    std::vector<double> trace;
    Eigen::VectorXd state;   ///< solver coordinates, reused for warm starts

    int df() const;          ///< |beta|_0 + 1 (pooled), + N (FE), + |alpha|_0 (grouped FE)
};

struct RegPath {
    std::vector<double> lambdas;
    std::vector<FitResult> fits;
    bool truncated = false; ///< stopped early once the training fit saturated
};

/// argmin_u 1/2 |u - v|^2 + step * lambda * (gamma |u|_1 + (1 - gamma) sum_G |u_G|_2).
Eigen::VectorXd prox_sg(const Eigen::VectorXd& v, const std::vector<std::vector<int>>& groups, double step,
                        double lambda, double gamma);

/// Log-spaced, strictly decreasing grid from lambda_max to lambda_max * min_ratio.
std::vector<double> lambda_grid(double lambda_max, int size, double min_ratio);

/// Penalised least squares on a fixed set of design rows.  Holds the standardised Gram
/// matrix so that many (lambda, gamma) solves share one factorisation-free setup.
class Problem {
public:
    Problem(const MidasDesign& design, const Eigen::VectorXd& y, const std::vector<int>& rows,
            const PenaltySpec& structure);

    double lambda_max(double gamma) const;
    FitResult solve(double lambda, double gamma, const SolverOptions& opts, const FitResult* warm = nullptr) const;
    RegPath path(double gamma, const std::vector<double>& lambdas, const SolverOptions& opts,
                 bool stop_on_saturation = false) const;

    double kkt_residual(const FitResult& fit) const;
    double objective(const FitResult& fit) const;
    /// Training deviance of the intercept-only model, the saturation reference.
    double null_rss() const { return null_rss_; }
    int n_obs() const { return n_; }

private:
    struct Block {
        std::vector<int> cols;
        enum class Type { intercept, slope, alpha } type = Type::slope;
        double size_weight = 1.0;
        double lipschitz = 0.0;
        Eigen::MatrixXd q;
    };
    struct Weights {
        double l1 = 0.0, group = 0.0, ridge = 0.0;
    };

    Weights weights(const Block& b, double lambda, double gamma) const;
    double sweep(Eigen::VectorXd& theta, Eigen::VectorXd& grad, double lambda, double gamma,
                 const std::vector<char>* only, double tol) const;
    double kkt_internal(const Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lambda,
                        double gamma) const;
    double penalty_internal(const Eigen::VectorXd& theta, double lambda, double gamma) const;
    bool polish(Eigen::VectorXd& theta, double lambda, double gamma) const;
    FitResult to_result(const Eigen::VectorXd& theta, double lambda, double gamma) const;
    Eigen::VectorXd to_internal(const FitResult& fit) const;

    PenaltySpec spec_;
    int n_ = 0;
    int p_ = 0;           // design columns
    int offset_ = 0;      // internal columns preceding the design columns
    int n_entities_ = 0;
    Eigen::MatrixXd gram_;
    Eigen::VectorXd xty_;
    double yty_ = 0.0;
    double null_rss_ = 0.0;
    Eigen::VectorXd scale_;       // design column scales
    Eigen::VectorXd xbar_;        // pooled unpenalised intercept: column means
    double ybar_ = 0.0;
    Eigen::MatrixXd entity_xbar_; // FE: per-entity column means
    Eigen::VectorXd entity_ybar_;
    std::vector<int> entity_count_;
    std::vector<int> alpha_entity_; // grouped FE: internal column -> entity
    std::vector<Block> blocks_;
    std::vector<int> col_block_;
    bool singletons_ = false;
    bool has_slopes_ = false;
};

FitResult fit(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec,
              const SolverOptions& opts = {});
double lambda_max(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec);
RegPath fit_path(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec, int grid_size,
                 double lambda_min_ratio, const SolverOptions& opts = {});
/// Elastic net comparator; `design` should come from the unrestricted dictionary.
FitResult fit_elastic_net(const MidasDesign& design, const Eigen::VectorXd& y, double lambda, double gamma,
                          InterceptMode mode, const SolverOptions& opts = {});

double kkt_residual(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec,
                    const FitResult& fit);
double objective_value(const MidasDesign& design, const Eigen::VectorXd& y, const PenaltySpec& spec,
                       const FitResult& fit);

/// alpha (pooled or per-entity) + x'beta for the given design rows.
Eigen::VectorXd predict(const MidasDesign& design, const std::vector<int>& rows, const FitResult& fit);
double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x, int entity, const FitResult& fit);

std::string fit_to_json(const FitResult& fit, const MidasDesign* design = nullptr);

} // namespace panelnow

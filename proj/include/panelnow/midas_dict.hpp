#pragma once

#include "panelnow/panel_data.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace panelnow {

enum class DictionaryKind {
    legendre,          ///< shifted Legendre polynomials P_0..P_{L-1} on s_j = j/(k_max-1)
    legendre_discrete, ///< same span, orthonormalised w.r.t. the uniform grid measure
    beta_density,      ///< single column of Beta(a, b) weights
    unrestricted,      ///< identity (UMIDAS)
};

const char* to_string(DictionaryKind kind);
DictionaryKind dictionary_kind_from_string(const std::string& s);

/// Maps k_max lag coefficients to L dictionary coefficients: lag weights = W * beta.
struct Dictionary {
    DictionaryKind kind = DictionaryKind::unrestricted;
    int degree = 0;
    double a = 1.0;
    double b = 1.0;
    Eigen::MatrixXd W; ///< k_max x L

    int k_max() const { return static_cast<int>(W.rows()); }
    int size() const { return static_cast<int>(W.cols()); }
};

/// Lag grid used by the polynomial dictionaries.
double legendre_grid_point(int j, int k_max);
/// Shifted Legendre polynomial of order l evaluated at s in [0, 1].
double shifted_legendre(int l, double s);

Dictionary legendre_dictionary(int k_max, int degree);
Dictionary discrete_legendre_dictionary(int k_max, int degree);
Dictionary unrestricted_dictionary(int k_max);
Dictionary beta_dictionary(int k_max, double a, double b);
Dictionary make_dictionary(DictionaryKind kind, int k_max, int degree);

/// Nonnegative lag weights summing to one.
struct WeightCurve {
    Eigen::VectorXd values;
};

/// Beta(a, b) density on the interior grid s_j = (j+1)/(k_max+1), normalised to unit sum.
WeightCurve beta_weights(int k_max, double a, double b);

/// Stacked regression matrix after dictionary projection.
struct MidasDesign {
    Eigen::MatrixXd X;              ///< rows x (sum_k L_k + ar_lags)
    Eigen::VectorXd y;              ///< NaN where the target is missing
    std::vector<int> row_entity;
    std::vector<int> row_period;
    std::vector<int> column_group;  ///< column -> group id, 0-based and contiguous
    std::vector<std::string> column_names;
    std::vector<int> entity_group;  ///< entity -> industry group, empty when unknown
    int n_entities = 0;
    bool unrestricted = false;      ///< every covariate block uses the identity dictionary

    Eigen::Index rows() const { return X.rows(); }
    Eigen::Index cols() const { return X.cols(); }
    int n_groups() const;
    /// Column indices of each group, in group order.
    std::vector<std::vector<int>> groups() const;
    /// Rows whose target and regressors are all present.
    std::vector<int> complete_rows() const;
    /// New design holding `rows` of this one.
    MidasDesign subset(const std::vector<int>& rows) const;
};

/// Each covariate block becomes (1/k_max) X_k W; one group per covariate and one per AR lag.
MidasDesign project_design(const std::vector<LaggedWindow>& windows, const Dictionary& dict);
MidasDesign project_design(const std::vector<LaggedWindow>& windows, const std::vector<Dictionary>& dicts,
                           const std::vector<std::string>& stream_names = {});

/// Windows for every entity and every period in [period_begin, period_end), projected.
MidasDesign build_design(const PanelDataset& data, const Dictionary& dict, Rational tau, int ar_lags,
                         int period_begin, int period_end);

void write_dictionary_csv(const Dictionary& dict, const std::filesystem::path& path);

} // namespace panelnow

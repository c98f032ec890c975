#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace panelnow {

/// Exact fraction, used for the share of a low-frequency period already observed.
struct Rational {
    long num = 0;
    long den = 1;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Sampling layout of one high-frequency covariate.
struct FrequencySpec {
    int n_high = 1;     ///< high-frequency observations per low-frequency period
    int n_low_lags = 1; ///< low-frequency periods covered by the lag window

    int k_max() const { return n_high * n_low_lags; }
    void validate() const;
};

struct CovariateStream {
    std::string name;
    FrequencySpec freq;
    /// N x (T * n_high); column h is high-frequency step h counted from the start of period 0.
    Eigen::MatrixXd values;
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Balanced mixed-frequency panel. Immutable once validated.
struct PanelDataset {
    std::vector<std::string> entity_ids;
    std::vector<long> period_labels;
    std::string target_name = "y";
    Eigen::MatrixXd targets; ///< N x T, NaN where missing
    BoolMatrix observed;     ///< N x T mask of target cells present in the source
    std::vector<CovariateStream> covariates;
    std::vector<int> group_labels; ///< empty, or one industry-group id per entity
    /// Further low-frequency N x T series: consensus forecasts, decomposition components,
    /// and the known offset log(P_t / E^a_{t+1|t}) under the name "known_offset".
    std::map<std::string, Eigen::MatrixXd> series;

    int n_entities() const { return static_cast<int>(entity_ids.size()); }
    int n_periods() const { return static_cast<int>(period_labels.size()); }
    bool has_groups() const { return !group_labels.empty(); }
    const Eigen::MatrixXd* find_series(const std::string& name) const;
    const Eigen::MatrixXd* known_offsets() const { return find_series("known_offset"); }

    /// Throws ValidationError naming the first broken invariant.
    void validate() const;
};

/// Copy of `data` whose target is the auxiliary series `name` (mask rebuilt from NaNs).
PanelDataset with_target(const PanelDataset& data, const std::string& name);

/// Information available when predicting `target_period`: all of periods < t plus
/// the first `tau_fraction` share of period t.
struct InformationSet {
    int target_period = 0;
    Rational tau_fraction{0, 1};
};

/// Regressors for one (entity, period) at a given information set.
struct LaggedWindow {
    int entity = 0;
    int period = 0;
    double target = 0.0;            ///< NaN when the target cell is missing
    std::vector<Eigen::VectorXd> hf; ///< per stream, k_max values, newest first
    Eigen::VectorXd ar;              ///< target lags y_{t-1}, ..., y_{t-p}
    std::vector<long> newest_index;  ///< per stream, high-frequency index of hf[k](0)
};

/// Number of high-frequency steps of period t visible at `tau`; throws if not integral.
int visible_steps(const FrequencySpec& freq, Rational tau);

/// Earliest target period whose windows have full history.
int first_usable_period(const PanelDataset& data, Rational tau, int ar_lags);

/// One window per entity for `info.target_period`.
std::vector<LaggedWindow> build_windows(const PanelDataset& data, const InformationSet& info, int ar_lags);

/// Column names for the long CSV format and the declared variables.
struct PanelSchema {
    std::string entity_col = "entity";
    std::string period_col = "period";
    std::string sub_period_col = "sub_period";
    std::string variable_col = "variable";
    std::string value_col = "value";
    std::string target = "y";
    std::vector<std::pair<std::string, FrequencySpec>> covariates;
    std::vector<std::string> series;
    std::map<std::string, int> groups;

    static PanelSchema from_json_file(const std::filesystem::path& path);
    std::string to_json() const;
};

PanelDataset load_panel(const std::filesystem::path& csv, const PanelSchema& schema);
/// Reads the schema sidecar `<csv>.schema.json` unless given explicitly.
PanelDataset load_panel(const std::filesystem::path& csv);

/// Long CSV in canonical order; writes the schema sidecar next to it.
void write_panel(const PanelDataset& data, const std::filesystem::path& csv);
std::string panel_to_long_csv(const PanelDataset& data);
PanelSchema schema_of(const PanelDataset& data);
/// One row per (entity, period) with every high-frequency value spread across columns.
void write_panel_wide(const PanelDataset& data, const std::filesystem::path& csv);

} // namespace panelnow

#include "panelnow/cli.hpp"

#include "panelnow/dgp_sim.hpp"
#include "panelnow/error.hpp"
#include "panelnow/io_util.hpp"
#include "panelnow/midas_dict.hpp"
#include "panelnow/nowcast_eval.hpp"
#include "panelnow/panel_data.hpp"
#include "panelnow/sglasso.hpp"
#include "panelnow/tuning.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace panelnow::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

const std::set<std::string> kCommands{"mc-experiment", "fit", "tune", "nowcast", "impute", "dm-test", "synth-data"};
const std::set<std::string> kTopLevel{"command", "seed", "threads", "output_dir", "data", "model", "tuning",
                                      "mc", "nowcast", "synth", "dm", "description"};

// Config access with field paths in every message.
struct Section {
    const json* j;
    std::string path;

    bool has(const char* key) const { return j && j->is_object() && j->contains(key); }
    Section sub(const char* key) const
    {
        if (!has(key)) return {nullptr, path + "." + key};
        const json& v = j->at(key);
        if (!v.is_object()) throw ValidationError(path + "." + key + " must be an object");
        return {&v, path + "." + key};
    }
    std::string field(const char* key) const { return path.empty() ? key : path + "." + key; }

    template <class T>
    T get(const char* key, T def) const
    {
        if (!has(key)) return def;
        try {
            return j->at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(field(key) + " has the wrong type");
        }
    }
    template <class T>
    T require(const char* key) const
    {
        if (!has(key)) throw ValidationError(field(key) + " is required");
        return get<T>(key, T{});
    }
    int get_int(const char* key, int def, int lo) const
    {
        const int v = get<int>(key, def);
        if (v < lo) throw ValidationError(field(key) + " must be >= " + std::to_string(lo));
        return v;
    }
    double get_unit(const char* key, double def) const
    {
        const double v = get<double>(key, def);
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(field(key) + " must lie in [0, 1], got " + io::format_double(v));
        return v;
    }
    template <class F>
    auto parse(const char* key, const std::string& def, F&& conv) const
    {
        const std::string s = get<std::string>(key, def);
        try {
            return conv(s);
        } catch (const ValidationError& e) {
            throw ValidationError(field(key) + ": " + e.what());
        }
    }
};

Section root(const json& cfg) { return {&cfg, ""}; }

std::uint64_t require_seed(const json& cfg, const std::string& why)
{
    if (!cfg.contains("seed")) throw ValidationError("seed is required for " + why);
    try {
        return cfg.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError("seed must be a non-negative integer");
    }
}

int threads_of(const json& cfg) { return root(cfg).get_int("threads", 1, 1); }

Rational parse_tau(const Section& s, const char* key, Rational def)
{
    if (!s.has(key)) return def;
    const json& v = s.j->at(key);
    Rational r;
    if (v.is_string()) {
        const std::string str = v.get<std::string>();
        const auto slash = str.find('/');
        try {
            if (slash == std::string::npos) {
                r = {std::stol(str), 1};
            } else {
                r = {std::stol(str.substr(0, slash)), std::stol(str.substr(slash + 1))};
            }
        } catch (const std::exception&) {
            throw ValidationError(s.field(key) + " must look like \"1/3\"");
        }
    } else if (v.is_number_integer()) {
        r = {v.get<long>(), 1};
    } else {
        throw ValidationError(s.field(key) + " must be a fraction string such as \"1/3\"");
    }
    if (r.den <= 0 || r.num < 0 || r.num > r.den) throw ValidationError(s.field(key) + " must lie in [0, 1]");
    return r;
}

std::vector<Criterion> parse_criteria(const Section& s, const char* key, std::vector<Criterion> def)
{
    if (!s.has(key)) return def;
    std::vector<Criterion> out;
    for (const auto& name : s.get<std::vector<std::string>>(key, {})) {
        try {
            out.push_back(criterion_from_string(name));
        } catch (const ValidationError& e) {
            throw ValidationError(s.field(key) + ": " + e.what());
        }
    }
    if (out.empty()) throw ValidationError(s.field(key) + " must not be empty");
    return out;
}

TuningOptions parse_tuning(const json& cfg)
{
    const Section s = root(cfg).sub("tuning");
    TuningOptions o;
    o.threads = threads_of(cfg);
    if (s.has("gammas")) {
        o.grid.gammas = s.get<std::vector<double>>("gammas", {});
        for (double g : o.grid.gammas)
            if (!(g >= 0.0 && g <= 1.0)) throw ValidationError(s.field("gammas") + " entries must lie in [0, 1]");
    }
    o.grid.n_lambda = s.get_int("n_lambda", o.grid.n_lambda, 2);
    o.grid.lambda_min_ratio = s.get<double>("lambda_min_ratio", o.grid.lambda_min_ratio);
    if (!(o.grid.lambda_min_ratio > 0.0 && o.grid.lambda_min_ratio < 1.0))
        throw ValidationError(s.field("lambda_min_ratio") + " must lie in (0, 1)");
    o.grid.stop_on_saturation = s.get<bool>("stop_on_saturation", false);
    o.folds = s.get_int("folds", o.folds, 2);
    o.solver.tol = s.get<double>("tol", o.solver.tol);
    if (!(o.solver.tol > 0.0)) throw ValidationError(s.field("tol") + " must be > 0");
    o.solver.max_iter = s.get_int("max_iter", o.solver.max_iter, 1);
    o.sigma2 = s.parse("sigma2", "path_reference", [](const std::string& v) {
        if (v == "path_reference") return Sigma2Rule::path_reference;
        if (v == "per_point") return Sigma2Rule::per_point;
        throw ValidationError("expected path_reference or per_point, got '" + v + "'");
    });
    o.heldout = s.parse("heldout_intercept", "own_mean", [](const std::string& v) {
        if (v == "own_mean") return HeldoutIntercept::own_mean;
        if (v == "zero") return HeldoutIntercept::zero;
        throw ValidationError("expected own_mean or zero, got '" + v + "'");
    });
    o.grid.validate();
    return o;
}

// Plain regression table: a target column, optional entity/period columns, every other column a regressor.
MidasDesign load_regression_csv(const fs::path& path, const std::string& target)
{
    std::istringstream in(io::read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
    const auto header = io::split_csv_line(line);
    int yi = -1, ei = -1, pi = -1;
    std::vector<int> xs;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const auto& h = header[static_cast<std::size_t>(c)];
        if (h == target) yi = c;
        else if (h == "entity") ei = c;
        else if (h == "period") pi = c;
        else xs.push_back(c);
    }
    if (yi < 0) throw ValidationError(path.string() + ": no target column '" + target + "'");
    if (xs.empty()) throw ValidationError(path.string() + ": no regressor columns");
    std::vector<std::vector<double>> rows;
    std::vector<std::string> ents;
    std::vector<int> periods;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = io::split_csv_line(line);
        if (f.size() != header.size())
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(header.size()) + " fields");
        auto num = [&](int c) {
            try {
                std::size_t used = 0;
                const double v = std::stod(f[static_cast<std::size_t>(c)], &used);
                return v;
            } catch (const std::exception&) {
                throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": column '" +
                                      header[static_cast<std::size_t>(c)] + "' is not numeric");
            }
        };
        std::vector<double> r{num(yi)};
        for (int c : xs) r.push_back(num(c));
        rows.push_back(std::move(r));
        ents.push_back(ei >= 0 ? f[static_cast<std::size_t>(ei)] : "");
        periods.push_back(pi >= 0 ? static_cast<int>(num(pi)) : static_cast<int>(rows.size()) - 1);
    }
    if (rows.empty()) throw ValidationError(path.string() + ": no data rows");
    MidasDesign d;
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(xs.size());
    d.X.resize(n, p);
    d.y.resize(n);
    std::map<std::string, int> ids;
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& v = rows[static_cast<std::size_t>(r)];
        d.y(r) = v[0];
        for (Eigen::Index c = 0; c < p; ++c) d.X(r, c) = v[static_cast<std::size_t>(c) + 1];
        const auto it = ids.emplace(ents[static_cast<std::size_t>(r)], static_cast<int>(ids.size())).first;
        d.row_entity.push_back(it->second);
        d.row_period.push_back(periods[static_cast<std::size_t>(r)]);
    }
    for (int c = 0; c < static_cast<int>(p); ++c) {
        d.column_group.push_back(c);
        d.column_names.push_back(header[static_cast<std::size_t>(xs[static_cast<std::size_t>(c)])]);
    }
    d.n_entities = static_cast<int>(ids.size());
    return d;
}

PanelDataset load_panel_from(const Section& data, const char* key)
{
    const fs::path csv = data.require<std::string>(key);
    if (!fs::exists(csv)) throw ValidationError(data.field(key) + ": file not found: " + csv.string());
    if (data.has("schema") && std::string(key) == "panel") {
        const fs::path schema = data.get<std::string>("schema", "");
        if (!fs::exists(schema)) throw ValidationError(data.field("schema") + ": file not found: " + schema.string());
        return load_panel(csv, PanelSchema::from_json_file(schema));
    }
    return load_panel(csv);
}

struct LoadedDesign {
    MidasDesign design;
    std::vector<int> rows;
};

LoadedDesign design_from_config(const json& cfg, bool unrestricted)
{
    const Section data = root(cfg).sub("data");
    const Section model = root(cfg).sub("model");
    LoadedDesign out;
    if (data.has("regression_csv")) {
        const fs::path p = data.get<std::string>("regression_csv", "");
        if (!fs::exists(p)) throw ValidationError(data.field("regression_csv") + ": file not found: " + p.string());
        out.design = load_regression_csv(p, data.get<std::string>("target", "y"));
        if (model.has("groups")) {
            out.design.column_group = model.get<std::vector<int>>("groups", {});
            if (static_cast<Eigen::Index>(out.design.column_group.size()) != out.design.cols())
                throw ValidationError(model.field("groups") + " must have one entry per regressor column");
        }
    } else if (data.has("panel")) {
        const PanelDataset panel = load_panel_from(data, "panel");
        const Rational tau = parse_tau(model, "tau", Rational{1, 1});
        const int ar = model.get_int("ar_lags", 0, 0);
        const int first = first_usable_period(panel, tau, ar);
        const int begin = model.get_int("period_begin", first, first);
        const int end = model.get_int("period_end", panel.n_periods(), begin + 1);
        if (end > panel.n_periods()) throw ValidationError(model.field("period_end") + " exceeds the panel length");
        if (panel.covariates.empty()) throw ValidationError(data.field("panel") + " has no covariate streams");
        const int k_max = panel.covariates.front().freq.k_max();
        const DictionaryKind kind = unrestricted ? DictionaryKind::unrestricted
                                                 : model.parse("dictionary", "legendre", dictionary_kind_from_string);
        out.design = build_design(panel, make_dictionary(kind, k_max, model.get_int("degree", 3, 1)), tau, ar, begin, end);
    } else {
        throw ValidationError("data.regression_csv or data.panel is required");
    }
    out.rows = out.design.complete_rows();
    if (out.rows.empty()) throw ValidationError("data has no complete rows");
    return out;
}

PenaltySpec structure_from_config(const json& cfg)
{
    const Section model = root(cfg).sub("model");
    PenaltySpec s;
    s.kind = model.parse("penalty", "sg_lasso", penalty_kind_from_string);
    s.intercept = model.parse("intercept", "pooled", intercept_mode_from_string);
    s.penalize_intercept = model.get<bool>("penalize_intercept", true);
    s.standardize = model.get<bool>("standardize", true);
    return s;
}

SynthConfig parse_synth(const Section& s, std::uint64_t seed)
{
    SynthConfig c;
    c.seed = seed;
    c.N = s.get_int("N", c.N, 2);
    c.T = s.get_int("T", c.T, 3);
    c.n_high = s.get_int("n_high", c.n_high, 1);
    c.n_low_lags = s.get_int("n_low_lags", c.n_low_lags, 1);
    c.signal_streams = s.get_int("signal_streams", c.signal_streams, 1);
    c.noise_streams = s.get_int("noise_streams", c.noise_streams, 0);
    c.groups = s.get_int("groups", c.groups, 1);
    c.rho = s.get<double>("rho", c.rho);
    c.sigma_r = s.get<double>("sigma_r", c.sigma_r);
    c.sigma_e = s.get<double>("sigma_e", c.sigma_e);
    c.consensus_noise = s.get<double>("consensus_noise", c.consensus_noise);
    c.offset_persistence = s.get<double>("offset_persistence", c.offset_persistence);
    c.heldout_entities = s.get_int("heldout_entities", c.heldout_entities, 0);
    c.heldout_missing = s.get<double>("heldout_missing", c.heldout_missing);
    c.validate();
    return c;
}

DgpConfig parse_dgp(const Section& mc, std::uint64_t seed)
{
    DgpConfig d;
    d.seed = seed;
    d.scenario = mc.parse("scenario", "baseline", scenario_from_string);
    d.intercept = mc.parse("intercept", "pooled_draw", dgp_intercept_from_string);
    d.N = mc.get_int("N", d.N, 1);
    d.T = mc.get_int("T", d.T, 2);
    d.k_noise = mc.get<int>("k_noise", d.k_noise);
    d.replications = mc.get_int("replications", d.replications, 1);
    d.burn_in = mc.get_int("burn_in", d.burn_in, 0);
    d.normalize_t = mc.get<bool>("normalize_t", d.normalize_t);
    d.lag_weights = mc.parse("lag_weights", "normalized", lag_weights_from_string);
    d.validate();
    return d;
}

// Each output is written once and fingerprinted for the manifest.
struct Outputs {
    fs::path dir;
    json files = json::object();
    std::vector<std::string> names;

    void write(const std::string& name, const std::string& content)
    {
        io::write_file(dir / name, content);
        files[name] = {{"fnv1a64", io::hex64(io::fnv1a64(content))}, {"bytes", content.size()}};
        names.push_back(name);
    }
    void record(const std::string& name)
    {
        const std::string content = io::read_file(dir / name);
        files[name] = {{"fnv1a64", io::hex64(io::fnv1a64(content))}, {"bytes", content.size()}};
        names.push_back(name);
    }
};

std::string fmt(double v) { return std::isfinite(v) ? io::format_double(v) : ""; }

void cmd_fit(const json& cfg, Outputs& out, std::ostream& log)
{
    const Section model = root(cfg).sub("model");
    const PenaltySpec structure = structure_from_config(cfg);
    const LoadedDesign ld = design_from_config(cfg, structure.kind == PenaltyKind::elastic_net &&
                                                         !root(cfg).sub("data").has("regression_csv"));
    PenaltySpec spec = structure;
    spec.lambda = model.require<double>("lambda");
    if (!(spec.lambda >= 0.0) || !std::isfinite(spec.lambda)) throw ValidationError("model.lambda must be finite and >= 0");
    spec.gamma = model.get_unit("gamma", 1.0);
    const TuningOptions t = parse_tuning(cfg);
    const MidasDesign sub = ld.design.subset(ld.rows);
    const FitResult f = fit(sub, sub.y, spec, t.solver);
    log << "fit: " << f.support.size() << " nonzero slopes, kkt " << f.kkt << (f.converged ? "" : " (not converged)")
        << "\n";
    out.write("fit.json", fit_to_json(f, &sub));
    std::string coef = "column,name,beta\n";
    for (Eigen::Index j = 0; j < f.beta.size(); ++j)
        coef += std::to_string(j) + "," +
                (static_cast<std::size_t>(j) < sub.column_names.size() ? sub.column_names[static_cast<std::size_t>(j)] : "") +
                "," + fmt(f.beta(j)) + "\n";
    out.write("coefficients.csv", coef);
    std::string alpha = "index,alpha\n";
    for (Eigen::Index i = 0; i < f.alpha.size(); ++i) alpha += std::to_string(i) + "," + fmt(f.alpha(i)) + "\n";
    out.write("intercepts.csv", alpha);
}

void cmd_tune(const json& cfg, Outputs& out, std::ostream& log)
{
    const Section model = root(cfg).sub("model");
    const PenaltySpec structure = structure_from_config(cfg);
    const LoadedDesign ld = design_from_config(cfg, structure.kind == PenaltyKind::elastic_net &&
                                                         !root(cfg).sub("data").has("regression_csv"));
    TuningOptions t = parse_tuning(cfg);
    const auto criteria = parse_criteria(model, "criteria", {Criterion::cv, Criterion::bic, Criterion::aic, Criterion::aicc});
    const Section ts = root(cfg).sub("tuning");
    t.unit = ts.parse("cv_unit", "entity", [](const std::string& v) {
        if (v == "entity") return CvUnit::entity;
        if (v == "time_block") return CvUnit::time_block;
        throw ValidationError("expected entity or time_block, got '" + v + "'");
    });
    FoldPlan plan;
    const FoldPlan* pp = nullptr;
    if (ts.get<bool>("shuffle_folds", false)) {
        const std::uint64_t seed = require_seed(cfg, "shuffled folds");
        int units = ld.design.n_entities;
        if (t.unit == CvUnit::time_block) {
            std::set<int> periods;
            for (int r : ld.rows) periods.insert(ld.design.row_period[static_cast<std::size_t>(r)]);
            units = static_cast<int>(periods.size());
        }
        plan = FoldPlan::shuffled(units, t.folds, seed);
        pp = &plan;
    }
    const auto reports = tune(ld.design, ld.design.y, ld.rows, structure, criteria, t, pp);
    std::string sel = "criterion,lambda,gamma,value,df,sigma2,boundary\n";
    json arr = json::array();
    for (const auto& r : reports) {
        sel += std::string(to_string(r.criterion)) + "," + fmt(r.best.lambda) + "," + fmt(r.best.gamma) + "," +
               fmt(r.best.value) + "," + fmt(r.best.df_hat) + "," + fmt(r.best.sigma2_hat) + "," +
               (r.boundary ? "1" : "0") + "\n";
        arr.push_back(json::parse(tuning_report_json(r)));
        for (const auto& w : r.warnings) log << "warning: " << w << "\n";
    }
    out.write("tuning_surface.csv", tuning_surface_csv(reports));
    out.write("selected.csv", sel);
    out.write("tuning_report.json", arr.dump(2) + "\n");
}

std::string paired_csv(const std::vector<ExperimentResult>& results)
{
    std::string s = "scenario,intercept,N,T,criterion,gamma_label,loss,mean_diff,se,ci_low,ci_high,p_less,n\n";
    for (const auto& r : results) {
        const auto& sp = r.spec;
        const bool both = std::find(sp.estimators.begin(), sp.estimators.end(), Estimator::sg_lasso_midas) !=
                              sp.estimators.end() &&
                          std::find(sp.estimators.begin(), sp.estimators.end(), Estimator::elnet_umidas) != sp.estimators.end();
        if (!both) continue;
        std::vector<std::string> labels{"selected", "best"};
        for (Criterion c : sp.criteria)
            for (const auto& label : labels) {
                const auto& a = r.cell(Estimator::sg_lasso_midas, c, label);
                const auto& b = r.cell(Estimator::elnet_umidas, c, label);
                for (int kind = 0; kind < 2; ++kind) {
                    const PairedComparison pc = kind == 0 ? paired_compare(a.loss, b.loss) : paired_compare(a.loss_cm, b.loss_cm);
                    s += std::string(to_string(sp.dgp.scenario)) + "," + to_string(sp.dgp.intercept) + "," +
                         std::to_string(sp.dgp.N) + "," + std::to_string(sp.dgp.T) + "," + to_string(c) + "," + label +
                         "," + (kind == 0 ? "realized" : "conditional_mean") + "," + fmt(pc.mean_diff) + "," + fmt(pc.se) +
                         "," + fmt(pc.ci_low) + "," + fmt(pc.ci_high) + "," + fmt(pc.p_less) + "," + std::to_string(pc.n) +
                         "\n";
                }
            }
    }
    return s;
}

std::string summary_csv(const std::vector<ExperimentResult>& results)
{
    std::string s = "scenario,intercept,N,T,replications,null_msfe,null_mc_se,oracle_flags\n";
    for (const auto& r : results)
        s += std::string(to_string(r.spec.dgp.scenario)) + "," + to_string(r.spec.dgp.intercept) + "," +
             std::to_string(r.spec.dgp.N) + "," + std::to_string(r.spec.dgp.T) + "," +
             std::to_string(r.spec.dgp.replications) + "," + fmt(r.null_msfe) + "," + fmt(r.null_mc_se) + "," +
             std::to_string(r.oracle_flags) + "\n";
    return s;
}

void cmd_mc(const json& cfg, Outputs& out, std::ostream& log)
{
    const std::uint64_t seed = require_seed(cfg, "mc-experiment");
    const Section mc = root(cfg).sub("mc");
    const TuningOptions tuning = parse_tuning(cfg);
    std::vector<ExperimentSpec> specs;
    if (mc.has("preset")) {
        const int reps = mc.get_int("replications", 200, 1);
        specs = mc.parse("preset", "", [&](const std::string& v) { return make_preset(v, reps, seed); }).experiments;
        for (auto& s : specs) {
            s.dgp.normalize_t = mc.get<bool>("normalize_t", false);
            s.dgp.lag_weights = mc.parse("lag_weights", "normalized", lag_weights_from_string);
        }
    } else {
        ExperimentSpec s;
        s.dgp = parse_dgp(mc, seed);
        specs.push_back(s);
    }
    std::vector<Estimator> estimators{Estimator::sg_lasso_midas, Estimator::elnet_umidas};
    if (mc.has("estimators")) {
        estimators.clear();
        for (const auto& e : mc.get<std::vector<std::string>>("estimators", {})) {
            try {
                estimators.push_back(estimator_from_string(e));
            } catch (const ValidationError& x) {
                throw ValidationError(mc.field("estimators") + ": " + x.what());
            }
        }
    }
    const auto criteria = parse_criteria(mc, "criteria", {Criterion::cv, Criterion::bic, Criterion::aic, Criterion::aicc});
    std::vector<ExperimentResult> results;
    for (auto& s : specs) {
        s.estimators = estimators;
        s.criteria = criteria;
        s.tuning = tuning;
        s.sg_dictionary = mc.parse("dictionary", "legendre", dictionary_kind_from_string);
        s.legendre_degree = mc.get_int("degree", 3, 1);
        s.ar_lags = mc.get_int("ar_lags", 0, 0);
        s.penalize_intercept = mc.get<bool>("penalize_intercept", true);
        s.standardize = mc.get<bool>("standardize", true);
        s.threads = threads_of(cfg);
        const auto t0 = std::chrono::steady_clock::now();
        results.push_back(run_experiment(s));
        log << to_string(s.dgp.scenario) << " " << to_string(s.dgp.intercept) << " " << s.dgp.N << "/" << s.dgp.T << ": "
            << s.dgp.replications << " replications in "
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << "s\n";
    }
    out.write("msfe_table.csv", msfe_table_csv(results, false));
    out.write("msfe_table_se.csv", msfe_table_csv(results, true));
    out.write("gamma_table.csv", gamma_table_csv(results));
    out.write("cells.csv", cells_long_csv(results));
    out.write("paired.csv", paired_csv(results));
    out.write("summary.csv", summary_csv(results));
}

struct StudyInputs {
    PanelDataset train;
    PanelDataset heldout;
    bool has_heldout = false;
};

StudyInputs study_data(const json& cfg)
{
    const Section data = root(cfg).sub("data");
    StudyInputs in;
    if (data.has("synth")) {
        const SynthEmpirical s = synth_empirical(parse_synth(data.sub("synth"), require_seed(cfg, "synthetic data")));
        in.train = s.train;
        in.heldout = s.heldout;
        in.has_heldout = s.heldout.n_entities() > 0;
    } else if (data.has("panel")) {
        in.train = load_panel_from(data, "panel");
        if (data.has("heldout_panel")) {
            in.heldout = load_panel_from(data, "heldout_panel");
            in.has_heldout = true;
        }
    } else {
        throw ValidationError("data.panel or data.synth is required");
    }
    return in;
}

NowcastModel parse_model(const Section& m, const TuningOptions& tuning)
{
    NowcastModel x;
    x.name = m.get<std::string>("name", "");
    x.kind = m.parse("kind", "pooled", model_kind_from_string);
    x.penalty = m.parse("penalty", "sg_lasso", penalty_kind_from_string);
    x.dictionary = m.parse("dictionary", "legendre", dictionary_kind_from_string);
    x.degree = m.get_int("degree", 3, 1);
    x.ar_lags = m.get_int("ar_lags", 1, 0);
    x.criterion = m.parse("criterion", "cv", criterion_from_string);
    x.penalize_intercept = m.get<bool>("penalize_intercept", true);
    x.standardize = m.get<bool>("standardize", true);
    x.tuning = tuning;
    x.tuning.threads = 1;
    return x;
}

void parse_study(const json& cfg, std::vector<NowcastModel>& models, EvalPlan& plan, StudyOptions& opts)
{
    const Section nc = root(cfg).sub("nowcast");
    const TuningOptions tuning = parse_tuning(cfg);
    plan.initial_window = nc.get_int("initial_window", 25, 1);
    if (nc.has("horizons")) plan.horizon_offsets = nc.get<std::vector<int>>("horizons", {});
    plan.threads = threads_of(cfg);
    opts.components = nc.get<bool>("components", true);
    opts.criteria = parse_criteria(nc, "criteria", opts.criteria);
    opts.grouped_table = nc.get<bool>("grouped_table", true);
    opts.imputation = nc.get<bool>("imputation", true);
    opts.daily_updates = nc.get<bool>("daily_updates", true);
    opts.outlier_k = nc.get<double>("outlier_k", 3.0);
    opts.histogram_bins = nc.get_int("histogram_bins", 20, 1);
    const Section cols = nc.sub("columns");
    opts.columns.return_series = cols.get<std::string>("return", opts.columns.return_series);
    opts.columns.error_series = cols.get<std::string>("analyst_error", opts.columns.error_series);
    opts.columns.consensus_series = cols.get<std::string>("consensus", opts.columns.consensus_series);
    if (nc.has("models")) {
        const json& arr = nc.j->at("models");
        if (!arr.is_array() || arr.empty()) throw ValidationError("nowcast.models must be a non-empty array");
        for (std::size_t k = 0; k < arr.size(); ++k) {
            if (!arr[k].is_object()) throw ValidationError("nowcast.models[" + std::to_string(k) + "] must be an object");
            models.push_back(parse_model({&arr[k], "nowcast.models[" + std::to_string(k) + "]"}, tuning));
        }
    } else {
        for (ModelKind k : {ModelKind::pooled, ModelKind::fixed_effects}) {
            NowcastModel m;
            m.kind = k;
            m.tuning = tuning;
            m.tuning.threads = 1;
            models.push_back(m);
        }
    }
}

void cmd_nowcast(const json& cfg, Outputs& out, std::ostream& log)
{
    std::vector<NowcastModel> models;
    EvalPlan plan;
    StudyOptions opts;
    parse_study(cfg, models, plan, opts);
    const StudyInputs in = study_data(cfg);
    const NowcastReport rep = run_study(in.train, in.has_heldout ? &in.heldout : nullptr, models, plan, opts);
    log << "nowcast: " << rep.evaluation_periods << " evaluation periods, " << rep.outliers.size() << " outlier entities\n";
    out.write("table3.csv", table3_csv(rep));
    if (!rep.grouped.empty()) out.write("table4.csv", table4_csv(rep));
    if (!rep.imputed.empty()) out.write("table5.csv", table5_csv(rep));
    if (!rep.daily.empty()) out.write("daily_updates.csv", daily_updates_csv(rep));
    out.write("mse_distribution.csv", mse_distribution_csv(rep));
    std::string dec = "model,n,mse_S,mse_r,mse_e,cross,identity_gap\n";
    for (std::size_t k = 0; k < rep.decompositions.size(); ++k) {
        const auto& d = rep.decompositions[k];
        dec += rep.model_names[k] + "," + std::to_string(d.n) + "," + fmt(d.mse_s) + "," + fmt(d.mse_r) + "," +
               fmt(d.mse_e) + "," + fmt(d.cross) + "," + fmt(d.gap) + "\n";
    }
    if (opts.components) dec += "corr_r_e,,,,,," + fmt(rep.component_corr) + "\n";
    out.write("decomposition.csv", dec);
}

void cmd_impute(const json& cfg, Outputs& out, std::ostream& log)
{
    std::vector<NowcastModel> models;
    EvalPlan plan;
    StudyOptions opts;
    parse_study(cfg, models, plan, opts);
    const StudyInputs in = study_data(cfg);
    if (!in.has_heldout) throw ValidationError("impute needs data.heldout_panel or data.synth.heldout_entities > 0");
    const auto rows = imputation_table(in.train, in.heldout, models.front(), plan, opts);
    log << "impute: " << in.heldout.n_entities() << " held-out entities\n";
    out.write("table5.csv", table5_csv(rows));
}

void cmd_dm(const json& cfg, Outputs& out, std::ostream& log)
{
    const Section dm = root(cfg).sub("dm");
    const fs::path path = dm.require<std::string>("errors_csv");
    if (!fs::exists(path)) throw ValidationError(dm.field("errors_csv") + ": file not found: " + path.string());
    const std::string ca = dm.get<std::string>("column_a", "err_a");
    const std::string cb = dm.get<std::string>("column_b", "err_b");
    std::istringstream in(io::read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
    const auto header = io::split_csv_line(line);
    int ia = -1, ib = -1, ie = -1;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        if (header[static_cast<std::size_t>(c)] == ca) ia = c;
        if (header[static_cast<std::size_t>(c)] == cb) ib = c;
        if (header[static_cast<std::size_t>(c)] == "entity") ie = c;
    }
    if (ia < 0 || ib < 0) throw ValidationError(dm.field("errors_csv") + " lacks columns '" + ca + "' and '" + cb + "'");
    std::map<std::string, std::vector<std::pair<double, double>>> by_entity;
    std::vector<std::string> order;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = io::split_csv_line(line);
        if (f.size() != header.size())
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(header.size()) + " fields");
        const std::string ent = ie >= 0 ? f[static_cast<std::size_t>(ie)] : "";
        if (!by_entity.count(ent)) order.push_back(ent);
        try {
            by_entity[ent].emplace_back(std::stod(f[static_cast<std::size_t>(ia)]), std::stod(f[static_cast<std::size_t>(ib)]));
        } catch (const std::exception&) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": error values must be numeric");
        }
    }
    std::size_t width = 0;
    for (const auto& [e, v] : by_entity) width = std::max(width, v.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(width),
                                                  std::numeric_limits<double>::quiet_NaN());
    Eigen::MatrixXd b = a;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& v = by_entity[order[i]];
        for (std::size_t t = 0; t < v.size(); ++t) {
            a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = v[t].first;
            b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = v[t].second;
        }
    }
    DmResult r;
    if (order.size() == 1) {
        std::vector<double> va, vb;
        for (const auto& [x, y] : by_entity[order[0]]) {
            va.push_back(x);
            vb.push_back(y);
        }
        r = dm_test(va, vb);
    } else {
        r = dm_test_pooled(a, b);
    }
    log << "dm-test: statistic " << r.statistic << ", one-sided p " << r.p_value << "\n";
    out.write("dm.csv", "statistic,p_value,mean_diff,n,clusters\n" + fmt(r.statistic) + "," + fmt(r.p_value) + "," +
                            fmt(r.mean_diff) + "," + std::to_string(r.n) + "," + std::to_string(r.clusters) + "\n");
}

void cmd_synth(const json& cfg, Outputs& out, std::ostream& log)
{
    const std::uint64_t seed = require_seed(cfg, "synth-data");
    const Section s = root(cfg).sub("synth");
    const std::string kind = s.get<std::string>("kind", "empirical");
    if (kind == "empirical") {
        const SynthEmpirical d = synth_empirical(parse_synth(s, seed));
        write_panel(d.train, out.dir / "panel.csv");
        out.record("panel.csv");
        out.record("panel.csv.schema.json");
        if (d.heldout.n_entities() > 0) {
            write_panel(d.heldout, out.dir / "heldout.csv");
            out.record("heldout.csv");
            out.record("heldout.csv.schema.json");
        }
        log << "synth-data: " << d.train.n_entities() << " entities x " << d.train.n_periods() << " periods\n";
    } else if (kind == "mc") {
        const DgpConfig dgp = parse_dgp(root(cfg).sub("mc"), seed);
        const int rep = s.get_int("replication", 0, 0);
        const PanelDataset d = simulate_panel(dgp, rep);
        write_panel(d, out.dir / "panel.csv");
        out.record("panel.csv");
        out.record("panel.csv.schema.json");
        log << "synth-data: replication " << rep << " of " << to_string(dgp.scenario) << "\n";
    } else {
        throw ValidationError(s.field("kind") + " must be empirical or mc, got '" + kind + "'");
    }
}

void resolve_path(json& j, const char* key, const fs::path& base)
{
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_string()) return;
    const fs::path p = j.at(key).get<std::string>();
    if (p.is_relative()) j[key] = (base / p).lexically_normal().string();
}

std::string error_kind(const std::exception& e)
{
    if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
        dynamic_cast<const nlohmann::json::exception*>(&e))
        return "validation";
    return "runtime";
}

std::string error_type(const std::exception& e)
{
    if (dynamic_cast<const ValidationError*>(&e)) return "ValidationError";
    if (dynamic_cast<const DimensionError*>(&e)) return "DimensionError";
    if (dynamic_cast<const LookAheadError*>(&e)) return "LookAheadError";
    if (dynamic_cast<const NumericalError*>(&e)) return "NumericalError";
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return "ConfigParseError";
    return "RuntimeError";
}

} // namespace

json load_config(const fs::path& path)
{
    if (!fs::exists(path)) throw ValidationError("config not found: " + path.string());
    json cfg;
    try {
        cfg = json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!cfg.is_object()) throw ValidationError("config must be a JSON object");
    const fs::path base = fs::absolute(path).parent_path();
    resolve_path(cfg, "output_dir", base);
    if (cfg.contains("data")) {
        for (const char* k : {"panel", "schema", "heldout_panel", "regression_csv"}) resolve_path(cfg["data"], k, base);
    }
    if (cfg.contains("dm")) resolve_path(cfg["dm"], "errors_csv", base);
    return cfg;
}

void apply_override(json& config, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' must look like key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    json* node = &config;
    std::size_t pos = 0;
    for (;;) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
        if (!node->is_object()) throw ValidationError("override key '" + key + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        pos = dot + 1;
    }
}

RunResult run(const json& config, std::ostream& log)
{
    for (const auto& [k, v] : config.items())
        if (!kTopLevel.count(k)) throw ValidationError("unknown config key '" + k + "'");
    const Section r = root(config);
    const std::string command = r.require<std::string>("command");
    if (!kCommands.count(command)) throw ValidationError("command '" + command + "' is not one of mc-experiment, fit, tune, nowcast, impute, dm-test, synth-data");
    threads_of(config);

    Outputs out;
    out.dir = r.get<std::string>("output_dir", "out");
    fs::create_directories(out.dir);
    const auto t0 = std::chrono::steady_clock::now();
    if (command == "mc-experiment") cmd_mc(config, out, log);
    else if (command == "fit") cmd_fit(config, out, log);
    else if (command == "tune") cmd_tune(config, out, log);
    else if (command == "nowcast") cmd_nowcast(config, out, log);
    else if (command == "impute") cmd_impute(config, out, log);
    else if (command == "dm-test") cmd_dm(config, out, log);
    else cmd_synth(config, out, log);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string cfg_text = config.dump();
    json m;
    m["tool"] = "panelnow";
    m["version"] = kVersion;
    m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    m["command"] = command;
    m["config_hash"] = io::hex64(io::fnv1a64(cfg_text));
    m["seed"] = config.contains("seed") ? config.at("seed") : json(nullptr);
    m["threads"] = threads_of(config);
    m["wall_time_seconds"] = wall;
    m["config"] = config;
    m["outputs"] = out.files;
    io::write_file(out.dir / "manifest.json", m.dump(2) + "\n");
    log << "wrote " << out.names.size() << " files and manifest.json to " << out.dir.string() << "\n";
    return {out.dir, out.names};
}

bool replay(const fs::path& manifest, const fs::path& out_dir, std::ostream& log)
{
    if (!fs::exists(manifest)) throw ValidationError("manifest not found: " + manifest.string());
    json m;
    try {
        m = json::parse(io::read_file(manifest));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
    }
    if (!m.contains("config") || !m.contains("outputs")) throw ValidationError("manifest lacks config or outputs");
    json cfg = m.at("config");
    cfg["output_dir"] = fs::absolute(out_dir).string();
    const RunResult res = run(cfg, log);
    bool same = true;
    for (const auto& [name, info] : m.at("outputs").items()) {
        const fs::path p = res.output_dir / name;
        const std::string got = fs::exists(p) ? io::hex64(io::fnv1a64(io::read_file(p))) : "missing";
        const std::string want = info.at("fnv1a64").get<std::string>();
        const bool ok = got == want;
        same = same && ok;
        log << (ok ? "identical " : "DIFFERS   ") << name << " " << want << " " << got << "\n";
    }
    return same;
}

int main(int argc, char** argv)
{
    CLI::App app{"Panel MIDAS nowcasting with sparse-group LASSO"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    auto* run_cmd = app.add_subcommand("run", "Run the command described by a JSON config");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<int> replications;
    std::string out_dir;
    std::vector<std::string> sets;
    run_cmd->add_option("config", config_path, "Config file")->required();
    run_cmd->add_option("--seed", seed, "Override seed");
    run_cmd->add_option("--threads", threads, "Override worker count");
    run_cmd->add_option("--replications", replications, "Override mc.replications");
    run_cmd->add_option("--out", out_dir, "Override output_dir");
    run_cmd->add_option("--set", sets, "Override any field: key.path=value");

    auto* replay_cmd = app.add_subcommand("replay", "Re-run a manifest and compare outputs byte for byte");
    std::string manifest_path;
    std::string replay_out;
    replay_cmd->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required();
    replay_cmd->add_option("--out", replay_out, "Directory for the re-run (default: <manifest dir>/replay)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : validation_failure;
    }

    std::string dir_for_error;
    try {
        if (*run_cmd) {
            json cfg = load_config(config_path);
            if (seed) cfg["seed"] = *seed;
            if (threads) cfg["threads"] = *threads;
            if (replications) apply_override(cfg, "mc.replications=" + std::to_string(*replications));
            if (!out_dir.empty()) cfg["output_dir"] = fs::absolute(out_dir).string();
            for (const auto& s : sets) apply_override(cfg, s);
            if (cfg.contains("output_dir") && cfg["output_dir"].is_string()) dir_for_error = cfg["output_dir"].get<std::string>();
            run(cfg, std::cerr);
            return ok;
        }
        const fs::path mp = manifest_path;
        const fs::path target = replay_out.empty() ? fs::absolute(mp).parent_path() / "replay" : fs::path(replay_out);
        dir_for_error = target.string();
        const bool same = replay(mp, target, std::cerr);
        std::cerr << (same ? "replay: all outputs identical\n" : "replay: outputs differ\n");
        return same ? ok : runtime_failure;
    } catch (const std::exception& e) {
        const std::string kind = error_kind(e);
        json err;
        err["error"] = {{"kind", kind}, {"type", error_type(e)}, {"message", e.what()}};
        const std::string text = err.dump(2);
        std::cerr << text << "\n";
        if (!dir_for_error.empty()) {
            try {
                fs::create_directories(dir_for_error);
                io::write_file(fs::path(dir_for_error) / "error.json", text + "\n");
            } catch (...) {
            }
        }
        return kind == "validation" ? validation_failure : runtime_failure;
    }
}

} // namespace panelnow::cli

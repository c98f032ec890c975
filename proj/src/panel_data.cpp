#include "panelnow/panel_data.hpp"

#include "panelnow/error.hpp"
#include "panelnow/io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace panelnow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s)
{
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
    return std::string(s.substr(b, e - b));
}

bool is_missing_token(const std::string& s)
{
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null";
}

template <class Int>
bool parse_int(const std::string& s, Int& out)
{
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool parse_double(const std::string& s, double& out)
{
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::string at_row(std::size_t row) { return " (row " + std::to_string(row) + ")"; }

} // namespace

void FrequencySpec::validate() const
{
    if (n_high < 1) throw ValidationError("n_high must be >= 1, got " + std::to_string(n_high));
    if (n_low_lags < 1) throw ValidationError("n_low_lags must be >= 1, got " + std::to_string(n_low_lags));
}

const Eigen::MatrixXd* PanelDataset::find_series(const std::string& name) const
{
    auto it = series.find(name);
    return it == series.end() ? nullptr : &it->second;
}

void PanelDataset::validate() const
{
    const Eigen::Index n = n_entities();
    const Eigen::Index t = n_periods();
    if (n == 0 || t == 0) throw ValidationError("panel has no entities or no periods");
    std::set<std::string> ids(entity_ids.begin(), entity_ids.end());
    if (static_cast<Eigen::Index>(ids.size()) != n) throw ValidationError("entity ids are not unique");
    if (targets.rows() != n || targets.cols() != t) throw DimensionError("targets must be N x T");
    if (observed.rows() != n || observed.cols() != t) throw DimensionError("target mask must be N x T");
    for (const auto& s : covariates) {
        s.freq.validate();
        if (s.values.rows() != n)
            throw DimensionError("covariate stream '" + s.name + "' has " + std::to_string(s.values.rows()) +
                                 " entities, expected " + std::to_string(n));
        if (s.values.cols() != t * s.freq.n_high)
            throw DimensionError("covariate stream '" + s.name + "' has length " + std::to_string(s.values.cols()) +
                                 ", expected T x n_high = " + std::to_string(t * s.freq.n_high));
        if (!s.values.allFinite()) throw ValidationError("covariate stream '" + s.name + "' contains missing values");
    }
    if (!group_labels.empty() && static_cast<Eigen::Index>(group_labels.size()) != n)
        throw ValidationError("group labels must cover all entities");
    for (const auto& [name, m] : series)
        if (m.rows() != n || m.cols() != t) throw DimensionError("series '" + name + "' must be N x T");
}

PanelDataset with_target(const PanelDataset& data, const std::string& name)
{
    const auto* s = data.find_series(name);
    if (!s) throw ValidationError("panel has no series named '" + name + "'");
    PanelDataset out = data;
    out.target_name = name;
    out.targets = *s;
    out.observed = s->array().isFinite();
    return out;
}

int visible_steps(const FrequencySpec& freq, Rational tau)
{
    if (tau.den <= 0 || tau.num < 0 || tau.num > tau.den)
        throw ValidationError("tau_fraction must lie in [0, 1], got " + std::to_string(tau.num) + "/" +
                              std::to_string(tau.den));
    const long scaled = tau.num * freq.n_high;
    if (scaled % tau.den != 0)
        throw ValidationError("tau_fraction " + std::to_string(tau.num) + "/" + std::to_string(tau.den) +
                              " is not a multiple of 1/" + std::to_string(freq.n_high));
    return static_cast<int>(scaled / tau.den);
}

int first_usable_period(const PanelDataset& data, Rational tau, int ar_lags)
{
    int first = std::max(ar_lags, 0);
    for (const auto& s : data.covariates) {
        const int need = s.freq.k_max() - visible_steps(s.freq, tau);
        const int t = need <= 0 ? 0 : (need + s.freq.n_high - 1) / s.freq.n_high;
        first = std::max(first, t);
    }
    return first;
}

std::vector<LaggedWindow> build_windows(const PanelDataset& data, const InformationSet& info, int ar_lags)
{
    if (ar_lags < 0) throw ValidationError("ar_lags must be >= 0");
    const int t = info.target_period;
    if (t < 0 || t >= data.n_periods())
        throw ValidationError("target period " + std::to_string(t) + " outside panel of " +
                              std::to_string(data.n_periods()) + " periods");
    const int first = first_usable_period(data, info.tau_fraction, ar_lags);
    if (t < first)
        throw ValidationError("insufficient history for target period " + std::to_string(t) +
                              "; first usable period is " + std::to_string(first));

    std::vector<LaggedWindow> out;
    out.reserve(static_cast<std::size_t>(data.n_entities()));
    for (int i = 0; i < data.n_entities(); ++i) {
        LaggedWindow w;
        w.entity = i;
        w.period = t;
        w.target = data.observed(i, t) ? data.targets(i, t) : kNaN;
        for (const auto& s : data.covariates) {
            const int k_max = s.freq.k_max();
            const long limit = static_cast<long>(t) * s.freq.n_high + visible_steps(s.freq, info.tau_fraction);
            const long newest = limit - 1;
            Eigen::VectorXd v(k_max);
            for (int j = 0; j < k_max; ++j) {
                const long h = newest - j;
                if (h >= limit) throw LookAheadError("window for stream '" + s.name + "' reaches past tau");
                v(j) = s.values(i, h);
            }
            w.hf.push_back(std::move(v));
            w.newest_index.push_back(newest);
        }
        w.ar.resize(ar_lags);
        for (int p = 1; p <= ar_lags; ++p)
            w.ar(p - 1) = data.observed(i, t - p) ? data.targets(i, t - p) : kNaN;
        out.push_back(std::move(w));
    }
    return out;
}

PanelSchema PanelSchema::from_json_file(const std::filesystem::path& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("schema " + path.string() + ": " + e.what());
    }
    PanelSchema s;
    try {
        if (j.contains("columns")) {
            const auto& c = j.at("columns");
            s.entity_col = c.value("entity", s.entity_col);
            s.period_col = c.value("period", s.period_col);
            s.sub_period_col = c.value("sub_period", s.sub_period_col);
            s.variable_col = c.value("variable", s.variable_col);
            s.value_col = c.value("value", s.value_col);
        }
        s.target = j.at("target").get<std::string>();
        for (const auto& c : j.value("covariates", nlohmann::json::array())) {
            FrequencySpec f{c.at("n_high").get<int>(), c.at("n_low_lags").get<int>()};
            f.validate();
            s.covariates.emplace_back(c.at("name").get<std::string>(), f);
        }
        s.series = j.value("series", std::vector<std::string>{});
        if (j.contains("groups")) s.groups = j.at("groups").get<std::map<std::string, int>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("schema " + path.string() + ": " + e.what());
    }
    return s;
}

std::string PanelSchema::to_json() const
{
    nlohmann::ordered_json j;
    j["columns"] = {{"entity", entity_col},
                    {"period", period_col},
                    {"sub_period", sub_period_col},
                    {"variable", variable_col},
                    {"value", value_col}};
    j["target"] = target;
    j["covariates"] = nlohmann::ordered_json::array();
    for (const auto& [name, f] : covariates)
        j["covariates"].push_back({{"name", name}, {"n_high", f.n_high}, {"n_low_lags", f.n_low_lags}});
    j["series"] = series;
    if (!groups.empty()) j["groups"] = groups;
    return j.dump(2) + "\n";
}

PanelDataset load_panel(const std::filesystem::path& csv)
{
    return load_panel(csv, PanelSchema::from_json_file(csv.string() + ".schema.json"));
}

PanelDataset load_panel(const std::filesystem::path& csv, const PanelSchema& schema)
{
    const std::string text = io::read_file(csv);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty panel file: " + csv.string());
    const auto header = io::split_csv_line(line);
    auto col = [&](const std::string& name) {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (trim(header[c]) == name) return c;
        throw ValidationError("panel file lacks column '" + name + "'");
    };
    const std::size_t c_ent = col(schema.entity_col), c_per = col(schema.period_col),
                      c_sub = col(schema.sub_period_col), c_var = col(schema.variable_col),
                      c_val = col(schema.value_col);

    enum class Kind { target, series, covariate };
    std::unordered_map<std::string, std::pair<Kind, int>> vars;
    vars[schema.target] = {Kind::target, 0};
    for (std::size_t k = 0; k < schema.series.size(); ++k) vars[schema.series[k]] = {Kind::series, static_cast<int>(k)};
    for (std::size_t k = 0; k < schema.covariates.size(); ++k)
        vars[schema.covariates[k].first] = {Kind::covariate, static_cast<int>(k)};

    struct Record {
        int entity;
        long period;
        int sub;
        Kind kind;
        int var;
        double value;
        std::size_t row;
    };
    std::vector<Record> records;
    std::vector<std::string> entity_ids;
    std::unordered_map<std::string, int> entity_index;
    long pmin = std::numeric_limits<long>::max(), pmax = std::numeric_limits<long>::min();

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = io::split_csv_line(line);
        if (f.size() != header.size())
            throw ValidationError("malformed row: expected " + std::to_string(header.size()) + " fields, got " +
                                  std::to_string(f.size()) + at_row(row));
        const std::string ent = trim(f[c_ent]);
        if (ent.empty()) throw ValidationError("malformed row: empty entity" + at_row(row));
        long period = 0;
        if (!parse_int(trim(f[c_per]), period))
            throw ValidationError("malformed row: period '" + f[c_per] + "' is not an integer" + at_row(row));
        int sub = 0;
        const std::string sub_s = trim(f[c_sub]);
        if (!sub_s.empty() && !parse_int(sub_s, sub))
            throw ValidationError("malformed row: sub_period '" + sub_s + "' is not an integer" + at_row(row));
        const std::string var = trim(f[c_var]);
        auto vit = vars.find(var);
        if (vit == vars.end()) throw ValidationError("unknown variable '" + var + "'" + at_row(row));
        const std::string val_s = trim(f[c_val]);
        double value = kNaN;
        if (!is_missing_token(val_s) && !parse_double(val_s, value))
            throw ValidationError("malformed row: value '" + val_s + "' is not numeric" + at_row(row));

        const auto [kind, vidx] = vit->second;
        if (kind == Kind::covariate) {
            const int n_high = schema.covariates[static_cast<std::size_t>(vidx)].second.n_high;
            if (sub < 0 || sub >= n_high)
                throw ValidationError("inconsistent frequency: sub_period " + std::to_string(sub) +
                                      " outside [0, " + std::to_string(n_high) + ") for '" + var + "'" + at_row(row));
            if (std::isnan(value)) throw ValidationError("missing covariate value for '" + var + "'" + at_row(row));
        } else if (sub != 0) {
            throw ValidationError("inconsistent frequency: low-frequency variable '" + var +
                                  "' has sub_period " + std::to_string(sub) + at_row(row));
        }

        auto [eit, inserted] = entity_index.try_emplace(ent, static_cast<int>(entity_ids.size()));
        if (inserted) entity_ids.push_back(ent);
        pmin = std::min(pmin, period);
        pmax = std::max(pmax, period);
        records.push_back({eit->second, period, sub, kind, vidx, value, row});
    }
    if (records.empty()) throw ValidationError("panel file has no data rows: " + csv.string());

    PanelDataset d;
    d.entity_ids = entity_ids;
    d.target_name = schema.target;
    const int n = static_cast<int>(entity_ids.size());
    const long t_long = pmax - pmin + 1;
    if (t_long > 1000000) throw ValidationError("period range is implausibly large");
    const int t = static_cast<int>(t_long);
    for (long p = pmin; p <= pmax; ++p) d.period_labels.push_back(p);
    d.targets = Eigen::MatrixXd::Constant(n, t, kNaN);
    d.observed = BoolMatrix::Constant(n, t, false);
    for (const auto& name : schema.series) d.series[name] = Eigen::MatrixXd::Constant(n, t, kNaN);
    for (const auto& [name, f] : schema.covariates)
        d.covariates.push_back({name, f, Eigen::MatrixXd::Constant(n, t * f.n_high, kNaN)});

    std::vector<BoolMatrix> seen_series(schema.series.size(), BoolMatrix::Constant(n, t, false));
    BoolMatrix seen_target = BoolMatrix::Constant(n, t, false);
    std::vector<BoolMatrix> seen_cov;
    for (const auto& c : d.covariates) seen_cov.push_back(BoolMatrix::Constant(n, c.values.cols(), false));

    for (const auto& r : records) {
        const int ti = static_cast<int>(r.period - pmin);
        auto dup = [&](const std::string& var) {
            throw ValidationError("duplicate (entity, period) key (" + entity_ids[static_cast<std::size_t>(r.entity)] +
                                  ", " + std::to_string(r.period) + ") for '" + var + "'" + at_row(r.row));
        };
        switch (r.kind) {
        case Kind::target:
            if (seen_target(r.entity, ti)) dup(schema.target);
            seen_target(r.entity, ti) = true;
            d.targets(r.entity, ti) = r.value;
            d.observed(r.entity, ti) = !std::isnan(r.value);
            break;
        case Kind::series: {
            const auto& name = schema.series[static_cast<std::size_t>(r.var)];
            auto& seen = seen_series[static_cast<std::size_t>(r.var)];
            if (seen(r.entity, ti)) dup(name);
            seen(r.entity, ti) = true;
            d.series[name](r.entity, ti) = r.value;
            break;
        }
        case Kind::covariate: {
            auto& c = d.covariates[static_cast<std::size_t>(r.var)];
            const long h = static_cast<long>(ti) * c.freq.n_high + r.sub;
            auto& seen = seen_cov[static_cast<std::size_t>(r.var)];
            if (seen(r.entity, h))
                throw ValidationError("duplicate (entity, period) key (" +
                                      entity_ids[static_cast<std::size_t>(r.entity)] + ", " +
                                      std::to_string(r.period) + ") for '" + c.name + "' sub_period " +
                                      std::to_string(r.sub) + at_row(r.row));
            seen(r.entity, h) = true;
            c.values(r.entity, h) = r.value;
            break;
        }
        }
    }

    for (std::size_t k = 0; k < d.covariates.size(); ++k) {
        const auto& c = d.covariates[k];
        for (int i = 0; i < n; ++i) {
            const auto count = seen_cov[k].row(i).count();
            if (count != c.values.cols())
                throw ValidationError("length mismatch: stream '" + c.name + "' has " + std::to_string(count) +
                                      " values for entity '" + entity_ids[static_cast<std::size_t>(i)] +
                                      "', expected T x n_high = " + std::to_string(c.values.cols()));
        }
    }

    if (!schema.groups.empty()) {
        d.group_labels.resize(static_cast<std::size_t>(n));
        std::vector<std::string> missing;
        for (int i = 0; i < n; ++i) {
            auto it = schema.groups.find(entity_ids[static_cast<std::size_t>(i)]);
            if (it == schema.groups.end())
                missing.push_back(entity_ids[static_cast<std::size_t>(i)]);
            else
                d.group_labels[static_cast<std::size_t>(i)] = it->second;
        }
        if (!missing.empty()) {
            std::string msg = "group labels do not cover entities:";
            for (const auto& m : missing) msg += " " + m;
            throw ValidationError(msg);
        }
    }
    d.validate();
    return d;
}

PanelSchema schema_of(const PanelDataset& data)
{
    PanelSchema s;
    s.target = data.target_name;
    for (const auto& c : data.covariates) s.covariates.emplace_back(c.name, c.freq);
    for (const auto& [name, m] : data.series) s.series.push_back(name);
    if (data.has_groups())
        for (int i = 0; i < data.n_entities(); ++i)
            s.groups[data.entity_ids[static_cast<std::size_t>(i)]] = data.group_labels[static_cast<std::size_t>(i)];
    return s;
}

std::string panel_to_long_csv(const PanelDataset& data)
{
    std::string out = "entity,period,sub_period,variable,value\n";
    auto emit = [&](const std::string& ent, long period, const std::string& sub, const std::string& var, double v) {
        out += ent;
        out += ',';
        out += std::to_string(period);
        out += ',';
        out += sub;
        out += ',';
        out += var;
        out += ',';
        out += io::format_double(v);
        out += '\n';
    };
    for (int i = 0; i < data.n_entities(); ++i) {
        const auto& ent = data.entity_ids[static_cast<std::size_t>(i)];
        for (int t = 0; t < data.n_periods(); ++t) {
            const long p = data.period_labels[static_cast<std::size_t>(t)];
            if (data.observed(i, t)) emit(ent, p, "", data.target_name, data.targets(i, t));
            for (const auto& [name, m] : data.series)
                if (!std::isnan(m(i, t))) emit(ent, p, "", name, m(i, t));
            for (const auto& c : data.covariates)
                for (int s = 0; s < c.freq.n_high; ++s)
                    emit(ent, p, std::to_string(s), c.name, c.values(i, static_cast<long>(t) * c.freq.n_high + s));
        }
    }
    return out;
}

void write_panel(const PanelDataset& data, const std::filesystem::path& csv)
{
    io::write_file(csv, panel_to_long_csv(data));
    io::write_file(csv.string() + ".schema.json", schema_of(data).to_json());
}

void write_panel_wide(const PanelDataset& data, const std::filesystem::path& csv)
{
    std::string out = "entity,period," + data.target_name;
    for (const auto& [name, m] : data.series) out += "," + name;
    for (const auto& c : data.covariates)
        for (int s = 0; s < c.freq.n_high; ++s) out += "," + c.name + "_" + std::to_string(s);
    out += '\n';
    for (int i = 0; i < data.n_entities(); ++i) {
        for (int t = 0; t < data.n_periods(); ++t) {
            out += data.entity_ids[static_cast<std::size_t>(i)] + "," +
                   std::to_string(data.period_labels[static_cast<std::size_t>(t)]) + "," +
                   io::format_double(data.observed(i, t) ? data.targets(i, t) : kNaN);
            for (const auto& [name, m] : data.series) out += "," + io::format_double(m(i, t));
            for (const auto& c : data.covariates)
                for (int s = 0; s < c.freq.n_high; ++s)
                    out += "," + io::format_double(c.values(i, static_cast<long>(t) * c.freq.n_high + s));
            out += '\n';
        }
    }
    io::write_file(csv, out);
}

} // namespace panelnow

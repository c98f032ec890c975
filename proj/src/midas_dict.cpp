#include "panelnow/midas_dict.hpp"

#include "panelnow/error.hpp"
#include "panelnow/io_util.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>

namespace panelnow {

const char* to_string(DictionaryKind kind)
{
    switch (kind) {
    case DictionaryKind::legendre: return "legendre";
    case DictionaryKind::legendre_discrete: return "legendre_discrete";
    case DictionaryKind::beta_density: return "beta_density";
    case DictionaryKind::unrestricted: return "unrestricted";
    }
    return "unknown";
}

DictionaryKind dictionary_kind_from_string(const std::string& s)
{
    if (s == "legendre") return DictionaryKind::legendre;
    if (s == "legendre_discrete") return DictionaryKind::legendre_discrete;
    if (s == "beta_density") return DictionaryKind::beta_density;
    if (s == "unrestricted" || s == "umidas") return DictionaryKind::unrestricted;
    throw ValidationError("unknown dictionary kind '" + s + "'");
}

double legendre_grid_point(int j, int k_max)
{
    return k_max == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(k_max - 1);
}

double shifted_legendre(int l, double s)
{
    const double x = 2.0 * s - 1.0;
    if (l == 0) return 1.0;
    double prev = 1.0, cur = x;
    for (int n = 1; n < l; ++n) {
        const double next = ((2.0 * n + 1.0) * x * cur - n * prev) / (n + 1.0);
        prev = cur;
        cur = next;
    }
    return cur;
}

Dictionary legendre_dictionary(int k_max, int degree)
{
    if (k_max < 1) throw ValidationError("k_max must be >= 1");
    if (degree < 1) throw ValidationError("Legendre degree must be >= 1");
    if (degree > k_max)
        throw ValidationError("rank error: Legendre degree " + std::to_string(degree) + " exceeds k_max " +
                              std::to_string(k_max));
    Dictionary d;
    d.kind = DictionaryKind::legendre;
    d.degree = degree;
    d.W.resize(k_max, degree);
    for (int j = 0; j < k_max; ++j)
        for (int l = 0; l < degree; ++l) d.W(j, l) = shifted_legendre(l, legendre_grid_point(j, k_max));
    return d;
}

Dictionary discrete_legendre_dictionary(int k_max, int degree)
{
    Dictionary d = legendre_dictionary(k_max, degree);
    d.kind = DictionaryKind::legendre_discrete;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(d.W);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(k_max, degree);
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(degree, degree);
    for (int l = 0; l < degree; ++l)
        if (r(l, l) < 0) q.col(l) = -q.col(l);
    d.W = q * std::sqrt(static_cast<double>(k_max));
    return d;
}

Dictionary unrestricted_dictionary(int k_max)
{
    if (k_max < 1) throw ValidationError("k_max must be >= 1");
    Dictionary d;
    d.kind = DictionaryKind::unrestricted;
    d.degree = k_max;
    d.W = Eigen::MatrixXd::Identity(k_max, k_max);
    return d;
}

WeightCurve beta_weights(int k_max, double a, double b)
{
    if (k_max < 1) throw ValidationError("k_max must be >= 1");
    if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("beta weight parameters must be positive");
    WeightCurve w;
    w.values.resize(k_max);
    for (int j = 0; j < k_max; ++j) {
        const double s = static_cast<double>(j + 1) / static_cast<double>(k_max + 1);
        w.values(j) = std::pow(s, a - 1.0) * std::pow(1.0 - s, b - 1.0);
    }
    w.values /= w.values.sum();
    return w;
}

Dictionary beta_dictionary(int k_max, double a, double b)
{
    Dictionary d;
    d.kind = DictionaryKind::beta_density;
    d.degree = 1;
    d.a = a;
    d.b = b;
    d.W = beta_weights(k_max, a, b).values * static_cast<double>(k_max);
    return d;
}

Dictionary make_dictionary(DictionaryKind kind, int k_max, int degree)
{
    switch (kind) {
    case DictionaryKind::legendre: return legendre_dictionary(k_max, degree);
    case DictionaryKind::legendre_discrete: return discrete_legendre_dictionary(k_max, degree);
    case DictionaryKind::unrestricted: return unrestricted_dictionary(k_max);
    case DictionaryKind::beta_density: return beta_dictionary(k_max, 1.0, 1.0);
    }
    throw ValidationError("unknown dictionary kind");
}

int MidasDesign::n_groups() const
{
    int g = 0;
    for (int c : column_group) g = std::max(g, c + 1);
    return g;
}

std::vector<std::vector<int>> MidasDesign::groups() const
{
    std::vector<std::vector<int>> out(static_cast<std::size_t>(n_groups()));
    for (std::size_t c = 0; c < column_group.size(); ++c)
        out[static_cast<std::size_t>(column_group[c])].push_back(static_cast<int>(c));
    return out;
}

std::vector<int> MidasDesign::complete_rows() const
{
    std::vector<int> rows;
    for (Eigen::Index r = 0; r < X.rows(); ++r)
        if (std::isfinite(y(r)) && X.row(r).allFinite()) rows.push_back(static_cast<int>(r));
    return rows;
}

MidasDesign MidasDesign::subset(const std::vector<int>& rows) const
{
    MidasDesign d;
    d.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    d.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        d.X.row(static_cast<Eigen::Index>(r)) = X.row(rows[r]);
        d.y(static_cast<Eigen::Index>(r)) = y(rows[r]);
        d.row_entity.push_back(row_entity[static_cast<std::size_t>(rows[r])]);
        d.row_period.push_back(row_period[static_cast<std::size_t>(rows[r])]);
    }
    d.column_group = column_group;
    d.column_names = column_names;
    d.entity_group = entity_group;
    d.n_entities = n_entities;
    d.unrestricted = unrestricted;
    return d;
}

MidasDesign project_design(const std::vector<LaggedWindow>& windows, const Dictionary& dict)
{
    const std::size_t k = windows.empty() ? 0 : windows.front().hf.size();
    return project_design(windows, std::vector<Dictionary>(k, dict));
}

MidasDesign project_design(const std::vector<LaggedWindow>& windows, const std::vector<Dictionary>& dicts,
                           const std::vector<std::string>& stream_names)
{
    MidasDesign d;
    if (windows.empty()) return d;
    const std::size_t n_streams = windows.front().hf.size();
    const Eigen::Index ar = windows.front().ar.size();
    if (dicts.size() != n_streams)
        throw DimensionError("need one dictionary per covariate stream: " + std::to_string(dicts.size()) + " vs " +
                             std::to_string(n_streams));
    Eigen::Index cols = ar;
    for (const auto& dict : dicts) cols += dict.size();

    d.X.resize(static_cast<Eigen::Index>(windows.size()), cols);
    d.y.resize(static_cast<Eigen::Index>(windows.size()));
    d.unrestricted = std::all_of(dicts.begin(), dicts.end(),
                                 [](const Dictionary& x) { return x.kind == DictionaryKind::unrestricted; });

    int group = 0;
    for (std::size_t k = 0; k < n_streams; ++k, ++group) {
        const std::string base = k < stream_names.size() ? stream_names[k] : "x" + std::to_string(k + 1);
        for (int l = 0; l < dicts[k].size(); ++l) {
            d.column_group.push_back(group);
            d.column_names.push_back(base + "_L" + std::to_string(l));
        }
    }
    for (Eigen::Index p = 0; p < ar; ++p, ++group) {
        d.column_group.push_back(group);
        d.column_names.push_back("ar" + std::to_string(p + 1));
    }

    int max_entity = -1;
    for (std::size_t r = 0; r < windows.size(); ++r) {
        const auto& w = windows[r];
        if (w.hf.size() != n_streams || w.ar.size() != ar) throw DimensionError("windows have inconsistent shapes");
        Eigen::Index c = 0;
        for (std::size_t k = 0; k < n_streams; ++k) {
            const auto& W = dicts[k].W;
            if (w.hf[k].size() != W.rows())
                throw DimensionError("window length " + std::to_string(w.hf[k].size()) +
                                     " does not match dictionary rows " + std::to_string(W.rows()));
            d.X.row(static_cast<Eigen::Index>(r)).segment(c, W.cols()) =
                (w.hf[k].transpose() * W) / static_cast<double>(W.rows());
            c += W.cols();
        }
        d.X.row(static_cast<Eigen::Index>(r)).tail(ar) = w.ar.transpose();
        d.y(static_cast<Eigen::Index>(r)) = w.target;
        d.row_entity.push_back(w.entity);
        d.row_period.push_back(w.period);
        max_entity = std::max(max_entity, w.entity);
    }
    d.n_entities = max_entity + 1;
    return d;
}

MidasDesign build_design(const PanelDataset& data, const Dictionary& dict, Rational tau, int ar_lags,
                         int period_begin, int period_end)
{
    std::vector<LaggedWindow> windows;
    for (int t = period_begin; t < period_end; ++t) {
        auto w = build_windows(data, InformationSet{t, tau}, ar_lags);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    std::vector<std::string> names;
    std::vector<Dictionary> dicts;
    for (const auto& c : data.covariates) {
        names.push_back(c.name);
        if (c.freq.k_max() != dict.k_max())
            throw DimensionError("stream '" + c.name + "' has k_max " + std::to_string(c.freq.k_max()) +
                                 " but the dictionary has " + std::to_string(dict.k_max()) + " rows");
        dicts.push_back(dict);
    }
    MidasDesign d = project_design(windows, dicts, names);
    d.n_entities = data.n_entities();
    d.entity_group = data.group_labels;
    return d;
}

void write_dictionary_csv(const Dictionary& dict, const std::filesystem::path& path)
{
    std::string out = "lag";
    for (int l = 0; l < dict.size(); ++l) out += ",w" + std::to_string(l);
    out += '\n';
    for (int j = 0; j < dict.k_max(); ++j) {
        out += std::to_string(j);
        for (int l = 0; l < dict.size(); ++l) out += "," + io::format_double(dict.W(j, l));
        out += '\n';
    }
    io::write_file(path, out);
}

} // namespace panelnow

#include "panelnow/error.hpp"
#include "panelnow/io_util.hpp"
#include "panelnow/panel_data.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

using namespace panelnow;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    const fs::path d = fs::temp_directory_path() / ("panelnow_panel_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

PanelSchema monthly_schema()
{
    PanelSchema s;
    s.target = "y";
    s.covariates.push_back({"ip", FrequencySpec{3, 1}});
    return s;
}

// 2 entities, 3 quarters, one monthly stream; stream value encodes (entity, month).
std::string toy_csv(int skip_month = -1, bool duplicate = false)
{
    std::string s = "entity,period,sub_period,variable,value\n";
    for (const char* e : {"a", "b"})
        for (int t = 0; t < 3; ++t) {
            s += std::string(e) + "," + std::to_string(2000 + t) + ",,y," + std::to_string(t + (e[0] == 'b' ? 10 : 0)) + "\n";
            for (int m = 0; m < 3; ++m) {
                if (e[0] == 'a' && t * 3 + m == skip_month) continue;
                s += std::string(e) + "," + std::to_string(2000 + t) + "," + std::to_string(m) + ",ip," +
                     std::to_string(100 * (e[0] == 'b') + 3 * t + m) + "\n";
            }
        }
    if (duplicate) s += "a,2001,,y,7\n";
    return s;
}

PanelDataset indexed_panel(int n, int t, int n_high, int n_low_lags)
{
    PanelDataset d;
    for (int i = 0; i < n; ++i) d.entity_ids.push_back("e" + std::to_string(i));
    for (int p = 0; p < t; ++p) d.period_labels.push_back(p);
    d.targets = Eigen::MatrixXd::Zero(n, t);
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < t; ++p) d.targets(i, p) = 1000.0 * i + p;
    d.observed = BoolMatrix::Constant(n, t, true);
    CovariateStream s;
    s.name = "x";
    s.freq = {n_high, n_low_lags};
    s.values.resize(n, static_cast<Eigen::Index>(t) * n_high);
    for (int i = 0; i < n; ++i)
        for (Eigen::Index h = 0; h < s.values.cols(); ++h) s.values(i, h) = static_cast<double>(h);
    d.covariates.push_back(s);
    d.validate();
    return d;
}

} // namespace

TEST_SUITE("panel-data")
{
    TEST_CASE("toy csv loads with the expected shapes")
    {
        const auto dir = scratch_dir("shape");
        io::write_file(dir / "p.csv", toy_csv());
        const PanelDataset d = load_panel(dir / "p.csv", monthly_schema());
        CHECK(d.n_entities() == 2);
        CHECK(d.n_periods() == 3);
        REQUIRE(d.covariates.size() == 1);
        CHECK(d.covariates[0].values.cols() == 9);
        CHECK(d.covariates[0].values(1, 4) == 104.0);
        CHECK(d.targets(1, 2) == 12.0);
        CHECK(d.period_labels.front() == 2000);
    }

    TEST_CASE("duplicate key is reported with the key")
    {
        const auto dir = scratch_dir("dup");
        io::write_file(dir / "p.csv", toy_csv(-1, true));
        try {
            load_panel(dir / "p.csv", monthly_schema());
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("duplicate") != std::string::npos);
            CHECK(msg.find("a") != std::string::npos);
            CHECK(msg.find("2001") != std::string::npos);
        }
    }

    TEST_CASE("short covariate stream is a length mismatch")
    {
        const auto dir = scratch_dir("len");
        io::write_file(dir / "p.csv", toy_csv(4));
        try {
            load_panel(dir / "p.csv", monthly_schema());
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("length mismatch") != std::string::npos);
        }
    }

    TEST_CASE("malformed input is rejected")
    {
        const auto dir = scratch_dir("bad");
        io::write_file(dir / "p.csv", "entity,period,sub_period,variable,value\na,x,,y,1\n");
        CHECK_THROWS_AS(load_panel(dir / "p.csv", monthly_schema()), ValidationError);
        io::write_file(dir / "q.csv", "entity,period,variable,value\na,1,y,1\n");
        CHECK_THROWS_AS(load_panel(dir / "q.csv", monthly_schema()), ValidationError);
        io::write_file(dir / "r.csv", "entity,period,sub_period,variable,value\na,1,,zz,1\n");
        CHECK_THROWS_AS(load_panel(dir / "r.csv", monthly_schema()), ValidationError);
    }

    TEST_CASE("write and reload round trip")
    {
        const auto dir = scratch_dir("rt");
        PanelDataset d = indexed_panel(3, 5, 3, 2);
        d.series["consensus"] = d.targets * 0.5;
        d.series["consensus"](1, 2) = std::nan("");
        d.group_labels = {0, 1, 1};
        write_panel(d, dir / "p.csv");
        const PanelDataset r = load_panel(dir / "p.csv");
        CHECK(r.entity_ids == d.entity_ids);
        CHECK(r.targets == d.targets);
        CHECK(r.covariates[0].values == d.covariates[0].values);
        CHECK(r.covariates[0].freq.n_low_lags == 2);
        CHECK(r.group_labels == d.group_labels);
        CHECK(std::isnan(r.series.at("consensus")(1, 2)));
        CHECK(r.series.at("consensus")(2, 3) == d.series.at("consensus")(2, 3));
        CHECK(panel_to_long_csv(r) == panel_to_long_csv(d));
    }

    TEST_CASE("lag window at period start covers the previous twelve steps")
    {
        const PanelDataset d = indexed_panel(2, 8, 3, 4);
        const auto w = build_windows(d, {5, Rational{0, 1}}, 0);
        REQUIRE(w.size() == 2);
        CHECK(w[0].hf[0].size() == 12);
        CHECK(w[0].newest_index[0] == 14);
        CHECK(w[0].hf[0](0) == 14.0);
        CHECK(w[0].hf[0](11) == 3.0);
    }

    TEST_CASE("one visible month shifts the window forward one step")
    {
        const PanelDataset d = indexed_panel(2, 8, 3, 4);
        const auto w = build_windows(d, {5, Rational{1, 3}}, 0);
        CHECK(w[1].newest_index[0] == 15);
        CHECK(w[1].hf[0](0) == 15.0);
        CHECK(w[1].hf[0](11) == 4.0);
    }

    TEST_CASE("insufficient history is an error")
    {
        const PanelDataset d = indexed_panel(2, 8, 3, 4);
        CHECK(first_usable_period(d, Rational{0, 1}, 0) == 4);
        CHECK(first_usable_period(d, Rational{1, 3}, 0) == 4);
        CHECK(first_usable_period(d, Rational{1, 1}, 0) == 3);
        CHECK_THROWS_AS(build_windows(d, {3, Rational{0, 1}}, 0), ValidationError);
        CHECK_THROWS_AS(build_windows(d, {6, Rational{1, 2}}, 0), ValidationError);
    }

    TEST_CASE("autoregressive lags come from earlier periods")
    {
        const PanelDataset d = indexed_panel(2, 8, 3, 1);
        const auto w = build_windows(d, {4, Rational{2, 3}}, 2);
        CHECK(w[1].ar(0) == 1003.0);
        CHECK(w[1].ar(1) == 1002.0);
    }

    TEST_CASE("no window uses data past its information set")
    {
        std::mt19937_64 rng(7);
        for (int rep = 0; rep < 50; ++rep) {
            const int n_high = 1 + static_cast<int>(rng() % 5);
            const int lags = 1 + static_cast<int>(rng() % 4);
            const PanelDataset d = indexed_panel(1, 12, n_high, lags);
            const long vis = static_cast<long>(rng() % static_cast<unsigned>(n_high + 1));
            const Rational tau{vis, n_high};
            const int first = first_usable_period(d, tau, 0);
            for (int t = first; t < 12; ++t) {
                const auto w = build_windows(d, {t, tau}, 0);
                const double limit = static_cast<double>(t) * n_high + static_cast<double>(vis);
                CHECK(w[0].hf[0].maxCoeff() < limit);
                CHECK(w[0].hf[0].minCoeff() >= 0.0);
            }
        }
    }

    TEST_CASE("with_target swaps in an auxiliary series")
    {
        PanelDataset d = indexed_panel(2, 4, 1, 1);
        Eigen::MatrixXd s = Eigen::MatrixXd::Ones(2, 4);
        s(0, 1) = std::nan("");
        d.series["r"] = s;
        const PanelDataset r = with_target(d, "r");
        CHECK(r.target_name == "r");
        CHECK_FALSE(r.observed(0, 1));
        CHECK(r.observed(1, 1));
        CHECK_THROWS_AS(with_target(d, "nope"), ValidationError);
    }
}

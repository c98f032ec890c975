#include "panelnow/error.hpp"
#include "panelnow/midas_dict.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace panelnow;

namespace {

PanelDataset stream_panel(int n, int t, int n_high, int n_low_lags, int streams, std::uint64_t seed, double constant = NAN)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    PanelDataset d;
    for (int i = 0; i < n; ++i) d.entity_ids.push_back("e" + std::to_string(i));
    for (int p = 0; p < t; ++p) d.period_labels.push_back(p);
    d.targets = Eigen::MatrixXd::Zero(n, t);
    d.observed = BoolMatrix::Constant(n, t, true);
    for (int k = 0; k < streams; ++k) {
        CovariateStream s;
        s.name = "s" + std::to_string(k);
        s.freq = {n_high, n_low_lags};
        s.values.resize(n, static_cast<Eigen::Index>(t) * n_high);
        for (Eigen::Index i = 0; i < s.values.size(); ++i) s.values.data()[i] = std::isnan(constant) ? z(rng) : constant;
        d.covariates.push_back(s);
    }
    return d;
}

} // namespace

TEST_SUITE("midas-dict")
{
    TEST_CASE("Legendre columns")
    {
        const Dictionary d = legendre_dictionary(12, 3);
        CHECK(d.W.rows() == 12);
        CHECK(d.W.cols() == 3);
        CHECK(d.W.col(0).isOnes());
        CHECK(shifted_legendre(1, 0.0) == doctest::Approx(-1.0));
        CHECK(shifted_legendre(1, 1.0) == doctest::Approx(1.0));
        CHECK(shifted_legendre(2, 0.5) == doctest::Approx(-0.5));
        for (double s : {0.0, 0.13, 0.5, 0.77, 1.0}) {
            CHECK(shifted_legendre(2, s) == doctest::Approx(6 * s * s - 6 * s + 1).epsilon(1e-14));
            CHECK(shifted_legendre(3, s) == doctest::Approx(20 * s * s * s - 30 * s * s + 12 * s - 1).epsilon(1e-14));
        }
        CHECK(d.W(11, 1) == doctest::Approx(1.0));
        CHECK_THROWS_AS(legendre_dictionary(3, 4), ValidationError);
        CHECK_THROWS_AS(legendre_dictionary(3, 0), ValidationError);
    }

    TEST_CASE("discrete Legendre is orthogonal on the lag grid")
    {
        const Dictionary d = discrete_legendre_dictionary(12, 4);
        const Eigen::MatrixXd g = d.W.transpose() * d.W / 12.0;
        CHECK((g - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(d.W.col(0).isOnes(1e-12));
        // same column space as the polynomial dictionary
        const Dictionary p = legendre_dictionary(12, 4);
        const Eigen::MatrixXd proj = d.W * (d.W.transpose() * p.W) / 12.0;
        CHECK((proj - p.W).cwiseAbs().maxCoeff() < 1e-10);
    }

    TEST_CASE("Beta weight curves")
    {
        for (int k : {1, 3, 12}) {
            const auto w = beta_weights(k, 1.0, 1.0);
            for (int j = 0; j < k; ++j) CHECK(w.values(j) == doctest::Approx(1.0 / k));
        }
        const auto sym = beta_weights(3, 2.0, 2.0);
        CHECK(sym.values(0) == doctest::Approx(sym.values(2)));
        CHECK(sym.values.sum() == doctest::Approx(1.0));

        const auto dec = beta_weights(12, 1.0, 3.0);
        Eigen::VectorXd ref(12);
        for (int j = 0; j < 12; ++j) {
            const double s = (j + 1.0) / 13.0;
            ref(j) = (1 - s) * (1 - s);
        }
        ref /= ref.sum();
        CHECK((dec.values - ref).cwiseAbs().maxCoeff() < 1e-15);
        for (int j = 1; j < 12; ++j) CHECK(dec.values(j) < dec.values(j - 1));
        CHECK_THROWS_AS(beta_weights(5, 0.0, 1.0), ValidationError);
    }

    TEST_CASE("unrestricted design is the raw lag matrix over k_max")
    {
        const PanelDataset d = stream_panel(3, 6, 3, 2, 2, 11);
        const MidasDesign m = build_design(d, unrestricted_dictionary(6), Rational{1, 3}, 0, 2, 6);
        CHECK(m.unrestricted);
        CHECK(m.cols() == 12);
        CHECK(m.rows() == 12);
        for (int t = 2; t < 6; ++t) {
            const auto w = build_windows(d, {t, Rational{1, 3}}, 0);
            for (int i = 0; i < 3; ++i) {
                const Eigen::Index r = (t - 2) * 3 + i;
                CHECK(m.row_entity[static_cast<std::size_t>(r)] == i);
                CHECK(m.row_period[static_cast<std::size_t>(r)] == t);
                for (int j = 0; j < 6; ++j) {
                    CHECK(m.X(r, j) == doctest::Approx(w[static_cast<std::size_t>(i)].hf[0](j) / 6.0).epsilon(1e-15));
                    CHECK(m.X(r, 6 + j) == doctest::Approx(w[static_cast<std::size_t>(i)].hf[1](j) / 6.0).epsilon(1e-15));
                }
            }
        }
    }

    TEST_CASE("constant stream projects onto the column means of the dictionary")
    {
        const double c = 2.5;
        const PanelDataset d = stream_panel(2, 8, 3, 4, 1, 1, c);
        const Dictionary leg = legendre_dictionary(12, 3);
        const MidasDesign m = build_design(d, leg, Rational{0, 1}, 0, 4, 8);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (int l = 0; l < 3; ++l) {
                double mean = 0.0;
                for (int j = 0; j < 12; ++j) mean += leg.W(j, l);
                mean /= 12.0;
                CHECK(m.X(r, l) == doctest::Approx(c * mean).epsilon(1e-14));
            }
        CHECK(m.X(0, 0) == doctest::Approx(c));
        CHECK(std::abs(m.X(0, 1)) < 1e-14);

        const MidasDesign md = build_design(d, discrete_legendre_dictionary(12, 3), Rational{0, 1}, 0, 4, 8);
        CHECK(md.X(0, 0) == doctest::Approx(c));
        CHECK(std::abs(md.X(0, 1)) < 1e-12);
        CHECK(std::abs(md.X(0, 2)) < 1e-12);
    }

    TEST_CASE("group partition follows streams then AR lags")
    {
        const PanelDataset d = stream_panel(2, 8, 3, 4, 2, 3);
        const MidasDesign m = build_design(d, legendre_dictionary(12, 3), Rational{1, 3}, 1, 4, 8);
        CHECK(m.column_group == std::vector<int>{0, 0, 0, 1, 1, 1, 2});
        const auto g = m.groups();
        REQUIRE(g.size() == 3);
        CHECK(g[0] == std::vector<int>{0, 1, 2});
        CHECK(g[1] == std::vector<int>{3, 4, 5});
        CHECK(m.column_names[3] == "s1_L0");
        CHECK(m.column_names[6] == "ar1");
    }

    TEST_CASE("design equals windows times dictionary over k_max")
    {
        const PanelDataset d = stream_panel(4, 7, 3, 4, 1, 5);
        const Dictionary leg = legendre_dictionary(12, 4);
        const MidasDesign m = build_design(d, leg, Rational{2, 3}, 0, 4, 7);
        const auto w = build_windows(d, {6, Rational{2, 3}}, 0);
        for (int i = 0; i < 4; ++i) {
            const Eigen::RowVectorXd ref = w[static_cast<std::size_t>(i)].hf[0].transpose() * leg.W / 12.0;
            CHECK((m.X.row(8 + i) - ref).cwiseAbs().maxCoeff() < 1e-15);
        }
    }

    TEST_CASE("mismatched dictionary is rejected")
    {
        const PanelDataset d = stream_panel(2, 8, 3, 4, 1, 1);
        CHECK_THROWS_AS(build_design(d, legendre_dictionary(9, 3), Rational{0, 1}, 0, 4, 8), DimensionError);
        CHECK_THROWS_AS(dictionary_kind_from_string("spline"), ValidationError);
    }

    TEST_CASE("complete rows skip missing targets")
    {
        PanelDataset d = stream_panel(2, 8, 3, 4, 1, 1);
        d.targets(1, 5) = NAN;
        d.observed(1, 5) = false;
        const MidasDesign m = build_design(d, legendre_dictionary(12, 3), Rational{0, 1}, 0, 4, 8);
        const auto rows = m.complete_rows();
        CHECK(rows.size() == 7);
        const MidasDesign s = m.subset(rows);
        CHECK(s.rows() == 7);
        CHECK(s.y.allFinite());
    }
}

#include "support.hpp"

#include "cellscape/transforms.hpp"

#include <algorithm>
#include <numeric>

using namespace cellscape;

namespace {

CellTable column_table(std::vector<std::vector<float>> cols, std::vector<std::string> names = {}) {
    const std::size_t n = cols.front().size();
    if (names.empty())
        for (std::size_t j = 0; j < cols.size(); ++j) names.push_back("f" + std::to_string(j));
    std::vector<Point2> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back({double(i), 0.0});
    return test::table_from(pts, std::move(cols), std::move(names));
}

std::vector<float> out_column(const CellTable& t, const std::string& layer, std::size_t j = 0) {
    return t.layer(layer).column(j);
}

// Sorted-array quantile with h = (n-1)q, written out independently.
double oracle_quantile(std::vector<float> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = (v.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + (h - lo) * (double(v[lo + 1]) - v[lo]);
}

}  // namespace

TEST_CASE("arcsinh closed form") {
    auto t = column_table({{0.0f, 5.0f, -5.0f, NAN}});
    auto out = out_column(arcsinh(t, "features", 5.0, "asinh"), "asinh");
    CHECK(out[0] == 0.0f);
    CHECK(out[1] == doctest::Approx(0.8813736).epsilon(1e-7));
    CHECK(out[2] == doctest::Approx(-0.8813736).epsilon(1e-7));
    CHECK(std::isnan(out[3]));
    CHECK_ERROR_CODE(arcsinh(t, "features", 0.0, "x"), NonPositiveCofactor);
    CHECK_ERROR_CODE(arcsinh(t, "nope", 5.0, "x"), UnknownLayer);
}

TEST_CASE("arcsinh preserves rank order") {
    Rng rng(4);
    std::vector<float> v(500);
    for (auto& x : v) x = static_cast<float>(rng.normal() * 50);
    auto out = out_column(arcsinh(column_table({v}), "features", 5.0, "a"), "a");
    std::vector<std::size_t> ia(v.size()), ib(v.size());
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::stable_sort(ia.begin(), ia.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::stable_sort(ib.begin(), ib.end(), [&](auto a, auto b) { return out[a] < out[b]; });
    CHECK(ia == ib);
}

TEST_CASE("zscore hand example and degenerate column") {
    auto t = zscore(column_table({{1, 2, 3}, {4, 4, 4}, {1, NAN, 3}}), "features", "z");
    auto a = out_column(t, "z", 0);
    CHECK(a[0] == doctest::Approx(-1.224745).epsilon(1e-6));
    CHECK(a[1] == doctest::Approx(0.0));
    CHECK(a[2] == doctest::Approx(1.224745).epsilon(1e-6));
    CHECK(out_column(t, "z", 1) == std::vector<float>{0, 0, 0});
    auto c = out_column(t, "z", 2);
    CHECK(std::isnan(c[1]));
    CHECK(c[0] == doctest::Approx(-1.0));
    CHECK_FALSE(t.provenance().back().warnings.empty());
}

TEST_CASE("zscore moments and affine invariance") {
    Rng rng(9);
    std::vector<float> v(1000);
    for (auto& x : v) x = static_cast<float>(3.0 + 2.0 * rng.normal());
    std::vector<float> w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = 7.5f * v[i] - 20.0f;
    auto t = zscore(column_table({v, w}), "features", "z");
    auto a = out_column(t, "z", 0);
    auto b = out_column(t, "z", 1);
    double mean = 0, sq = 0;
    for (float x : a) mean += x;
    mean /= a.size();
    for (float x : a) sq += (x - mean) * (x - mean);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(sq / a.size()) - 1.0) < 1e-6);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
}

TEST_CASE("quantile rescale against sorted oracle") {
    std::vector<float> v(101);
    std::iota(v.begin(), v.end(), 0.0f);
    Rng rng(1);
    rng.shuffle(std::span<float>(v));
    auto t = column_table({v});

    auto minmax = out_column(rescale(t, "features", "r"), "r");
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(minmax[i] == doctest::Approx(v[i] / 100.0));

    auto q = out_column(quantile_rescale(t, "features", 0.1, 0.9, "q"), "q");
    const double lo = oracle_quantile(v, 0.1), hi = oracle_quantile(v, 0.9);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double expected = (std::clamp<double>(v[i], lo, hi) - lo) / (hi - lo);
        CHECK(std::abs(q[i] - expected) < 1e-6);
        if (v[i] <= 10) CHECK(q[i] == 0.0f);
        if (v[i] >= 90) CHECK(q[i] == 1.0f);
    }

    CHECK_ERROR_CODE(quantile_rescale(t, "features", 0.9, 0.1, "q"), InvalidQuantileRange);
}

TEST_CASE("rescale small cases") {
    auto t = rescale(column_table({{2, 4}, {5, 5}}), "features", "r");
    CHECK(out_column(t, "r", 0) == std::vector<float>{0, 1});
    CHECK(out_column(t, "r", 1) == std::vector<float>{0, 0});
    CHECK_FALSE(t.provenance().back().warnings.empty());
}

TEST_CASE("batch normalization") {
    auto t = column_table({{3, 3, 7, 7, 7}});
    const std::vector<std::string> batches = {"a", "a", "b", "b", "b"};
    t = add_annotation(t, "batch", batches);
    auto med = out_column(batch_normalize(t, "features", "batch", BatchMethod::MedianCenter, "m"), "m");
    CHECK(med == std::vector<float>(5, 0.0f));

    Rng rng(2);
    std::vector<float> v(600);
    std::vector<std::string> labels(600);
    for (std::size_t i = 0; i < v.size(); ++i) {
        labels[i] = i % 3 == 0 ? "x" : (i % 3 == 1 ? "y" : "z");
        v[i] = static_cast<float>(rng.normal() * (1 + i % 3) + 10.0 * (i % 3));
    }
    auto bt = add_annotation(column_table({v}), "batch", labels);
    auto z = out_column(batch_normalize(bt, "features", "batch", BatchMethod::ZScore, "z"), "z");
    for (std::size_t b = 0; b < 3; ++b) {
        double sum = 0;
        for (std::size_t i = b; i < z.size(); i += 3) sum += z[i];
        CHECK(std::abs(sum / 200.0) < 1e-6);
    }

    const std::vector<std::string> single = {"a", "a", "b"};
    auto st = add_annotation(column_table({{1, 2, 3}}), "batch", single);
    CHECK_ERROR_CODE(batch_normalize(st, "features", "batch", BatchMethod::ZScore, "z"), BatchTooSmall);
}

TEST_CASE("transforms leave the source untouched") {
    auto t = column_table({{1, 2, 3}, {5, 1, 0}});
    const auto before = t.features();
    auto out = zscore(arcsinh(rescale(t, "features", "r"), "r", 5.0, "a"), "a", "z");
    CHECK(out.features().bit_equal(before));
    CHECK(out.layer("r").bit_equal(rescale(t, "features", "r").layer("r")));
    CHECK(out.provenance().size() == t.provenance().size() + 3);
}

TEST_CASE("thresholding") {
    auto t = column_table({{0.8f, 0.5f, NAN, 0.1f}, {9, 9, 9, 9}}, {"CD3", "CD8"});
    auto b = threshold_features(t, "features", {{"CD3", 0.5}}, "binary");
    CHECK(out_column(b, "binary", 0) == std::vector<float>{1, 0, 0, 0});
    auto unset = out_column(b, "binary", 1);
    CHECK(std::all_of(unset.begin(), unset.end(), [](float v) { return std::isnan(v); }));
    CHECK_ERROR_CODE(threshold_features(t, "features", {{"CD99", 0.5}}, "binary"), UnknownMarker);
}

TEST_CASE("phenotype pattern parsing") {
    auto terms = parse_phenotype_pattern("CD3D+CD4+FOXP3-");
    CHECK(terms == std::vector<MarkerTerm>{{"CD3D", true}, {"CD4", true}, {"FOXP3", false}});
    const std::vector<std::string> known = {"HLA-DR", "CD3"};
    auto hla = parse_phenotype_pattern("HLA-DR+CD3-", known);
    CHECK(hla == std::vector<MarkerTerm>{{"HLA-DR", true}, {"CD3", false}});
    CHECK_THROWS_AS(parse_phenotype_pattern("CD3"), Error);
}

namespace {

std::vector<std::string> labels_of(const CellTable& t, const std::string& name) {
    const auto& col = t.annotation(name);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < col.size(); ++i) out.push_back(col.categories()[col.code(i)]);
    return out;
}

// Markers: CD3D CD4 FOXP3 CD21 CD20
CellTable phenotype_table() {
    return column_table({{1, 1, 0, 0}, {1, 1, 0, 0}, {1, 0, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 0}},
                        {"CD3D", "CD4", "FOXP3", "CD21", "CD20"});
}

}  // namespace

TEST_CASE("rule order decides the label") {
    auto t = phenotype_table();
    const auto names = t.feature_names();
    auto rule = [&](std::string p) { return PhenotypeRule{p, parse_phenotype_pattern(p, names)}; };
    std::vector<PhenotypeRule> rules = {rule("CD3D+CD4+FOXP3+"), rule("CD3D+CD4+"), rule("CD21+CD20-")};
    auto labelled = labels_of(apply_phenotype_rules(t, "features", rules, "p"), "p");
    CHECK(labelled == std::vector<std::string>{"CD3D+CD4+FOXP3+", "CD3D+CD4+", "CD21+CD20-", "no_label"});

    std::swap(rules[0], rules[1]);
    auto swapped = labels_of(apply_phenotype_rules(t, "features", rules, "p"), "p");
    CHECK(swapped[0] == "CD3D+CD4+");
}

TEST_CASE("phenotype config from json") {
    auto t = phenotype_table();
    const auto names = t.feature_names();
    auto cfg = phenotype_config_from_json(
        Json::parse(R"({"thresholds": {"CD3D": 0.5}, "rules": [{"name": "T", "pattern": "CD3D+"}, {"pattern": "CD21+"}]})"),
        names);
    CHECK(cfg.thresholds.at("CD3D") == 0.5);
    REQUIRE(cfg.rules.size() == 2);
    CHECK(cfg.rules[1].name == "CD21+");
    PhenotypeRule dup{"x", {{"CD3D", true}, {"CD3D", false}}};
    CHECK_THROWS_AS(dup.validate(), Error);
}

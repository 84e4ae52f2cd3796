#include "support.hpp"

#include "cellscape/parallel.hpp"
#include "cellscape/quantile.hpp"
#include "cellscape/summaries.hpp"

#include <algorithm>
#include <map>

using namespace cellscape;

namespace {

CellTable value_table(std::vector<float> v, std::vector<std::string> groups = {}) {
    std::vector<Point2> pts;
    for (std::size_t i = 0; i < v.size(); ++i) pts.push_back({double(i), 0});
    auto t = test::table_from(pts, {v}, {"f"});
    if (!groups.empty()) t = add_annotation(t, "g", groups);
    return t;
}

struct Sample {
    std::vector<float> values;
    std::vector<std::optional<std::string>> groups;
    CellTable table;
};

Sample random_sample(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Sample s;
    s.values.resize(n);
    s.groups.resize(n);
    const char* names[] = {"a", "b", "c"};
    for (std::size_t i = 0; i < n; ++i) {
        s.values[i] = i % 97 == 0 ? NAN : float(rng.normal() * 3 + (i % 3));
        s.groups[i] = i % 41 == 0 ? std::nullopt : std::optional<std::string>(names[rng.below(3)]);
    }
    std::vector<Point2> pts(n);
    s.table = test::table_from(pts, {s.values}, {"f"}).with_annotation("g", CategoricalColumn::from_optional_values(s.groups));
    return s;
}

}  // namespace

TEST_CASE("histogram last bin is inclusive") {
    auto t = value_table({0, 0.5f, 1});
    HistogramParams p;
    p.feature = "f";
    p.n_bins = 2;
    auto h = histogram(t, p);
    CHECK(h.edges == std::vector<double>{0, 0.5, 1});
    REQUIRE(h.groups.size() == 1);
    CHECK(h.groups[0].counts == std::vector<std::uint64_t>{1, 2});

    p.edges = {0.25, 0.75};
    auto e = histogram(t, p);
    CHECK(e.groups[0].counts == std::vector<std::uint64_t>{1});
    CHECK(e.groups[0].n_out_of_range == 2);

    auto constant = histogram(value_table({4, 4, 4}), HistogramParams{"f", std::nullopt, "features", 3});
    CHECK(constant.edges.front() == 3.5);
    CHECK(constant.edges.back() == 4.5);
    CHECK(constant.groups[0].counts == std::vector<std::uint64_t>{0, 3, 0});
}

TEST_CASE("histogram of an annotation") {
    auto t = value_table({1, 2, 3, 4}, {"x", "y", "x", "x"});
    HistogramParams p;
    p.annotation = "g";
    auto h = histogram(t, p);
    CHECK(h.categories == std::vector<std::string>{"x", "y"});
    CHECK(h.groups[0].counts == std::vector<std::uint64_t>{3, 1});
}

TEST_CASE("histogram matches a sequential oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto s = random_sample(200000 + seed * 1000, seed);
        HistogramParams p;
        p.feature = "f";
        p.n_bins = 37;
        p.group_by = "g";
        set_max_threads(4);
        auto h = histogram(s.table, p);
        set_max_threads(1);
        auto seq = histogram(s.table, p);
        set_max_threads(resolve_thread_count(0));

        std::map<std::string, std::vector<std::uint64_t>> expected;
        std::map<std::string, std::uint64_t> nan;
        std::uint64_t missing = 0;
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            if (!s.groups[i]) {
                ++missing;
                continue;
            }
            auto& counts = expected[*s.groups[i]];
            counts.resize(37, 0);
            const float v = s.values[i];
            if (std::isnan(v)) {
                ++nan[*s.groups[i]];
                continue;
            }
            std::size_t b = 0;
            while (b + 1 < 37 && v >= h.edges[b + 1]) ++b;
            ++counts[b];
        }
        CHECK(h.n_missing_group == missing);
        std::uint64_t total = 0;
        for (const auto& g : h.groups) {
            CHECK(g.counts == expected[*g.label]);
            CHECK(g.n_nan == nan[*g.label]);
            for (auto c : g.counts) total += c;
        }
        std::uint64_t nans = 0;
        for (auto& [k, v] : nan) nans += v;
        CHECK(total + nans + missing == s.values.size());
        for (std::size_t g = 0; g < h.groups.size(); ++g) CHECK(h.groups[g].counts == seq.groups[g].counts);
    }
}

TEST_CASE("box statistics") {
    auto b = box_stats({1, 2, 3, 4, 5, 6, 7});
    CHECK(b.q1 == 2.5);
    CHECK(b.median == 4.0);
    CHECK(b.q3 == 5.5);
    CHECK(b.whisker_lo == 1.0);
    CHECK(b.whisker_hi == 7.0);
    CHECK(b.n_outliers == 0);

    auto c = box_stats({3, 3, 3, 3});
    CHECK(c.min == 3);
    CHECK(c.q1 == 3);
    CHECK(c.median == 3);
    CHECK(c.max == 3);
    CHECK(c.whisker_hi == 3);
    CHECK(c.n_outliers == 0);

    auto o = box_stats({1, 2, 3, 4, 100, NAN});
    CHECK(o.n == 5);
    CHECK(o.n_nan == 1);
    CHECK(o.n_outliers == 1);
    CHECK(o.whisker_hi == 4);

    auto empty = box_stats({});
    CHECK(empty.n == 0);
    CHECK(std::isnan(empty.median));
}

TEST_CASE("boxplot matches a sort based oracle") {
    auto s = random_sample(50000, 4);
    auto res = boxplot_stats(s.table, "f", "features", std::string("g"));
    std::map<std::string, std::vector<double>> by;
    for (std::size_t i = 0; i < s.values.size(); ++i)
        if (s.groups[i] && !std::isnan(s.values[i])) by[*s.groups[i]].push_back(s.values[i]);
    for (const auto& g : res.groups) {
        auto v = by[*g.label];
        std::sort(v.begin(), v.end());
        const std::span<const double> sv(v);
        CHECK(g.n == v.size());
        CHECK(g.q1 == quantile_sorted(sv, 0.25));
        CHECK(g.median == quantile_sorted(sv, 0.5));
        CHECK(g.q3 == quantile_sorted(sv, 0.75));
        const double iqr = g.q3 - g.q1;
        std::uint64_t out = 0;
        double lo = INFINITY, hi = -INFINITY;
        for (double x : v) {
            if (x < g.q1 - 1.5 * iqr || x > g.q3 + 1.5 * iqr) {
                ++out;
            } else {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        }
        CHECK(g.n_outliers == out);
        CHECK(g.whisker_lo == lo);
        CHECK(g.whisker_hi == hi);
    }
    CHECK(res.n_missing_group == 50000 / 41 + 1);
}

TEST_CASE("group means") {
    auto t = value_table({1, 3, 5}, {"A", "A", "B"});
    auto m = group_means(t, "features", std::string("g"));
    CHECK(m.groups == std::vector<std::string>{"A", "B"});
    CHECK(m.means[0][0] == 2.0);
    CHECK(m.means[1][0] == 5.0);
    CHECK(m.sizes == std::vector<std::uint64_t>{2, 1});

    auto all = group_means(t, "features", std::nullopt);
    CHECK(all.groups == std::vector<std::string>{"all"});
    CHECK(all.means[0][0] == 3.0);

    auto s = random_sample(300000, 9);
    set_max_threads(4);
    auto par = group_means(s.table, "features", std::string("g"));
    set_max_threads(1);
    auto seq = group_means(s.table, "features", std::string("g"));
    set_max_threads(resolve_thread_count(0));
    std::map<std::string, std::pair<long double, std::uint64_t>> ref;
    for (std::size_t i = 0; i < s.values.size(); ++i)
        if (s.groups[i] && !std::isnan(s.values[i])) {
            ref[*s.groups[i]].first += s.values[i];
            ++ref[*s.groups[i]].second;
        }
    for (std::size_t g = 0; g < par.groups.size(); ++g) {
        CHECK(par.means[g][0] == seq.means[g][0]);
        const auto& [sum, count] = ref[par.groups[g]];
        CHECK(par.counts[g][0] == count);
        const double expected = double(sum / count);
        CHECK(std::abs(par.means[g][0] - expected) <= 1e-9 * std::abs(expected) + 1e-12);
    }
}

TEST_CASE("hierarchical order hand examples") {
    auto h = hierarchical_order({{0}, {1}, {10}}, Axis::Rows);
    REQUIRE(h.merges.size() == 2);
    CHECK(h.merges[0].left == 0);
    CHECK(h.merges[0].right == 1);
    CHECK(h.merges[0].distance == 1.0);
    CHECK(h.merges[1].distance == doctest::Approx(9.5));
    CHECK(h.merges[1].size == 3);

    auto same = hierarchical_order({{5, 5}, {0, 0}, {5, 5}, {9, 1}}, Axis::Rows);
    CHECK(same.merges[0].distance == 0.0);
    auto pos0 = std::find(same.order.begin(), same.order.end(), 0) - same.order.begin();
    auto pos2 = std::find(same.order.begin(), same.order.end(), 2) - same.order.begin();
    CHECK(std::abs(pos0 - pos2) == 1);

    auto cols = hierarchical_order({{0, 1, 10}}, Axis::Columns);
    CHECK(cols.merges[0].distance == 1.0);
}

TEST_CASE("hierarchical merges match a definition level oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const std::size_t n = 3 + rng.below(15);
        std::vector<std::vector<double>> m(n, std::vector<double>(4));
        for (auto& r : m)
            for (auto& v : r) v = rng.normal();
        auto h = hierarchical_order(m, Axis::Rows);

        // average linkage as the mean over all cross pairs of leaves
        std::vector<std::vector<std::size_t>> clusters;
        for (std::size_t i = 0; i < n; ++i) clusters.push_back({i});
        auto d = [&](std::size_t a, std::size_t b) {
            double s = 0;
            for (std::size_t k = 0; k < 4; ++k) s += (m[a][k] - m[b][k]) * (m[a][k] - m[b][k]);
            return std::sqrt(s);
        };
        for (std::size_t step = 0; step + 1 < n; ++step) {
            double best = INFINITY;
            std::size_t bi = 0, bj = 0;
            for (std::size_t i = 0; i < clusters.size(); ++i)
                for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                    if (clusters[i].empty() || clusters[j].empty()) continue;
                    double s = 0;
                    for (auto a : clusters[i])
                        for (auto b : clusters[j]) s += d(a, b);
                    s /= double(clusters[i].size() * clusters[j].size());
                    if (s < best) {
                        best = s;
                        bi = i;
                        bj = j;
                    }
                }
            CHECK(h.merges[step].distance == doctest::Approx(best).epsilon(1e-10));
            CHECK(h.merges[step].size == clusters[bi].size() + clusters[bj].size());
            clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
            clusters[bj].clear();
        }
        auto sorted = h.order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < n; ++i) CHECK(sorted[i] == i);
    }
}

TEST_CASE("crosstab") {
    std::vector<Point2> pts(3);
    auto t = test::table_from(pts);
    const std::vector<std::string> a = {"T", "T", "B"}, b = {"1", "2", "1"};
    t = add_annotation(add_annotation(t, "a", a), "b", b);
    auto c = crosstab(t, "a", "b", CrosstabNormalization::None);
    CHECK(c.counts == std::vector<std::vector<std::uint64_t>>{{1, 1}, {1, 0}});
    CHECK(c.flows.size() == 3);
    auto row = crosstab(t, "a", "b", CrosstabNormalization::Row);
    CHECK(row.values[0] == std::vector<double>{0.5, 0.5});
    CHECK(row.values[1] == std::vector<double>{1.0, 0.0});
    auto total = crosstab(t, "a", "b", CrosstabNormalization::Total);
    CHECK(total.values[1][0] == doctest::Approx(1.0 / 3.0));

    auto s = random_sample(100000, 2);
    const auto labels = test::random_labels(100000, {"p", "q"}, 5);
    auto big = add_annotation(s.table, "h", labels);
    auto x = crosstab(big, "g", "h", CrosstabNormalization::None);
    std::uint64_t sum = 0;
    for (auto& r : x.counts)
        for (auto v : r) sum += v;
    CHECK(sum + x.n_missing == 100000);
}

TEST_CASE("scatter downsample") {
    auto s = random_sample(1000, 1);
    auto all = scatter_downsample(s.table, 5000, std::nullopt, 0, {"g"});
    CHECK(all.indices.size() == 1000);
    CHECK(all.indices.front() == 0);
    auto some = scatter_downsample(s.table, 100, std::string("g"), 3, {"g"});
    CHECK(some.indices.size() == 100);
    CHECK(some.indices == scatter_downsample(s.table, 100, std::string("g"), 3, {"g"}).indices);
    REQUIRE(some.codes.size() == 1);
    CHECK(some.codes[0].second.size() == 100);
}

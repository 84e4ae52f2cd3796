#pragma once

#include "cellscape/cell_table.hpp"
#include "cellscape/error.hpp"
#include "cellscape/kdtree.hpp"
#include "cellscape/random.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>
#include <string>
#include <vector>

namespace test {

using namespace cellscape;

inline CellTable table_from(const std::vector<Point2>& pts, std::vector<std::vector<float>> feature_cols = {},
                            std::vector<std::string> names = {}) {
    const std::size_t n = pts.size();
    std::vector<std::string> ids;
    std::vector<double> xy;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back("c" + std::to_string(i));
        xy.push_back(pts[i].x);
        xy.push_back(pts[i].y);
    }
    if (feature_cols.empty()) {
        feature_cols.push_back(std::vector<float>(n, 0.0f));
        names = {"f0"};
    }
    std::vector<float> vals;
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& col : feature_cols) vals.push_back(col[i]);
    return CellTable::create(std::move(ids), Matrix<double>(n, 2, std::move(xy)),
                             Matrix<float>(n, feature_cols.size(), std::move(vals)), std::move(names));
}

inline CellTable labeled(const std::vector<Point2>& pts, const std::vector<std::string>& labels,
                         const std::string& name = "pheno") {
    return table_from(pts).with_annotation(name, CategoricalColumn::from_values(labels));
}

inline std::vector<Point2> uniform_points(std::size_t n, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Point2> out(n);
    for (auto& p : out) {
        p.x = rng.uniform(lo, hi);
        p.y = rng.uniform(lo, hi);
    }
    return out;
}

// Points on a coarse integer grid, so duplicates and exact distance ties are common.
inline std::vector<Point2> lattice_points(std::size_t n, int side, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Point2> out(n);
    for (auto& p : out) {
        p.x = static_cast<double>(rng.below(side));
        p.y = static_cast<double>(rng.below(side));
    }
    return out;
}

inline std::vector<std::string> random_labels(std::size_t n, const std::vector<std::string>& alphabet,
                                              std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::string> out(n);
    for (auto& s : out) s = alphabet[rng.below(alphabet.size())];
    return out;
}

inline double dist(Point2 a, Point2 b) { return std::sqrt(squared_distance(a, b)); }

inline bool same_or_both_nan(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("cellscape_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace test

#define CHECK_ERROR_CODE(expr, expected)                        \
    do {                                                        \
        bool thrown_ = false;                                   \
        try {                                                   \
            (void)(expr);                                       \
        } catch (const cellscape::Error& e_) {                  \
            thrown_ = true;                                     \
            CHECK(e_.code() == cellscape::ErrorCode::expected); \
        }                                                       \
        CHECK_MESSAGE(thrown_, "expected " #expected);          \
    } while (0)

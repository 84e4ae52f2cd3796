#include "support.hpp"

#include "cellscape/ingest.hpp"

#include <fstream>

using namespace cellscape;

namespace {

ColumnMapping xy_mapping(std::vector<std::string> features, std::vector<std::string> annotations = {}) {
    ColumnMapping m;
    m.x_column = "X";
    m.y_column = "Y";
    m.feature_columns = std::move(features);
    m.annotation_columns = std::move(annotations);
    return m;
}

}  // namespace

TEST_CASE("three row csv") {
    const std::string csv = "X,Y,CD3,Phenotype\n1,2,0.5,T\n3,4,1.5,B\n5,6,,T\n";
    auto t = ingest_csv_text(csv, xy_mapping({"CD3"}, {"Phenotype"}));
    CHECK(t.n_cells() == 3);
    CHECK(t.n_features() == 1);
    CHECK(t.annotations().size() == 1);
    CHECK(t.coords()(1, 0) == 3.0);
    CHECK(t.coords()(2, 1) == 6.0);
    CHECK(std::isnan(t.features()(2, 0)));
    CHECK(t.cell_ids() == std::vector<std::string>{"0", "1", "2"});
    CHECK(t.annotation("Phenotype").categories() == std::vector<std::string>{"T", "B"});
    REQUIRE(t.provenance().size() == 1);
}

TEST_CASE("non numeric feature names row and column") {
    const std::string csv = "X,Y,CD3\n1,2,0.5\n3,4,abc\n";
    try {
        (void)ingest_csv_text(csv, xy_mapping({"CD3"}));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonNumericFeature);
        CHECK(e.field() == "CD3");
        CHECK(std::string(e.what()).find("row") != std::string::npos);
    }
}

TEST_CASE("missing columns are all listed") {
    const std::string csv = "X,Y,CD3\n1,2,0.5\n";
    try {
        (void)ingest_csv_text(csv, xy_mapping({"CD3", "CD4", "CD8"}));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingColumn);
        CHECK(std::string(e.what()).find("CD4") != std::string::npos);
        CHECK(std::string(e.what()).find("CD8") != std::string::npos);
    }
    CHECK_ERROR_CODE(ingest_csv_text("", xy_mapping({"CD3"})), EmptyFile);
}

TEST_CASE("regex feature selection") {
    const std::string csv = "X,Y,CD3,CD20,Area\n0,0,1,2,3\n";
    ColumnMapping m;
    m.x_column = "X";
    m.y_column = "Y";
    m.feature_regex = R"(^CD\d+)";
    auto t = ingest_csv_text(csv, m);
    CHECK(t.feature_names() == std::vector<std::string>{"CD3", "CD20"});

    auto from_json = mapping_from_json(Json::parse(R"({"x": "X", "y": "Y", "features": {"regex": "^CD\\d+"}})"));
    CHECK(ingest_csv_text(csv, from_json).feature_names() == t.feature_names());
}

TEST_CASE("case insensitive header matching is opt in") {
    const std::string csv = "x,y,cd3\n1,2,3\n";
    CHECK_ERROR_CODE(ingest_csv_text(csv, xy_mapping({"CD3"})), MissingColumn);
    IngestOptions opt;
    opt.case_insensitive = true;
    CHECK(ingest_csv_text(csv, xy_mapping({"CD3"}), opt).n_cells() == 1);
}

TEST_CASE("rfc 4180 quoting") {
    CsvReader r("a,\"b,c\",\"d\"\"e\"\r\n\"multi\nline\",2,3\n");
    std::vector<std::string> f;
    REQUIRE(r.next_row(f));
    CHECK(f == std::vector<std::string>{"a", "b,c", "d\"e"});
    REQUIRE(r.next_row(f));
    CHECK(f == std::vector<std::string>{"multi\nline", "2", "3"});
    CHECK_FALSE(r.next_row(f));
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(csv_escape("plain") == "plain");
}

TEST_CASE("centroids from bounding boxes") {
    const std::vector<double> xmin = {10, 5}, xmax = {20, 5}, ymin = {0, 7}, ymax = {4, 7};
    auto c = compute_centroids(xmin, xmax, ymin, ymax);
    CHECK(c(0, 0) == 15.0);
    CHECK(c(0, 1) == 2.0);
    CHECK(c(1, 0) == 5.0);
    CHECK(c(1, 1) == 7.0);
    const std::vector<double> bad_min = {20}, bad_max = {10}, y0 = {0}, y1 = {4};
    CHECK_ERROR_CODE(compute_centroids(bad_min, bad_max, y0, y1), InvertedBox);

    ColumnMapping m;
    m.bbox_columns = BoundingBoxColumns{"x0", "x1", "y0", "y1"};
    m.feature_columns = {"F"};
    auto t = ingest_csv_text("x0,x1,y0,y1,F\n10,20,0,4,1\n", m);
    CHECK(t.coords()(0, 0) == 15.0);
    CHECK(t.coords()(0, 1) == 2.0);
}

TEST_CASE("mapping validation") {
    ColumnMapping both = xy_mapping({"F"});
    both.bbox_columns = BoundingBoxColumns{"a", "b", "c", "d"};
    CHECK_ERROR_CODE(both.validate(), InvalidArgument);
    ColumnMapping overlap = xy_mapping({"F"}, {"F"});
    CHECK_ERROR_CODE(overlap.validate(), InvalidArgument);
}

TEST_CASE("combine tables") {
    auto make = [](std::string label, std::size_t n, std::vector<std::string> names = {"F"}) {
        std::vector<Point2> pts;
        for (std::size_t i = 0; i < n; ++i) pts.push_back({double(i), 0});
        std::vector<std::vector<float>> cols(names.size(), std::vector<float>(n, 1.0f));
        return test::table_from(pts, cols, names).with_slide_label(label);
    };
    std::vector<CellTable> two = {make("s1", 2), make("s2", 2)};
    auto c = combine_tables(two, "slide");
    CHECK(c.n_cells() == 4);
    const auto& slide = c.annotation("slide");
    std::vector<std::string> got;
    for (std::size_t i = 0; i < 4; ++i) got.push_back(slide.categories()[slide.code(i)]);
    CHECK(got == std::vector<std::string>{"s1", "s1", "s2", "s2"});
    CHECK(c.cell_ids()[2] == two[1].cell_ids()[0]);

    std::vector<CellTable> mismatched = {make("s1", 2), make("s2", 2, {"G"})};
    CHECK_ERROR_CODE(combine_tables(mismatched, "slide"), FeatureSetMismatch);

    std::vector<CellTable> with_empty = {make("s1", 2), make("s2", 0)};
    CHECK(combine_tables(with_empty, "slide").n_cells() == 2);

    std::vector<CellTable> dup = {make("s1", 1), make("s1", 1)};
    CHECK_ERROR_CODE(combine_tables(dup, "slide"), DuplicateSlideLabel);
}

TEST_CASE("export and re-ingest is lossless") {
    test::TempDir dir;
    Rng rng(11);
    const std::size_t n = 200;
    std::vector<std::vector<float>> cols(2, std::vector<float>(n));
    for (auto& c : cols)
        for (auto& v : c) v = static_cast<float>(rng.normal() * 1000.0);
    cols[0][3] = std::numeric_limits<float>::quiet_NaN();
    auto pts = test::uniform_points(n, -50, 50, 5);
    auto t = test::table_from(pts, cols, {"A", "B"});
    const auto labels = test::random_labels(n, {"x", "y,z", "q\"uote"}, 2);
    t = add_annotation(t, "kind", labels);

    export_csv(t, dir.path() / "out.csv");
    auto back = ingest_csv(dir.path() / "out.csv",
                           mapping_from_json(Json::parse(
                               R"({"x": "x", "y": "y", "id": "cell_id", "features": ["A", "B"], "annotations": ["kind"]})")));
    CHECK(back.cell_ids() == t.cell_ids());
    CHECK(back.coords().bit_equal(t.coords()));
    CHECK(back.features().bit_equal(t.features()));
    CHECK(back.annotation("kind") == t.annotation("kind"));
}

TEST_CASE("parquet is rejected") {
    test::TempDir dir;
    std::ofstream(dir.path() / "x.parquet") << "PAR1";
    CHECK_ERROR_CODE(ingest_file(dir.path() / "x.parquet", xy_mapping({"F"})), UnsupportedFormat);
}

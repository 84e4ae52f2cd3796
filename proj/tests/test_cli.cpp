#include "support.hpp"

#include "cellscape/container.hpp"
#include "cellscape/ingest.hpp"
#include "cellscape/spatial.hpp"
#include "cellscape/transforms.hpp"

#include <fstream>
#include <numbers>
#include <sstream>
#include <sys/wait.h>

using namespace cellscape;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CELLSCAPE_TEST_DATA;
const fs::path kGolden = kData.parent_path() / "golden";
const std::string kCli = CELLSCAPE_CLI;

struct Run {
    int exit_code = -1;
    std::string output;
};

Run run(const std::string& args, const fs::path& scratch) {
    const auto log = scratch / "run.log";
    const std::string cmd = "SOURCE_DATE_EPOCH=0 " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
    return out;
}

std::string cli() { return "'" + kCli + "'"; }

}  // namespace

TEST_CASE("golden pipeline reproduces the committed outputs") {
    test::TempDir dir;
    const auto out = dir.path() / "out";
    fs::create_directories(out);
    auto r = run("sh '" + (kGolden / "pipeline.sh").string() + "' " + cli() + " '" + kData.string() + "' '" +
                     out.string() + "'",
                 dir.path());
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    for (const char* name : {"ripley.json", "enrich.json", "crosstab.json", "recovery.json", "manifest.json"}) {
        CAPTURE(name);
        const auto expected = slurp(kGolden / name);
        REQUIRE_FALSE(expected.empty());
        CHECK(slurp(out / name) == expected);
    }
}

TEST_CASE("pipeline containers are byte identical across runs and thread counts") {
    test::TempDir dir;
    const auto& p = dir.path();
    const std::string ingest = " ingest --csv '" + (kData / "synthetic_1k.csv").string() + "' --mapping '" +
                               (kData / "mapping.json").string() + "'";
    for (const char* tag : {"a", "b"}) {
        const std::string threads = tag[0] == 'a' ? "1" : "4";
        const auto base = p / tag;
        REQUIRE(run(cli() + " --threads " + threads + ingest + " --out '" + (base / "c0").string() + "'", p).exit_code == 0);
        REQUIRE(run(cli() + " --threads " + threads + " transform --in '" + (base / "c0").string() + "' --out '" +
                        (base / "c1").string() + "' --op zscore --out-layer z",
                    p).exit_code == 0);
        REQUIRE(run(cli() + " --threads " + threads + " cluster --in '" + (base / "c1").string() + "' --out '" +
                        (base / "c2").string() + "' --method phenograph --layer z --k 10 --seed 3",
                    p).exit_code == 0);
    }
    CHECK(directory_bytes(p / "a" / "c2") == directory_bytes(p / "b" / "c2"));

    // load then save reproduces every file
    auto t = load_container(p / "a" / "c2");
    save_container(t, p / "copy");
    CHECK(directory_bytes(p / "copy") == directory_bytes(p / "a" / "c2"));
    CHECK(tables_identical(load_container(p / "copy"), t));
    CHECK(t.provenance().size() == 3);
}

TEST_CASE("golden ripley values agree with a brute force estimate") {
    const auto golden = Json::parse(slurp(kGolden / "ripley.json"));
    auto mapping = mapping_from_json(Json::parse(slurp(kData / "mapping.json")));
    auto t = ingest_csv(kData / "synthetic_1k.csv", mapping);
    t = arcsinh(t, "features", 5.0, "arcsinh");
    const Json spec = {{"thresholds", Json::parse(slurp(kData / "thresholds.json"))},
                       {"rules", Json::parse(slurp(kData / "rules.json"))}};
    auto cfg = phenotype_config_from_json(spec, t.feature_names());
    t = threshold_features(t, "arcsinh", cfg.thresholds, "binary");
    t = apply_phenotype_rules(t, "binary", cfg.rules, "phenotype");

    const auto& col = t.annotation("phenotype");
    std::vector<Point2> centers, neighbors, all;
    for (std::size_t i = 0; i < t.n_cells(); ++i) {
        const Point2 p{t.coords()(i, 0), t.coords()(i, 1)};
        all.push_back(p);
        const auto& label = col.categories()[col.code(i)];
        if (label == "Bcell") centers.push_back(p);
        if (label == "FDC") neighbors.push_back(p);
    }
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (auto p : all) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    const double area = (x1 - x0) * (y1 - y0);
    const auto& curve = golden["curves"][0];
    CHECK(curve["n_center"] == centers.size());
    CHECK(curve["n_neighbor"] == neighbors.size());
    CHECK(curve["area"].get<double>() == doctest::Approx(area));
    for (std::size_t r = 0; r < curve["radii"].size(); ++r) {
        const double radius = curve["radii"][r];
        std::size_t valid = 0, pairs = 0;
        for (auto c : centers) {
            if (std::min({c.x - x0, x1 - c.x, c.y - y0, y1 - c.y}) < radius) continue;
            ++valid;
            for (auto q : neighbors) {
                const double d = test::dist(c, q);
                if (d > 0 && d <= radius) ++pairs;
            }
        }
        CHECK(curve["n_valid_centers"][r] == valid);
        const double k = area * double(pairs) / (double(valid) * double(neighbors.size()));
        CHECK(curve["k"][r].get<double>() == doctest::Approx(k).epsilon(1e-12));
        CHECK(curve["l"][r].get<double>() == doctest::Approx(std::sqrt(k / std::numbers::pi)).epsilon(1e-12));
    }
}

TEST_CASE("bad radii spec is a usage error naming the flag") {
    test::TempDir dir;
    const auto c = dir.path() / "c";
    REQUIRE(run(cli() + " ingest --csv '" + (kData / "synthetic_1k.csv").string() + "' --mapping '" +
                    (kData / "mapping.json").string() + "' --out '" + c.string() + "'",
                dir.path())
                .exit_code == 0);
    auto r = run(cli() + " spatial ripley --in '" + c.string() +
                     "' --annotation Region --center a --neighbor b --radii 10:5:x --out-json '" +
                     (dir.path() / "r.json").string() + "'",
                 dir.path());
    CHECK(r.exit_code == 2);
    auto err = Json::parse(r.output);
    CHECK(err["field"] == "--radii");

    auto missing = run(cli() + " summarize hist --in '" + (dir.path() / "nope").string() + "' --feature CD4 --out-json x",
                       dir.path());
    CHECK(missing.exit_code == 1);
    CHECK(Json::parse(missing.output).contains("error"));

    CHECK(run(cli() + " frobnicate", dir.path()).exit_code == 2);
}

TEST_CASE("histogram counts conserve cells after ingest") {
    test::TempDir dir;
    const auto c = dir.path() / "c";
    REQUIRE(run(cli() + " ingest --csv '" + (kData / "synthetic_1k.csv").string() + "' --mapping '" +
                    (kData / "mapping.json").string() + "' --out '" + c.string() + "'",
                dir.path())
                .exit_code == 0);
    const auto out = dir.path() / "h.json";
    auto r = run(cli() + " summarize hist --in '" + c.string() + "' --feature CD4 --bins 17 --group-by Region --out-json '" +
                     out.string() + "'",
                 dir.path());
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    auto h = Json::parse(slurp(out));
    std::uint64_t total = h["n_missing_group"];
    for (const auto& g : h["groups"]) {
        total += g["n_nan"].get<std::uint64_t>();
        for (const auto& v : g["counts"]) total += v.get<std::uint64_t>();
    }
    CHECK(total == 1000);
}

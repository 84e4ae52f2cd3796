#include "support.hpp"

#include "cellscape/analysis.hpp"
#include "cellscape/container.hpp"
#include "cellscape/service.hpp"

#include <httplib.h>

#include <thread>

using namespace cellscape;

namespace {

using Query = std::multimap<std::string, std::string>;

CellTable demo_table(std::size_t n = 500) {
    auto pts = test::uniform_points(n, 0, 200, 17);
    Rng rng(5);
    std::vector<std::vector<float>> cols(2, std::vector<float>(n));
    for (auto& c : cols)
        for (auto& v : c) v = float(rng.uniform(0, 10));
    auto t = test::table_from(pts, cols, {"CD3", "CD20"});
    t = add_annotation(t, "phenotype", test::random_labels(n, {"A", "B", "C"}, 3));
    return add_annotation(t, "region", test::random_labels(n, {"r1", "r2"}, 4));
}

std::unique_ptr<Service> demo_service(ServiceConfig cfg = {}) {
    auto s = std::make_unique<Service>(cfg);
    s->add_dataset("demo", demo_table());
    return s;
}

const std::string kRipley = R"({"annotation": "phenotype", "center": "A", "neighbor": "B", "radii": "5:20:5"})";

}  // namespace

TEST_CASE("radii spec parsing") {
    CHECK(parse_radii_spec("10:100:10") == std::vector<double>{10, 20, 30, 40, 50, 60, 70, 80, 90, 100});
    CHECK(parse_radii_spec("1:2:0.5") == std::vector<double>{1, 1.5, 2});
    CHECK(parse_radii_spec("1:2.2:0.5") == std::vector<double>{1, 1.5, 2});
    for (const char* bad : {"", "10:100", "a:b:c", "0:10:1", "10:5:1", "1:10:0", "1:10:-1"}) {
        try {
            (void)parse_radii_spec(bad);
            FAIL("accepted " << bad);
        } catch (const Error& e) {
            CHECK(e.field() == "radii");
        }
    }
}

TEST_CASE("analysis layer rejects unknown parameters by name") {
    auto t = demo_table();
    try {
        (void)run_summary(t, "hist", Json::parse(R"({"feature": "CD3", "bins": 4})"));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.field() == "bins");
    }
    auto h = run_summary(t, "hist", Json::parse(R"({"feature": "CD3", "n_bins": 4})"));
    CHECK(h["analysis"] == "hist");
    auto j = error_json(Error(ErrorCode::UnknownAnnotation, "nope", "group_by"));
    CHECK(j["error"] == "UnknownAnnotation");
    CHECK(j["field"] == "group_by");
}

TEST_CASE("every analysis kind runs through the json layer") {
    auto t = demo_table();
    for (const auto& [kind, body] : std::vector<std::pair<std::string, std::string>>{
             {"ripley", kRipley},
             {"enrich", R"({"annotation": "phenotype", "k": 5, "n_permutations": 20})"},
             {"interact", R"({"annotation": "phenotype", "radius": 15, "normalize": "row"})"},
             {"nn-dist", R"({"annotation": "phenotype", "stratify_by": "region"})"},
             {"profile", R"({"annotation": "phenotype", "bin_edges": [0, 10, 20]})"}}) {
        CAPTURE(kind);
        CHECK(is_spatial_kind(kind));
        auto out = run_spatial(t, kind, Json::parse(body));
        CHECK(out["analysis"] == kind);
    }
    for (const auto& [kind, body] : std::vector<std::pair<std::string, std::string>>{
             {"hist", R"({"annotation": "phenotype", "group_by": "region"})"},
             {"box", R"({"feature": "CD20", "group_by": "phenotype"})"},
             {"means", R"({"group_by": "phenotype"})"},
             {"crosstab", R"({"annotation_a": "phenotype", "annotation_b": "region", "normalize": "row"})"}}) {
        CAPTURE(kind);
        CHECK(is_summary_kind(kind));
        auto out = run_summary(t, kind, Json::parse(body));
        CHECK(out["analysis"] == kind);
    }
    CHECK_FALSE(is_spatial_kind("hist"));
}

TEST_CASE("dataset listing and health") {
    auto service = demo_service();
    auto& s = *service;
    auto health = s.handle("GET", "/api/health", {}, "");
    CHECK(health.status == 200);
    auto list = s.handle("GET", "/api/datasets", {}, "");
    REQUIRE(list.status == 200);
    const auto& d = list.body["datasets"][0];
    CHECK(d["id"] == "demo");
    CHECK(d["n_cells"] == 500);
    CHECK(d["features"] == Json::array({"CD3", "CD20"}));
    CHECK(d.contains("bounds"));
    CHECK(d.contains("layers"));
    REQUIRE(d["annotations"].size() == 2);
    CHECK(d["annotations"][0]["name"] == "phenotype");
    CHECK(d["annotations"][0]["categories"].size() == 3);
    CHECK(s.handle("GET", "/api/nothing", {}, "").status == 404);
    CHECK(s.handle("POST", "/api/datasets", {}, "").status == 405);
}

TEST_CASE("cells endpoint downsamples deterministically") {
    auto service = demo_service();
    auto& s = *service;
    Query q = {{"fields", "coords,annotation:phenotype,feature:CD3"}, {"max", "100"}, {"seed", "4"}};
    auto a = s.handle("GET", "/api/datasets/demo/cells", q, "");
    auto b = s.handle("GET", "/api/datasets/demo/cells", q, "");
    REQUIRE(a.status == 200);
    CHECK(a.body["n"] == 100);
    CHECK(a.body["x"].size() == 100);
    CHECK(a.body["annotations"]["phenotype"]["codes"].size() == 100);
    CHECK(a.body["annotations"]["phenotype"]["categories"] == demo_table().annotation("phenotype").categories());
    CHECK(a.body["features"]["CD3"].size() == 100);
    CHECK(a.body == b.body);
    Query other = q;
    other.find("seed")->second = "5";
    CHECK(s.handle("GET", "/api/datasets/demo/cells", other, "").body["indices"] != a.body["indices"]);

    Query bad = {{"fields", "annotation:nope"}};
    auto err = s.handle("GET", "/api/datasets/demo/cells", bad, "");
    CHECK(err.status == 400);
    CHECK(err.body["field"] == "fields");
    CHECK(s.handle("GET", "/api/datasets/missing/cells", {}, "").status == 404);
    Query bad_max = {{"max", "ten"}};
    CHECK(s.handle("GET", "/api/datasets/demo/cells", bad_max, "").body["field"] == "max");
}

TEST_CASE("payload limit") {
    ServiceConfig cfg;
    cfg.max_payload_cells = 50;
    auto service = demo_service(cfg);
    auto& s = *service;
    CHECK(s.handle("GET", "/api/datasets/demo/cells", {}, "").status == 413);
    Query small = {{"max", "50"}};
    CHECK(s.handle("GET", "/api/datasets/demo/cells", small, "").status == 200);
}

TEST_CASE("analysis cache") {
    auto service = demo_service();
    auto& s = *service;
    auto first = s.handle("POST", "/api/datasets/demo/spatial/ripley", {}, kRipley);
    REQUIRE(first.status == 200);
    CHECK(first.headers["Cache"] == "miss");
    auto second = s.handle("POST", "/api/datasets/demo/spatial/ripley", {}, kRipley);
    CHECK(second.status == 200);
    CHECK(second.headers["Cache"] == "hit");
    CHECK(second.body.dump() == first.body.dump());
    CHECK(s.cache_size() == 1);

    // a fresh service computes the same bytes
    auto fresh = demo_service()->handle("POST", "/api/datasets/demo/spatial/ripley", {}, kRipley);
    CHECK(fresh.body.dump() == first.body.dump());
}

TEST_CASE("analysis errors name the field") {
    auto service = demo_service();
    auto& s = *service;
    auto r = s.handle("POST", "/api/datasets/demo/summaries/hist", {},
                      R"({"feature": "CD3", "group_by": "nope"})");
    CHECK(r.status == 400);
    CHECK(r.body["field"] == "group_by");
    CHECK(r.body["error"] == "UnknownAnnotation");

    auto bad_json = s.handle("POST", "/api/datasets/demo/summaries/hist", {}, "{");
    CHECK(bad_json.status == 400);
    CHECK(bad_json.body["field"] == "body");

    CHECK(s.handle("POST", "/api/datasets/demo/summaries/violin", {}, "{}").status == 404);
    CHECK(s.handle("POST", "/api/datasets/none/summaries/hist", {}, "{}").status == 404);
    CHECK(s.handle("GET", "/api/datasets/demo/summaries/hist", {}, "{}").status == 405);
}

TEST_CASE("slow analyses become jobs") {
    ServiceConfig cfg;
    cfg.job_budget = std::chrono::milliseconds(0);
    auto service = demo_service(cfg);
    auto& s = *service;
    const std::string body = R"({"annotation": "phenotype", "k": 6, "n_permutations": 3000})";
    auto r = s.handle("POST", "/api/datasets/demo/spatial/enrich", {}, body);
    REQUIRE(r.status == 202);
    const std::string poll = r.body["poll"];
    Response done;
    for (int i = 0; i < 2000; ++i) {
        done = s.handle("GET", poll, {}, "");
        if (done.body["status"] != "running") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    CHECK(done.body["status"] == "done");
    CHECK(done.body["result"]["analysis"] == "enrich");
    auto cached = s.handle("POST", "/api/datasets/demo/spatial/enrich", {}, body);
    CHECK(cached.status == 200);
    CHECK(cached.headers["Cache"] == "hit");
    CHECK(cached.body == done.body["result"]);
    CHECK(s.handle("GET", "/api/jobs/job-999", {}, "").status == 404);
}

TEST_CASE("annotation endpoint") {
    test::TempDir dir;
    save_container(demo_table(), dir.path() / "demo");
    ServiceConfig cfg;
    cfg.persist_annotations = true;
    Service s(cfg);
    s.load_directory(dir.path());

    const std::string crosstab = R"({"annotation_a": "phenotype", "annotation_b": "region"})";
    REQUIRE(s.handle("POST", "/api/datasets/demo/summaries/crosstab", {}, crosstab).status == 200);
    CHECK(s.handle("POST", "/api/datasets/demo/summaries/crosstab", {}, crosstab).headers["Cache"] == "hit");

    auto r = s.handle("POST", "/api/datasets/demo/annotations", {},
                      R"({"name": "roi", "indices": [0, 2, 2, 7], "unselected_label": "rest"})");
    REQUIRE(r.status == 201);
    CHECK(r.body["n_selected"] == 3);
    CHECK(r.body["persisted"] == true);

    // generation bump invalidates cached results for the dataset
    CHECK(s.handle("POST", "/api/datasets/demo/summaries/crosstab", {}, crosstab).headers["Cache"] == "miss");

    auto h = s.handle("POST", "/api/datasets/demo/summaries/hist", {}, R"({"annotation": "roi"})");
    REQUIRE(h.status == 200);
    CHECK(h.body["groups"][0]["counts"] == Json::array({3, 497}));

    auto reloaded = load_container(dir.path() / "demo");
    CHECK(reloaded.annotation("roi").categories() == std::vector<std::string>{"selected", "rest"});

    auto dup = s.handle("POST", "/api/datasets/demo/annotations", {}, R"({"name": "roi", "indices": [1]})");
    CHECK(dup.status == 400);
    CHECK(dup.body["error"] == "DuplicateName");
    auto range = s.handle("POST", "/api/datasets/demo/annotations", {}, R"({"name": "x", "indices": [500]})");
    CHECK(range.body["field"] == "indices");
    auto label = s.handle("POST", "/api/datasets/demo/annotations", {}, R"({"name": "x", "indices": [1], "label": 3})");
    CHECK(label.body["field"] == "label");
}

TEST_CASE("cors headers when configured") {
    ServiceConfig cfg;
    cfg.allow_origin = "http://localhost:5173";
    auto service = demo_service(cfg);
    auto& s = *service;
    auto pre = s.handle("OPTIONS", "/api/datasets", {}, "");
    CHECK(pre.status == 204);
    CHECK(pre.headers["Access-Control-Allow-Origin"] == "http://localhost:5173");
    CHECK(s.handle("GET", "/api/health", {}, "").headers.count("Access-Control-Expose-Headers") == 1);
    CHECK(demo_service()->handle("GET", "/api/health", {}, "").headers.empty());
}

TEST_CASE("http transport") {
    auto service = demo_service();
    auto& s = *service;
    HttpServer server(s);
    const int port = server.bind("127.0.0.1", 0);
    std::thread t([&] { server.run(); });

    httplib::Client client("127.0.0.1", port);
    auto health = client.Get("/api/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    auto first = client.Post("/api/datasets/demo/spatial/ripley", kRipley, "application/json");
    auto second = client.Post("/api/datasets/demo/spatial/ripley", kRipley, "application/json");
    REQUIRE(first);
    REQUIRE(second);
    CHECK(first->get_header_value("Cache") == "miss");
    CHECK(second->get_header_value("Cache") == "hit");
    CHECK(first->body == second->body);
    auto cells = client.Get("/api/datasets/demo/cells?fields=coords&max=10&seed=1");
    REQUIRE(cells);
    CHECK(Json::parse(cells->body)["n"] == 10);

    server.stop();
    t.join();
}

#include <catch_amalgamated.hpp>

#include <filesystem>

#include <unistd.h>

#include <gspboost/io.hpp>

#include "oracle.hpp"

using namespace gspboost;
namespace fs = std::filesystem;

namespace {

class Scratch {
public:
    Scratch() {
        dir_ = fs::temp_directory_path() / ("gspboost_io_" + std::to_string(::getpid()));
        fs::create_directories(dir_);
    }
    ~Scratch() { fs::remove_all(dir_); }
    std::string write(const std::string& name, const std::string& text) const {
        const auto p = (dir_ / name).string();
        io::write_text(p, text);
        return p;
    }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

private:
    fs::path dir_;
};

const char* kPanel =
    "location,period,y,x1,x2\n"
    "a,2001,1.5,0.1,2\n"
    "b,2001,2.5,0.2,3\n"
    "a,2002,3.5,0.3,4\n"
    "b,2002,4.5,0.4,5\n";

}  // namespace

TEST_CASE("panel CSV is parsed in first-appearance order", "[io]") {
    Scratch s;
    const auto d = io::read_panel_csv(s.write("p.csv", kPanel));
    CHECK(d.n_locations() == 2);
    CHECK(d.n_periods() == 2);
    CHECK(d.location_ids() == std::vector<std::string>{"a", "b"});
    CHECK(d.period_ids() == std::vector<std::string>{"2001", "2002"});
    CHECK(d.regressor_names() == std::vector<std::string>{"x1", "x2"});
    CHECK(d.response()[2] == 3.5);
    CHECK(d.regressors()(3, 1) == 5.0);
}

TEST_CASE("panel rows may arrive in any order", "[io]") {
    Scratch s;
    const auto d = io::read_panel_csv(s.write("p.csv",
                                              "location,period,y,x\n"
                                              "b,1,2,0\n"
                                              "a,2,3,0\n"
                                              "a,1,1,0\n"
                                              "\n"
                                              "b,2,4,0\n"));
    CHECK(d.location_ids() == std::vector<std::string>{"b", "a"});
    CHECK(d.response()[0] == 2.0);
    CHECK(d.response()[1] == 1.0);
    CHECK(d.response()[3] == 3.0);
}

TEST_CASE("malformed panel CSV reports the line", "[io]") {
    Scratch s;
    try {
        io::read_panel_csv(s.write("bad.csv", "location,period,y,x\na,1,1,0\nb,1,oops,0\n"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.row_number == 3);
        CHECK(std::string(e.what()).find("oops") != std::string::npos);
    }
    try {
        io::read_panel_csv(s.write("short.csv", "location,period,y,x\na,1,1\n"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.row_number == 2);
    }
    CHECK_THROWS_AS(io::read_panel_csv(s.write("hdr.csv", "loc,period,y\na,1,1\n")), ParseError);
    CHECK_THROWS_AS(io::read_panel_csv(s.write("dup.csv", "location,period,y,x,x\na,1,1,0,0\n")), ParseError);
    CHECK_THROWS_AS(io::read_panel_csv(s.write("inf.csv", "location,period,y\na,1,inf\n")), ParseError);
    CHECK_THROWS_AS(io::read_panel_csv(s.path("missing.csv")), IoError);
}

TEST_CASE("unbalanced panels are rejected", "[io]") {
    Scratch s;
    CHECK_THROWS_AS(io::read_panel_csv(s.write("gap.csv", "location,period,y\na,1,1\nb,1,1\na,2,1\n")), DegeneratePanel);
    CHECK_THROWS_AS(io::read_panel_csv(s.write("twice.csv", "location,period,y\na,1,1\na,1,2\n")), DegeneratePanel);
}

TEST_CASE("quoted fields and BOM are handled", "[io]") {
    Scratch s;
    const auto d = io::read_panel_csv(s.write("q.csv",
                                              "\xEF\xBB\xBFlocation,period,y\n"
                                              "\"Wake, NC\",1,1\n"
                                              "\"Say \"\"hi\"\"\",1,2\n"
                                              "\"Wake, NC\",2,3\n"
                                              "\"Say \"\"hi\"\"\",2,4\n"));
    CHECK(d.location_ids() == std::vector<std::string>{"Wake, NC", "Say \"hi\""});
    CHECK_THROWS_AS(io::read_csv(s.write("open.csv", "a,b\n\"x,1\n")), ParseError);
}

TEST_CASE("neighbor lists are aligned to the panel and row-normalized", "[io]") {
    Scratch s;
    const auto path = s.write("w.csv", "from,to,weight\na,b,2\nb,a,1\nb,c,3\nc,a,5\n");
    const auto w = io::read_neighbor_csv(path, {"c", "b", "a"});
    CHECK(w.row_normalized());
    CHECK(w.matrix()(1, 2) == 0.25);
    CHECK(w.matrix()(1, 0) == 0.75);
    CHECK(w.matrix()(0, 2) == 1.0);
    const auto raw = io::read_neighbor_csv(path, {"a", "b", "c"}, false);
    CHECK(raw.matrix()(1, 2) == 3.0);
    CHECK_THROWS_AS(io::read_neighbor_csv(path, {"a", "b"}), AlignmentError);
    CHECK_THROWS_AS(io::read_neighbor_csv(s.write("iso.csv", "from,to,weight\na,b,1\n"), {"a", "b"}), IsolatedUnit);
    CHECK_THROWS_AS(io::read_neighbor_csv(s.write("dup.csv", "from,to,weight\na,b,1\na,b,1\n"), {"a", "b"}),
                    ParseError);
}

TEST_CASE("centroid files give k-NN weights and keep the centroids", "[io]") {
    Scratch s;
    const auto path = s.write("c.csv", "location,cx,cy\nb,1,0\na,0,0\nc,5,0\n");
    CHECK(io::sniff_weight_format(path) == io::WeightFormat::Centroids);
    const auto in = io::read_weights(path, {"a", "b", "c"}, 1);
    REQUIRE(in.centroids);
    CHECK((*in.centroids)(1, 0) == 1.0);
    CHECK(in.weights.matrix()(2, 1) == 1.0);
    CHECK_THROWS_AS(io::read_centroids_csv(path, {"a", "b", "c", "d"}), AlignmentError);
    CHECK_THROWS_AS(io::read_centroids_csv(path, {"a", "b"}), AlignmentError);
    CHECK_THROWS_AS(io::sniff_weight_format(s.write("x.csv", "i,j,w\n")), ParseError);
}

TEST_CASE("panel, centroids and neighbor lists round-trip through CSV", "[io]") {
    Scratch s;
    DgpConfig cfg;
    cfg.n = 12;
    cfg.t = 3;
    cfg.k = 4;
    cfg.knn_k = 3;
    const auto sim = generate_panel(cfg, 0);
    io::write_panel_csv(s.path("panel.csv"), sim.data);
    io::write_centroids_csv(s.path("cent.csv"), *sim.data.centroids(), sim.data.location_ids());
    io::write_neighbor_csv(s.path("w.csv"), SpatialWeights(sim.w.matrix(), true, sim.data.location_ids()));

    const auto back = io::read_panel_csv(s.path("panel.csv"));
    CHECK(back.response() == sim.data.response());
    CHECK(back.regressors() == sim.data.regressors());
    CHECK(back.location_ids() == sim.data.location_ids());
    const auto c = io::read_centroids_csv(s.path("cent.csv"), back.location_ids());
    CHECK(c == *sim.data.centroids());
    const auto w = io::read_neighbor_csv(s.path("w.csv"), back.location_ids());
    CHECK((w.matrix() - sim.w.matrix()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("run report JSON round-trips losslessly", "[io]") {
    RunReport r;
    r.command = "fit";
    r.seed = 18446744073709551615ULL;
    r.parameters = {{"panel", "p.csv"}, {"tau", 0.01}};
    auto vc = VarianceComponents::known(0.1 / 3, -0.7, 9.25, 10.0 / 3);
    vc.warnings = {"w"};
    vc.initial_estimator = "ols";
    r.variance_components = vc;
    r.m_opt = 17;
    r.cv_risk = {1.0, 0.1 + 0.2, 1e-300};
    r.risk_path = {3.0, 2.0};
    r.selection_path = {"x1", "W_x2"};
    r.coefficients = {{"x1", "LTB", 3.4999999999999996, true}, {"x2", "DES", 0.0, false}};
    r.retained = {"x1"};
    r.warnings = {"one", "two"};
    r.timing = {{"total_seconds", 0.5}};

    const Json j = to_json(r);
    const auto back = run_report_from_json(Json::parse(dump(j)));
    CHECK(back.command == r.command);
    CHECK(back.seed == r.seed);
    CHECK(back.parameters == r.parameters);
    REQUIRE(back.variance_components);
    CHECK(*back.variance_components->rho1 == *vc.rho1);
    CHECK(back.variance_components->sigma_eps2 == vc.sigma_eps2);
    CHECK(back.variance_components->warnings == vc.warnings);
    CHECK(back.cv_risk == r.cv_risk);
    CHECK(back.coefficients == r.coefficients);
    CHECK(back.retained == r.retained);
    CHECK(dump(to_json(back)) == dump(j));

    Json other = j;
    other["timing"] = {{"total_seconds", 99.0}};
    CHECK(dump_without_timing(other) == dump_without_timing(j));
    CHECK(dump(other) != dump(j));
}

TEST_CASE("fixed-effects variance components serialize unset values as null", "[io]") {
    VarianceComponents vc;
    vc.effects = Effects::Fixed;
    vc.rho2 = 0.3;
    const Json j = to_json(vc);
    CHECK(j["rho1"].is_null());
    CHECK(j["sigma_mu2"].is_null());
    const auto back = variance_components_from_json(j);
    CHECK(!back.rho1);
    CHECK(back.effects == Effects::Fixed);
}

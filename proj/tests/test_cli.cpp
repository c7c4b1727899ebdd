#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "toposcope/cli.hpp"
#include "toposcope/errors.hpp"
#include "toposcope/io.hpp"

using namespace toposcope;
namespace fs = std::filesystem;

namespace {

const std::string kModels = TOPOSCOPE_MODELS_DIR;

struct Run {
    int code;
    std::string out, err;
    Json report() const { return Json::parse(out); }
    Json error() const { return Json::parse(err); }
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "toposcope");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string model(const std::string& name) { return kModels + "/" + name + ".json"; }

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "toposcope_cli_test";
    fs::create_directories(dir);
    fs::path p = dir / name;
    fs::remove(p);
    return p;
}

std::string write_json(const std::string& name, const Json& j) {
    fs::path p = scratch(name);
    std::ofstream(p) << j.dump(1);
    return p.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void check_error(const Run& r, int code) {
    CHECK(r.code == code);
    CHECK(r.out.empty());
    Json e = r.error();
    CHECK(e["exit_code"] == code);
    CHECK(e.contains("error"));
    CHECK(e.contains("message"));
}

}  // namespace

TEST_CASE("model files: explicit form round trip") {
    LoadedModel q = load_model(model("qwz"));
    REQUIRE(q.model);
    CHECK(q.dimension() == 2);
    // sin k1 sx + sin k2 sy + (cos k1 + cos k2 - 1) sz
    const KPoint k{0.3, -1.1};
    Mat H = q.model->bloch(k);
    const double dz = std::cos(k[0]) + std::cos(k[1]) - 1.0;
    CHECK(std::abs(H(0, 0) - cplx(dz, 0)) < 1e-14);
    CHECK(std::abs(H(1, 0) - cplx(std::sin(k[0]), std::sin(k[1]))) < 1e-14);

    LoadedModel km = load_model(model("kane_mele"));
    REQUIRE(km.model);
    REQUIRE(km.theta);
    Json j = model_to_json(*km.model, &*km.theta);
    CHECK(j["schema"] == kModelSchema);
    LoadedModel back = parse_model(Json::parse(j.dump()));
    REQUIRE(back.model);
    REQUIRE(back.theta);
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(-M_PI, M_PI);
    for (int i = 0; i < 5; ++i) {
        KPoint p{u(rng), u(rng)};
        CHECK((back.model->bloch(p) - km.model->bloch(p)).cwiseAbs().maxCoeff() < 1e-14);
    }
    CHECK((back.theta->U - km.theta->U).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(back.theta->squares_to == -1);
}

TEST_CASE("model files: malformed input") {
    auto bad = [](const Json& j) { CHECK_THROWS_AS(parse_model(j), InputError); };
    bad(Json::array());
    bad(Json{{"schema", "toposcope.model/9"}, {"builtin", "haldane"}});
    bad(Json{{"builtin", "haldane"}, {"params", {{"mass", 1.0}}}});
    bad(Json{{"builtin", "no_such_model"}});
    Json q = load_model(model("qwz")).source;
    Json missing = q;
    missing.erase("sites");
    bad(missing);
    Json ragged = q;
    ragged["hoppings"][1]["block"] = Json::array({Json::array({1.0, 2.0}), Json::array({1.0})});
    bad(ragged);
    Json shape = q;
    shape["hoppings"][1]["block"] = Json::array({Json::array({1.0, 2.0, 3.0})});
    bad(shape);
    Json site = q;
    site["hoppings"][1]["target"] = 1;
    bad(site);
    // a missing Hermitian partner is filled in, not an error
    Json unpaired = q;
    unpaired["hoppings"].erase(unpaired["hoppings"].end() - 1);
    CHECK((parse_model(unpaired).model->bloch({0.4, 0.9}) - parse_model(q).model->bloch({0.4, 0.9})).cwiseAbs().maxCoeff() <
          1e-14);
    Json string_entry = q;
    string_entry["hoppings"][0]["block"][0][0] = "one";
    bad(string_entry);

    // the field path appears in the message
    try {
        parse_model(string_entry);
        FAIL("no throw");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("hoppings[0].block") != std::string::npos);
    }

    fs::path garbage = scratch("garbage.json");
    std::ofstream(garbage) << "{ not json";
    check_error(run({"chern", "--model", garbage.string()}), kExitInput);
    check_error(run({"chern", "--model", "/nonexistent/model.json"}), kExitInput);
    check_error(run({"chern", "--model", write_json("ragged.json", ragged)}), kExitInput);
}

TEST_CASE("exit codes") {
    Run ok = run({"chern", "--model", model("haldane")});
    CHECK(ok.code == kExitOk);
    CHECK(ok.err.empty());
    check_error(run({"chern", "--model", model("haldane_gapless")}), kExitNoGap);
    check_error(run({"chern", "--model", model("haldane"), "--grid", "7"}), kExitInput);
    check_error(run({"chern", "--model", model("haldane"), "--grid", "24,x"}), kExitInput);
    check_error(run({"chern", "--model", model("haldane"), "--grid", "24,24,24"}), kExitInput);
    check_error(run({"chern"}), kExitInput);
    check_error(run({"frobnicate", "--model", model("haldane")}), kExitInput);
    check_error(run({"z2", "--model", model("haldane")}), kExitInput);
    check_error(run({"floquet", "winding", "--model", model("haldane")}), kExitInput);
    check_error(run({"floquet", "sideways", "--model", model("reference_drive")}), kExitInput);
    check_error(run({"sweep", "--model", model("haldane"), "--param", "phi=0:1"}), kExitInput);
    // an explicit level inside the bands
    check_error(run({"chern", "--model", model("haldane"), "--fermi", "1.5"}), kExitNoGap);

    Run help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("chern") != std::string::npos);
}

TEST_CASE("chern reports") {
    Json h = run({"chern", "--model", model("haldane")}).report();
    CHECK(h["schema"] == kReportSchema);
    CHECK(h["value"] == 1);
    CHECK(h["grid"] == Json::array({24, 24}));
    CHECK(h["config"]["grid"] == Json::array({24, 24}));
    CHECK(h["config"]["steps"] == 200);
    CHECK(h.contains("convention"));
    CHECK(run({"chern", "--model", model("haldane_trivial")}).report()["value"] == 0);
    CHECK(std::abs(run({"chern", "--model", model("qwz"), "--grid", "16"}).report()["value"].get<int>()) == 1);

    Json p = load_model(model("haldane")).source;
    p["params"]["phi"] = -M_PI / 2;
    CHECK(run({"chern", "--model", write_json("haldane_minus.json", p)}).report()["value"] == -1);
}

TEST_CASE("z2 reports and the oracle") {
    Json km = run({"z2", "--model", model("kane_mele"), "--oracle"}).report();
    CHECK(km["value"] == 1);
    CHECK(km["oracle"]["agree"] == true);
    CHECK(km["oracle"]["value"] == 1);

    Json triv = load_model(model("kane_mele")).source;
    triv["params"]["M"] = 2.5;
    Json t = run({"z2", "--model", write_json("km_trivial.json", triv), "--oracle"}).report();
    CHECK(t["value"] == 0);
    CHECK(t["oracle"]["agree"] == true);

    Json g = run({"z2", "--model", model("kane_mele"), "--method", "gerbe", "--grid", "16", "--debug-gerbe"}).report();
    CHECK(g["value"] == 1);
    CHECK(g["gerbe_debug"]["faces"].size() > 0);
    CHECK(g["gerbe_debug"]["transports"].size() > 0);

    Json layered = run({"z2", "--model", model("layered_kane_mele"), "--grid", "8", "--oracle"}).report();
    CHECK(layered["strong"] == 0);
    CHECK(layered["oracle"]["agree"] == true);
    CHECK(layered["config"]["dim"] == 3);
}

TEST_CASE("floquet reports") {
    // static trivial drive
    Json triv = load_model(model("haldane_trivial")).source;
    LoadedModel tm = parse_model(triv);
    Json seg = model_to_json(*tm.model);
    Json drive = seg;
    drive.erase("hoppings");
    drive["drive"] = {{"segments", Json::array({{{"duration", 0.5}, {"hoppings", seg["hoppings"]}}})}};
    Run w0 = run({"floquet", "winding", "--model", write_json("static_drive.json", drive), "--grid", "16", "--time-grid", "16",
                  "--steps", "4"});
    REQUIRE(w0.code == 0);
    for (const auto& r : w0.report()["results"]) CHECK(r["value"] == 0);

    // two-step Haldane drive: the windings of its two gaps differ by the Chern number between them
    Json a = with_parameters(load_model(model("haldane")).source, {{"shift", -4.0}});
    Json b = with_parameters(load_model(model("haldane")).source, {{"t2", 0.2}, {"phi", -M_PI / 2}, {"M", 0.4}, {"shift", -4.0}});
    Json two = model_to_json(*parse_model(a).model);
    two.erase("hoppings");
    two["drive"] = {{"segments", Json::array({{{"duration", 0.2}, {"hoppings", model_to_json(*parse_model(a).model)["hoppings"]}},
                                              {{"duration", 0.2}, {"hoppings", model_to_json(*parse_model(b).model)["hoppings"]}}})}};
    Json w = run({"floquet", "winding", "--model", write_json("two_step.json", two), "--time-grid", "16", "--steps", "8"}).report();
    REQUIRE(w["results"].size() == 2);
    const int w1 = w["results"][0]["value"], w2 = w["results"][1]["value"];
    CHECK(std::abs(w2 - w1) == 1);
    for (const auto& r : w["results"]) CHECK(r["residual"].get<double>() < 1e-2);

    Json eps = run({"floquet", "winding", "--model", write_json("two_step.json", two), "--time-grid", "16", "--steps", "8",
                    "--eps", std::to_string(w["results"][0]["eps"].get<double>())})
                   .report();
    CHECK(eps["results"].size() == 1);
    CHECK(eps["results"][0]["value"] == w1);

    // reference drive: TRS forces W = 0 in both gaps
    Json ref = run({"floquet", "winding", "--model", model("reference_drive"), "--grid", "16", "--time-grid", "16", "--steps", "4"})
                   .report();
    REQUIRE(ref["results"].size() == 2);
    for (const auto& r : ref["results"]) CHECK(r["value"] == 0);

    fs::path csv = scratch("spectrum.csv");
    Json sp = run({"floquet", "spectrum", "--model", model("reference_drive"), "--grid", "8", "--steps", "4", "--out", csv.string()})
                  .report();
    CHECK(sp["gaps"].size() == 2);
    CHECK(slurp(csv).rfind("k1,k2,band,quasienergy\n", 0) == 0);
}

TEST_CASE("edge reports") {
    fs::path csv = scratch("edge.csv");
    Json h = run({"edge", "--model", model("haldane"), "--width", "16", "--nk", "48", "--out", csv.string()}).report();
    REQUIRE(h["counts"].size() == 1);
    CHECK(h["counts"][0]["chiral"]["edge_chern"] == 1);
    CHECK(h["counts"][0]["chiral"]["low"] == -1);
    CHECK(slurp(csv).rfind("k_par,eigenvalue,localization,edge_side\n", 0) == 0);

    Json km = run({"edge", "--model", model("kane_mele"), "--width", "16", "--nk", "48", "--open-axis", "1"}).report();
    CHECK(km["counts"][0]["kramers"]["low"] == 1);
    CHECK(km["counts"][0]["kramers"]["high"] == 1);

    check_error(run({"edge", "--model", model("haldane"), "--nk", "7"}), kExitInput);
    check_error(run({"edge", "--model", model("haldane"), "--open-axis", "2"}), kExitInput);
}

TEST_CASE("byte-identical reruns") {
    for (const auto& args : std::vector<std::vector<std::string>>{
             {"chern", "--model", model("qwz")},
             {"z2", "--model", model("kane_mele"), "--method", "gerbe", "--grid", "16", "--seed", "7"},
             {"edge", "--model", model("haldane"), "--width", "12", "--nk", "32"}}) {
        fs::path p1 = scratch("rerun1.out"), p2 = scratch("rerun2.out");
        auto a1 = args, a2 = args;
        a1.insert(a1.end(), {"--out", p1.string()});
        a2.insert(a2.end(), {"--out", p2.string()});
        Run r1 = run(a1), r2 = run(a2);
        CHECK(r1.code == 0);
        CHECK(r2.code == 0);
        std::string s1 = slurp(p1), s2 = slurp(p2);
        CHECK(!s1.empty());
        // the embedded config names the output path; everything else must match
        if (args[0] != "edge") {
            Json j1 = Json::parse(s1), j2 = Json::parse(s2);
            j1["config"].erase("out");
            j2["config"].erase("out");
            CHECK(j1.dump() == j2.dump());
        } else {
            CHECK(s1 == s2);
        }
    }
    // the thread count changes the schedule, not the result
    for (const std::string& cmd : {std::string("chern"), std::string("z2")}) {
        Json one = run({cmd, "--model", model(cmd == "chern" ? "haldane" : "kane_mele"), "--threads", "1"}).report();
        Json two = run({cmd, "--model", model(cmd == "chern" ? "haldane" : "kane_mele"), "--threads", "2"}).report();
        one["config"].erase("threads");
        two["config"].erase("threads");
        CHECK(one.dump() == two.dump());
    }
    fs::path p = scratch("same.json");
    Run r1 = run({"chern", "--model", model("haldane"), "--out", p.string()});
    const std::string first = slurp(p);
    Run r2 = run({"chern", "--model", model("haldane"), "--out", p.string()});
    CHECK(slurp(p) == first);
}

TEST_CASE("sweep") {
    Run one = run({"sweep", "--model", model("haldane"), "--param", "phi=1:1:1", "--param", "M=0.5:0.5:1"});
    REQUIRE(one.code == 0);
    CHECK(one.out == "phi,M,chern,gap,residual\n1,0.5,1,1.82744977499,0.0337706578897\n");

    Run closed = run({"sweep", "--model", model("haldane"), "--param", "phi=0", "--param", "M=0"});
    CHECK(closed.out.find("gap_closed") != std::string::npos);

    const std::vector<std::string> args{"sweep", "--model", model("haldane"), "--param", "phi=-3:3:4", "--param", "M=-2:2:5"};
    fs::path full = scratch("sweep_full.csv"), part = scratch("sweep_part.csv");
    auto with_out = [&](const fs::path& p) {
        auto a = args;
        a.insert(a.end(), {"--out", p.string()});
        return a;
    };
    REQUIRE(run(with_out(full)).code == 0);
    const std::string table = slurp(full);
    CHECK(std::count(table.begin(), table.end(), '\n') == 21);
    CHECK(table == run(args).out);

    // interrupted run: header, six rows and half a line
    size_t cut = 0;
    for (int i = 0; i < 7; ++i) cut = table.find('\n', cut) + 1;
    std::ofstream(part) << table.substr(0, cut) << "1.0,-2";
    Json rep = run(with_out(part)).report();
    CHECK(rep["resumed_from"] == 6);
    CHECK(slurp(part) == table);

    Run z2 = run({"sweep", "--model", model("kane_mele"), "--invariant", "z2", "--param", "M=0:3:2"});
    CHECK(z2.out.find("M,z2,gap,residual\n0,1,") == 0);
    CHECK(z2.out.find("\n3,0,") != std::string::npos);

    // stale table with another header is not touched
    fs::path other = scratch("sweep_other.csv");
    std::ofstream(other) << "x,chern,gap,residual\n";
    check_error(run({"sweep", "--model", model("haldane"), "--param", "M=0:1:2", "--out", other.string()}), kExitInput);
    CHECK(slurp(other) == "x,chern,gap,residual\n");
}

#include "toposcope/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "toposcope/floquet.hpp"

namespace toposcope {

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw InputError(where + ": " + what);
}

const Json& field(const Json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) bad(where, std::string("missing field '") + key + "'");
    return j.at(key);
}

double number(const Json& j, const std::string& where) {
    if (!j.is_number()) bad(where, "expected a number");
    return j.get<double>();
}

int integer(const Json& j, const std::string& where) {
    if (!j.is_number_integer()) bad(where, "expected an integer");
    return j.get<int>();
}

std::vector<double> numbers(const Json& j, const std::string& where) {
    if (!j.is_array()) bad(where, "expected an array of numbers");
    std::vector<double> out;
    for (size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

std::vector<int> integers(const Json& j, const std::string& where) {
    if (!j.is_array()) bad(where, "expected an array of integers");
    std::vector<int> out;
    for (size_t i = 0; i < j.size(); ++i) out.push_back(integer(j[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

struct Geometry {
    int dimension = 0;
    std::vector<std::vector<double>> bravais;
    std::vector<Site> sites;
};

Geometry parse_geometry(const Json& j) {
    Geometry g;
    g.dimension = integer(field(j, "dimension", "model"), "model.dimension");
    const Json& b = field(j, "bravais", "model");
    if (!b.is_array()) bad("model.bravais", "expected a list of vectors");
    for (size_t i = 0; i < b.size(); ++i) g.bravais.push_back(numbers(b[i], "model.bravais[" + std::to_string(i) + "]"));
    const Json& s = field(j, "sites", "model");
    if (!s.is_array() || s.empty()) bad("model.sites", "expected a non-empty list");
    for (size_t i = 0; i < s.size(); ++i) {
        const std::string w = "model.sites[" + std::to_string(i) + "]";
        Site site;
        site.position = numbers(field(s[i], "position", w), w + ".position");
        site.dim = s[i].contains("dim") ? integer(s[i]["dim"], w + ".dim") : 1;
        g.sites.push_back(site);
    }
    return g;
}

std::vector<Hopping> parse_hoppings(const Json& j, const std::string& where) {
    if (!j.is_array()) bad(where, "expected a list of hoppings");
    std::vector<Hopping> out;
    for (size_t i = 0; i < j.size(); ++i) {
        const std::string w = where + "[" + std::to_string(i) + "]";
        Hopping h;
        h.offset = integers(field(j[i], "offset", w), w + ".offset");
        h.source = integer(field(j[i], "source", w), w + ".source");
        h.target = integer(field(j[i], "target", w), w + ".target");
        h.block = matrix_from_json(field(j[i], "block", w), w + ".block");
        out.push_back(std::move(h));
    }
    return out;
}

CrystalModel build(const Geometry& g, const std::vector<Hopping>& hops, const std::string& where) {
    try {
        return CrystalModel(g.dimension, g.bravais, g.sites, hops);
    } catch (const ContractViolation& e) {
        bad(where, e.what());
    }
}

std::function<double(double)> parse_coefficient(const Json& j, double period, const std::string& where) {
    const double c0 = j.contains("constant") ? number(j["constant"], where + ".constant") : 0.0;
    std::vector<std::array<double, 3>> harmonics;
    if (j.contains("harmonics")) {
        const Json& h = j["harmonics"];
        if (!h.is_array()) bad(where + ".harmonics", "expected a list");
        for (size_t i = 0; i < h.size(); ++i) {
            const std::string w = where + ".harmonics[" + std::to_string(i) + "]";
            harmonics.push_back({static_cast<double>(integer(field(h[i], "n", w), w + ".n")),
                                 h[i].contains("cos") ? number(h[i]["cos"], w + ".cos") : 0.0,
                                 h[i].contains("sin") ? number(h[i]["sin"], w + ".sin") : 0.0});
        }
    }
    return [c0, harmonics, period](double t) {
        double v = c0;
        for (const auto& h : harmonics) {
            const double x = kTwoPi * h[0] * t / period;
            v += h[1] * std::cos(x) + h[2] * std::sin(x);
        }
        return v;
    };
}

DriveProtocol parse_drive(const Json& j, const Geometry& g) {
    if (j.contains("segments")) {
        const Json& s = j["segments"];
        if (!s.is_array() || s.empty()) bad("model.drive.segments", "expected a non-empty list");
        std::vector<DriveProtocol::Segment> segs;
        for (size_t i = 0; i < s.size(); ++i) {
            const std::string w = "model.drive.segments[" + std::to_string(i) + "]";
            const double d = number(field(s[i], "duration", w), w + ".duration");
            if (!(d > 0.0)) bad(w + ".duration", "must be positive");
            segs.push_back({d, build(g, parse_hoppings(field(s[i], "hoppings", w), w + ".hoppings"), w)});
        }
        return DriveProtocol::piecewise(std::move(segs));
    }
    if (j.contains("components")) {
        const double T = number(field(j, "period", "model.drive"), "model.drive.period");
        if (!(T > 0.0)) bad("model.drive.period", "must be positive");
        const Json& c = j["components"];
        if (!c.is_array() || c.empty()) bad("model.drive.components", "expected a non-empty list");
        std::vector<DriveProtocol::Component> comps;
        for (size_t i = 0; i < c.size(); ++i) {
            const std::string w = "model.drive.components[" + std::to_string(i) + "]";
            comps.push_back({build(g, parse_hoppings(field(c[i], "hoppings", w), w + ".hoppings"), w),
                             parse_coefficient(field(c[i], "coefficient", w), T, w + ".coefficient")});
        }
        return DriveProtocol::modulated(T, std::move(comps));
    }
    bad("model.drive", "needs 'segments' or 'components'");
}

double param(const std::map<std::string, double>& p, const std::string& k) { return p.at(k); }

std::map<std::string, double> merged_params(const std::string& name, const Json& j) {
    std::map<std::string, double> p = builtin_parameters(name);
    if (j.contains("params")) {
        const Json& q = j["params"];
        if (!q.is_object()) bad("model.params", "expected an object");
        for (auto it = q.begin(); it != q.end(); ++it) {
            if (!p.count(it.key())) bad("model.params", "unknown parameter '" + it.key() + "' for builtin '" + name + "'");
            p[it.key()] = number(it.value(), "model.params." + it.key());
        }
    }
    return p;
}

KaneMeleParams km_params(const std::map<std::string, double>& p) {
    KaneMeleParams k;
    k.t = param(p, "t");
    k.t2 = param(p, "t2");
    k.phi = param(p, "phi");
    k.M = param(p, "M");
    k.rashba = param(p, "rashba");
    return k;
}

LoadedModel parse_builtin(const Json& j) {
    if (!j["builtin"].is_string()) bad("model.builtin", "expected a name");
    const std::string name = j["builtin"].get<std::string>();
    const auto p = merged_params(name, j);
    LoadedModel out;
    try {
        if (name == "haldane") {
            out.model = haldane_model(param(p, "t"), param(p, "t2"), param(p, "phi"), param(p, "M"));
        } else if (name == "kane_mele") {
            KaneMele km = kane_mele_model(km_params(p));
            out.model = km.model;
            out.theta = km.theta;
        } else if (name == "layered_kane_mele") {
            KaneMele km = kane_mele_model(km_params(p));
            out.model = layered_3d_model(km.model, param(p, "interlayer"));
            out.theta = km.theta;
        } else if (name == "wilson_dirac") {
            const double d = param(p, "dimension");
            if (d != 2.0 && d != 3.0) bad("model.params.dimension", "must be 2 or 3");
            WilsonDirac wd = wilson_dirac_model(static_cast<int>(d), param(p, "m"));
            out.model = wd.model;
            out.theta = wd.theta;
        } else if (name == "reference_drive" || name == "anomalous_drive") {
            ReferenceDriveParams r;
            r.period = param(p, "period");
            r.transfer = param(p, "transfer");
            r.M = param(p, "M");
            r.static_fraction = param(p, "static_fraction");
            ReferenceDrive rd = reference_drive(r);
            out.drive = rd.drive;
            out.theta = rd.theta;
        }
    } catch (const ContractViolation& e) {
        bad("model.builtin '" + name + "'", e.what());
    }
    if (out.model && param(p, "shift") != 0.0) out.model = shifted(*out.model, param(p, "shift"));
    return out;
}

}  // namespace

int LoadedModel::dimension() const {
    if (model) return model->dimension();
    if (drive) return drive->dimension();
    return 0;
}

Mat matrix_from_json(const Json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) bad(where, "expected a non-empty list of rows");
    const size_t rows = j.size();
    size_t cols = 0;
    for (size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].empty()) bad(where, "row " + std::to_string(r) + " is not a non-empty list");
        if (r == 0) cols = j[r].size();
        else if (j[r].size() != cols) bad(where, "rows have different lengths");
    }
    Mat M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) {
            const Json& e = j[r][c];
            const std::string w = where + "[" + std::to_string(r) + "][" + std::to_string(c) + "]";
            if (e.is_number()) M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = e.get<double>();
            else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number())
                M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cplx(e[0].get<double>(), e[1].get<double>());
            else bad(w, "expected a number or [re, im]");
        }
    return M;
}

Json matrix_to_json(const Mat& M) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back({M(r, c).real(), M(r, c).imag()});
        rows.push_back(row);
    }
    return rows;
}

std::map<std::string, double> builtin_parameters(const std::string& name) {
    const KaneMeleParams km;
    std::map<std::string, double> p;
    if (name == "haldane") p = {{"t", 1.0}, {"t2", 1.0 / 3.0}, {"phi", kPi / 2}, {"M", 0.0}};
    else if (name == "kane_mele")
        p = {{"t", km.t}, {"t2", km.t2}, {"phi", km.phi}, {"M", km.M}, {"rashba", km.rashba}};
    else if (name == "layered_kane_mele")
        p = {{"t", km.t}, {"t2", km.t2}, {"phi", km.phi}, {"M", km.M}, {"rashba", km.rashba}, {"interlayer", 0.2}};
    else if (name == "wilson_dirac") p = {{"dimension", 2.0}, {"m", 1.0}};
    else if (name == "reference_drive" || name == "anomalous_drive") {
        const ReferenceDriveParams r = name == "reference_drive" ? ReferenceDriveParams{} : anomalous_drive_params();
        return {{"period", r.period}, {"transfer", r.transfer}, {"M", r.M}, {"static_fraction", r.static_fraction}};
    } else throw InputError("model.builtin: unknown builtin '" + name + "'");
    p["shift"] = 0.0;
    return p;
}

Json with_parameters(const Json& j, const std::map<std::string, double>& values) {
    if (!j.is_object() || !j.contains("builtin") || !j["builtin"].is_string())
        throw InputError("parameter sweeps need a builtin model");
    const auto known = builtin_parameters(j["builtin"].get<std::string>());
    Json out = j;
    for (const auto& [k, v] : values) {
        if (!known.count(k)) throw InputError("unknown parameter '" + k + "' for builtin '" + j["builtin"].get<std::string>() + "'");
        out["params"][k] = v;
    }
    return out;
}

LoadedModel parse_model(const Json& j) {
    if (!j.is_object()) bad("model", "expected a JSON object");
    if (j.contains("schema") && j["schema"] != kModelSchema)
        bad("model.schema", std::string("unsupported schema, expected ") + kModelSchema);
    LoadedModel out;
    if (j.contains("builtin")) {
        out = parse_builtin(j);
    } else {
        const Geometry g = parse_geometry(j);
        if (j.contains("hoppings")) out.model = build(g, parse_hoppings(j["hoppings"], "model.hoppings"), "model");
        if (j.contains("drive")) out.drive = parse_drive(j["drive"], g);
        if (!out.model && !out.drive) bad("model", "needs 'hoppings', 'drive' or 'builtin'");
        if (j.contains("time_reversal")) {
            const Json& t = j["time_reversal"];
            const Mat U = matrix_from_json(field(t, "U", "model.time_reversal"), "model.time_reversal.U");
            const int sq = t.contains("squares_to") ? integer(t["squares_to"], "model.time_reversal.squares_to") : -1;
            const int n = out.model ? out.model->bloch_dim() : out.drive->bloch_dim();
            if (U.rows() != n || U.cols() != n) bad("model.time_reversal.U", "size differs from the Bloch dimension");
            try {
                out.theta = make_antiunitary(U, sq);
            } catch (const ContractViolation& e) {
                bad("model.time_reversal", e.what());
            }
        }
    }
    out.source = j;
    return out;
}

LoadedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open model file '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError("model file '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_model(j);
}

Json model_to_json(const CrystalModel& m, const AntiUnitary* theta) {
    Json j;
    j["schema"] = kModelSchema;
    j["dimension"] = m.dimension();
    j["bravais"] = m.bravais();
    Json sites = Json::array();
    for (const auto& s : m.sites()) sites.push_back({{"position", s.position}, {"dim", s.dim}});
    j["sites"] = sites;
    Json hops = Json::array();
    for (const auto& h : m.hoppings())
        hops.push_back({{"offset", h.offset}, {"source", h.source}, {"target", h.target}, {"block", matrix_to_json(h.block)}});
    j["hoppings"] = hops;
    if (theta) j["time_reversal"] = {{"U", matrix_to_json(theta->U)}, {"squares_to", theta->squares_to}};
    return j;
}

}  // namespace toposcope

#include "toposcope/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "toposcope/edge.hpp"
#include "toposcope/floquet.hpp"
#include "toposcope/gerbe.hpp"
#include "toposcope/parallel.hpp"
#include "toposcope/static_invariants.hpp"

namespace toposcope {

namespace {

constexpr const char* kChernConvention = "c1 = (i/2pi) int tr P dP^dP over T^2, orientation dk1^dk2";
constexpr const char* kZ2Convention = "KM in {0,1}: product over TRIM of sqrt(det w)/pf(w) equals (-1)^KM";
constexpr const char* kWindingConvention = "W = (1/2pi) int V^*H over [0,T]xT^2, orientation -dt^dk1^dk2";
constexpr const char* kFloquetZ2Convention = "K in {0,1}: index3d of V_eps on [0,T/2]xT^2 equals (-1)^K";

std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(12) << x;
    return os.str();
}

Json cplx_json(cplx z) { return Json::array({z.real(), z.imag()}); }

// Grid for a command: explicit sizes repeated to the model dimension, or the default.
std::vector<int> resolve_grid(const RunConfig& c, int dim, int fallback) {
    std::vector<int> g = c.grid;
    if (g.empty()) g.assign(static_cast<size_t>(dim), fallback);
    if (g.size() == 1) g.assign(static_cast<size_t>(dim), g[0]);
    if (static_cast<int>(g.size()) != dim)
        throw InputError("--grid has " + std::to_string(g.size()) + " sizes for a " + std::to_string(dim) + "d model");
    for (int n : g)
        if (n < 8 || n % 2 != 0) throw InputError("grid sizes must be even and at least 8");
    return g;
}

struct Gap {
    double lo = 0.0, hi = 0.0;
    double level() const { return 0.5 * (lo + hi); }
};

// Top of the lower half and bottom of the upper half of the spectrum on the grid.
Gap half_filling_gap(const BlochField& H, const TorusGrid& grid) {
    Gap g{-INFINITY, INFINITY};
    for (size_t i = 0; i < grid.size(); ++i) {
        RVec e = eigh(H(grid.k(i))).values;
        const Eigen::Index half = e.size() / 2;
        g.lo = std::max(g.lo, e(half - 1));
        g.hi = std::min(g.hi, e(half));
    }
    return g;
}

double fermi_level(const RunConfig& c, const BlochField& H, const TorusGrid& grid) {
    if (c.fermi) return *c.fermi;
    Gap g = half_filling_gap(H, grid);
    if (!(g.hi - g.lo > c.tol)) {
        std::ostringstream os;
        os << "no gap at half filling on the grid (band overlap " << g.lo - g.hi << ")";
        throw NoGap(os.str());
    }
    return g.level();
}

BlochField shifted_field(const CrystalModel& m, double fermi) {
    return [m, fermi](const KPoint& k) {
        Mat H = m.bloch(k);
        H.diagonal().array() -= fermi;
        return H;
    };
}

Mat flip_at(const BlochField& H, const KPoint& k) {
    Eigh e = eigh(H(k));
    const Eigen::Index n = e.values.size();
    Eigen::Index occ = 0;
    while (occ < n && e.values(occ) < 0.0) ++occ;
    Mat F = e.vectors.leftCols(occ);
    return Mat::Identity(n, n) - 2.0 * F * F.adjoint();
}

const CrystalModel& static_model(const LoadedModel& m) {
    if (!m.model) throw InputError("this command needs a static model (field 'hoppings' or a static builtin)");
    return *m.model;
}

const AntiUnitary& time_reversal(const LoadedModel& m) {
    if (!m.theta) throw InputError("this command needs 'time_reversal' in the model");
    if (m.theta->squares_to != -1) throw InputError("time reversal must square to -1");
    return *m.theta;
}

const DriveProtocol& drive_of(const LoadedModel& m) {
    if (!m.drive) throw InputError("this command needs a 'drive' in the model");
    return *m.drive;
}

Json gerbe_debug(const SqrtHolonomyResult& r) {
    Json j;
    j["value"] = cplx_json(r.value);
    j["mesh"] = {r.nu, r.nv};
    j["refinements"] = r.refinements;
    j["ell_upper"] = r.ell_upper;
    j["ell_eps"] = std::isnan(r.ell_eps) ? Json(nullptr) : Json(r.ell_eps);
    j["fixed_sign"] = r.fixed_sign;
    Json pf = Json::array();
    for (const auto& z : r.pfaffian) pf.push_back(cplx_json(z));
    j["pfaffian"] = pf;
    j["half_holonomy"] = cplx_json(r.half.value);
    j["curving_total"] = r.half.curving_total;
    Json faces = Json::array();
    for (const auto& f : r.half.faces) faces.push_back({{"face", f.face}, {"eps", f.eps}, {"curving", f.curving}});
    j["faces"] = faces;
    Json tr = Json::array();
    for (const auto& t : r.half.transports)
        tr.push_back({{"face", t.face},
                      {"from", t.from_vertex},
                      {"to", t.to_vertex},
                      {"eps_face", t.eps_face},
                      {"eps_edge", t.eps_edge},
                      {"rank", t.rank},
                      {"value", cplx_json(t.value)}});
    j["transports"] = tr;
    return j;
}

Json base_report(const RunConfig& c) {
    Json r;
    r["schema"] = kReportSchema;
    r["command"] = c.mode.empty() ? c.command : c.command + " " + c.mode;
    return r;
}

void emit(const RunConfig& c, Json report, std::ostream& out) {
    report["config"] = config_json(c);
    if (c.out.empty()) {
        out << report.dump(2) << "\n";
        return;
    }
    std::ofstream f(c.out);
    if (!f) throw InputError("cannot write '" + c.out + "'");
    f << report.dump(2) << "\n";
}

void error_json(std::ostream& err, const std::string& kind, const std::string& message, int code) {
    Json e;
    e["error"] = kind;
    e["message"] = message;
    e["exit_code"] = code;
    err << e.dump() << "\n";
}

// ---------------------------------------------------------------- chern / z2

int cmd_chern(RunConfig c, std::ostream& out) {
    LoadedModel lm = load_model(c.model_path);
    const CrystalModel& m = static_model(lm);
    if (m.dimension() != 2) throw InputError("chern needs a 2d model");
    c.grid = resolve_grid(c, 2, 24);
    TorusGrid grid{c.grid};
    BlochField H = field_of(m);
    const double fermi = fermi_level(c, H, grid);
    ProjectorField P = valence_projectors(H, grid, fermi, c.tol);
    ChernResult r = chern_number(P);
    Json rep = base_report(c);
    rep["value"] = r.value;
    rep["residual"] = r.residual;
    rep["secondary"] = r.secondary;
    rep["grid"] = c.grid;
    rep["fermi"] = fermi;
    rep["fermi_margin"] = P.min_gap;
    rep["convention"] = kChernConvention;
    emit(c, rep, out);
    return kExitOk;
}

int cmd_z2(RunConfig c, std::ostream& out, std::ostream& err) {
    LoadedModel lm = load_model(c.model_path);
    const CrystalModel& m = static_model(lm);
    const AntiUnitary& theta = time_reversal(lm);
    const int dim = c.dim ? c.dim : m.dimension();
    if (dim != m.dimension()) throw InputError("--dim differs from the model dimension");
    if (dim != 2 && dim != 3) throw InputError("z2 needs a 2d or 3d model");
    if (c.method != "sewing" && c.method != "gerbe") throw InputError("--method must be sewing or gerbe");
    c.dim = dim;
    c.grid = resolve_grid(c, dim, c.method == "gerbe" ? 48 : 24);
    TorusGrid grid{c.grid};
    const double fermi = fermi_level(c, field_of(m), grid);
    BlochField H = shifted_field(m, fermi);
    Json rep = base_report(c);
    rep["fermi"] = fermi;
    rep["grid"] = c.grid;
    rep["convention"] = kZ2Convention;
    HolonomyOptions hopt;
    hopt.lift_seed = c.seed;
    std::optional<SqrtHolonomyResult> gerbe;
    auto run_gerbe_2d = [&]() {
        SurfaceField phi = [H](double u, double v) { return flip_at(H, {u, v}); };
        gerbe = sqrt_holonomy_equivariant(phi, theta, c.grid[0], c.grid[1], kTwoPi, kTwoPi,
                                          SurfaceMesh::Region::HalfU, hopt);
    };
    std::vector<int> weak_flat;
    if (dim == 2) {
        if (c.method == "sewing") {
            FieldBuilder build = [&](const TorusGrid& g) { return valence_projectors(H, g, 0.0, c.tol); };
            Z2Result r = kane_mele_2d(build, theta, grid);
            rep["value"] = r.value;
            rep["raw"] = Json::array({r.raw_re, r.raw_im});
            rep["residual"] = r.residual;
            rep["path_residual"] = r.path_residual;
            rep["grid_used"] = r.grid;
            if (c.debug_gerbe) run_gerbe_2d();
        } else {
            run_gerbe_2d();
            rep["value"] = gerbe->value.real() < 0.0 ? 1 : 0;
            rep["raw"] = cplx_json(gerbe->value);
            rep["residual"] = std::abs(gerbe->value - cplx(gerbe->value.real() < 0.0 ? -1.0 : 1.0, 0.0));
            rep["convention"] = "sqrt holonomy of I-2P equals (-1)^KM";
        }
        if (gerbe && c.debug_gerbe) rep["gerbe_debug"] = gerbe_debug(*gerbe);
    } else {
        if (c.method == "sewing") {
            Z2Result3d r = kane_mele_3d(H, theta, grid);
            rep["strong"] = r.strong;
            rep["weak"] = r.weak;
            rep["consistent"] = r.consistent;
            rep["residual"] = r.residual;
            rep["value"] = r.strong;
            for (const auto& w : r.weak) weak_flat.insert(weak_flat.end(), w.begin(), w.end());
        } else {
            UnitaryField3 Phi = [H](double a, double b, double d) { return flip_at(H, {a, b, d}); };
            VolumeMesh mesh;
            mesh.period = {kTwoPi, kTwoPi, kTwoPi};
            mesh.n = {c.grid[0], c.grid[1], c.grid[2]};
            Index3dOptions iopt;
            iopt.holonomy = hopt;
            Index3dResult r = index3d(Phi, theta, mesh, iopt);
            rep["strong"] = r.value == 1 ? 0 : 1;
            rep["value"] = r.value == 1 ? 0 : 1;
            rep["raw"] = cplx_json(r.raw);
            rep["residual"] = r.residual;
            rep["convention"] = "index3d of I-2P equals (-1)^KM_strong";
        }
    }
    int code = kExitOk;
    if (c.oracle) {
        Json o;
        bool agree = true;
        if (dim == 2) {
            LatticeZ2Result l = lattice_z2(H, theta, TorusGrid{{c.grid[0], c.grid[1]}}, 0.0);
            o["value"] = l.value;
            o["raw"] = l.raw;
            agree = l.value == rep["value"].get<int>();
        } else {
            std::array<std::array<int, 2>, 3> weak{};
            for (int i = 0; i < 3; ++i)
                for (int a = 0; a < 2; ++a) {
                    std::vector<int> g2;
                    for (int b = 0; b < 3; ++b)
                        if (b != i) g2.push_back(c.grid[static_cast<size_t>(b)]);
                    weak[static_cast<size_t>(i)][static_cast<size_t>(a)] =
                        lattice_z2(restrict_to_plane(H, i, a * kPi), theta, TorusGrid{g2}, 0.0).value;
                }
            const int strong = (weak[0][1] - weak[0][0]) & 1;
            o["weak"] = weak;
            o["value"] = strong;
            agree = strong == rep["value"].get<int>();
            if (!weak_flat.empty()) {
                std::vector<int> mine;
                for (const auto& w : weak) mine.insert(mine.end(), w.begin(), w.end());
                agree = agree && mine == weak_flat;
            }
        }
        o["method"] = "lattice field strength on half the zone";
        o["agree"] = agree;
        rep["oracle"] = o;
        if (!agree) code = kExitNumerical;
    }
    emit(c, rep, out);
    if (code != kExitOk) error_json(err, "oracle_disagreement", "lattice Z2 oracle disagrees with the computed index", code);
    return code;
}

// ---------------------------------------------------------------- floquet

std::vector<QuasiGap> target_gaps(const RunConfig& c, const FloquetSystem& s, const std::vector<int>& grid) {
    if (c.eps) {
        QuasiGap g;
        g.lo = g.hi = g.mid = *c.eps;
        return {g};
    }
    QuasiEnergyBands q = quasienergy_bands(monodromy(s, TorusGrid{grid}, c.steps), c.tol);
    if (q.gaps.empty()) throw NoGap("the quasi-energy spectrum has no common gap on the grid");
    return q.gaps;
}

Json gap_json(const QuasiGap& g, bool explicit_eps) {
    Json j;
    j["eps"] = g.center();
    if (!explicit_eps) j["gap"] = {g.lo, g.hi};
    return j;
}

int cmd_floquet(RunConfig c, std::ostream& out) {
    LoadedModel lm = load_model(c.model_path);
    const DriveProtocol& d = drive_of(lm);
    FloquetSystem s = floquet_system(d);
    const int dim = s.dimension;
    Json rep = base_report(c);
    if (c.mode == "spectrum") {
        c.grid = resolve_grid(c, dim, 24);
        QuasiEnergyBands q = quasienergy_bands(monodromy(s, TorusGrid{c.grid}, c.steps), c.tol);
        Json gaps = Json::array();
        for (const auto& g : q.gaps) gaps.push_back({{"lo", g.lo}, {"hi", g.hi}, {"center", g.center()}});
        rep["period"] = q.period;
        rep["grid"] = c.grid;
        rep["gaps"] = gaps;
        rep["convention"] = "quasi-energies in (-2pi/T, 0]";
        if (!c.out.empty()) {
            std::ofstream f(c.out);
            if (!f) throw InputError("cannot write '" + c.out + "'");
            for (int a = 0; a < dim; ++a) f << "k" << a + 1 << ",";
            f << "band,quasienergy\n";
            for (size_t i = 0; i < q.e.size(); ++i) {
                const KPoint k = q.grid.k(i);
                for (size_t b = 0; b < q.e[i].size(); ++b) {
                    for (double x : k) f << fmt(x) << ",";
                    f << b << "," << fmt(q.e[i][b]) << "\n";
                }
            }
        }
        rep["config"] = config_json(c);
        out << rep.dump(2) << "\n";
        return kExitOk;
    }
    if (c.mode == "winding") {
        if (dim != 2) throw InputError("floquet winding needs a 2d drive");
        c.grid = resolve_grid(c, 2, 24);
        Json res = Json::array();
        for (const auto& g : target_gaps(c, s, c.grid)) {
            WindingResult w = winding_W(s, g.center(), c.grid[0], c.time_grid, c.steps);
            Json j = gap_json(g, c.eps.has_value());
            j["value"] = w.value;
            j["raw"] = w.raw;
            j["residual"] = w.residual;
            res.push_back(j);
        }
        rep["results"] = res;
        rep["convention"] = kWindingConvention;
    } else if (c.mode == "z2" || c.mode == "z2-3d") {
        const AntiUnitary& theta = time_reversal(lm);
        const int want = c.mode == "z2" ? 2 : 3;
        if (dim != want) throw InputError("floquet " + c.mode + " needs a " + std::to_string(want) + "d drive");
        c.grid = resolve_grid(c, dim, want == 2 ? 24 : 16);
        FloquetOptions opt;
        opt.nk = c.grid[0];
        opt.nt = c.time_grid;
        opt.steps = c.steps;
        opt.gap_tol = c.tol;
        opt.index.holonomy.lift_seed = c.seed;
        Json res = Json::array();
        for (const auto& g : target_gaps(c, s, c.grid)) {
            Json j = gap_json(g, c.eps.has_value());
            if (want == 2) {
                FloquetK2dResult r = floquet_K2d(s, g.center(), theta, opt);
                j["value"] = r.value;
                j["raw"] = cplx_json(r.index.raw);
                j["residual"] = r.index.residual;
                j["cross_check"] = cplx_json(r.cross_check.raw);
                j["consistent"] = r.consistent;
            } else {
                FloquetK3dResult r = floquet_K3d(s, g.center(), theta, opt);
                j["strong"] = r.strong;
                j["weak"] = r.weak;
                j["consistent"] = r.consistent;
                j["raw"] = cplx_json(r.strong_index.raw);
                j["residual"] = r.strong_index.residual;
            }
            res.push_back(j);
        }
        rep["results"] = res;
        rep["convention"] = kFloquetZ2Convention;
    } else {
        throw InputError("floquet mode must be winding, z2, z2-3d or spectrum");
    }
    rep["grid"] = c.grid;
    rep["time_grid"] = c.time_grid;
    emit(c, rep, out);
    return kExitOk;
}

// ---------------------------------------------------------------- edge

Json count_json(const EdgeSpectrum& sp, double energy, int open_axis, bool kramers) {
    Json j;
    j["energy"] = energy;
    ChiralCount cc = count_chiral_modes(sp, energy);
    j["chiral"] = {{"low", cc.low}, {"high", cc.high}, {"unassigned", cc.unassigned}, {"edge_chern", edge_chern(cc, open_axis)}};
    if (kramers) {
        KramersCount kc = count_kramers_pairs(sp, energy);
        j["kramers"] = {{"low", kc.low}, {"high", kc.high}, {"crossings_low", kc.crossings_low},
                        {"crossings_high", kc.crossings_high}};
    }
    return j;
}

int cmd_edge(RunConfig c, std::ostream& out) {
    LoadedModel lm = load_model(c.model_path);
    if (c.width < 2) throw InputError("--width must be at least 2");
    if (c.nk < 8 || c.nk % 2 != 0) throw InputError("--nk must be even and at least 8");
    const bool kramers = lm.theta.has_value();
    EdgeSpectrum sp;
    std::vector<double> levels;
    Json rep = base_report(c);
    if (c.floquet) {
        const DriveProtocol& d = drive_of(lm);
        if (d.dimension() != 2) throw InputError("edge --floquet needs a 2d drive");
        c.grid = resolve_grid(c, 2, 24);
        sp = floquet_edge_spectrum(d, c.open_axis, c.width, c.nk, c.steps);
        if (c.energy) levels.push_back(*c.energy);
        else {
            QuasiEnergyBands q = quasienergy_bands(monodromy(d, TorusGrid{c.grid}, c.steps), c.tol);
            const double W = kTwoPi / q.period;
            for (const auto& g : q.gaps) {
                double e = std::fmod(g.lo + 0.35 * g.width(), W);
                if (e > 0) e -= W;
                if (e <= -W) e += W;
                levels.push_back(e);
            }
        }
    } else {
        const CrystalModel& m = static_model(lm);
        if (m.dimension() != 2) throw InputError("edge needs a 2d model");
        c.grid = resolve_grid(c, 2, 24);
        sp = edge_spectrum(make_strip(m, c.open_axis, c.width), c.nk);
        if (c.energy) levels.push_back(*c.energy);
        else {
            Gap g = half_filling_gap(field_of(m), TorusGrid{c.grid});
            if (!(g.hi - g.lo > c.tol)) throw NoGap("no bulk gap at half filling on the grid");
            levels.push_back(g.lo + 0.35 * (g.hi - g.lo));
        }
    }
    Json counts = Json::array();
    for (double e : levels) counts.push_back(count_json(sp, e, c.open_axis, kramers));
    rep["counts"] = counts;
    rep["open_axis"] = c.open_axis;
    rep["width"] = c.width;
    rep["nk"] = c.nk;
    rep["convention"] = "chiral count signed by dE/dk; edge_chern = high edge for open axis 0, low edge for open axis 1";
    if (!c.out.empty()) {
        std::ofstream f(c.out);
        if (!f) throw InputError("cannot write '" + c.out + "'");
        write_spectrum_csv(f, sp);
    }
    rep["config"] = config_json(c);
    out << rep.dump(2) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- sweep

struct Axis {
    std::string name;
    std::vector<double> values;
};

Axis parse_axis(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw InputError("--param expects name=lo:hi:n, got '" + spec + "'");
    Axis a;
    a.name = spec.substr(0, eq);
    std::vector<std::string> parts;
    std::stringstream ss(spec.substr(eq + 1));
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    try {
        if (parts.size() == 1) {
            a.values = {std::stod(parts[0])};
            return a;
        }
        if (parts.size() != 3) throw InputError("");
        const double lo = std::stod(parts[0]), hi = std::stod(parts[1]);
        const int n = std::stoi(parts[2]);
        if (n < 1) throw InputError("");
        for (int i = 0; i < n; ++i) a.values.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1));
    } catch (const std::exception&) {
        throw InputError("--param expects name=lo:hi:n or name=value, got '" + spec + "'");
    }
    return a;
}

std::string sweep_row(const RunConfig& c, const Json& source, const std::vector<Axis>& axes,
                      const std::vector<double>& point, const std::vector<int>& grid) {
    std::map<std::string, double> values;
    for (size_t i = 0; i < axes.size(); ++i) values[axes[i].name] = point[i];
    LoadedModel lm = parse_model(with_parameters(source, values));
    const CrystalModel& m = static_model(lm);
    if (m.dimension() != 2) throw InputError("sweep needs a 2d model");
    std::ostringstream row;
    for (double x : point) row << fmt(x) << ",";
    TorusGrid tg{grid};
    Gap g = half_filling_gap(field_of(m), tg);
    const double gap = g.hi - g.lo;
    if (!(gap > c.tol)) {
        row << "gap_closed," << fmt(gap) << ",";
        return row.str();
    }
    try {
        if (c.invariant == "chern") {
            ChernResult r = chern_number(valence_projectors(field_of(m), tg, g.level(), c.tol));
            row << r.value << "," << fmt(gap) << "," << fmt(r.residual);
        } else {
            const AntiUnitary& theta = time_reversal(lm);
            BlochField H = shifted_field(m, g.level());
            FieldBuilder build = [&](const TorusGrid& t) { return valence_projectors(H, t, 0.0, c.tol); };
            Z2Result r = kane_mele_2d(build, theta, tg);
            row << r.value << "," << fmt(gap) << "," << fmt(r.residual);
        }
    } catch (const NoGap&) {
        row.str("");
        for (double x : point) row << fmt(x) << ",";
        row << "gap_closed," << fmt(gap) << ",";
    }
    return row.str();
}

int cmd_sweep(RunConfig c, std::ostream& out) {
    if (c.invariant != "chern" && c.invariant != "z2") throw InputError("--invariant must be chern or z2");
    if (c.params.empty()) throw InputError("sweep needs at least one --param");
    std::ifstream in(c.model_path);
    if (!in) throw InputError("cannot open model file '" + c.model_path + "'");
    Json source;
    try {
        source = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(std::string("model file is not valid JSON: ") + e.what());
    }
    std::vector<Axis> axes;
    for (const auto& p : c.params) axes.push_back(parse_axis(p));
    c.grid = resolve_grid(c, 2, 24);
    std::ostringstream header;
    for (const auto& a : axes) header << a.name << ",";
    header << c.invariant << ",gap,residual";

    // resume: keep complete rows of an existing table with the same header
    size_t done = 0;
    if (!c.out.empty() && std::filesystem::exists(c.out)) {
        std::ifstream prev(c.out);
        std::string text((std::istreambuf_iterator<char>(prev)), std::istreambuf_iterator<char>());
        std::vector<std::string> lines;
        size_t pos = 0;
        while (true) {
            const size_t nl = text.find('\n', pos);
            if (nl == std::string::npos) break;
            lines.push_back(text.substr(pos, nl - pos));
            pos = nl + 1;
        }
        if (!lines.empty() && lines[0] != header.str())
            throw InputError("existing output '" + c.out + "' has a different header; refusing to resume");
        if (!lines.empty()) done = lines.size() - 1;
        std::ofstream rewrite(c.out, std::ios::trunc);
        for (const auto& l : lines) rewrite << l << "\n";
    }
    std::ofstream file;
    std::ostream* table = &out;
    if (!c.out.empty()) {
        file.open(c.out, std::ios::app);
        if (!file) throw InputError("cannot write '" + c.out + "'");
        table = &file;
    }
    size_t total = 1;
    for (const auto& a : axes) total *= a.values.size();
    if (done == 0) *table << header.str() << "\n";
    for (size_t idx = done; idx < total; ++idx) {
        std::vector<double> point(axes.size());
        size_t rem = idx;
        for (size_t a = axes.size(); a-- > 0;) {
            point[a] = axes[a].values[rem % axes[a].values.size()];
            rem /= axes[a].values.size();
        }
        *table << sweep_row(c, source, axes, point, c.grid) << "\n";
        table->flush();
    }
    if (!c.out.empty()) {
        Json rep = base_report(c);
        rep["rows"] = total;
        rep["resumed_from"] = done;
        rep["config"] = config_json(c);
        out << rep.dump(2) << "\n";
    }
    return kExitOk;
}

std::vector<int> parse_grid(const std::string& s) {
    std::vector<int> g;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            size_t used = 0;
            g.push_back(std::stoi(tok, &used));
            if (used != tok.size()) throw InputError("");
        } catch (const std::exception&) {
            throw InputError("--grid expects N or N,N[,N], got '" + s + "'");
        }
    }
    if (g.empty()) throw InputError("--grid is empty");
    return g;
}

}  // namespace

Json config_json(const RunConfig& c) {
    Json j;
    j["command"] = c.command;
    if (!c.mode.empty()) j["mode"] = c.mode;
    j["model"] = c.model_path;
    j["grid"] = c.grid;
    j["time_grid"] = c.time_grid;
    j["steps"] = c.steps;
    j["tol"] = c.tol;
    j["out"] = c.out;
    j["threads"] = c.threads;
    j["seed"] = c.seed;
    if (c.command == "z2") {
        j["dim"] = c.dim;
        j["method"] = c.method;
        j["oracle"] = c.oracle;
        j["debug_gerbe"] = c.debug_gerbe;
    }
    if (c.fermi) j["fermi"] = *c.fermi;
    if (c.eps) j["eps"] = *c.eps;
    if (c.command == "edge") {
        j["open_axis"] = c.open_axis;
        j["width"] = c.width;
        j["nk"] = c.nk;
        j["floquet"] = c.floquet;
        if (c.energy) j["energy"] = *c.energy;
    }
    if (c.command == "sweep") {
        j["params"] = c.params;
        j["invariant"] = c.invariant;
    }
    return j;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const ContractViolation*>(&e)) return kExitInput;
    if (dynamic_cast<const NoGap*>(&e) || dynamic_cast<const Obstruction*>(&e) || dynamic_cast<const BranchCut*>(&e))
        return kExitNoGap;
    return kExitNumerical;
}

int run_command(const RunConfig& c, std::ostream& out, std::ostream& err) {
    try {
        if (c.threads < 1) throw InputError("--threads must be positive");
        if (c.steps < 1) throw InputError("--steps must be positive");
        if (c.time_grid < 8 || c.time_grid % 2 != 0) throw InputError("--time-grid must be even and at least 8");
        if (!(c.tol > 0.0)) throw InputError("--tol must be positive");
        set_thread_count(c.threads);
        if (c.command == "chern") return cmd_chern(c, out);
        if (c.command == "z2") return cmd_z2(c, out, err);
        if (c.command == "floquet") return cmd_floquet(c, out);
        if (c.command == "edge") return cmd_edge(c, out);
        if (c.command == "sweep") return cmd_sweep(c, out);
        throw InputError("unknown command '" + c.command + "'");
    } catch (const Error& e) {
        const int code = exit_code_for(e);
        error_json(err, e.kind(), e.what(), code);
        return code;
    } catch (const nlohmann::json::exception& e) {
        error_json(err, "input_error", e.what(), kExitInput);
        return kExitInput;
    } catch (const std::exception& e) {
        error_json(err, "internal", e.what(), kExitNumerical);
        return kExitNumerical;
    }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"toposcope: topological invariants of crystals and periodically driven crystals"};
    app.require_subcommand(1);
    RunConfig c;
    std::string grid_text;
    std::optional<double> fermi, eps, energy;

    auto common = [&](CLI::App* s) {
        s->add_option("--model", c.model_path, "model JSON file")->required();
        s->add_option("--grid", grid_text, "grid sizes N or N,N[,N]; even, >= 8 (default 24; 48 for gerbe Z2)");
        s->add_option("--steps", c.steps, "time steps per period for smooth drives")->capture_default_str();
        s->add_option("--tol", c.tol, "gap tolerance")->capture_default_str();
        s->add_option("--threads", c.threads, "worker threads")->capture_default_str();
        s->add_option("--seed", c.seed, "seed for randomized lifts (0: deterministic gap centres)")->capture_default_str();
        s->add_option("--out", c.out, "output file (report JSON, or CSV for tables)");
    };

    CLI::App* chern = app.add_subcommand("chern", "first Chern number of the bands below the Fermi level");
    common(chern);
    chern->add_option("--fermi", fermi, "Fermi level (default: middle of the half-filling gap)");

    CLI::App* z2 = app.add_subcommand("z2", "Kane-Mele index (2d) or strong and weak indices (3d)");
    common(z2);
    z2->add_option("--dim", c.dim, "2 or 3 (default: model dimension)");
    z2->add_option("--method", c.method, "sewing or gerbe")->capture_default_str();
    z2->add_option("--fermi", fermi, "Fermi level (default: middle of the half-filling gap)");
    z2->add_flag("--oracle", c.oracle, "cross-check with the lattice Z2 and fail on disagreement");
    z2->add_flag("--debug-gerbe", c.debug_gerbe, "embed the gerbe holonomy data in the report");

    CLI::App* fl = app.add_subcommand("floquet", "invariants of periodically driven models");
    common(fl);
    fl->add_option("mode", c.mode, "winding | z2 | z2-3d | spectrum")->required();
    fl->add_option("--eps", eps, "quasi-energy in (-2pi/T, 0) (default: every gap)");
    fl->add_option("--time-grid", c.time_grid, "time mesh for W and K")->capture_default_str();

    CLI::App* edge = app.add_subcommand("edge", "strip spectrum and edge-mode counts");
    common(edge);
    edge->add_option("--open-axis", c.open_axis, "lattice axis cut open")->capture_default_str();
    edge->add_option("--width", c.width, "strip width in cells")->capture_default_str();
    edge->add_option("--nk", c.nk, "parallel momenta")->capture_default_str();
    edge->add_option("--energy", energy, "counting level (default: inside each bulk gap)");
    edge->add_flag("--floquet", c.floquet, "strip of the drive, quasi-energies");

    CLI::App* sweep = app.add_subcommand("sweep", "phase-diagram table over builtin parameters");
    common(sweep);
    sweep->add_option("--param", c.params, "name=lo:hi:n or name=value (repeatable)")->required();
    sweep->add_option("--invariant", c.invariant, "chern or z2")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        error_json(err, "input_error", e.what(), kExitInput);
        return kExitInput;
    }
    for (CLI::App* s : {chern, z2, fl, edge, sweep})
        if (s->parsed()) c.command = s->get_name();
    c.fermi = fermi;
    c.eps = eps;
    c.energy = energy;
    if (!grid_text.empty()) {
        try {
            c.grid = parse_grid(grid_text);
        } catch (const InputError& e) {
            error_json(err, e.kind(), e.what(), kExitInput);
            return kExitInput;
        }
    }
    return run_command(c, out, err);
}

}  // namespace toposcope

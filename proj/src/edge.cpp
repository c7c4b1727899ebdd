#include "toposcope/edge.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "toposcope/floquet.hpp"
#include "toposcope/parallel.hpp"

namespace toposcope {

namespace {

struct OffsetTerm {
    int across = 0;             // offset along the open axis
    std::vector<int> parallel;  // remaining components
    Mat block;
};

std::vector<OffsetTerm> strip_terms(const StripModel& strip) {
    std::vector<OffsetTerm> out;
    for (const auto& [off, B] : strip.base.offset_matrices()) {
        OffsetTerm t;
        for (int a = 0; a < static_cast<int>(off.size()); ++a) {
            if (a == strip.open_axis) t.across = off[static_cast<size_t>(a)];
            else t.parallel.push_back(off[static_cast<size_t>(a)]);
        }
        t.block = B;
        out.push_back(std::move(t));
    }
    return out;
}

Mat assemble(const StripModel& strip, const std::vector<OffsetTerm>& terms, const KPoint& k_par) {
    const int N = strip.base.bloch_dim();
    const int W = strip.width;
    Mat H = Mat::Zero(W * N, W * N);
    for (const auto& t : terms) {
        double phase = 0.0;
        for (size_t a = 0; a < t.parallel.size(); ++a) phase += k_par[a] * t.parallel[a];
        const cplx f = std::polar(1.0, phase);
        for (int x = 0; x < W; ++x) {
            const int y = x + t.across;
            if (y < 0 || y >= W) continue;
            H.block(y * N, x * N, N, N) += f * t.block;
        }
    }
    return 0.5 * (H + H.adjoint());
}

struct Column {
    RVec values;
    Mat vectors;
};

// Inside clusters of (nearly) degenerate levels the eigenvectors are
// rotated to diagonalize +1 on the low outer cells and -1 on the high ones,
// so copies of one branch on opposite edges come apart.
void separate_edges(Column& c, int rows, double tol = 1e-7) {
    const Eigen::Index M = c.values.size();
    Eigen::Index start = 0;
    while (start < M) {
        Eigen::Index end = start + 1;
        while (end < M && c.values(end) - c.values(end - 1) < tol) ++end;
        const Eigen::Index m = end - start;
        if (m > 1) {
            Mat block = c.vectors.middleCols(start, m);
            Mat X = block.topRows(rows).adjoint() * block.topRows(rows) -
                    block.bottomRows(rows).adjoint() * block.bottomRows(rows);
            Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (X + X.adjoint()));
            c.vectors.middleCols(start, m) = block * es.eigenvectors();
        }
        start = end;
    }
}

EdgeSpectrum collect(const std::vector<KPoint>& k, const std::function<Column(const KPoint&)>& solve, int width,
                     int cell_dim, const EdgeOptions& opt, bool uniform_line) {
    if (!(opt.outer_fraction > 0.0 && opt.outer_fraction <= 0.5))
        throw ContractViolation("edge_spectrum: outer_fraction must lie in (0, 0.5]");
    EdgeSpectrum sp;
    sp.k = k;
    sp.options = opt;
    const size_t nk = k.size();
    std::vector<Mat> vecs(nk);
    sp.values.resize(nk);
    sp.weight_low.resize(nk);
    sp.weight_high.resize(nk);
    sp.side.resize(nk);
    const int outer = std::max(1, static_cast<int>(std::lround(opt.outer_fraction * width)));
    const int rows = outer * cell_dim;
    parallel_for(nk, [&](size_t j) {
        Column c = solve(k[j]);
        separate_edges(c, rows);
        const Eigen::Index M = c.vectors.cols();
        RVec lo(M), hi(M);
        std::vector<EdgeSide> side(static_cast<size_t>(M), EdgeSide::bulk);
        for (Eigen::Index a = 0; a < M; ++a) {
            lo(a) = c.vectors.col(a).head(rows).squaredNorm();
            hi(a) = c.vectors.col(a).tail(rows).squaredNorm();
            if (lo(a) > opt.threshold) side[static_cast<size_t>(a)] = EdgeSide::low;
            else if (hi(a) > opt.threshold) side[static_cast<size_t>(a)] = EdgeSide::high;
        }
        sp.values[j] = std::move(c.values);
        sp.weight_low[j] = std::move(lo);
        sp.weight_high[j] = std::move(hi);
        sp.side[j] = std::move(side);
        vecs[j] = std::move(c.vectors);
    });
    if (uniform_line) {
        sp.next.resize(nk);
        parallel_for(nk, [&](size_t j) {
            Eigen::MatrixXd O = (vecs[j].adjoint() * vecs[(j + 1) % nk]).cwiseAbs();
            std::vector<int> nx(static_cast<size_t>(O.rows()));
            for (Eigen::Index a = 0; a < O.rows(); ++a) {
                Eigen::Index b;
                O.row(a).maxCoeff(&b);
                nx[static_cast<size_t>(a)] = static_cast<int>(b);
            }
            sp.next[j] = std::move(nx);
        });
    }
    return sp;
}

std::vector<KPoint> uniform_line_points(int nk) {
    if (nk < 4) throw ContractViolation("edge_spectrum: need at least 4 momenta");
    std::vector<KPoint> k;
    for (int j = 0; j < nk; ++j) k.push_back({kTwoPi * j / nk});
    return k;
}

struct Crossing {
    int sign;
    EdgeSide side;
};

std::vector<Crossing> crossings(const EdgeSpectrum& sp, double energy) {
    if (!sp.uniform_line()) throw ContractViolation("edge counting needs a uniform periodic line of momenta");
    const size_t nk = sp.k.size();
    const double dk = kTwoPi / static_cast<double>(nk);
    const double wrap = sp.period > 0.0 ? kTwoPi / sp.period : 0.0;
    std::vector<Crossing> out;
    for (size_t j = 0; j < nk; ++j) {
        const size_t jn = (j + 1) % nk;
        std::vector<int> used;
        for (Eigen::Index a = 0; a < sp.values[j].size(); ++a) {
            const int b = sp.next[j][static_cast<size_t>(a)];
            double d = sp.values[jn](b) - sp.values[j](a);
            double u = energy - sp.values[j](a);
            if (wrap > 0.0) {
                d = std::remainder(d, wrap);
                u = std::remainder(u, wrap);
            }
            int sign = 0;
            if (u > 0.0 && u <= d) sign = 1;
            else if (u > d && u <= 0.0) sign = -1;
            if (sign == 0) continue;
            if (std::abs(d / dk) < 1e-6) {
                std::ostringstream os;
                os << "edge counting: tangential crossing near k = " << sp.k[j][0] << "; refine the momentum grid";
                throw MeshTooCoarse(os.str());
            }
            if (std::find(used.begin(), used.end(), b) != used.end())
                throw MeshTooCoarse("edge counting: two crossing branches follow the same state; refine the momentum grid");
            used.push_back(b);
            const EdgeSide sa = sp.side[j][static_cast<size_t>(a)];
            const EdgeSide sb = sp.side[jn][static_cast<size_t>(b)];
            EdgeSide s = EdgeSide::bulk;
            if (sa == sb) s = sa;
            else if (sa == EdgeSide::bulk) s = sb;
            else if (sb == EdgeSide::bulk) s = sa;
            out.push_back({sign, s});
        }
    }
    return out;
}

}  // namespace

StripModel make_strip(const CrystalModel& base, int open_axis, int width) {
    if (open_axis < 0 || open_axis >= base.dimension()) throw ContractViolation("make_strip: open axis out of range");
    if (width < 1) throw ContractViolation("make_strip: width must be positive");
    const int range = base.range_along(open_axis);
    if (width < 2 * range) {
        std::ostringstream os;
        os << "make_strip: width " << width << " is smaller than twice the hopping range " << range;
        throw ContractViolation(os.str());
    }
    return {base, open_axis, width};
}

Mat strip_hamiltonian(const StripModel& strip, const KPoint& k_par) {
    if (static_cast<int>(k_par.size()) != strip.parallel_dimension())
        throw ContractViolation("strip_hamiltonian: k_par has the wrong length");
    return assemble(strip, strip_terms(strip), k_par);
}

CrystalModel strip_crystal(const StripModel& strip) {
    const int dp = strip.parallel_dimension();
    if (dp < 1) throw ContractViolation("strip_crystal: base must have dimension >= 2");
    const int N = strip.base.bloch_dim();
    const int W = strip.width;
    std::vector<std::vector<double>> bravais(static_cast<size_t>(dp), std::vector<double>(static_cast<size_t>(dp), 0.0));
    for (int a = 0; a < dp; ++a) bravais[static_cast<size_t>(a)][static_cast<size_t>(a)] = 1.0;
    std::vector<Site> sites;
    for (int x = 0; x < W; ++x)
        for (const auto& s : strip.base.sites()) {
            Site c;
            c.dim = s.dim;
            for (int a = 0; a < strip.base.dimension(); ++a)
                if (a != strip.open_axis) c.position.push_back(s.position[static_cast<size_t>(a)]);
            sites.push_back(c);
        }
    std::map<std::vector<int>, Mat> blocks;
    for (const auto& t : strip_terms(strip)) {
        auto it = blocks.find(t.parallel);
        if (it == blocks.end()) it = blocks.emplace(t.parallel, Mat::Zero(W * N, W * N)).first;
        for (int x = 0; x < W; ++x) {
            const int y = x + t.across;
            if (y >= 0 && y < W) it->second.block(y * N, x * N, N, N) += t.block;
        }
    }
    return CrystalModel::from_offset_matrices(dp, bravais, sites, blocks);
}

DriveProtocol strip_drive(const DriveProtocol& drive, int open_axis, int width) {
    if (drive.is_piecewise()) {
        std::vector<DriveProtocol::Segment> segs;
        for (const auto& s : drive.segments())
            segs.push_back({s.duration, strip_crystal(make_strip(s.model, open_axis, width))});
        return DriveProtocol::piecewise(std::move(segs));
    }
    std::vector<DriveProtocol::Component> comps;
    for (const auto& c : drive.components())
        comps.push_back({strip_crystal(make_strip(c.model, open_axis, width)), c.coefficient});
    return DriveProtocol::modulated(drive.period(), std::move(comps));
}

const char* side_name(EdgeSide s) {
    switch (s) {
        case EdgeSide::low: return "low";
        case EdgeSide::high: return "high";
        default: return "bulk";
    }
}

EdgeSpectrum edge_spectrum(const StripModel& strip, const std::vector<KPoint>& k_par, const EdgeOptions& opt) {
    for (const auto& k : k_par)
        if (static_cast<int>(k.size()) != strip.parallel_dimension())
            throw ContractViolation("edge_spectrum: k_par has the wrong length");
    const auto terms = strip_terms(strip);
    return collect(
        k_par,
        [&](const KPoint& k) {
            Eigh e = eigh(assemble(strip, terms, k));
            return Column{e.values, e.vectors};
        },
        strip.width, strip.base.bloch_dim(), opt, false);
}

EdgeSpectrum edge_spectrum(const StripModel& strip, int nk, const EdgeOptions& opt) {
    if (strip.parallel_dimension() != 1) throw ContractViolation("edge_spectrum: one periodic direction required");
    const auto terms = strip_terms(strip);
    return collect(
        uniform_line_points(nk),
        [&](const KPoint& k) {
            Eigh e = eigh(assemble(strip, terms, k));
            return Column{e.values, e.vectors};
        },
        strip.width, strip.base.bloch_dim(), opt, true);
}

EdgeSpectrum floquet_edge_spectrum(const DriveProtocol& drive, int open_axis, int width, int nk, int steps,
                                   const EdgeOptions& opt) {
    if (drive.dimension() != 2) throw ContractViolation("floquet_edge_spectrum: two-dimensional drive required");
    FloquetSystem s = floquet_system(strip_drive(drive, open_axis, width));
    const double T = s.period;
    EdgeSpectrum sp = collect(
        uniform_line_points(nk),
        [&](const KPoint& k) {
            UnitaryEig ue = unitary_eig(propagate(s, k, 0.0, T, steps));
            const Eigen::Index M = ue.lambda.size();
            std::vector<double> e(static_cast<size_t>(M));
            for (Eigen::Index a = 0; a < M; ++a) e[static_cast<size_t>(a)] = phase_in_window(ue.lambda(a), -kTwoPi) / T;
            std::vector<Eigen::Index> order(static_cast<size_t>(M));
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
                return e[static_cast<size_t>(x)] < e[static_cast<size_t>(y)];
            });
            Column c{RVec(M), Mat(M, M)};
            for (Eigen::Index a = 0; a < M; ++a) {
                const Eigen::Index src = order[static_cast<size_t>(a)];
                c.values(a) = e[static_cast<size_t>(src)];
                c.vectors.col(a) = ue.frame.col(src);
            }
            return c;
        },
        width, drive.bloch_dim(), opt, true);
    sp.period = T;
    return sp;
}

ChiralCount count_chiral_modes(const EdgeSpectrum& spec, double energy) {
    ChiralCount c;
    for (const auto& x : crossings(spec, energy)) {
        if (x.side == EdgeSide::low) c.low += x.sign;
        else if (x.side == EdgeSide::high) c.high += x.sign;
        else c.unassigned += x.sign;
    }
    return c;
}

int edge_chern(const ChiralCount& c, int open_axis) { return open_axis == 0 ? c.high : c.low; }

KramersCount count_kramers_pairs(const EdgeSpectrum& spec, double energy) {
    KramersCount c;
    for (const auto& x : crossings(spec, energy)) {
        if (x.side == EdgeSide::low) ++c.crossings_low;
        else if (x.side == EdgeSide::high) ++c.crossings_high;
    }
    if (c.crossings_low % 2 != 0 || c.crossings_high % 2 != 0)
        throw MeshTooCoarse("count_kramers_pairs: odd number of crossings on one edge; refine the grid or move the energy");
    c.low = (c.crossings_low / 2) % 2;
    c.high = (c.crossings_high / 2) % 2;
    return c;
}

void write_spectrum_csv(std::ostream& os, const EdgeSpectrum& spec) {
    const size_t dp = spec.k.empty() ? 1 : spec.k[0].size();
    if (dp == 1) os << "k_par";
    else
        for (size_t a = 0; a < dp; ++a) os << (a ? "," : "") << "k_par_" << a + 1;
    os << ",eigenvalue,localization,edge_side\n";
    os << std::setprecision(12);
    for (size_t j = 0; j < spec.k.size(); ++j)
        for (Eigen::Index a = 0; a < spec.values[j].size(); ++a) {
            for (size_t b = 0; b < dp; ++b) os << (b ? "," : "") << spec.k[j][b];
            os << "," << spec.values[j](a) << ","
               << std::max(spec.weight_low[j](a), spec.weight_high[j](a)) << ","
               << side_name(spec.side[j][static_cast<size_t>(a)]) << "\n";
        }
}

}  // namespace toposcope

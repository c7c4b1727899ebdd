#include "toposcope/floquet.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include "toposcope/parallel.hpp"

namespace toposcope {

namespace {

double wrap_time(double t, double T) {
    double tm = std::fmod(t, T);
    if (tm < 0) tm += T;
    return tm;
}

// Midpoint-rule evolution over [t0, t1] aligned to the global step grid of width h.
Mat smooth_propagate(const FloquetSystem& s, const KPoint& k, double t0, double t1, int steps) {
    const double h = s.period / steps;
    Mat U = Mat::Identity(s.bloch_dim, s.bloch_dim);
    double t = t0;
    while (t < t1 - 1e-14 * s.period) {
        const double next_grid = (std::floor(t / h + 1e-9) + 1.0) * h;
        const double t_next = std::min(t1, next_grid);
        U = expm_herm(s.hamiltonian(0.5 * (t + t_next), k), t_next - t) * U;
        t = t_next;
    }
    return U;
}

Mat piecewise_propagate(const FloquetSystem& s, const KPoint& k, double t0, double t1) {
    Mat U = Mat::Identity(s.bloch_dim, s.bloch_dim);
    const auto& bp = s.breakpoints;
    for (size_t i = 0; i + 1 < bp.size(); ++i) {
        const double a = std::max(t0, bp[i]), b = std::min(t1, bp[i + 1]);
        if (b <= a) continue;
        U = expm_herm(s.hamiltonian(0.5 * (bp[i] + bp[i + 1]), k), b - a) * U;
    }
    return U;
}

double quasi_of(cplx lambda, double T) {
    double a = phase_in_window(lambda, -kTwoPi);  // in (-2pi, 0]
    return a / T;
}

void require_gap(const UnitaryEig& ue, double epsT, double gap_tol, const KPoint& k) {
    if (branch_distance(ue, epsT) < gap_tol) {
        std::ostringstream os;
        os << "floquet: quasi-energy gap closes at the branch angle near k = (";
        for (size_t i = 0; i < k.size(); ++i) os << (i ? ", " : "") << k[i];
        os << ")";
        throw NoGap(os.str());
    }
}

}  // namespace

FloquetSystem floquet_system(const DriveProtocol& drive) {
    FloquetSystem s;
    s.period = drive.period();
    s.dimension = drive.dimension();
    s.bloch_dim = drive.bloch_dim();
    s.hamiltonian = [drive](double t, const KPoint& k) { return drive.hamiltonian(t, k); };
    s.breakpoints = drive.breakpoints();
    return s;
}

FloquetSystem restrict_system(const FloquetSystem& s, int axis, double value) {
    if (axis < 0 || axis >= s.dimension) throw ContractViolation("restrict_system: axis out of range");
    FloquetSystem r = s;
    r.dimension = s.dimension - 1;
    auto H = s.hamiltonian;
    r.hamiltonian = [H, axis, value](double t, const KPoint& k) {
        KPoint full(k);
        full.insert(full.begin() + axis, value);
        return H(t, full);
    };
    return r;
}

double drive_trs_defect(const FloquetSystem& s, const AntiUnitary& theta, int n, int nt) {
    double worst = 0.0;
    int total = 1;
    for (int i = 0; i < s.dimension; ++i) total *= n;
    for (int j = 0; j < nt; ++j) {
        // sample away from the switching times of piecewise schedules
        const double t = s.period * (j + 0.37) / nt;
        for (int idx = 0; idx < total; ++idx) {
            KPoint k(static_cast<size_t>(s.dimension));
            int r = idx;
            for (int i = 0; i < s.dimension; ++i) {
                k[static_cast<size_t>(i)] = kTwoPi * (r % n) / n + 0.1234 / n;
                r /= n;
            }
            Mat lhs = theta.conjugate(s.hamiltonian(t, k));
            Mat rhs = s.hamiltonian(wrap_time(-t, s.period), negate(k));
            worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
        }
    }
    return worst;
}

Mat propagate(const FloquetSystem& s, const KPoint& k, double t0, double t1, int steps) {
    if (steps < 1) throw ContractViolation("propagate: steps must be >= 1");
    if (t1 < t0) throw ContractViolation("propagate: t1 < t0");
    return s.breakpoints.empty() ? smooth_propagate(s, k, t0, t1, steps) : piecewise_propagate(s, k, t0, t1);
}

std::vector<Mat> trajectory(const FloquetSystem& s, const KPoint& k, int nt, int steps) {
    std::vector<Mat> out;
    out.reserve(static_cast<size_t>(nt) + 1);
    out.push_back(Mat::Identity(s.bloch_dim, s.bloch_dim));
    for (int j = 0; j < nt; ++j) {
        const double t0 = s.period * j / nt, t1 = s.period * (j + 1) / nt;
        out.push_back(propagate(s, k, t0, t1, steps) * out.back());
    }
    return out;
}

MonodromyField monodromy(const FloquetSystem& s, const TorusGrid& grid, int steps) {
    if (grid.dimension() != s.dimension) throw ContractViolation("monodromy: grid dimension differs from the drive");
    MonodromyField m;
    m.grid = grid;
    m.period = s.period;
    m.U.resize(grid.size());
    parallel_for(grid.size(), [&](size_t i) { m.U[i] = propagate(s, grid.k(i), 0.0, s.period, steps); });
    return m;
}

MonodromyField monodromy(const DriveProtocol& drive, const TorusGrid& grid, int steps) {
    return monodromy(floquet_system(drive), grid, steps);
}

double monodromy_trs_defect(const MonodromyField& m, const AntiUnitary& theta) {
    double worst = 0.0;
    for (size_t i = 0; i < m.U.size(); ++i) {
        Mat lhs = theta.conjugate(m.U[i]);
        Mat rhs = m.U[m.grid.mirror(i)].adjoint();
        worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
    }
    return worst;
}

QuasiEnergyBands quasienergy_bands(const MonodromyField& m, double gap_tol) {
    QuasiEnergyBands b;
    b.grid = m.grid;
    b.period = m.period;
    b.e.resize(m.U.size());
    parallel_for(m.U.size(), [&](size_t i) {
        UnitaryEig ue = unitary_eig(m.U[i]);
        std::vector<double> e;
        for (Eigen::Index j = 0; j < ue.lambda.size(); ++j) e.push_back(quasi_of(ue.lambda(j), m.period));
        std::sort(e.begin(), e.end());
        b.e[i] = std::move(e);
    });
    // Common gaps: cut the circle of quasi-energies inside the widest free
    // interval of all samples, follow each band (by rank) in that frame and
    // take the complement of the union of band ranges.
    const double T = m.period, W = kTwoPi / T;
    std::vector<double> all;
    for (const auto& e : b.e) all.insert(all.end(), e.begin(), e.end());
    if (all.empty()) return b;
    std::sort(all.begin(), all.end());
    // cut at the upper end of the widest free interval
    double cut = all.front(), widest = all.front() + W - all.back();
    for (size_t i = 0; i + 1 < all.size(); ++i)
        if (all[i + 1] - all[i] > widest) {
            widest = all[i + 1] - all[i];
            cut = all[i + 1];
        }
    if (widest <= gap_tol / T) return b;
    auto rel = [&](double e) {
        double x = std::fmod(e - cut, W);
        if (x < 0) x += W;
        return x;
    };
    const size_t nb = b.e.front().size();
    std::vector<std::pair<double, double>> ranges(nb, {INFINITY, -INFINITY});
    for (const auto& e : b.e) {
        std::vector<double> x;
        for (double v : e) x.push_back(rel(v));
        std::sort(x.begin(), x.end());
        for (size_t n = 0; n < nb; ++n) {
            ranges[n].first = std::min(ranges[n].first, x[n]);
            ranges[n].second = std::max(ranges[n].second, x[n]);
        }
    }
    // ranges are ordered by rank; gaps lie between consecutive covered stretches
    double covered = ranges.front().second;
    std::vector<std::pair<double, double>> free;
    for (size_t n = 1; n < nb; ++n) {
        if (ranges[n].first - covered > gap_tol / T) free.push_back({covered, ranges[n].first});
        covered = std::max(covered, ranges[n].second);
    }
    free.push_back({covered, W + ranges.front().first});
    for (auto [x0, x1] : free) {
        if (x1 - x0 <= gap_tol / T) continue;
        QuasiGap g;
        g.lo = cut + x0;
        g.hi = cut + x1;
        // representative of the centre inside (-2pi/T, 0)
        double c = std::fmod(0.5 * (g.lo + g.hi), W);
        if (c > 0) c -= W;
        if (c <= -W) c += W;
        // a gap centred on the window edge uses its quarter point instead
        if (c > -1e-9 * W || c < -W * (1.0 - 1e-9)) c = 0.25 * (g.hi - g.lo) - 0.5 * (g.hi - g.lo) - (c > -0.5 * W ? 0.0 : W);
        g.mid = c;
        b.gaps.push_back(g);
    }
    std::sort(b.gaps.begin(), b.gaps.end(), [](const QuasiGap& x, const QuasiGap& y) { return x.mid < y.mid; });
    return b;
}

double gap_distance(const MonodromyField& m, double eps) {
    double best = INFINITY;
    for (const Mat& U : m.U) best = std::min(best, branch_distance(unitary_eig(U), eps * m.period));
    return best / m.period;
}

std::vector<Mat> effective_hamiltonian(const MonodromyField& m, double eps, double gap_tol) {
    const double T = m.period;
    if (!(eps > -kTwoPi / T && eps < 0.0)) throw ContractViolation("effective_hamiltonian: eps outside (-2pi/T, 0)");
    std::vector<Mat> out(m.U.size());
    parallel_for(m.U.size(), [&](size_t i) {
        UnitaryEig ue = unitary_eig(m.U[i]);
        require_gap(ue, eps * T, gap_tol, m.grid.k(i));
        out[i] = branch_log(ue, eps * T, gap_tol) / T;
    });
    return out;
}

Mat effective_hamiltonian(const FloquetSystem& s, const KPoint& k, double eps, int steps, double gap_tol) {
    const double T = s.period;
    if (!(eps > -kTwoPi / T && eps < 0.0)) throw ContractViolation("effective_hamiltonian: eps outside (-2pi/T, 0)");
    UnitaryEig ue = unitary_eig(propagate(s, k, 0.0, T, steps));
    require_gap(ue, eps * T, gap_tol, k);
    return branch_log(ue, eps * T, gap_tol) / T;
}

Mat periodized_evolution(const FloquetSystem& s, double eps, double t, const KPoint& k, int steps, double gap_tol) {
    const double tm = wrap_time(t, s.period);
    Mat Heff = effective_hamiltonian(s, k, eps, steps, gap_tol);
    return propagate(s, k, 0.0, tm, steps) * expm_herm(Heff, -tm);
}

namespace {

// H^eff per k, computed once.
class EffectiveCache {
public:
    EffectiveCache(FloquetSystem s, double eps, int steps, double gap_tol)
        : s_(std::move(s)), eps_(eps), steps_(steps), gap_tol_(gap_tol) {}

    Mat get(const KPoint& k) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = cache_.find(k);
            if (it != cache_.end()) return it->second;
        }
        Mat H = effective_hamiltonian(s_, k, eps_, steps_, gap_tol_);
        std::lock_guard<std::mutex> lock(mu_);
        if (cache_.size() > 200000) cache_.clear();
        cache_.emplace(k, H);
        return H;
    }
    const FloquetSystem& system() const { return s_; }
    int steps() const { return steps_; }

private:
    FloquetSystem s_;
    double eps_;
    int steps_;
    double gap_tol_;
    std::mutex mu_;
    std::map<KPoint, Mat> cache_;
};

}  // namespace

UnitaryField3 periodized_field(const FloquetSystem& s, double eps, int steps, double gap_tol) {
    if (s.dimension != 2) throw ContractViolation("periodized_field: two-dimensional drive required");
    auto cache = std::make_shared<EffectiveCache>(s, eps, steps, gap_tol);
    return [cache](double t, double k1, double k2) {
        const FloquetSystem& sys = cache->system();
        const double tm = wrap_time(t, sys.period);
        const KPoint k{k1, k2};
        Mat H = cache->get(k);
        return Mat(propagate(sys, k, 0.0, tm, cache->steps()) * expm_herm(H, -tm));
    };
}

UnitaryField3 periodized_slice(const FloquetSystem& s, double eps, double t, int steps, double gap_tol) {
    if (s.dimension != 3) throw ContractViolation("periodized_slice: three-dimensional drive required");
    auto cache = std::make_shared<EffectiveCache>(s, eps, steps, gap_tol);
    const double tm = wrap_time(t, s.period);
    return [cache, tm](double k1, double k2, double k3) {
        const KPoint k{k1, k2, k3};
        Mat H = cache->get(k);
        return Mat(propagate(cache->system(), k, 0.0, tm, cache->steps()) * expm_herm(H, -tm));
    };
}

WindingResult winding_W(const FloquetSystem& s, double eps, int nk, int nt, int steps) {
    if (s.dimension != 2) throw ContractViolation("winding_W: two-dimensional drive required");
    const double T = s.period;
    WindingResult r;
    for (int round = 0;; ++round) {
        // V_eps(t_j, k) from one trajectory per k; the t axis is periodic since V(0) = V(T) = I
        Axes3 axes{Axis{0.0, T, nt, true}, Axis{0.0, kTwoPi, nk, true}, Axis{0.0, kTwoPi, nk, true}};
        std::vector<Mat> samples(static_cast<size_t>(nt) * nk * nk);
        const size_t nkk = static_cast<size_t>(nk) * nk;
        parallel_for(nkk, [&](size_t idx) {
            const int i1 = static_cast<int>(idx / nk), i2 = static_cast<int>(idx % nk);
            const KPoint k{axes[1].at(i1), axes[2].at(i2)};
            std::vector<Mat> U = trajectory(s, k, nt, steps);
            UnitaryEig ue = unitary_eig(U.back());
            require_gap(ue, eps * T, kDefaultTol.gap, k);
            const Mat H = branch_log(ue, eps * T) / T;
            for (int j = 0; j < nt; ++j) {
                const double t = axes[0].at(j);
                samples[static_cast<size_t>(j) * nkk + idx] = U[static_cast<size_t>(j)] * expm_herm(H, -t);
            }
        });
        try {
            WzResult w = wz_density_integral(samples, axes);
            // same orientation as degree_of_loop_map
            r.raw = -w.integral / kTwoPi;
            break;
        } catch (const MeshTooCoarse&) {
            if (round == 3) throw;
            nk *= 2;
            nt *= 2;
        }
    }
    r.value = static_cast<int>(std::lround(r.raw));
    r.residual = std::abs(r.raw - r.value);
    r.nt = nt;
    r.nk = nk;
    return r;
}

namespace {

int align_steps(int steps, int nt) {
    // the step grid must contain the volume time samples, also after refinement
    const int unit = 8 * nt;
    return std::max(unit, (steps + unit - 1) / unit * unit);
}

}  // namespace

FloquetK2dResult floquet_K2d(const FloquetSystem& s, double eps, const AntiUnitary& theta, const FloquetOptions& opt) {
    if (s.dimension != 2) throw ContractViolation("floquet_K2d: two-dimensional drive required");
    if (theta.squares_to != -1) throw ContractViolation("floquet_K2d: theta must square to -1");
    const double defect = drive_trs_defect(s, theta);
    if (defect > 1e-8) {
        std::ostringstream os;
        os << "floquet_K2d: drive is not time-reversal symmetric (defect " << defect << ")";
        throw ContractViolation(os.str());
    }
    const int steps = s.breakpoints.empty() ? align_steps(opt.steps, opt.nt) : opt.steps;
    UnitaryField3 V = periodized_field(s, eps, steps, opt.gap_tol);

    FloquetK2dResult r;
    VolumeMesh mesh;
    mesh.period = {s.period, kTwoPi, kTwoPi};
    mesh.n = {opt.nt, opt.nk, opt.nk};
    mesh.half_axis = 0;
    r.index = index3d(V, theta, mesh, opt.index);
    r.value = r.index.value == 1 ? 0 : 1;
    if (opt.cross_check) {
        mesh.half_axis = 1;
        r.cross_check = index3d(V, theta, mesh, opt.index);
        r.consistent = r.cross_check.value == r.index.value;
    }
    return r;
}

FloquetK3dResult floquet_K3d(const FloquetSystem& s, double eps, const AntiUnitary& theta, const FloquetOptions& opt) {
    if (s.dimension != 3) throw ContractViolation("floquet_K3d: three-dimensional drive required");
    if (theta.squares_to != -1) throw ContractViolation("floquet_K3d: theta must square to -1");
    const int steps = s.breakpoints.empty() ? align_steps(opt.steps, opt.nt) : opt.steps;
    FloquetK3dResult r;
    VolumeMesh mesh;
    mesh.period = {kTwoPi, kTwoPi, kTwoPi};
    mesh.n = {opt.nk, opt.nk, opt.nk};
    mesh.half_axis = 0;
    r.strong_index = index3d(periodized_slice(s, eps, 0.5 * s.period, steps, opt.gap_tol), theta, mesh, opt.index);
    r.strong = r.strong_index.value == 1 ? 0 : 1;
    FloquetOptions sub = opt;
    sub.cross_check = false;
    for (int i = 0; i < 3; ++i)
        for (int a = 0; a < 2; ++a)
            r.weak[static_cast<size_t>(i)][static_cast<size_t>(a)] =
                floquet_K2d(restrict_system(s, i, a * kPi), eps, theta, sub).value;
    for (int i = 0; i < 3; ++i) {
        const auto& w = r.weak[static_cast<size_t>(i)];
        if (((w[1] - w[0]) & 1) != r.strong) r.consistent = false;
    }
    return r;
}

ReferenceDrive reference_drive(const ReferenceDriveParams& p) {
    if (!(p.period > 0.0)) throw ContractViolation("reference_drive: period must be positive");
    if (!(p.static_fraction >= 0.0 && p.static_fraction < 1.0))
        throw ContractViolation("reference_drive: static_fraction must lie in [0, 1)");
    const double dt = p.period * (1.0 - p.static_fraction) / 6.0;
    const double J = 0.5 * kPi * p.transfer / dt;
    // A <- B hops: B in cells (0,0), (-1,0), (0,-1)
    const std::vector<std::vector<int>> bonds{{0, 0}, {-1, 0}, {0, -1}};
    const int up_seq[6] = {0, 1, 2, 0, 1, 2};
    const int dn_seq[6] = {2, 1, 0, 2, 1, 0};
    CrystalModel geometry = kane_mele_model({}).model;
    std::vector<DriveProtocol::Segment> segments;
    const double ts = 0.5 * p.period * p.static_fraction;
    CrystalModel km = kane_mele_model(p.static_model).model;
    if (ts > 0.0) segments.push_back({ts, km});
    for (int j = 0; j < 6; ++j) {
        std::map<std::vector<int>, Mat> blocks;
        Mat onsite = Mat::Zero(4, 4);
        onsite.diagonal() << p.M, p.M, -p.M, -p.M;
        blocks[{0, 0}] = onsite;
        for (int b = 0; b < 3; ++b) {
            Mat hop = Mat::Zero(2, 2);
            if (up_seq[j] == b) hop(0, 0) = J;
            if (dn_seq[j] == b) hop(1, 1) = J;
            std::vector<int> off = bonds[static_cast<size_t>(b)];
            std::vector<int> neg{-off[0], -off[1]};
            auto add = [&](const std::vector<int>& o) {
                auto it = blocks.find(o);
                if (it == blocks.end()) it = blocks.emplace(o, Mat::Zero(4, 4)).first;
                return it;
            };
            add(off)->second.block(0, 2, 2, 2) += hop;
            add(neg)->second.block(2, 0, 2, 2) += hop.adjoint();
        }
        segments.push_back({dt, CrystalModel::from_offset_matrices(2, geometry.bravais(), geometry.sites(), blocks)});
    }
    if (ts > 0.0) segments.push_back({ts, km});
    return {DriveProtocol::piecewise(std::move(segments)), spin_half_theta(2)};
}

ReferenceDriveParams anomalous_drive_params() {
    ReferenceDriveParams p;
    p.transfer = 0.6;
    p.M = 1.0;
    p.static_fraction = 0.0;
    return p;
}

}  // namespace toposcope

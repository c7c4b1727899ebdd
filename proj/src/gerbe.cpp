#include "toposcope/gerbe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "toposcope/parallel.hpp"

namespace toposcope {

namespace {

double mirror_eps(double e) { return -e - kTwoPi; }

bool same_angle(double a, double b) { return std::abs(a - b) < 1e-9; }

// distance on the circle, in [0, pi]
double circle_distance(double a, double b) {
    double d = std::fmod(std::abs(a - b), kTwoPi);
    return std::min(d, kTwoPi - d);
}

double angle_of(cplx lambda) {
    double a = -std::arg(lambda);
    if (a > 0.0) a -= kTwoPi;
    return a;
}

std::vector<double> spectrum_angles(const Mat& V) {
    UnitaryEig ue = unitary_eig(V, 1e-7);
    std::vector<double> out(static_cast<size_t>(ue.lambda.size()));
    for (Eigen::Index i = 0; i < ue.lambda.size(); ++i) out[static_cast<size_t>(i)] = angle_of(ue.lambda(i));
    return out;
}

double spectrum_distance(const std::vector<double>& alpha, double eps) {
    double d = INFINITY;
    for (double a : alpha) d = std::min(d, circle_distance(a, eps));
    return d;
}

using Arc = std::pair<double, double>;

// Eigenvalue-free arcs of a union of spectra, as angle intervals inside (-2pi, 0).
std::vector<Arc> free_arcs(std::vector<double> pts) {
    pts.push_back(-kTwoPi);
    pts.push_back(0.0);
    std::sort(pts.begin(), pts.end());
    std::vector<Arc> arcs;
    for (size_t i = 0; i + 1 < pts.size(); ++i)
        if (pts[i + 1] > pts[i]) arcs.emplace_back(pts[i], pts[i + 1]);
    return arcs;
}

// Free arcs of the sampled spectra, restricted to the largest class of arcs
// between which the eigenvalue count is the same at every sample point, so no
// eigenvalue passes between two chosen angles unseen. Passing through 1 is
// harmless and shifts all counts alike.
std::vector<Arc> consistent_arcs(const std::vector<std::vector<double>>& per_point) {
    std::vector<double> all;
    for (const auto& p : per_point) all.insert(all.end(), p.begin(), p.end());
    const std::vector<Arc> arcs = free_arcs(all);
    const size_t na = arcs.size();
    std::vector<std::vector<long>> count(na);
    for (size_t k = 0; k < na; ++k) {
        const double mid = 0.5 * (arcs[k].first + arcs[k].second);
        for (const auto& p : per_point)
            count[k].push_back(std::count_if(p.begin(), p.end(), [&](double x) { return x < mid; }));
    }
    auto compatible = [&](size_t a, size_t b) {
        for (size_t i = 1; i < per_point.size(); ++i)
            if (count[a][i] - count[b][i] != count[a][0] - count[b][0]) return false;
        return true;
    };
    std::vector<int> cls(na, -1);
    std::vector<double> weight;
    for (size_t k = 0; k < na; ++k) {
        if (cls[k] >= 0) continue;
        cls[k] = static_cast<int>(weight.size());
        weight.push_back(0.0);
        for (size_t j = k; j < na; ++j)
            if (cls[j] < 0 || j == k)
                if (compatible(k, j)) {
                    cls[j] = cls[k];
                    weight[cls[k]] += arcs[j].second - arcs[j].first;
                }
    }
    if (weight.empty()) return {};
    const int best = static_cast<int>(std::max_element(weight.begin(), weight.end()) - weight.begin());
    std::vector<Arc> out;
    for (size_t k = 0; k < na; ++k)
        if (cls[k] == best) out.push_back(arcs[k]);
    return out;
}

bool pick_angle(const std::vector<Arc>& arcs, double clip_lo, double clip_hi, double margin, std::mt19937_64* rng,
                double& out) {
    std::vector<Arc> ok;
    for (auto [lo, hi] : arcs) {
        lo = std::max(lo, clip_lo);
        hi = std::min(hi, clip_hi);
        if (hi - lo > 2.0 * margin + 1e-12) ok.emplace_back(lo, hi);
    }
    if (ok.empty()) return false;
    if (!rng) {
        auto best = std::max_element(ok.begin(), ok.end(), [](const Arc& a, const Arc& b) {
            return (a.second - a.first) < (b.second - b.first);
        });
        out = 0.5 * (best->first + best->second);
        return true;
    }
    std::uniform_int_distribution<size_t> pick(0, ok.size() - 1);
    const Arc& a = ok[pick(*rng)];
    std::uniform_real_distribution<double> u(a.first + margin, a.second - margin);
    out = u(*rng);
    return true;
}

Mat polar_part(const Mat& M) {
    Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return svd.matrixU() * svd.matrixV().adjoint();
}

Mat eff_hamiltonian(const VertexBasis& b, double eps) {
    Vec h(b.lambda.size());
    for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = phase_in_window(b.lambda(i), eps);
    return b.frame * h.asDiagonal() * b.frame.adjoint();
}

double basis_distance(const VertexBasis& b, double eps) { return spectrum_distance(b.alpha, eps); }

// Grid coordinates of the end point of an edge, unwrapped next to the start.
std::array<int, 2> unwrap_next(const SurfaceMesh& m, std::array<int, 2> a, std::array<int, 2> b) {
    for (int c = 0; c < 2; ++c) {
        int n = c == 0 ? m.nu : m.nv;
        int d = b[static_cast<size_t>(c)] - a[static_cast<size_t>(c)];
        if (d > 1) b[static_cast<size_t>(c)] -= n;
        if (d < -1) b[static_cast<size_t>(c)] += n;
    }
    return b;
}

std::vector<std::array<double, 2>> edge_points(const SurfaceMesh& m, std::array<int, 2> a, std::array<int, 2> b,
                                               int samples) {
    std::vector<std::array<double, 2>> out;
    for (int s = 0; s <= samples; ++s) {
        double f = static_cast<double>(s) / samples;
        out.push_back({((1 - f) * a[0] + f * b[0]) * m.hu(), ((1 - f) * a[1] + f * b[1]) * m.hv()});
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- quadrature

Quadrature gauss_legendre(int order) {
    if (order < 1) throw ContractViolation("gauss_legendre: order must be positive");
    Quadrature q;
    const int n = order;
    for (int i = 0; i < n; ++i) {
        double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        q.x.push_back(0.5 * (x + 1.0));
        q.w.push_back(1.0 / ((1.0 - x * x) * dp * dp));
    }
    std::vector<size_t> idx(static_cast<size_t>(n));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return q.x[a] < q.x[b]; });
    Quadrature s;
    for (size_t i : idx) {
        s.x.push_back(q.x[i]);
        s.w.push_back(q.w[i]);
    }
    return s;
}

// ---------------------------------------------------------------- mesh

int SurfaceMesh::vertex(int i, int j) const {
    i = ((i % nu) + nu) % nu;
    j = ((j % nv) + nv) % nv;
    return i * nv + j;
}

std::array<int, 2> SurfaceMesh::grid(int v) const { return {v / nv, v % nv}; }

std::array<double, 2> SurfaceMesh::coords(int v) const {
    auto g = grid(v);
    return {g[0] * hu(), g[1] * hv()};
}

int SurfaceMesh::involution(int v) const {
    auto g = grid(v);
    return vertex(-g[0], -g[1]);
}

std::array<std::array<int, 2>, 4> SurfaceMesh::face_corners(size_t f) const {
    auto [i, j] = faces[f];
    return {{{i, j}, {i + 1, j}, {i + 1, j + 1}, {i, j + 1}}};
}

SurfaceMesh make_surface_mesh(int nu, int nv, SurfaceMesh::Region region, double period_u, double period_v,
                              bool ell_upper) {
    if (nu < 4 || nv < 4 || nu % 2 || nv % 2)
        throw ContractViolation("surface mesh: sizes must be even and >= 4");
    SurfaceMesh m;
    m.nu = nu;
    m.nv = nv;
    m.period_u = period_u;
    m.period_v = period_v;
    m.region = region;
    m.ell_upper = ell_upper;
    using R = SurfaceMesh::Region;
    const int iu = region == R::HalfU ? nu / 2 : nu;
    const int jv = region == R::HalfV ? nv / 2 : nv;
    for (int i = 0; i < iu; ++i)
        for (int j = 0; j < jv; ++j) m.faces.push_back({i, j});
    std::set<int> verts;
    std::map<std::pair<int, int>, int> count;
    std::vector<std::array<int, 2>> directed;
    for (size_t f = 0; f < m.faces.size(); ++f) {
        auto c = m.face_corners(f);
        for (int k = 0; k < 4; ++k) {
            int a = m.vertex(c[static_cast<size_t>(k)][0], c[static_cast<size_t>(k)][1]);
            int b = m.vertex(c[static_cast<size_t>((k + 1) % 4)][0], c[static_cast<size_t>((k + 1) % 4)][1]);
            verts.insert(a);
            ++count[SurfaceMesh::edge_key(a, b)];
            directed.push_back({a, b});
        }
    }
    m.vertices.assign(verts.begin(), verts.end());
    for (auto e : directed)
        if (count[SurfaceMesh::edge_key(e[0], e[1])] == 1) m.boundary.push_back(e);
    if (region != R::Torus) {
        for (auto e : m.boundary) {
            auto ga = m.grid(e[0]), gb = m.grid(e[1]);
            int c = region == R::HalfU ? 1 : 0;  // coordinate running along the boundary
            int n = c == 1 ? nv : nu;
            int a = ga[static_cast<size_t>(c)], b = gb[static_cast<size_t>(c)];
            int lower = std::abs(a - b) == 1 ? std::min(a, b) : n - 1;
            if ((lower < n / 2) != ell_upper) m.ell.push_back(e);
        }
        m.fixed_points = {m.vertex(0, 0), m.vertex(0, nv / 2), m.vertex(nu / 2, 0), m.vertex(nu / 2, nv / 2)};
    }
    return m;
}

// ---------------------------------------------------------------- bases

VertexBasis vertex_basis(const Mat& V) {
    UnitaryEig ue = unitary_eig(V, 1e-7);
    const Eigen::Index n = ue.lambda.size();
    std::vector<Eigen::Index> idx(static_cast<size_t>(n));
    std::vector<double> a(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        idx[static_cast<size_t>(i)] = i;
        a[static_cast<size_t>(i)] = angle_of(ue.lambda(i));
    }
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index x, Eigen::Index y) {
        return a[static_cast<size_t>(x)] < a[static_cast<size_t>(y)];
    });
    VertexBasis b;
    b.frame.resize(V.rows(), n);
    b.lambda.resize(n);
    for (Eigen::Index c = 0; c < n; ++c) {
        Eigen::Index s = idx[static_cast<size_t>(c)];
        b.frame.col(c) = ue.frame.col(s);
        b.lambda(c) = ue.lambda(s);
        b.alpha.push_back(a[static_cast<size_t>(s)]);
    }
    return b;
}

VertexBasis reflected_basis(const VertexBasis& b, const AntiUnitary& theta) {
    const Eigen::Index n = b.lambda.size();
    VertexBasis r;
    Mat t = theta.apply(b.frame);
    r.frame.resize(t.rows(), n);
    r.lambda.resize(n);
    for (Eigen::Index c = 0; c < n; ++c) {
        Eigen::Index s = n - 1 - c;
        r.frame.col(c) = t.col(s);
        r.lambda(c) = std::conj(b.lambda(s));
        double a = mirror_eps(b.alpha[static_cast<size_t>(s)]);
        if (a <= -kTwoPi) a += kTwoPi;
        r.alpha.push_back(a);
    }
    return r;
}

Mat arc_frame(const VertexBasis& b, double eps1, double eps2) {
    std::vector<Eigen::Index> cols;
    for (size_t i = 0; i < b.alpha.size(); ++i)
        if (b.alpha[i] > eps1 && b.alpha[i] < eps2) cols.push_back(static_cast<Eigen::Index>(i));
    Mat F(b.frame.rows(), static_cast<Eigen::Index>(cols.size()));
    for (size_t c = 0; c < cols.size(); ++c) F.col(static_cast<Eigen::Index>(c)) = b.frame.col(cols[c]);
    return F;
}

// ---------------------------------------------------------------- curving

namespace {

double curving_rule(const SurfaceField& phi, double u0, double v0, double hu, double hv, double eps,
                    const CurvingOptions& opt) {
    const Quadrature qs = gauss_legendre(opt.face_order);
    const Quadrature qt = gauss_legendre(opt.t_order);
    const double du = opt.fd_step * hu, dv = opt.fd_step * hv;
    double total = 0.0;
    for (size_t a = 0; a < qs.x.size(); ++a) {
        for (size_t b = 0; b < qs.x.size(); ++b) {
            const double u = u0 + qs.x[a] * hu, v = v0 + qs.x[b] * hv;
            UnitaryEig ue = unitary_eig(phi(u, v), 1e-7);
            check_branch(ue, eps, opt.gap_tol);
            const Mat dU = (phi(u + du, v) - phi(u - du, v)) / (2.0 * du);
            const Mat dV = (phi(u, v + dv) - phi(u, v - dv)) / (2.0 * dv);
            const Mat& W = ue.frame;
            const Eigen::Index n = ue.lambda.size();
            Mat Gu = W.adjoint() * dU * W;
            Mat Gv = W.adjoint() * dV * W;
            RVec h(n);
            for (Eigen::Index i = 0; i < n; ++i) h(i) = phase_in_window(ue.lambda(i), eps);
            // derivative of H = i log(phi) in the eigenbasis (divided differences)
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    cplx dl = ue.lambda(i) - ue.lambda(j);
                    cplx f1 = std::abs(dl) > 1e-7 ? cplx(h(i) - h(j), 0.0) / dl : cplx(0.0, 1.0) / ue.lambda(i);
                    Gu(i, j) *= f1;
                    Gv(i, j) *= f1;
                }
            double inner = 0.0;
            Mat Lu(n, n), Lv(n, n);
            for (size_t k = 0; k < qt.x.size(); ++k) {
                const double t = qt.x[k];
                for (Eigen::Index i = 0; i < n; ++i)
                    for (Eigen::Index j = 0; j < n; ++j) {
                        double d = h(i) - h(j);
                        cplx c = std::abs(d) > 1e-9 ? (1.0 - std::exp(cplx(0.0, t * d))) / d : cplx(0.0, -t);
                        Lu(i, j) = Gu(i, j) * c;
                        Lv(i, j) = Gv(i, j) * c;
                    }
                Mat C = Lu * Lv - Lv * Lu;
                cplx s = 0.0;
                for (Eigen::Index i = 0; i < n; ++i) s += h(i) * C(i, i);
                inner += qt.w[k] * (cplx(0.0, -1.0) * s).real() / (4.0 * kPi);
            }
            total += qs.w[a] * qs.w[b] * inner;
        }
    }
    return total * hu * hv;
}

double curving_adaptive(const SurfaceField& phi, double u0, double v0, double hu, double hv, double eps,
                        const CurvingOptions& opt, double coarse, double tol, int depth) {
    double parts[4];
    int k = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            parts[k++] = curving_rule(phi, u0 + a * hu / 2, v0 + b * hv / 2, hu / 2, hv / 2, eps, opt);
    const double fine = parts[0] + parts[1] + parts[2] + parts[3];
    if (depth >= opt.max_depth || std::abs(fine - coarse) <= tol) return fine;
    double total = 0.0;
    k = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            total += curving_adaptive(phi, u0 + a * hu / 2, v0 + b * hv / 2, hu / 2, hv / 2, eps, opt, parts[k++],
                                      tol / 4, depth + 1);
    return total;
}

}  // namespace

double curving_integral(const SurfaceField& phi, double u0, double v0, double hu, double hv, double eps,
                        const CurvingOptions& opt) {
    const double coarse = curving_rule(phi, u0, v0, hu, hv, eps, opt);
    if (opt.max_depth <= 0) return coarse;
    return curving_adaptive(phi, u0, v0, hu, hv, eps, opt, coarse, opt.tol, 0);
}

// ---------------------------------------------------------------- transport

namespace {

struct TransportSamples {
    std::vector<Mat> U, P, H;
};

void add_transport_sample(TransportSamples& ts, const VertexBasis& b, double lo, double hi, double s, double gap_tol,
                          Eigen::Index& rank) {
    for (double e : {lo, hi}) {
        if (basis_distance(b, e) < gap_tol) {
            std::ostringstream os;
            os << "edge_transport: branch angle " << e << " meets the spectrum at s = " << s;
            throw BranchCut(os.str(), std::cos(e), -std::sin(e));
        }
    }
    Mat F = arc_frame(b, lo, hi);
    if (rank < 0) rank = F.cols();
    if (F.cols() != rank) {
        std::ostringstream os;
        os << "edge_transport: arc rank changes along the edge (" << rank << " -> " << F.cols() << " at s = " << s
           << ", arc " << lo << " .. " << hi << ")";
        throw BranchCut(os.str(), 0.0, 0.0);
    }
    ts.P.push_back(F * F.adjoint());
    ts.H.push_back(eff_hamiltonian(b, lo));
    ts.U.push_back(std::move(F));
}

// Phase of the transport using every stride-th sample.
double transport_phase(const TransportSamples& ts, size_t stride) {
    double phase = 0.0;
    const size_t last = ts.U.size() - 1;
    for (size_t a = 0; a < last; a += stride) {
        const size_t b = a + stride;
        if (ts.U[a].cols() > 0) {
            cplx d = (ts.U[b].adjoint() * ts.U[a]).determinant();
            if (std::abs(d) < 0.2) throw MeshTooCoarse("edge_transport: frames along the edge barely overlap");
            phase += std::arg(d);
        }
        phase += -0.25 * (0.5 * (ts.H[a] + ts.H[b]) * (ts.P[b] - ts.P[a])).trace().real();
    }
    return phase;
}

}  // namespace

LineElement edge_transport(const PathField& path, const VertexBasis& start, const VertexBasis& end, int v0, int v1,
                           double eps_from, double eps_to, int samples, double gap_tol, double tol,
                           int max_samples) {
    LineElement out;
    out.anchors = {{v0, eps_to, eps_from}, {v1, eps_from, eps_to}};
    if (eps_from == eps_to) return out;
    if (samples < 1) throw ContractViolation("edge_transport: need at least one step");
    const double lo = std::min(eps_from, eps_to), hi = std::max(eps_from, eps_to);
    Eigen::Index rank = -1;
    // samples are kept on the finest grid so far; doubling interleaves midpoints
    TransportSamples ts;
    for (int j = 0; j <= samples; ++j) {
        const double s = static_cast<double>(j) / samples;
        add_transport_sample(ts, j == 0 ? start : (j == samples ? end : vertex_basis(path(s))), lo, hi, s, gap_tol,
                             rank);
    }
    double coarse = transport_phase(ts, 1);
    double phase = coarse;
    int n = samples;
    while (true) {
        if (2 * n > max_samples) break;
        TransportSamples fine;
        Eigen::Index r = rank;
        for (int j = 0; j <= 2 * n; ++j) {
            if (j % 2 == 0) {
                fine.U.push_back(ts.U[static_cast<size_t>(j / 2)]);
                fine.P.push_back(ts.P[static_cast<size_t>(j / 2)]);
                fine.H.push_back(ts.H[static_cast<size_t>(j / 2)]);
            } else {
                const double s = static_cast<double>(j) / (2 * n);
                add_transport_sample(fine, vertex_basis(path(s)), lo, hi, s, gap_tol, r);
            }
        }
        ts = std::move(fine);
        n *= 2;
        const double next = transport_phase(ts, 1);
        // both parts are second order in the step; coarse steps may differ by whole turns
        const double extrapolated = next + std::remainder(next - coarse, kTwoPi) / 3.0;
        const bool done = std::abs(std::remainder(extrapolated - phase, kTwoPi)) <= tol;
        phase = extrapolated;
        coarse = next;
        if (done) break;
    }
    const cplx tau = std::exp(cplx(0.0, phase));
    out.value = eps_from < eps_to ? tau : 1.0 / tau;
    return out;
}

std::vector<Slot> contract_anchors(const std::vector<Slot>& anchors) {
    std::map<int, std::vector<Slot>> by_vertex;
    for (const Slot& s : anchors)
        if (s.from != s.to) by_vertex[s.vertex].push_back(s);
    std::vector<Slot> left;
    for (auto& [v, slots] : by_vertex) {
        bool merged = true;
        while (merged) {
            merged = false;
            for (size_t a = 0; a < slots.size() && !merged; ++a) {
                for (size_t b = 0; b < slots.size() && !merged; ++b) {
                    if (a == b || slots[a].to != slots[b].from) continue;
                    Slot m{v, slots[a].from, slots[b].to};
                    size_t hi = std::max(a, b), lo = std::min(a, b);
                    slots.erase(slots.begin() + static_cast<long>(hi));
                    slots.erase(slots.begin() + static_cast<long>(lo));
                    if (m.from != m.to) slots.push_back(m);
                    merged = true;
                }
            }
        }
        left.insert(left.end(), slots.begin(), slots.end());
    }
    return left;
}

// ---------------------------------------------------------------- lifts

namespace {

struct FaceSamples {
    std::vector<std::array<double, 2>> points;
    std::array<double, 2> centre;
};

FaceSamples face_samples(const SurfaceMesh& m, size_t f, const HolonomyOptions& opt) {
    FaceSamples s;
    auto c = m.face_corners(f);
    for (int k = 0; k < 4; ++k) {
        auto pts = edge_points(m, c[static_cast<size_t>(k)], c[static_cast<size_t>((k + 1) % 4)], opt.edge_samples);
        s.points.insert(s.points.end(), pts.begin(), pts.end() - 1);
    }
    Quadrature q = gauss_legendre(opt.curving.face_order);
    const double u0 = c[0][0] * m.hu(), v0 = c[0][1] * m.hv();
    for (double x : q.x)
        for (double y : q.x) s.points.push_back({u0 + x * m.hu(), v0 + y * m.hv()});
    s.centre = {u0 + 0.5 * m.hu(), v0 + 0.5 * m.hv()};
    return s;
}

std::vector<std::vector<double>> point_angles(const SurfaceField& phi, const std::vector<std::array<double, 2>>& pts) {
    std::vector<std::vector<double>> out;
    for (auto p : pts) out.push_back(spectrum_angles(phi(p[0], p[1])));
    return out;
}

bool angle_inside(const std::vector<Arc>& arcs, double e, double margin) {
    for (const Arc& a : arcs)
        if (e >= a.first + margin && e <= a.second - margin) return true;
    return false;
}

}  // namespace

bool choose_lift(const SurfaceField& phi, const SurfaceMesh& mesh, const HolonomyOptions& opt, GerbeLift& out,
                 const AntiUnitary* theta) {
    out = GerbeLift{};
    std::mt19937_64 rng_store(opt.lift_seed);
    std::mt19937_64* rng = opt.lift_seed ? &rng_store : nullptr;
    const size_t nf = mesh.faces.size();

    std::vector<std::vector<Arc>> face_arcs(nf);
    std::vector<double> centre_eps(nf, 0.0);
    parallel_for(nf, [&](size_t f) {
        FaceSamples s = face_samples(mesh, f, opt);
        face_arcs[f] = consistent_arcs(point_angles(phi, s.points));
        centre_eps[f] = gap_center(phi(s.centre[0], s.centre[1]));
    });
    out.face_eps.assign(nf, 0.0);
    for (size_t f = 0; f < nf; ++f) {
        double e = centre_eps[f];
        bool ok = !rng && angle_inside(face_arcs[f], e, opt.margin);
        if (!ok) ok = pick_angle(face_arcs[f], -kTwoPi, 0.0, opt.margin, rng, e);
        if (!ok) return false;
        out.face_eps[f] = e;
    }

    const bool paired = theta && mesh.region != SurfaceMesh::Region::Torus;
    std::set<std::pair<int, int>> boundary_keys;
    for (auto e : mesh.boundary) boundary_keys.insert(SurfaceMesh::edge_key(e[0], e[1]));

    for (size_t f = 0; f < nf; ++f) {
        auto c = mesh.face_corners(f);
        for (int k = 0; k < 4; ++k) {
            auto ca = c[static_cast<size_t>(k)], cb = c[static_cast<size_t>((k + 1) % 4)];
            auto key = SurfaceMesh::edge_key(mesh.vertex(ca[0], ca[1]), mesh.vertex(cb[0], cb[1]));
            if (out.edge_eps.count(key) || (paired && boundary_keys.count(key))) continue;
            double e = out.face_eps[f];
            if (rng) {
                auto arcs = consistent_arcs(point_angles(phi, edge_points(mesh, ca, cb, opt.edge_samples)));
                double r;
                if (pick_angle(arcs, -kTwoPi, 0.0, opt.margin, rng, r)) e = r;
            }
            out.edge_eps[key] = e;
        }
    }
    if (!paired) return true;

    // l carries eps, its mirror -eps-2pi; eps in (-pi, 0) at the fixed points
    std::set<int> fixed(mesh.fixed_points.begin(), mesh.fixed_points.end());
    auto pts_of = [&](const std::array<int, 2>& e) {
        auto ga = mesh.grid(e[0]);
        auto gb = unwrap_next(mesh, ga, mesh.grid(e[1]));
        return edge_points(mesh, ga, gb, opt.edge_samples);
    };
    std::vector<std::vector<double>> all;
    std::vector<std::vector<std::vector<double>>> per_edge;
    for (auto e : mesh.ell) {
        per_edge.push_back(point_angles(phi, pts_of(e)));
        all.insert(all.end(), per_edge.back().begin(), per_edge.back().end());
    }
    auto assign = [&](const std::array<int, 2>& e, double eps) {
        out.edge_eps[SurfaceMesh::edge_key(e[0], e[1])] = eps;
        out.edge_eps[SurfaceMesh::edge_key(mesh.involution(e[0]), mesh.involution(e[1]))] = mirror_eps(eps);
        for (int v : {e[0], e[1]})
            if (fixed.count(v)) out.vertex_eps[v] = eps;
    };
    double common;
    if (pick_angle(consistent_arcs(all), -kPi, 0.0, opt.margin, rng, common)) {
        for (auto e : mesh.ell) assign(e, common);
        return true;
    }
    for (size_t i = 0; i < mesh.ell.size(); ++i) {
        auto e = mesh.ell[i];
        bool end = fixed.count(e[0]) || fixed.count(e[1]);
        double eps;
        if (!pick_angle(consistent_arcs(per_edge[i]), end ? -kPi : -kTwoPi, 0.0, opt.margin, rng, eps)) return false;
        assign(e, eps);
    }
    return true;
}

// ---------------------------------------------------------------- assembly

namespace {

struct Assembled {
    cplx value{1.0, 0.0};
    double curving_total = 0.0;
    std::vector<Slot> leftover;
    std::map<int, VertexBasis> bases;
    std::vector<FaceRecord> faces;
    std::vector<TransportRecord> transports;
};

Assembled assemble(const SurfaceField& phi, const SurfaceMesh& mesh, const GerbeLift& lift,
                   const HolonomyOptions& opt, const AntiUnitary* theta) {
    if (lift.face_eps.size() != mesh.faces.size())
        throw ContractViolation("gerbe lift: one branch angle per face required");
    Assembled A;
    std::vector<VertexBasis> vb(mesh.vertices.size());
    parallel_for(mesh.vertices.size(), [&](size_t i) {
        auto x = mesh.coords(mesh.vertices[i]);
        vb[i] = vertex_basis(phi(x[0], x[1]));
    });
    for (size_t i = 0; i < vb.size(); ++i) A.bases[mesh.vertices[i]] = std::move(vb[i]);
    if (theta && mesh.region != SurfaceMesh::Region::Torus) {
        std::set<int> fixed(mesh.fixed_points.begin(), mesh.fixed_points.end());
        std::set<int> inner;
        for (auto e : mesh.ell)
            for (int v : {e[0], e[1]})
                if (!fixed.count(v)) inner.insert(v);
        for (int v : inner) A.bases[mesh.involution(v)] = reflected_basis(A.bases.at(v), *theta);
    }

    const size_t nf = mesh.faces.size();
    std::vector<double> curv(nf, 0.0);
    parallel_for(nf, [&](size_t f) {
        auto c = mesh.face_corners(f);
        curv[f] = curving_integral(phi, c[0][0] * mesh.hu(), c[0][1] * mesh.hv(), mesh.hu(), mesh.hv(),
                                   lift.face_eps[f], opt.curving);
    });

    struct Task {
        size_t face;
        int k;
        int a, b;
        double ec, eb;
    };
    std::vector<Task> tasks;
    for (size_t f = 0; f < nf; ++f) {
        auto c = mesh.face_corners(f);
        for (int k = 0; k < 4; ++k) {
            auto ca = c[static_cast<size_t>(k)], cb = c[static_cast<size_t>((k + 1) % 4)];
            int a = mesh.vertex(ca[0], ca[1]), b = mesh.vertex(cb[0], cb[1]);
            auto it = lift.edge_eps.find(SurfaceMesh::edge_key(a, b));
            if (it == lift.edge_eps.end()) throw ContractViolation("gerbe lift: edge without branch angle");
            if (it->second == lift.face_eps[f]) continue;
            tasks.push_back({f, k, a, b, lift.face_eps[f], it->second});
        }
    }
    std::vector<LineElement> elems(tasks.size());
    std::vector<int> ranks(tasks.size(), 0);
    parallel_for(tasks.size(), [&](size_t t) {
        const Task& T = tasks[t];
        auto c = mesh.face_corners(T.face);
        auto ca = c[static_cast<size_t>(T.k)], cb = c[static_cast<size_t>((T.k + 1) % 4)];
        const double hu = mesh.hu(), hv = mesh.hv();
        PathField path = [&, ca, cb](double s) {
            return phi(((1 - s) * ca[0] + s * cb[0]) * hu, ((1 - s) * ca[1] + s * cb[1]) * hv);
        };
        const VertexBasis& sa = A.bases.at(T.a);
        const VertexBasis& sb = A.bases.at(T.b);
        elems[t] = edge_transport(path, sa, sb, T.a, T.b, T.ec, T.eb, opt.edge_samples, opt.curving.gap_tol,
                                  opt.transport_tol, opt.max_edge_samples);
        ranks[t] = static_cast<int>(arc_frame(sa, std::min(T.ec, T.eb), std::max(T.ec, T.eb)).cols());
    });

    for (size_t f = 0; f < nf; ++f) {
        A.curving_total += curv[f];
        A.faces.push_back({static_cast<int>(f), lift.face_eps[f], curv[f]});
    }
    A.value = std::exp(cplx(0.0, A.curving_total));
    std::vector<Slot> slots;
    for (size_t t = 0; t < tasks.size(); ++t) {
        A.value *= elems[t].value;
        slots.insert(slots.end(), elems[t].anchors.begin(), elems[t].anchors.end());
        A.transports.push_back({static_cast<int>(tasks[t].face), tasks[t].a, tasks[t].b, tasks[t].ec, tasks[t].eb,
                                ranks[t], elems[t].value});
    }
    A.leftover = contract_anchors(slots);
    return A;
}

}  // namespace

HolonomyResult surface_holonomy(const SurfaceField& phi, const SurfaceMesh& mesh, const GerbeLift& lift,
                                const HolonomyOptions& opt) {
    if (mesh.region != SurfaceMesh::Region::Torus)
        throw ContractViolation("surface_holonomy: closed torus mesh required");
    Assembled A = assemble(phi, mesh, lift, opt, nullptr);
    if (!A.leftover.empty()) {
        std::ostringstream os;
        os << "surface_holonomy: anchor mismatch, " << A.leftover.size() << " uncancelled slot(s), first at vertex "
           << A.leftover.front().vertex;
        throw Error(os.str());
    }
    if (std::abs(std::abs(A.value) - 1.0) > 1e-6) throw Error("surface_holonomy: result left U(1)");
    HolonomyResult r;
    r.value = A.value;
    r.curving_total = A.curving_total;
    r.nu = mesh.nu;
    r.nv = mesh.nv;
    r.lift = lift;
    r.faces = std::move(A.faces);
    r.transports = std::move(A.transports);
    return r;
}

HolonomyResult surface_holonomy(const SurfaceField& phi, int nu, int nv, double period_u, double period_v,
                                const HolonomyOptions& opt) {
    for (int round = 0; round <= opt.max_refinements; ++round) {
        SurfaceMesh mesh = make_surface_mesh(nu, nv, SurfaceMesh::Region::Torus, period_u, period_v);
        GerbeLift lift;
        if (choose_lift(phi, mesh, opt, lift)) {
            try {
                HolonomyResult r = surface_holonomy(phi, mesh, lift, opt);
                r.refinements = round;
                return r;
            } catch (const MeshTooCoarse&) {
            } catch (const BranchCut&) {
            }
        }
        nu *= 2;
        nv *= 2;
    }
    throw MeshTooCoarse("surface_holonomy: no admissible lift after mesh refinement");
}

// ---------------------------------------------------------------- square root

namespace {

// sqrt(det phi) continued from the first grid point to the last along a
// polyline of grid points; returns exp(i acc/2).
cplx continue_sqrt_det(const SurfaceField& phi, const SurfaceMesh& m, const std::vector<std::array<int, 2>>& path,
                       int samples) {
    std::vector<std::array<double, 2>> pts;
    for (size_t i = 0; i + 1 < path.size(); ++i) {
        auto seg = edge_points(m, path[i], path[i + 1], samples);
        pts.insert(pts.end(), seg.begin() + (i == 0 ? 0 : 1), seg.end());
    }
    double acc = 0.0;
    cplx prev = 0.0;
    for (size_t s = 0; s < pts.size(); ++s) {
        cplx d = phi(pts[s][0], pts[s][1]).determinant();
        if (s > 0) {
            double step = std::arg(d / prev);
            if (std::abs(step) >= 0.5 * kPi)
                throw MeshTooCoarse("sqrt_holonomy: det(phi) phase step too large for sqrt continuation");
            acc += step;
        }
        prev = d;
    }
    return std::exp(cplx(0.0, 0.5 * acc));
}

}  // namespace

double equivariance_defect(const SurfaceField& phi, const AntiUnitary& theta, const SurfaceMesh& mesh) {
    std::vector<double> d(static_cast<size_t>(mesh.nu) * mesh.nv, 0.0);
    parallel_for(d.size(), [&](size_t idx) {
        int i = static_cast<int>(idx) / mesh.nv, j = static_cast<int>(idx) % mesh.nv;
        double u = i * mesh.hu(), v = j * mesh.hv();
        d[idx] = (phi(-u, -v) - theta.conjugate(phi(u, v))).cwiseAbs().maxCoeff();
    });
    return *std::max_element(d.begin(), d.end());
}

SqrtHolonomyResult sqrt_holonomy_equivariant(const SurfaceField& phi, const AntiUnitary& theta, const SurfaceMesh& mesh,
                                             const GerbeLift& lift, const HolonomyOptions& opt) {
    if (theta.squares_to != -1) throw ContractViolation("sqrt_holonomy: theta must square to -1");
    if (mesh.region == SurfaceMesh::Region::Torus)
        throw ContractViolation("sqrt_holonomy: mesh must be a fundamental domain");
    const double defect = equivariance_defect(phi, theta, mesh);
    if (defect > 1e-8) {
        std::ostringstream os;
        os << "sqrt_holonomy: equivariance violated (defect " << defect << ")";
        throw ContractViolation(os.str());
    }
    for (auto e : mesh.ell) {
        double a = lift.edge_eps.at(SurfaceMesh::edge_key(e[0], e[1]));
        double b = lift.edge_eps.at(SurfaceMesh::edge_key(mesh.involution(e[0]), mesh.involution(e[1])));
        if (!same_angle(b, mirror_eps(a))) throw ContractViolation("sqrt_holonomy: lift not paired on the boundary");
    }

    Assembled A = assemble(phi, mesh, lift, opt, &theta);
    std::set<int> fixed(mesh.fixed_points.begin(), mesh.fixed_points.end());
    std::map<int, std::vector<Slot>> left;
    for (const Slot& s : A.leftover) left[s.vertex].push_back(s);
    auto mismatch = [](const std::string& what, int v) {
        std::ostringstream os;
        os << "sqrt_holonomy: anchor mismatch (" << what << ") at vertex " << v;
        return Error(os.str());
    };

    // boundary slots at v on l pair with those at the mirrored vertex
    std::set<int> done;
    for (auto e : mesh.ell) {
        for (int v : {e[0], e[1]}) {
            if (fixed.count(v) || done.count(v)) continue;
            done.insert(v);
            int w = mesh.involution(v);
            auto& sv = left[v];
            auto& sw = left[w];
            if (sv.size() > 1 || sw.size() > 1) throw mismatch("several slots", v);
            if (sv.size() != sw.size()) throw mismatch("unpaired slot", v);
            if (!sv.empty()) {
                if (!same_angle(sw[0].from, mirror_eps(sv[0].to)) || !same_angle(sw[0].to, mirror_eps(sv[0].from)))
                    throw mismatch("labels not mirrored", v);
                sv.clear();
                sw.clear();
            }
        }
    }
    for (auto& [v, s] : left)
        if (!s.empty() && !fixed.count(v)) throw mismatch("uncancelled slot", v);

    SqrtHolonomyResult r;
    r.nu = mesh.nu;
    r.nv = mesh.nv;
    r.ell_upper = mesh.ell_upper;
    cplx value = A.value;
    {
        double common = NAN;
        bool single = true;
        for (auto e : mesh.ell) {
            double x = lift.edge_eps.at(SurfaceMesh::edge_key(e[0], e[1]));
            if (std::isnan(common)) common = x;
            single = single && x == common;
        }
        r.ell_eps = single ? common : NAN;
    }
    for (size_t q = 0; q < mesh.fixed_points.size(); ++q) {
        const int v = mesh.fixed_points[q];
        auto g = mesh.grid(v);
        std::vector<std::array<int, 2>> path;
        for (int i = 0; i <= g[0]; ++i) path.push_back({i, 0});
        for (int j = 1; j <= g[1]; ++j) path.push_back({g[0], j});
        cplx omega = continue_sqrt_det(phi, mesh, path, opt.edge_samples);
        if (std::abs(omega.imag()) > 1e-3)
            throw ContractViolation("sqrt_holonomy: det(phi) differs from 1 at a fixed point");
        const int sign = omega.real() > 0 ? 1 : -1;
        const cplx sigma = sign > 0 ? cplx(1.0, 0.0) : cplx(0.0, 1.0);
        r.fixed_sign[q] = sign;

        const double eps = lift.vertex_eps.at(v);
        if (!(eps > -kPi && eps < 0.0)) throw ContractViolation("sqrt_holonomy: fixed-point angle outside (-pi, 0)");
        int power = 0;
        auto& s = left[v];
        if (s.size() != 1) throw mismatch("fixed point", v);
        if (same_angle(s[0].from, mirror_eps(eps)) && same_angle(s[0].to, eps)) power = 1;
        else if (same_angle(s[0].from, eps) && same_angle(s[0].to, mirror_eps(eps))) power = -1;
        else throw mismatch("fixed point labels", v);

        Mat U = arc_frame(A.bases.at(v), mirror_eps(eps), eps);
        cplx pf = 1.0;
        if (U.cols() > 0) {
            Mat G = U.adjoint() * theta.apply(U);
            if ((G + G.transpose()).cwiseAbs().maxCoeff() > 1e-8)
                throw ContractViolation("sqrt_holonomy: anchor Gram matrix not antisymmetric");
            pf = pfaffian(G, 1e-8);
            if (std::abs(pf) < 1e-8) throw AnchorDegenerate("sqrt_holonomy: Pfaffian anchor vanishes");
        }
        r.pfaffian[q] = pf;
        value *= std::pow(sigma * pf, -power);
    }
    r.value = value;
    r.half.value = A.value;
    r.half.curving_total = A.curving_total;
    r.half.nu = mesh.nu;
    r.half.nv = mesh.nv;
    r.half.lift = lift;
    r.half.faces = std::move(A.faces);
    r.half.transports = std::move(A.transports);
    return r;
}

SqrtHolonomyResult sqrt_holonomy_equivariant(const SurfaceField& phi, const AntiUnitary& theta, int nu, int nv,
                                             double period_u, double period_v, SurfaceMesh::Region region,
                                             const HolonomyOptions& opt) {
    if (region == SurfaceMesh::Region::Torus) throw ContractViolation("sqrt_holonomy: region must be a half torus");
    for (int round = 0; round <= opt.max_refinements; ++round) {
        for (bool upper : {false, true}) {
            SurfaceMesh mesh = make_surface_mesh(nu, nv, region, period_u, period_v, upper);
            GerbeLift lift;
            if (!choose_lift(phi, mesh, opt, lift, &theta)) continue;
            try {
                SqrtHolonomyResult r = sqrt_holonomy_equivariant(phi, theta, mesh, lift, opt);
                r.refinements = round;
                return r;
            } catch (const MeshTooCoarse&) {
                break;
            } catch (const BranchCut&) {
                break;
            }
        }
        nu *= 2;
        nv *= 2;
    }
    throw MeshTooCoarse("sqrt_holonomy: no admissible lift after mesh refinement");
}

// ---------------------------------------------------------------- 3d index

double equivariance_defect(const UnitaryField3& Phi, const AntiUnitary& theta, const VolumeMesh& mesh) {
    const size_t total = static_cast<size_t>(mesh.n[0]) * mesh.n[1] * mesh.n[2];
    std::vector<double> d(total, 0.0);
    parallel_for(total, [&](size_t idx) {
        int i2 = static_cast<int>(idx % static_cast<size_t>(mesh.n[2]));
        int i1 = static_cast<int>((idx / static_cast<size_t>(mesh.n[2])) % static_cast<size_t>(mesh.n[1]));
        int i0 = static_cast<int>(idx / (static_cast<size_t>(mesh.n[1]) * mesh.n[2]));
        double x0 = i0 * mesh.period[0] / mesh.n[0], x1 = i1 * mesh.period[1] / mesh.n[1],
               x2 = i2 * mesh.period[2] / mesh.n[2];
        d[idx] = (Phi(-x0, -x1, -x2) - theta.conjugate(Phi(x0, x1, x2))).cwiseAbs().maxCoeff();
    });
    return *std::max_element(d.begin(), d.end());
}

Index3dResult index3d(const UnitaryField3& Phi, const AntiUnitary& theta, const VolumeMesh& mesh,
                      const Index3dOptions& opt) {
    if (theta.squares_to != -1) throw ContractViolation("index3d: theta must square to -1");
    const int a = mesh.half_axis;
    if (a < 0 || a > 2) throw ContractViolation("index3d: half_axis must be 0, 1 or 2");
    for (int n : mesh.n)
        if (n < 4 || n % 2) throw ContractViolation("index3d: grid sizes must be even and >= 4");
    const double defect = equivariance_defect(Phi, theta, mesh);
    if (defect > 1e-8) {
        std::ostringstream os;
        os << "index3d: equivariance violated (defect " << defect << ")";
        throw ContractViolation(os.str());
    }
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    const auto& L = mesh.period;

    Index3dResult r;
    std::array<int, 3> n = mesh.n;
    for (int round = 0;; ++round) {
        Axes3 axes;
        for (int d = 0; d < 3; ++d) {
            if (d == a) {
                int h = std::max(4, n[static_cast<size_t>(d)] / 2);
                if (h % 2) ++h;
                axes[static_cast<size_t>(d)] = Axis{0.0, 0.5 * L[static_cast<size_t>(d)], h, false};
            } else {
                axes[static_cast<size_t>(d)] = Axis{0.0, L[static_cast<size_t>(d)], n[static_cast<size_t>(d)], true};
            }
        }
        try {
            r.volume_integral = wz_density_integral(Phi, axes).integral;
            break;
        } catch (const MeshTooCoarse&) {
            if (round >= opt.max_refinements) throw;
            for (int& x : n) x *= 2;
        }
    }

    auto surface = [&](double xa) -> SurfaceField {
        return [&, xa](double u, double v) {
            std::array<double, 3> x{};
            x[static_cast<size_t>(a)] = xa;
            x[static_cast<size_t>(b)] = u;
            x[static_cast<size_t>(c)] = v;
            return Phi(x[0], x[1], x[2]);
        };
    };
    const int nu = opt.surface_n ? opt.surface_n : mesh.n[static_cast<size_t>(b)];
    const int nv = opt.surface_n ? opt.surface_n : mesh.n[static_cast<size_t>(c)];
    r.sqrt_upper = sqrt_holonomy_equivariant(surface(0.5 * L[static_cast<size_t>(a)]), theta, nu, nv,
                                             L[static_cast<size_t>(b)], L[static_cast<size_t>(c)],
                                             SurfaceMesh::Region::HalfU, opt.holonomy)
                       .value;
    r.sqrt_lower = sqrt_holonomy_equivariant(surface(0.0), theta, nu, nv, L[static_cast<size_t>(b)],
                                             L[static_cast<size_t>(c)], SurfaceMesh::Region::HalfU, opt.holonomy)
                       .value;
    r.raw = std::exp(cplx(0.0, 0.5 * r.volume_integral)) * r.sqrt_lower / r.sqrt_upper;
    r.value = r.raw.real() >= 0.0 ? 1 : -1;
    r.residual = std::abs(r.raw - static_cast<double>(r.value));
    return r;
}

// ---------------------------------------------------------------- sampled fields

SurfaceField interpolate_samples(const std::vector<Mat>& samples, int nu, int nv, double period_u, double period_v) {
    if (samples.size() != static_cast<size_t>(nu) * nv) throw ContractViolation("interpolate_samples: size mismatch");
    auto data = std::make_shared<std::vector<Mat>>(samples);
    return [data, nu, nv, period_u, period_v](double u, double v) -> Mat {
        double x = u / period_u * nu, y = v / period_v * nv;
        double fx = std::floor(x), fy = std::floor(y);
        double sx = x - fx, sy = y - fy;
        int i = ((static_cast<int>(fx) % nu) + nu) % nu, j = ((static_cast<int>(fy) % nv) + nv) % nv;
        int i1 = (i + 1) % nu, j1 = (j + 1) % nv;
        const auto& d = *data;
        auto at = [&](int p, int q) -> const Mat& { return d[static_cast<size_t>(p) * nv + q]; };
        Mat M = (1 - sx) * (1 - sy) * at(i, j) + sx * (1 - sy) * at(i1, j) + sx * sy * at(i1, j1) +
                (1 - sx) * sy * at(i, j1);
        return polar_part(M);
    };
}

}  // namespace toposcope

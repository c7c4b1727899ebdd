#include "toposcope/static_invariants.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/SVD>

#include "toposcope/parallel.hpp"

namespace toposcope {

// ---------------------------------------------------------------- grid

size_t TorusGrid::size() const {
    size_t s = 1;
    for (int v : n) s *= static_cast<size_t>(v);
    return s;
}

size_t TorusGrid::index(const std::vector<int>& i) const {
    size_t idx = 0;
    for (size_t a = 0; a < n.size(); ++a) {
        int v = ((i[a] % n[a]) + n[a]) % n[a];
        idx = idx * static_cast<size_t>(n[a]) + static_cast<size_t>(v);
    }
    return idx;
}

std::vector<int> TorusGrid::coords(size_t idx) const {
    std::vector<int> c(n.size());
    for (size_t a = n.size(); a-- > 0;) {
        c[a] = static_cast<int>(idx % static_cast<size_t>(n[a]));
        idx /= static_cast<size_t>(n[a]);
    }
    return c;
}

KPoint TorusGrid::k(size_t idx) const {
    auto c = coords(idx);
    KPoint out(c.size());
    for (size_t a = 0; a < c.size(); ++a) out[a] = kTwoPi * c[a] / n[a];
    return out;
}

size_t TorusGrid::mirror(size_t idx) const {
    auto c = coords(idx);
    for (auto& v : c) v = -v;
    return index(c);
}

size_t TorusGrid::shift(size_t idx, int axis, int off) const {
    auto c = coords(idx);
    c[static_cast<size_t>(axis)] += off;
    return index(c);
}

namespace {

std::string describe_k(const KPoint& k) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < k.size(); ++i) os << (i ? ", " : "") << k[i];
    os << ")";
    return os.str();
}

Mat polar_part(const Mat& A) {
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return svd.matrixU() * svd.matrixV().adjoint();
}

double min_singular(const Mat& A) {
    if (A.size() == 0) return 1.0;
    Eigen::JacobiSVD<Mat> svd(A);
    return svd.singularValues().minCoeff();
}

cplx unit(cplx z) {
    double a = std::abs(z);
    if (a < 1e-14) throw NonConvergence("link overlap vanishes; grid too coarse");
    return z / a;
}

cplx link(const Mat& Fa, const Mat& Fb) {
    if (Fa.cols() == 0) return 1.0;
    return unit(Mat(Fa.adjoint() * Fb).determinant());
}

Mat expm_antiherm(const Mat& L, double s) {
    // exp(s L) for anti-Hermitian L
    Mat H = cplx(0, 1) * L;  // Hermitian
    return expm_herm(Mat(0.5 * (H + H.adjoint())), s);
}

}  // namespace

// ---------------------------------------------------------------- fields

ProjectorField projector_field(const TorusGrid& grid, const FrameFunction& frame_at) {
    ProjectorField f;
    f.grid = grid;
    const size_t n = grid.size();
    f.P.resize(n);
    f.frames.resize(n);
    parallel_for(n, [&](size_t i) {
        Mat F = frame_at(grid.k(i));
        f.frames[i] = F;
        f.P[i] = F * F.adjoint();
    });
    f.rank = static_cast<int>(f.frames[0].cols());
    for (size_t i = 0; i < n; ++i)
        if (f.frames[i].cols() != f.rank)
            throw NoGap("projector rank changes at k = " + describe_k(grid.k(i)));
    return f;
}

ProjectorField valence_projectors(const BlochField& H, const TorusGrid& grid, double fermi, double gap_tol) {
    const size_t n = grid.size();
    ProjectorField f;
    f.grid = grid;
    f.P.resize(n);
    f.frames.resize(n);
    std::vector<int> rank(n);
    std::vector<double> gap(n);
    parallel_for(n, [&](size_t i) {
        Eigh e = eigh(H(grid.k(i)), 1e-8);
        int r = 0;
        double g = INFINITY;
        for (Eigen::Index a = 0; a < e.values.size(); ++a) {
            if (e.values(a) < fermi) ++r;
            g = std::min(g, std::abs(e.values(a) - fermi));
        }
        rank[i] = r;
        gap[i] = g;
        f.frames[i] = e.vectors.leftCols(r);
        f.P[i] = f.frames[i] * f.frames[i].adjoint();
    });
    for (size_t i = 0; i < n; ++i) {
        f.min_gap = std::min(f.min_gap, gap[i]);
        if (gap[i] < gap_tol || rank[i] != rank[0]) {
            std::ostringstream os;
            os << "spectral gap at energy " << fermi << " closes near k = " << describe_k(grid.k(i))
               << " (distance " << gap[i] << ")";
            throw NoGap(os.str());
        }
    }
    f.rank = rank[0];
    return f;
}

ProjectorField valence_projectors(const CrystalModel& m, const TorusGrid& grid, double fermi, double gap_tol) {
    if (m.dimension() != grid.dimension()) throw ContractViolation("valence_projectors: grid dimension mismatch");
    return valence_projectors(field_of(m), grid, fermi, gap_tol);
}

double projector_trs_defect(const ProjectorField& f, const AntiUnitary& theta) {
    double worst = 0.0;
    for (size_t i = 0; i < f.P.size(); ++i)
        worst = std::max(worst, (theta.conjugate(f.P[i]) - f.P[f.grid.mirror(i)]).cwiseAbs().maxCoeff());
    return worst;
}

// ---------------------------------------------------------------- Chern

ChernResult chern_number(const ProjectorField& f) {
    if (f.grid.dimension() != 2) throw ContractViolation("chern_number: needs a 2d field");
    const TorusGrid& g = f.grid;
    const size_t n = g.size();
    std::vector<double> flux(n), second(n);
    const double h1 = kTwoPi / g.n[0], h2 = kTwoPi / g.n[1];
    parallel_for(n, [&](size_t x) {
        size_t x1 = g.shift(x, 0, 1), x2 = g.shift(x, 1, 1), x12 = g.shift(x1, 1, 1);
        cplx u1 = link(f.frames[x], f.frames[x1]);
        cplx u2 = link(f.frames[x1], f.frames[x12]);
        cplx u3 = link(f.frames[x2], f.frames[x12]);
        cplx u4 = link(f.frames[x], f.frames[x2]);
        flux[x] = std::arg(u1 * u2 * std::conj(u3) * std::conj(u4));

        Mat d1 = (f.P[x1] - f.P[g.shift(x, 0, -1)]) / (2 * h1);
        Mat d2 = (f.P[x2] - f.P[g.shift(x, 1, -1)]) / (2 * h2);
        cplx tr = (f.P[x] * (d1 * d2 - d2 * d1)).trace();
        second[x] = (cplx(0, 1) * tr).real() * h1 * h2 / kTwoPi;
    });
    double total = 0.0, sec = 0.0;
    for (size_t x = 0; x < n; ++x) {
        total += flux[x];
        sec += second[x];
    }
    ChernResult r;
    // link phases integrate <u|du>; c1 = (i/2pi) int d<u|du> = -(sum of plaquette phases)/2pi
    double raw = -total / kTwoPi;
    r.value = static_cast<int>(std::lround(raw));
    r.secondary = sec;
    r.residual = std::abs(sec - r.value);
    return r;
}

DegreeResult degree_of_loop_map(const LoopMap& phi, int nt, int nk) {
    WzResult w;
    for (int round = 0;; ++round) {
        Axes3 axes{Axis{0.0, 1.0, nt, true}, Axis{0.0, kTwoPi, nk, true}, Axis{0.0, kTwoPi, nk, true}};
        try {
            w = wz_density_integral([&](double t, double k1, double k2) { return phi(t, {k1, k2}); }, axes);
            break;
        } catch (const MeshTooCoarse&) {
            if (round == 3) throw;
            nt *= 2;
            nk *= 2;
        }
    }
    DegreeResult d;
    // [0,1] x T^2 is oriented by -dt^dk1^dk2, the orientation in which
    // deg(exp(2 pi i t P)) = c1
    d.raw = -w.integral / kTwoPi;
    d.value = static_cast<int>(std::lround(d.raw));
    d.residual = std::abs(d.raw - d.value);
    return d;
}

// ---------------------------------------------------------------- trivialization

namespace {

// unitary T with T x = y acting in span{x, y}; continuous for <x|y> != 0
Mat transfer(const Vec& x, const Vec& y) {
    const Eigen::Index n = x.size();
    cplx c = x.dot(y);  // <x|y>
    Vec r = y - c * x;
    double b = r.norm();
    Mat T = Mat::Identity(n, n);
    T += (c - 1.0) * x * x.adjoint();
    if (b > 1e-300) {
        Vec f = r / b;
        double ac = std::abs(c);
        if (ac < 1e-12) throw NonConvergence("null_homotopy: column step too large");
        T += b * f * x.adjoint() - b * (c / ac) * x * f.adjoint() + (ac - 1.0) * f * f.adjoint();
    }
    return T;
}

double step_angle(const Mat& A, const Mat& B) {
    UnitaryEig ue = unitary_eig(Mat(A.adjoint() * B), 1e-6);
    double a = 0.0;
    for (Eigen::Index i = 0; i < ue.lambda.size(); ++i) a = std::max(a, std::abs(std::arg(ue.lambda(i))));
    return a;
}

using Loop = std::vector<Mat>;

// keyframes of a homotopy from `loop` to the constant identity loop
std::vector<Loop> contract(const Loop& loop) {
    const size_t L = loop.size();
    const Eigen::Index m = loop.front().rows();
    std::vector<Loop> path;
    if (m == 1) {
        std::vector<double> th(L);
        th[0] = std::arg(loop[0](0, 0));
        for (size_t i = 1; i < L; ++i) {
            double d = std::arg(loop[i](0, 0) / loop[i - 1](0, 0));
            if (std::abs(d) > kPi / 2) throw NonConvergence("null_homotopy: loop sampled too coarsely");
            th[i] = th[i - 1] + d;
        }
        double close = th[L - 1] + std::arg(loop[0](0, 0) / loop[L - 1](0, 0)) - th[0];
        if (std::abs(close) > 1e-6) throw Obstruction("null_homotopy: loop winds in U(1)");
        double big = 0.0;
        for (double v : th) big = std::max(big, std::abs(v));
        int steps = std::max(2, static_cast<int>(std::ceil(big / 0.2)));
        for (int s = 0; s <= steps; ++s) {
            double f = 1.0 - static_cast<double>(s) / steps;
            Loop K(L);
            for (size_t i = 0; i < L; ++i) K[i] = Mat::Constant(1, 1, std::polar(1.0, f * th[i]));
            path.push_back(K);
        }
        return path;
    }

    // choose a target column q far from minus every first column
    std::vector<Vec> v(L);
    for (size_t i = 0; i < L; ++i) v[i] = loop[i].col(0);
    std::vector<Vec> cand;
    for (Eigen::Index a = 0; a < m; ++a) {
        Vec e = Vec::Zero(m);
        e(a) = 1.0;
        cand.push_back(e);
        cand.push_back(-e);
    }
    Vec mean = Vec::Zero(m);
    for (const auto& x : v) mean += x;
    if (mean.norm() > 1e-8) cand.push_back(mean / mean.norm());
    std::mt19937_64 rng(1234567);
    std::normal_distribution<double> gd;
    for (int t = 0; t < 64; ++t) {
        Vec r(m);
        for (Eigen::Index a = 0; a < m; ++a) r(a) = cplx(gd(rng), gd(rng));
        cand.push_back(r / r.norm());
    }
    Vec q = cand.front();
    double best = -1.0;
    for (const auto& c : cand) {
        double worst = INFINITY;
        for (const auto& x : v) worst = std::min(worst, (x + c).norm());
        if (worst > best + 1e-12) {
            best = worst;
            q = c;
        }
    }
    if (best < 1e-3) throw NonConvergence("null_homotopy: no admissible target column");

    // stage 1: rotate the first column onto q along great circles
    const int L1 = 32;
    Loop Z = loop;
    path.push_back(Z);
    std::vector<Vec> prev = v;
    for (int l = 1; l <= L1; ++l) {
        double s = static_cast<double>(l) / L1;
        for (size_t i = 0; i < L; ++i) {
            Vec y = (1.0 - s) * v[i] + s * q;
            y /= y.norm();
            Z[i] = transfer(prev[i], y) * Z[i];
            prev[i] = y;
        }
        path.push_back(Z);
    }
    // complete q to a unitary B with B e1 = q
    Mat B(m, m);
    B.col(0) = q;
    {
        Eigen::Index c = 1;
        for (Eigen::Index a = 0; a < m && c < m; ++a) {
            Vec e = Vec::Zero(m);
            e(a) = 1.0;
            for (Eigen::Index b = 0; b < c; ++b) e -= B.col(b).dot(e) * B.col(b);
            if (e.norm() > 1e-6) {
                B.col(c) = e / e.norm();
                ++c;
            }
        }
    }
    Loop inner(L);
    for (size_t i = 0; i < L; ++i) {
        Mat red = B.adjoint() * Z[i];
        inner[i] = polar_part(Mat(red.bottomRightCorner(m - 1, m - 1)));
    }
    // stage 2: contract the reduced loop inside diag(1, U(m-1))
    for (const Loop& K : contract(inner)) {
        Loop full(L);
        for (size_t i = 0; i < L; ++i) {
            Mat D = Mat::Identity(m, m);
            D.bottomRightCorner(m - 1, m - 1) = K[i];
            full[i] = B * D;
        }
        path.push_back(full);
    }
    // stage 3: B -> I, constant along the loop
    Mat logB = log_unitary(B);
    const int L3 = 24;
    for (int l = 1; l <= L3; ++l) {
        double s = 1.0 - static_cast<double>(l) / L3;
        Mat Bs = expm_antiherm(logB, s);
        path.push_back(Loop(L, Bs));
    }
    return path;
}

}  // namespace

std::vector<std::vector<Mat>> null_homotopy(const std::vector<Mat>& loop, int samples) {
    if (loop.empty() || samples < 2) throw ContractViolation("null_homotopy: empty loop or too few samples");
    // geodesic upsampling so that the column reduction sees small steps
    double widest = 0.0;
    for (size_t i = 0; i < loop.size(); ++i)
        widest = std::max(widest, step_angle(loop[i], loop[(i + 1) % loop.size()]));
    const size_t sub = std::max<size_t>(1, static_cast<size_t>(std::ceil(widest / 0.1)));
    Loop dense;
    dense.reserve(loop.size() * sub);
    for (size_t i = 0; i < loop.size(); ++i) {
        const Mat& A = loop[i];
        Mat Lg = log_unitary(Mat(A.adjoint() * loop[(i + 1) % loop.size()]));
        for (size_t r = 0; r < sub; ++r)
            dense.push_back(r == 0 ? A : Mat(A * expm_antiherm(Lg, static_cast<double>(r) / sub)));
    }
    std::vector<Loop> keys = contract(dense);
    for (auto& K : keys) {
        Loop coarse(loop.size());
        for (size_t i = 0; i < loop.size(); ++i) coarse[i] = K[i * sub];
        K = std::move(coarse);
    }
    std::reverse(keys.begin(), keys.end());  // identity -> loop
    // arc length by the largest per-loop step
    std::vector<double> acc{0.0};
    for (size_t r = 0; r + 1 < keys.size(); ++r) {
        double a = 0.0;
        for (size_t i = 0; i < loop.size(); ++i) a = std::max(a, step_angle(keys[r][i], keys[r + 1][i]));
        acc.push_back(acc.back() + a + 1e-12);
    }
    const double total = acc.back();
    std::vector<std::vector<Mat>> out(static_cast<size_t>(samples));
    for (int j = 0; j < samples; ++j) {
        double t = total * j / (samples - 1);
        size_t r = 0;
        while (r + 2 < acc.size() && acc[r + 1] < t) ++r;
        double tau = (t - acc[r]) / (acc[r + 1] - acc[r]);
        tau = std::clamp(tau, 0.0, 1.0);
        std::vector<Mat> row(loop.size());
        for (size_t i = 0; i < loop.size(); ++i) {
            const Mat& A = keys[r][i];
            const Mat& Bm = keys[r + 1][i];
            if (tau == 0.0) row[i] = A;
            else if (tau == 1.0) row[i] = Bm;
            else row[i] = A * expm_antiherm(log_unitary(Mat(A.adjoint() * Bm)), tau);
        }
        out[static_cast<size_t>(j)] = std::move(row);
    }
    out.front() = std::vector<Mat>(loop.size(), Mat::Identity(loop[0].rows(), loop[0].cols()));
    out.back() = loop;
    return out;
}

SmoothFrame smooth_trivialization(const ProjectorField& f) {
    if (f.grid.dimension() != 2) throw ContractViolation("smooth_trivialization: needs a 2d field");
    const TorusGrid& g = f.grid;
    const int n1 = g.n[0], n2 = g.n[1];
    const Eigen::Index m = f.rank;
    SmoothFrame out;
    out.grid = g;
    out.frames.assign(g.size(), Mat());
    if (m == 0) {
        for (size_t i = 0; i < g.size(); ++i) out.frames[i] = Mat(f.P[i].rows(), 0);
        return out;
    }
    auto at = [&](int i, int j) { return g.index({i, j}); };
    auto transport = [&](const Mat& F, size_t to) { return polar_part(Mat(f.P[to] * F)); };

    // closed frame along k2 = 0 with the holonomy spread evenly
    std::vector<Mat> base(static_cast<size_t>(n1));
    base[0] = f.frames[at(0, 0)];
    for (int i = 1; i < n1; ++i) base[static_cast<size_t>(i)] = transport(base[static_cast<size_t>(i - 1)], at(i, 0));
    Mat back = transport(base[static_cast<size_t>(n1 - 1)], at(0, 0));
    Mat W0 = base[0].adjoint() * back;
    Mat L0 = log_unitary(polar_part(W0));
    for (int i = 1; i < n1; ++i)
        base[static_cast<size_t>(i)] = base[static_cast<size_t>(i)] * expm_antiherm(L0, -static_cast<double>(i) / n1);

    // transport along k2 from every base point; W_i is the seam mismatch
    std::vector<std::vector<Mat>> col(static_cast<size_t>(n1));
    std::vector<Mat> W(static_cast<size_t>(n1));
    parallel_for(static_cast<size_t>(n1), [&](size_t i) {
        auto& c = col[i];
        c.resize(static_cast<size_t>(n2));
        c[0] = base[i];
        for (int j = 1; j < n2; ++j) c[static_cast<size_t>(j)] = transport(c[static_cast<size_t>(j - 1)], at(static_cast<int>(i), j));
        Mat end = transport(c[static_cast<size_t>(n2 - 1)], at(static_cast<int>(i), 0));
        W[i] = polar_part(Mat(c[0].adjoint() * end));
    });

    // determinant winding of the mismatch loop equals the Chern number up to sign
    double wind = 0.0;
    for (int i = 0; i < n1; ++i) {
        cplx a = W[static_cast<size_t>(i)].determinant(), b = W[static_cast<size_t>((i + 1) % n1)].determinant();
        double d = std::arg(b / a);
        if (std::abs(d) > kPi / 2) throw NonConvergence("smooth_trivialization: seam holonomy sampled too coarsely");
        wind += d;
    }
    long c1 = std::lround(wind / kTwoPi);
    if (c1 != 0) {
        std::ostringstream os;
        os << "valence bundle is not trivial (Chern number " << -c1 << ")";
        throw Obstruction(os.str());
    }

    auto N = null_homotopy(W, n2 + 1);
    for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j)
            out.frames[at(i, j)] = col[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                                   N[static_cast<size_t>(j)][static_cast<size_t>(i)].adjoint();

    for (size_t x = 0; x < g.size(); ++x)
        for (int a = 0; a < 2; ++a) {
            Mat O = out.frames[x].adjoint() * out.frames[g.shift(x, a, 1)];
            out.max_step_phase = std::max(out.max_step_phase, std::abs(std::arg(O.determinant())));
            out.min_overlap = std::min(out.min_overlap, min_singular(O));
        }
    if (out.max_step_phase >= kPi / 2 || out.min_overlap < 0.2)
        throw NonConvergence("smooth_trivialization: frame not smooth on this grid");
    return out;
}

std::vector<Mat> sewing_matrices(const SmoothFrame& frame, const AntiUnitary& theta) {
    std::vector<Mat> w(frame.frames.size());
    for (size_t x = 0; x < w.size(); ++x)
        w[x] = frame.frames[frame.grid.mirror(x)].adjoint() * theta.apply(frame.frames[x]);
    return w;
}

// ---------------------------------------------------------------- Kane-Mele

namespace {

struct KmProduct {
    cplx value = 1.0;
    double path_residual = 0.0;
    bool steps_ok = true;
};

KmProduct km_product(const ProjectorField& f, const AntiUnitary& theta) {
    if (theta.squares_to != -1) throw ContractViolation("kane_mele: needs theta^2 = -I");
    if (f.rank % 2 != 0) throw ContractViolation("kane_mele: odd valence rank");
    const TorusGrid& g = f.grid;
    if (g.n[0] % 2 || g.n[1] % 2) throw ContractViolation("kane_mele: grid sizes must be even");
    double defect = projector_trs_defect(f, theta);
    if (defect > 1e-8) {
        std::ostringstream os;
        os << "kane_mele: projector field is not time-reversal symmetric (defect " << defect << ")";
        throw ContractViolation(os.str());
    }
    SmoothFrame sf = smooth_trivialization(f);
    std::vector<Mat> w = sewing_matrices(sf, theta);
    std::vector<cplx> det(w.size());
    for (size_t x = 0; x < w.size(); ++x) {
        if (unitarity_defect(w[x]) > 1e-8) throw ContractViolation("kane_mele: sewing matrix not unitary");
        det[x] = w[x].determinant();
    }
    const int h1 = g.n[0] / 2, h2 = g.n[1] / 2;
    KmProduct out;

    // continue sqrt(det w) along a straight grid segment
    auto walk = [&](std::vector<int> from, int axis, int len, cplx s) {
        size_t x = g.index(from);
        for (int step = 0; step < len; ++step) {
            size_t y = g.shift(x, axis, 1);
            cplx r = det[y] / det[x];
            if (std::abs(std::arg(r)) >= kPi / 2) out.steps_ok = false;
            s *= std::sqrt(r);
            x = y;
        }
        return s;
    };
    auto ratio = [&](const std::vector<int>& c, cplx s) {
        const Mat& wt = w[g.index(c)];
        if ((wt + wt.transpose()).cwiseAbs().maxCoeff() > 1e-8)
            throw ContractViolation("kane_mele: sewing matrix not antisymmetric at a TRIM");
        return s / pfaffian(wt, 1e-8);
    };
    cplx s00 = std::sqrt(det[g.index({0, 0})]);
    // path system A: along k1 at k2 = 0, up k2 at k1 = 0, then along k1 at k2 = pi
    cplx a10 = walk({0, 0}, 0, h1, s00);
    cplx a01 = walk({0, 0}, 1, h2, s00);
    cplx a11 = walk({0, h2}, 0, h1, a01);
    // path system B: up k2 at k1 = pi instead
    cplx b11 = walk({h1, 0}, 1, h2, a10);

    cplx pA = ratio({0, 0}, s00) * ratio({h1, 0}, a10) * ratio({0, h2}, a01) * ratio({h1, h2}, a11);
    cplx pB = ratio({0, 0}, s00) * ratio({h1, 0}, a10) * ratio({0, h2}, a01) * ratio({h1, h2}, b11);
    out.value = pA;
    out.path_residual = std::abs(pA - pB);
    return out;
}

Z2Result finish(const KmProduct& p, const TorusGrid& g, int refinements) {
    Z2Result r;
    r.raw_re = p.value.real();
    r.raw_im = p.value.imag();
    r.value = p.value.real() < 0 ? 1 : 0;
    r.residual = std::abs(p.value - cplx(r.value ? -1.0 : 1.0, 0.0));
    r.path_residual = p.path_residual;
    r.grid = g.n;
    r.refinements = refinements;
    return r;
}

}  // namespace

Z2Result kane_mele_2d_on(const ProjectorField& f, const AntiUnitary& theta) {
    return finish(km_product(f, theta), f.grid, 0);
}

Z2Result kane_mele_2d(const FieldBuilder& build, const AntiUnitary& theta, const TorusGrid& grid) {
    TorusGrid g = grid;
    for (int round = 0; round <= 3; ++round) {
        try {
            ProjectorField f = build(g);
            KmProduct p = km_product(f, theta);
            if (p.steps_ok && p.path_residual < 1e-6) return finish(p, g, round);
        } catch (const NonConvergence&) {
            if (round == 3) throw;
        }
        for (auto& v : g.n) v *= 2;
    }
    throw NonConvergence("kane_mele_2d: sqrt(det w) continuation did not settle after 3 refinements");
}

Z2Result kane_mele_2d(const CrystalModel& m, const AntiUnitary& theta, const TorusGrid& grid) {
    if (m.dimension() != 2) throw ContractViolation("kane_mele_2d: model must be 2d");
    BlochField H = field_of(m);
    return kane_mele_2d([&](const TorusGrid& g) { return valence_projectors(H, g); }, theta, grid);
}

BlochField restrict_to_plane(const BlochField& H, int axis, double value) {
    return [H, axis, value](const KPoint& k2) {
        KPoint k(3);
        int c = 0;
        for (int a = 0; a < 3; ++a) k[static_cast<size_t>(a)] = (a == axis) ? value : k2[static_cast<size_t>(c++)];
        return H(k);
    };
}

Z2Result3d kane_mele_3d(const BlochField& H, const AntiUnitary& theta, const TorusGrid& grid) {
    if (grid.dimension() != 3) throw ContractViolation("kane_mele_3d: needs a 3d grid");
    valence_projectors(H, grid);  // full gap scan; throws NoGap
    Z2Result3d out;
    out.grid = grid.n;
    std::array<std::array<cplx, 2>, 3> raw{};
    for (int a = 0; a < 3; ++a) {
        TorusGrid g2;
        for (int b = 0; b < 3; ++b)
            if (b != a) g2.n.push_back(grid.n[static_cast<size_t>(b)]);
        for (int v = 0; v < 2; ++v) {
            BlochField Hp = restrict_to_plane(H, a, v * kPi);
            Z2Result r = kane_mele_2d([&](const TorusGrid& g) { return valence_projectors(Hp, g); }, theta, g2);
            out.weak[static_cast<size_t>(a)][static_cast<size_t>(v)] = r.value;
            raw[static_cast<size_t>(a)][static_cast<size_t>(v)] = cplx(r.raw_re, r.raw_im);
            out.residual = std::max(out.residual, r.residual);
        }
    }
    // eight-TRIM product assembled from the planes k3 = 0 and k3 = pi
    cplx strong = raw[2][0] * raw[2][1];
    out.strong = strong.real() < 0 ? 1 : 0;
    out.residual = std::max(out.residual, std::abs(strong - cplx(out.strong ? -1.0 : 1.0, 0.0)));
    for (int a = 0; a < 3; ++a)
        if (((out.weak[static_cast<size_t>(a)][1] - out.weak[static_cast<size_t>(a)][0]) & 1) != out.strong)
            out.consistent = false;
    return out;
}

Z2Result3d kane_mele_3d(const CrystalModel& m, const AntiUnitary& theta, const TorusGrid& grid) {
    if (m.dimension() != 3) throw ContractViolation("kane_mele_3d: model must be 3d");
    return kane_mele_3d(field_of(m), theta, grid);
}

// ---------------------------------------------------------------- lattice Z2

namespace {

// Kramers-paired orthonormal basis (u1, theta u1, u3, theta u3, ...) of ran F
Mat kramers_frame(const Mat& F, const AntiUnitary& theta) {
    const Eigen::Index m = F.cols();
    Mat K(F.rows(), m);
    Eigen::Index c = 0;
    while (c < m) {
        Eigen::Index pick = -1;
        double best = 0.0;
        Vec cand;
        for (Eigen::Index a = 0; a < m; ++a) {
            Vec v = F.col(a);
            for (Eigen::Index b = 0; b < c; ++b) v -= K.col(b).dot(v) * K.col(b);
            if (v.norm() > best) {
                best = v.norm();
                pick = a;
                cand = v;
            }
        }
        if (pick < 0 || best < 1e-6) throw ContractViolation("lattice_z2: cannot build Kramers frame");
        Vec u = cand / cand.norm();
        Vec tu = theta.apply(u);
        for (Eigen::Index b = 0; b < c; ++b) tu -= K.col(b).dot(tu) * K.col(b);
        tu -= u.dot(tu) * u;
        K.col(c) = u;
        K.col(c + 1) = tu / tu.norm();
        c += 2;
    }
    return K;
}

}  // namespace

LatticeZ2Result lattice_z2(const BlochField& H, const AntiUnitary& theta, const TorusGrid& grid, double fermi) {
    if (grid.dimension() != 2) throw ContractViolation("lattice_z2: needs a 2d grid");
    const int n1 = grid.n[0], n2 = grid.n[1];
    if (n1 % 2 || n2 % 2) throw ContractViolation("lattice_z2: grid sizes must be even");
    const int h2 = n2 / 2, h1 = n1 / 2;
    ProjectorField f = valence_projectors(H, grid, fermi);
    if (f.rank % 2) throw ContractViolation("lattice_z2: odd valence rank");
    // frames on the half zone rows 0..h2, periodic in k1
    std::vector<std::vector<Mat>> F(static_cast<size_t>(h2 + 1), std::vector<Mat>(static_cast<size_t>(n1)));
    for (int j = 0; j <= h2; ++j)
        for (int i = 0; i < n1; ++i) F[static_cast<size_t>(j)][static_cast<size_t>(i)] = f.frames[grid.index({i, j})];
    const Eigen::Index m = f.rank;
    for (int j : {0, h2}) {
        auto& row = F[static_cast<size_t>(j)];
        row[0] = kramers_frame(row[0], theta);
        row[static_cast<size_t>(h1)] = kramers_frame(row[static_cast<size_t>(h1)], theta);
        for (int i = 1; i < h1; ++i) {
            const Mat& A = row[static_cast<size_t>(i)];
            Mat Bm(A.rows(), m);
            for (Eigen::Index s = 0; s < m; s += 2) {
                Bm.col(s + 1) = theta.apply(Vec(A.col(s)));
                Bm.col(s) = -theta.apply(Vec(A.col(s + 1)));
            }
            row[static_cast<size_t>(n1 - i)] = Bm;
        }
    }
    double total = 0.0;
    for (int j = 0; j < h2; ++j)
        for (int i = 0; i < n1; ++i) {
            const Mat& a = F[static_cast<size_t>(j)][static_cast<size_t>(i)];
            const Mat& b = F[static_cast<size_t>(j)][static_cast<size_t>((i + 1) % n1)];
            const Mat& c = F[static_cast<size_t>(j + 1)][static_cast<size_t>((i + 1) % n1)];
            const Mat& d = F[static_cast<size_t>(j + 1)][static_cast<size_t>(i)];
            cplx u1 = link(a, b), u2 = link(b, c), u3 = link(d, c), u4 = link(a, d);
            double A1 = std::arg(u1), A2 = std::arg(u2), A3 = std::arg(u3), A4 = std::arg(u4);
            double F12 = std::arg(u1 * u2 * std::conj(u3) * std::conj(u4));
            total += (A1 + A2 - A3 - A4 - F12) / kTwoPi;
        }
    LatticeZ2Result r;
    r.raw = total;
    long v = std::lround(total);
    r.value = static_cast<int>(((v % 2) + 2) % 2);
    return r;
}

}  // namespace toposcope

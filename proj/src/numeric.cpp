#include "toposcope/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace toposcope {

double hermiticity_defect(const Mat& M) {
    if (M.rows() != M.cols()) return INFINITY;
    return (M - M.adjoint()).cwiseAbs().maxCoeff();
}

double unitarity_defect(const Mat& U) {
    if (U.rows() != U.cols()) return INFINITY;
    return (U.adjoint() * U - Mat::Identity(U.rows(), U.cols())).cwiseAbs().maxCoeff();
}

Eigh eigh(const Mat& M, double herm_tol) {
    double d = hermiticity_defect(M);
    if (!(d <= herm_tol * std::max(1.0, M.cwiseAbs().maxCoeff()))) {
        std::ostringstream os;
        os << "eigh: matrix not Hermitian (defect " << d << ")";
        throw ContractViolation(os.str());
    }
    Mat Ms = 0.5 * (M + M.adjoint());
    Eigen::SelfAdjointEigenSolver<Mat> es(Ms);
    if (es.info() != Eigen::Success) throw NonConvergence("eigh: eigensolver failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

Mat expm_herm(const Mat& H, double t) {
    Eigh e = eigh(H, 1e-8);
    Vec ph(e.values.size());
    for (Eigen::Index i = 0; i < ph.size(); ++i) ph(i) = std::polar(1.0, -t * e.values(i));
    return e.vectors * ph.asDiagonal() * e.vectors.adjoint();
}

UnitaryEig unitary_eig(const Mat& V, double unit_tol) {
    double d = unitarity_defect(V);
    if (!(d <= unit_tol)) {
        std::ostringstream os;
        os << "matrix not unitary (defect " << d << ")";
        throw ContractViolation(os.str());
    }
    Eigen::ComplexSchur<Mat> cs(V);
    if (cs.info() != Eigen::Success) throw NonConvergence("unitary_eig: Schur failed");
    UnitaryEig out;
    out.lambda = cs.matrixT().diagonal();
    for (Eigen::Index i = 0; i < out.lambda.size(); ++i)
        out.lambda(i) /= std::abs(out.lambda(i));
    out.frame = cs.matrixU();
    return out;
}

double phase_in_window(cplx lambda, double eps) {
    double a = -std::arg(lambda);
    // shift into (eps, eps + 2pi]
    double k = std::floor((a - eps) / kTwoPi);
    a -= k * kTwoPi;
    if (a <= eps) a += kTwoPi;
    if (a > eps + kTwoPi) a -= kTwoPi;
    return a;
}

double branch_distance(const UnitaryEig& ue, double eps) {
    cplx z = std::polar(1.0, -eps);
    double best = INFINITY;
    for (Eigen::Index i = 0; i < ue.lambda.size(); ++i) {
        double a = std::abs(std::arg(ue.lambda(i) / z));
        best = std::min(best, a);
    }
    return best;
}

void check_branch(const UnitaryEig& ue, double eps, double gap_tol) {
    cplx z = std::polar(1.0, -eps);
    for (Eigen::Index i = 0; i < ue.lambda.size(); ++i) {
        if (std::abs(ue.lambda(i) - z) < gap_tol) {
            std::ostringstream os;
            os << "eigenvalue (" << ue.lambda(i).real() << ", " << ue.lambda(i).imag()
               << ") lies within gap_tol of the branch cut at eps=" << eps;
            throw BranchCut(os.str(), ue.lambda(i).real(), ue.lambda(i).imag());
        }
    }
}

Mat branch_log(const UnitaryEig& ue, double eps, double gap_tol) {
    check_branch(ue, eps, gap_tol);
    Eigen::Index n = ue.lambda.size();
    RVec a(n);
    for (Eigen::Index i = 0; i < n; ++i) a(i) = phase_in_window(ue.lambda(i), eps);
    Mat H = ue.frame * a.cast<cplx>().asDiagonal() * ue.frame.adjoint();
    return 0.5 * (H + H.adjoint());
}

Mat branch_log(const Mat& V, double eps, double gap_tol) {
    return branch_log(unitary_eig(V), eps, gap_tol);
}

namespace {

std::vector<Eigen::Index> window_members(const UnitaryEig& ue, double eps1, double eps2,
                                         double gap_tol) {
    if (!(eps1 <= eps2) || eps2 - eps1 > kTwoPi + 1e-12)
        throw ContractViolation("spectral_projector: need eps1 <= eps2 <= eps1 + 2pi");
    check_branch(ue, eps1, gap_tol);
    check_branch(ue, eps2, gap_tol);
    std::vector<Eigen::Index> idx;
    if (eps1 == eps2) return idx;
    for (Eigen::Index i = 0; i < ue.lambda.size(); ++i) {
        double a = phase_in_window(ue.lambda(i), eps1);
        if (a < eps2) idx.push_back(i);
    }
    return idx;
}

}  // namespace

Mat spectral_frame(const UnitaryEig& ue, double eps1, double eps2, double gap_tol) {
    auto idx = window_members(ue, eps1, eps2, gap_tol);
    Mat F(ue.frame.rows(), static_cast<Eigen::Index>(idx.size()));
    for (size_t c = 0; c < idx.size(); ++c) F.col(static_cast<Eigen::Index>(c)) = ue.frame.col(idx[c]);
    return F;
}

Mat spectral_projector(const UnitaryEig& ue, double eps1, double eps2, double gap_tol) {
    Mat F = spectral_frame(ue, eps1, eps2, gap_tol);
    Mat P = F * F.adjoint();
    return 0.5 * (P + P.adjoint());
}

Mat spectral_projector(const Mat& V, double eps1, double eps2, double gap_tol) {
    return spectral_projector(unitary_eig(V), eps1, eps2, gap_tol);
}

cplx pfaffian(const Mat& Ain, double skew_tol) {
    const Eigen::Index n = Ain.rows();
    if (Ain.cols() != n) throw ContractViolation("pfaffian: matrix not square");
    if (n % 2 != 0) throw ContractViolation("pfaffian: odd dimension");
    if (n == 0) return 1.0;
    double skew = (Ain + Ain.transpose()).cwiseAbs().maxCoeff();
    if (skew > skew_tol) {
        std::ostringstream os;
        os << "pfaffian: matrix not antisymmetric (defect " << skew << ")";
        throw ContractViolation(os.str());
    }
    Mat A = 0.5 * (Ain - Ain.transpose());
    cplx pf = 1.0;
    auto swap_index = [&](Eigen::Index a, Eigen::Index b) {
        A.row(a).swap(A.row(b));
        A.col(a).swap(A.col(b));
        pf = -pf;
    };
    for (Eigen::Index k = 0; k + 1 < n; k += 2) {
        // complete pivot over the trailing block
        Eigen::Index p = k, q = k + 1;
        double best = -1.0;
        for (Eigen::Index i = k; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j)
                if (std::abs(A(i, j)) > best) { best = std::abs(A(i, j)); p = i; q = j; }
        if (best == 0.0) return 0.0;
        if (p != k) {
            swap_index(k, p);
            if (q == k) q = p;
        }
        if (q != k + 1) swap_index(k + 1, q);

        const cplx piv = A(k, k + 1);
        pf *= piv;
        if (k + 2 < n) {
            const Eigen::Index m = n - k - 2;
            Vec tau = A.row(k).tail(m).transpose() / piv;
            Vec col = A.col(k + 1).tail(m);
            A.bottomRightCorner(m, m) += tau * col.transpose() - col * tau.transpose();
        }
    }
    return pf;
}

Mat evolve(const HamiltonianOfTime& H, double T, int steps) {
    if (steps < 1) throw ContractViolation("evolve: steps must be >= 1");
    const double dt = T / steps;
    Mat U;
    for (int s = 0; s < steps; ++s) {
        Mat step = expm_herm(H((s + 0.5) * dt), dt);
        U = (s == 0) ? step : Mat(step * U);
    }
    return U;
}

std::vector<Mat> evolve_trajectory(const HamiltonianOfTime& H, double T, int steps) {
    if (steps < 1) throw ContractViolation("evolve: steps must be >= 1");
    const double dt = T / steps;
    std::vector<Mat> out;
    out.reserve(static_cast<size_t>(steps) + 1);
    Mat H0 = H(0.5 * dt);
    out.push_back(Mat::Identity(H0.rows(), H0.cols()));
    for (int s = 0; s < steps; ++s) {
        Mat Hm = (s == 0) ? H0 : H((s + 0.5) * dt);
        out.push_back(expm_herm(Hm, dt) * out.back());
    }
    return out;
}

double gap_center(const UnitaryEig& ue, double gap_tol) {
    // work with x = eps + 2pi in (0, 2pi); eigenvalue e^{-ia} blocks x = a mod 2pi,
    // and x = 0 is outside the branch-angle domain anyway
    std::vector<double> pts{0.0, kTwoPi};
    for (Eigen::Index i = 0; i < ue.lambda.size(); ++i) {
        double a = phase_in_window(ue.lambda(i), 0.0);
        if (a >= kTwoPi) a -= kTwoPi;
        pts.push_back(a);
    }
    std::sort(pts.begin(), pts.end());
    double best_w = -1.0, best_x = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        double w = pts[i + 1] - pts[i];
        double mid = 0.5 * (pts[i] + pts[i + 1]);
        // ties go to the smaller |eps| = 2pi - mid, i.e. the larger mid
        if (w > best_w + 1e-12 || (std::abs(w - best_w) <= 1e-12 && mid > best_x)) {
            best_w = w;
            best_x = mid;
        }
    }
    if (best_w <= 2.0 * gap_tol) throw NoGap("gap_center: no spectral gap wider than 2*gap_tol");
    return best_x - kTwoPi;
}

double gap_center(const Mat& V, double gap_tol) { return gap_center(unitary_eig(V), gap_tol); }

Mat random_hermitian(int n, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> g(0.0, 1.0);
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = cplx(g(rng), g(rng));
    return scale * 0.5 * (A + A.adjoint());
}

Mat random_unitary(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = cplx(g(rng), g(rng));
    Eigen::HouseholderQR<Mat> qr(A);
    Mat Q = qr.householderQ();
    Mat R = qr.matrixQR();
    for (int i = 0; i < n; ++i) {
        cplx d = R(i, i);
        Q.col(i) *= d / std::abs(d);
    }
    return Q;
}

}  // namespace toposcope

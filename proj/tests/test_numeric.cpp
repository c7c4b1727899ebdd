#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "toposcope/numeric.hpp"

using namespace toposcope;

namespace {

double maxabs(const Mat& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; }

Mat diag2(cplx a, cplx b) {
    Mat M = Mat::Zero(2, 2);
    M(0, 0) = a;
    M(1, 1) = b;
    return M;
}

}  // namespace

TEST_CASE("eigh on diagonal and Pauli x") {
    Eigh e = eigh(diag2(2.0, 1.0));
    CHECK(e.values(0) == doctest::Approx(1.0));
    CHECK(e.values(1) == doctest::Approx(2.0));
    CHECK(std::abs(e.vectors(1, 0)) == doctest::Approx(1.0));

    Mat sx(2, 2);
    sx << 0, 1, 1, 0;
    e = eigh(sx);
    CHECK(e.values(0) == doctest::Approx(-1.0));
    CHECK(e.values(1) == doctest::Approx(1.0));
    CHECK(std::abs(e.vectors(0, 0) + e.vectors(1, 0)) < 1e-12);
    CHECK(std::abs(e.vectors(0, 1) - e.vectors(1, 1)) < 1e-12);
}

TEST_CASE("eigh reconstructs random Hermitian and rejects non-Hermitian") {
    std::mt19937_64 rng(11);
    Mat M = random_hermitian(6, rng);
    Eigh e = eigh(M);
    Mat R = e.vectors * e.values.cast<cplx>().asDiagonal() * e.vectors.adjoint();
    CHECK(maxabs(R - M) < 1e-9);
    CHECK(unitarity_defect(e.vectors) < 1e-9);
    M(0, 1) += 1e-3;
    CHECK_THROWS_AS(eigh(M), ContractViolation);
}

TEST_CASE("branch_log examples") {
    Mat I = Mat::Identity(3, 3);
    CHECK(maxabs(branch_log(I, -kPi)) < 1e-12);
    // -1 = e^{-ia} with a in (-3pi/2, pi/2) forces a = -pi
    CHECK(maxabs(branch_log(Mat(-I), -1.5 * kPi) + kPi * I) < 1e-12);

    std::mt19937_64 rng(3);
    Mat W = random_unitary(4, rng);
    Mat P = W.leftCols(2) * W.leftCols(2).adjoint();
    Mat V = Mat::Identity(4, 4) - 2.0 * P;
    Mat H = branch_log(V, -1.5 * kPi);
    CHECK(maxabs(H + kPi * P) < 1e-9);
    CHECK(maxabs(oracle::expm_taylor(cplx(0, -1) * H) - V) < 1e-9);
    CHECK(maxabs(oracle::expm_taylor(cplx(0, 1) * kPi * P) - V) < 1e-9);
}

TEST_CASE("branch_log throws on the cut and names the eigenvalue") {
    Mat I = Mat::Identity(2, 2);
    try {
        branch_log(I, -kTwoPi + 1e-9);
        FAIL("expected BranchCut");
    } catch (const BranchCut& e) {
        CHECK(e.eigen_re == doctest::Approx(1.0));
        CHECK(std::string(e.what()).find("eigenvalue") != std::string::npos);
    }
}

TEST_CASE("branch_log property: exp(-iH) = V and spectrum window") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ue(-kTwoPi, 0.0);
    for (int trial = 0; trial < 100; ++trial) {
        Mat V = random_unitary(1 + trial % 5, rng);
        auto dec = unitary_eig(V);
        int used = 0;
        while (used < 3) {
            double eps = ue(rng);
            if (branch_distance(dec, eps) < 1e-3) continue;
            ++used;
            Mat H = branch_log(dec, eps);
            CHECK(hermiticity_defect(H) < 1e-10);
            CHECK(maxabs(oracle::expm_taylor(cplx(0, -1) * H) - V) < 1e-8);
            Eigh e = eigh(H);
            CHECK(e.values(0) > eps);
            CHECK(e.values(e.values.size() - 1) < eps + kTwoPi);
            // locally constant in eps
            double d = branch_distance(dec, eps);
            Mat H2 = branch_log(dec, eps + 0.5 * d);
            CHECK(maxabs(H2 - H) < 1e-9);
        }
    }
}

TEST_CASE("spectral_projector examples") {
    Mat V = diag2(std::polar(1.0, -kPi / 4), std::polar(1.0, -7 * kPi / 4));
    CHECK(maxabs(spectral_projector(V, -1.0, -1.0)) == 0.0);
    // the clockwise arc from e^{3i pi/2} to e^{i pi/2} is the left half plane:
    // both eigenvalues above sit in the right half plane
    CHECK(maxabs(spectral_projector(V, -1.5 * kPi, -0.5 * kPi)) < 1e-14);
    Mat V2 = diag2(std::polar(1.0, -3 * kPi / 4), std::polar(1.0, -7 * kPi / 4));
    Mat P = spectral_projector(V2, -1.5 * kPi, -0.5 * kPi);
    CHECK(std::abs(P(0, 0) - 1.0) < 1e-14);
    CHECK(std::abs(P(1, 1)) < 1e-14);
    CHECK_THROWS_AS(spectral_projector(V2, -0.5 * kPi, -1.5 * kPi), ContractViolation);
    CHECK_THROWS_AS(spectral_projector(V2, -5 * kPi / 4, -0.5 * kPi), BranchCut);
}

TEST_CASE("spectral_projector properties") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ue(-kTwoPi, 0.0);
    for (int trial = 0; trial < 60; ++trial) {
        int n = 2 + trial % 5;
        Mat V = random_unitary(n, rng);
        auto dec = unitary_eig(V);
        double e1, e2;
        do {
            e1 = ue(rng);
            e2 = ue(rng);
            if (e1 > e2) std::swap(e1, e2);
        } while (branch_distance(dec, e1) < 1e-3 || branch_distance(dec, e2) < 1e-3);
        Mat P = spectral_projector(dec, e1, e2);
        CHECK(maxabs(P * P - P) < 1e-9);
        CHECK(hermiticity_defect(P) < 1e-9);
        Mat diff = branch_log(dec, e2) - branch_log(dec, e1) - kTwoPi * P;
        CHECK(maxabs(diff) < 1e-8);
        // rank count: eigenvalues strictly inside the arc
        int count = 0;
        for (int i = 0; i < n; ++i) {
            double a = -std::arg(dec.lambda(i));
            for (int s = -2; s <= 2; ++s)
                if (a + s * kTwoPi > e1 && a + s * kTwoPi < e2) ++count;
        }
        CHECK(std::abs(P.trace().real() - count) < 1e-9);
        // complement arc
        Mat Q = spectral_projector(dec, e2, e1 + kTwoPi);
        CHECK(std::abs(P.trace().real() + Q.trace().real() - n) < 1e-9);
        CHECK(maxabs(P + Q - Mat::Identity(n, n)) < 1e-9);
    }
}

TEST_CASE("pfaffian small cases and contracts") {
    Mat A(2, 2);
    cplx a(0.3, -1.2);
    A << 0, a, -a, 0;
    CHECK(std::abs(pfaffian(A) - a) < 1e-14);

    std::mt19937_64 rng(5);
    Mat B = oracle::random_antisymmetric(4, rng);
    cplx expect = B(0, 1) * B(2, 3) - B(0, 2) * B(1, 3) + B(0, 3) * B(1, 2);
    CHECK(std::abs(pfaffian(B) - expect) < 1e-12);
    CHECK(std::abs(oracle::pfaffian_pairings(B) - expect) < 1e-12);

    CHECK_THROWS_AS(pfaffian(Mat::Zero(3, 3)), ContractViolation);
    Mat C = oracle::random_antisymmetric(4, rng);
    C(0, 1) += 1e-6;
    CHECK_THROWS_AS(pfaffian(C), ContractViolation);
    CHECK(std::abs(pfaffian(Mat::Zero(4, 4))) == 0.0);
}

TEST_CASE("pfaffian agrees with pairing oracle and determinant") {
    std::mt19937_64 rng(9);
    for (int n = 2; n <= 8; n += 2) {
        for (int trial = 0; trial < 10; ++trial) {
            Mat A = oracle::random_antisymmetric(n, rng);
            cplx pf = pfaffian(A);
            cplx ref = oracle::pfaffian_pairings(A);
            CHECK(std::abs(pf - ref) <= 1e-10 * std::max(1.0, std::abs(ref)));
            cplx det = A.determinant();
            CHECK(std::abs(pf * pf - det) <= 1e-8 * std::max(1.0, std::abs(det)));
        }
    }
}

TEST_CASE("pfaffian congruence property") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g;
    for (int n = 2; n <= 8; n += 2) {
        for (int trial = 0; trial < 10; ++trial) {
            Mat A = oracle::random_antisymmetric(n, rng);
            Mat B(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) B(i, j) = cplx(g(rng), g(rng));
            cplx lhs = pfaffian(Mat(B.transpose() * A * B));
            cplx rhs = B.determinant() * pfaffian(A);
            CHECK(std::abs(lhs - rhs) <= 1e-7 * std::abs(rhs));
        }
    }
}

TEST_CASE("pfaffian with degenerate pivots") {
    // block structure forcing pivoting: pf(J (+) J) = 1
    Mat A = Mat::Zero(4, 4);
    A(0, 3) = 1;
    A(3, 0) = -1;
    A(1, 2) = 2;
    A(2, 1) = -2;
    CHECK(std::abs(pfaffian(A) - oracle::pfaffian_pairings(A)) < 1e-14);
}

TEST_CASE("evolve constant and piecewise") {
    std::mt19937_64 rng(21);
    Mat H = random_hermitian(3, rng);
    Mat U = evolve([&](double) { return H; }, 1.7, 13);
    CHECK(maxabs(U - oracle::expm_taylor(cplx(0, -1.7) * H)) < 1e-9);

    Mat H1 = random_hermitian(3, rng), H2 = random_hermitian(3, rng);
    double T = 1.3;
    auto drive = [&](double t) { return t < T / 2 ? H1 : H2; };
    Mat Up = evolve(drive, T, 2);
    Mat ref = oracle::expm_taylor(cplx(0, -T / 2) * H2) * oracle::expm_taylor(cplx(0, -T / 2) * H1);
    CHECK(maxabs(Up - ref) < 1e-9);
    CHECK_THROWS_AS(evolve(drive, T, 0), ContractViolation);
}

TEST_CASE("evolve converges at second order and is deterministic") {
    std::mt19937_64 rng(23);
    Mat A = random_hermitian(4, rng), B = random_hermitian(4, rng);
    auto H = [&](double t) { return Mat(A + std::sin(3.0 * t) * B); };
    Mat U1 = evolve(H, 1.0, 200);
    Mat U2 = evolve(H, 1.0, 400);
    Mat U4 = evolve(H, 1.0, 800);
    double ratio = maxabs(U1 - U2) / maxabs(U2 - U4);
    CHECK(ratio == doctest::Approx(4.0).epsilon(0.05));
    CHECK(unitarity_defect(U1) < 1e-9);
    Mat again = evolve(H, 1.0, 200);
    CHECK((again.array() == U1.array()).all());
    auto traj = evolve_trajectory(H, 1.0, 200);
    CHECK((traj.back().array() == U1.array()).all());
}

TEST_CASE("gap_center examples") {
    CHECK(gap_center(Mat(Mat::Identity(2, 2))) == doctest::Approx(-kPi));
    CHECK(gap_center(diag2(1.0, -1.0)) == doctest::Approx(-0.5 * kPi));
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        Mat V = random_unitary(5, rng);
        double eps = gap_center(V);
        CHECK(eps > -kTwoPi);
        CHECK(eps < 0.0);
        CHECK(branch_distance(unitary_eig(V), eps) > 1e-6);
    }
    // eigenvalues packed densely around the circle leave no usable gap
    const int n = 64;
    Mat D = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) D(i, i) = std::polar(1.0, kTwoPi * i / n);
    CHECK_THROWS_AS(gap_center(D, 0.1), NoGap);
}

#include "toposcope/wz.hpp"

#include <cmath>
#include <sstream>

#include "toposcope/parallel.hpp"

namespace toposcope {

namespace {

constexpr double kLogPhaseLimit = 2.8;  // beyond this the stencil logs stop being trustworthy

struct LogAndStep {
    Mat log;
    double dist;   // max |lambda - 1|
    double phase;  // max |arg lambda|
};

LogAndStep log_with_step(const Mat& U) {
    UnitaryEig ue = unitary_eig(U, 1e-7);
    Vec d(ue.lambda.size());
    double dist = 0.0, phase = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        double a = std::arg(ue.lambda(i));
        d(i) = cplx(0.0, a);
        dist = std::max(dist, std::abs(ue.lambda(i) - 1.0));
        phase = std::max(phase, std::abs(a));
    }
    Mat L = ue.frame * d.asDiagonal() * ue.frame.adjoint();
    L = 0.5 * (L - L.adjoint());
    return {L, dist, phase};
}

}  // namespace

Mat log_unitary(const Mat& U) { return log_with_step(U).log; }

std::vector<Mat> sample_field(const UnitaryField3& phi, const Axes3& axes) {
    const int s0 = axes[0].samples(), s1 = axes[1].samples(), s2 = axes[2].samples();
    std::vector<Mat> out(static_cast<size_t>(s0) * s1 * s2);
    parallel_for(out.size(), [&](size_t idx) {
        int i2 = static_cast<int>(idx % s2);
        int i1 = static_cast<int>((idx / s2) % s1);
        int i0 = static_cast<int>(idx / (static_cast<size_t>(s1) * s2));
        out[idx] = phi(axes[0].at(i0), axes[1].at(i1), axes[2].at(i2));
    });
    return out;
}

WzResult wz_density_integral(const std::vector<Mat>& g, const Axes3& axes) {
    std::array<int, 3> s{};
    for (int a = 0; a < 3; ++a) {
        const Axis& ax = axes[static_cast<size_t>(a)];
        if (ax.n < 4) throw ContractViolation("wz: each axis needs at least 4 intervals");
        if (!ax.periodic && ax.n % 2 != 0) throw ContractViolation("wz: closed axes need an even interval count");
        s[static_cast<size_t>(a)] = ax.samples();
    }
    const size_t total = static_cast<size_t>(s[0]) * s[1] * s[2];
    if (g.size() != total) throw ContractViolation("wz: sample count does not match axes");
    const std::array<size_t, 3> stride{static_cast<size_t>(s[1]) * s[2], static_cast<size_t>(s[2]), 1};

    // quadrature weights per axis
    std::array<std::vector<double>, 3> w;
    for (int a = 0; a < 3; ++a) {
        const Axis& ax = axes[static_cast<size_t>(a)];
        auto& wa = w[static_cast<size_t>(a)];
        wa.assign(static_cast<size_t>(ax.samples()), ax.step());
        if (!ax.periodic) {
            for (int i = 0; i <= ax.n; ++i) {
                double c = (i == 0 || i == ax.n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
                wa[static_cast<size_t>(i)] = c * ax.step() / 3.0;
            }
        }
    }

    std::vector<double> contrib(total, 0.0);
    std::vector<double> steps(total, 0.0);
    std::vector<int> coarse(total, 0);

    parallel_for(total, [&](size_t idx) {
        std::array<int, 3> p{static_cast<int>(idx / stride[0]), static_cast<int>((idx / stride[1]) % s[1]),
                             static_cast<int>(idx % s[2])};
        const Mat& g0 = g[idx];
        const Mat g0inv = g0.adjoint();
        std::array<Mat, 3> R;
        for (int a = 0; a < 3; ++a) {
            const Axis& ax = axes[static_cast<size_t>(a)];
            const int n = ax.n, i = p[static_cast<size_t>(a)];
            auto neighbour = [&](int off) -> const Mat& {
                int j = i + off;
                if (ax.periodic) j = ((j % n) + n) % n;
                return g[idx + static_cast<size_t>(static_cast<long>(j - i) * static_cast<long>(stride[static_cast<size_t>(a)]))];
            };
            auto Y = [&](int off) -> Mat {
                LogAndStep ls = log_with_step(Mat(neighbour(off) * g0inv));
                if (std::abs(off) == 1) steps[idx] = std::max(steps[idx], ls.dist);
                if (ls.phase > kLogPhaseLimit) coarse[idx] = 1;
                return ls.log;
            };
            // offsets and weights of the 4th-order first-derivative stencil
            std::vector<std::pair<int, double>> st;
            if (ax.periodic || (i >= 2 && i <= n - 2)) {
                st = {{-2, 1.0}, {-1, -8.0}, {1, 8.0}, {2, -1.0}};
            } else if (i == 0) {
                st = {{1, 48.0}, {2, -36.0}, {3, 16.0}, {4, -3.0}};
            } else if (i == 1) {
                st = {{-1, -3.0}, {1, 18.0}, {2, -6.0}, {3, 1.0}};
            } else if (i == n) {
                st = {{-1, -48.0}, {-2, 36.0}, {-3, -16.0}, {-4, 3.0}};
            } else {  // i == n - 1
                st = {{1, 3.0}, {-1, -18.0}, {-2, 6.0}, {-3, -1.0}};
            }
            Mat acc = Mat::Zero(g0.rows(), g0.cols());
            for (auto [off, c] : st) acc += c * Y(off);
            R[static_cast<size_t>(a)] = acc / (12.0 * ax.step());
        }
        if (coarse[idx]) return;
        Mat comm = R[1] * R[2] - R[2] * R[1];
        double dens = (R[0] * comm).trace().real() / (4.0 * kPi);
        contrib[idx] = dens * w[0][static_cast<size_t>(p[0])] * w[1][static_cast<size_t>(p[1])] *
                       w[2][static_cast<size_t>(p[2])];
    });

    WzResult out;
    for (size_t i = 0; i < total; ++i) {
        out.max_step = std::max(out.max_step, steps[i]);
        if (coarse[i]) out.max_step = std::max(out.max_step, 2.0);
    }
    if (out.max_step >= 1.0) {
        std::ostringstream os;
        os << "wz_density_integral: mesh too coarse (max |Phi^-1 dPhi| eigen-step " << out.max_step << ")";
        throw MeshTooCoarse(os.str());
    }
    double sum = 0.0;
    for (double c : contrib) sum += c;  // fixed order
    out.integral = sum;
    return out;
}

WzResult wz_density_integral(const UnitaryField3& phi, const Axes3& axes) {
    return wz_density_integral(sample_field(phi, axes), axes);
}

}  // namespace toposcope

#include "toposcope/model.hpp"

#include <cmath>
#include <sstream>

namespace toposcope {

namespace {

bool close_blocks(const Mat& a, const Mat& b, double tol = 1e-12) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.size() == 0 || (a - b).cwiseAbs().maxCoeff() <= tol);
}

std::vector<int> neg(const std::vector<int>& n) {
    std::vector<int> out(n.size());
    for (size_t i = 0; i < n.size(); ++i) out[i] = -n[i];
    return out;
}

bool all_zero(const std::vector<int>& n) {
    for (int v : n)
        if (v != 0) return false;
    return true;
}

Mat pauli(int i) {
    Mat s = Mat::Zero(2, 2);
    if (i == 0) { s(0, 0) = 1; s(1, 1) = 1; }
    if (i == 1) { s(0, 1) = 1; s(1, 0) = 1; }
    if (i == 2) { s(0, 1) = cplx(0, -1); s(1, 0) = cplx(0, 1); }
    if (i == 3) { s(0, 0) = 1; s(1, 1) = -1; }
    return s;
}

Mat kron(const Mat& a, const Mat& b) {
    Mat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Mat scalar(cplx v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return m;
}

}  // namespace

AntiUnitary make_antiunitary(const Mat& U, int squares_to) {
    if (squares_to != 1 && squares_to != -1)
        throw ContractViolation("antiunitary: squares_to must be +1 or -1");
    if (unitarity_defect(U) > 1e-9) throw ContractViolation("antiunitary: matrix not unitary");
    Mat sq = U * U.conjugate();
    Mat target = static_cast<double>(squares_to) * Mat::Identity(U.rows(), U.cols());
    if ((sq - target).cwiseAbs().maxCoeff() > 1e-9)
        throw ContractViolation("antiunitary: U conj(U) does not match squares_to");
    return {U, squares_to};
}

CrystalModel::CrystalModel(int dimension, std::vector<std::vector<double>> bravais,
                           std::vector<Site> sites, std::vector<Hopping> hoppings)
    : dim_(dimension), bravais_(std::move(bravais)), sites_(std::move(sites)) {
    if (dim_ < 1 || dim_ > 3) throw ContractViolation("model: dimension must be 1, 2 or 3");
    if (static_cast<int>(bravais_.size()) != dim_)
        throw ContractViolation("model: need one Bravais vector per dimension");
    Eigen::MatrixXd A(dim_, dim_);
    for (int i = 0; i < dim_; ++i) {
        if (static_cast<int>(bravais_[static_cast<size_t>(i)].size()) < dim_)
            throw ContractViolation("model: Bravais vector too short");
        for (int j = 0; j < dim_; ++j) A(i, j) = bravais_[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
    if (std::abs(A.determinant()) < 1e-12) throw ContractViolation("model: Bravais vectors degenerate");
    if (sites_.empty()) throw ContractViolation("model: no sites");
    for (const auto& s : sites_) {
        if (s.dim < 1) throw ContractViolation("model: site dimension must be positive");
        site_start_.push_back(n_);
        n_ += s.dim;
    }
    const int ns = static_cast<int>(sites_.size());
    for (const auto& h : hoppings) {
        if (static_cast<int>(h.offset.size()) != dim_)
            throw ContractViolation("model: hopping offset has wrong length");
        if (h.source < 0 || h.source >= ns || h.target < 0 || h.target >= ns)
            throw ContractViolation("model: hopping site index out of range");
        if (h.block.rows() != sites_[static_cast<size_t>(h.target)].dim ||
            h.block.cols() != sites_[static_cast<size_t>(h.source)].dim)
            throw ContractViolation("model: hopping block shape mismatch");
    }
    std::vector<Hopping> all = hoppings;
    for (const auto& h : hoppings) {
        bool self = all_zero(h.offset) && h.source == h.target;
        if (self) {
            if (hermiticity_defect(h.block) > 1e-12)
                throw ContractViolation("model: on-site block not Hermitian");
            continue;
        }
        std::vector<int> mn = neg(h.offset);
        Mat bd = h.block.adjoint();
        bool found = false;
        for (const auto& g : hoppings)
            if (g.offset == mn && g.source == h.target && g.target == h.source && close_blocks(g.block, bd)) {
                found = true;
                break;
            }
        if (!found) all.push_back({mn, h.target, h.source, bd});
    }
    hops_ = std::move(all);
    for (const auto& h : hops_)
        for (int v : h.offset) range_ = std::max(range_, std::abs(v));
}

int CrystalModel::range_along(int axis) const {
    int r = 0;
    for (const auto& h : hops_) r = std::max(r, std::abs(h.offset[static_cast<size_t>(axis)]));
    return r;
}

Mat CrystalModel::bloch(const KPoint& k) const {
    if (static_cast<int>(k.size()) != dim_) throw ContractViolation("bloch: k has wrong dimension");
    Mat H = Mat::Zero(n_, n_);
    for (const auto& h : hops_) {
        double ph = 0.0;
        for (int i = 0; i < dim_; ++i) ph += k[static_cast<size_t>(i)] * h.offset[static_cast<size_t>(i)];
        cplx e = std::polar(1.0, ph);
        H.block(site_start_[static_cast<size_t>(h.target)], site_start_[static_cast<size_t>(h.source)],
                h.block.rows(), h.block.cols()) += e * h.block;
    }
    return H;
}

std::map<std::vector<int>, Mat> CrystalModel::offset_matrices() const {
    std::map<std::vector<int>, Mat> out;
    for (const auto& h : hops_) {
        auto it = out.find(h.offset);
        if (it == out.end()) it = out.emplace(h.offset, Mat::Zero(n_, n_)).first;
        it->second.block(site_start_[static_cast<size_t>(h.target)], site_start_[static_cast<size_t>(h.source)],
                         h.block.rows(), h.block.cols()) += h.block;
    }
    return out;
}

CrystalModel CrystalModel::from_offset_matrices(int dimension, std::vector<std::vector<double>> bravais,
                                                std::vector<Site> sites,
                                                const std::map<std::vector<int>, Mat>& blocks) {
    std::vector<int> start;
    int n = 0;
    for (const auto& s : sites) {
        start.push_back(n);
        n += s.dim;
    }
    for (const auto& [off, B] : blocks) {
        if (B.rows() != n || B.cols() != n) throw ContractViolation("model: offset block has wrong size");
        auto it = blocks.find(neg(off));
        if (it == blocks.end() || !close_blocks(it->second, B.adjoint(), 1e-10))
            throw ContractViolation("model: offset blocks not Hermitian-closed");
    }
    std::vector<Hopping> hops;
    const int ns = static_cast<int>(sites.size());
    for (const auto& [off, B] : blocks)
        for (int t = 0; t < ns; ++t)
            for (int s = 0; s < ns; ++s) {
                Mat b = B.block(start[static_cast<size_t>(t)], start[static_cast<size_t>(s)],
                                sites[static_cast<size_t>(t)].dim, sites[static_cast<size_t>(s)].dim);
                if (b.cwiseAbs().maxCoeff() == 0.0) continue;
                if (all_zero(off) && s == t) b = 0.5 * (b + b.adjoint());
                hops.push_back({off, s, t, b});
            }
    return CrystalModel(dimension, std::move(bravais), std::move(sites), std::move(hops));
}

CrystalModel CrystalModel::combined(double a, const CrystalModel& other, double b) const {
    if (other.n_ != n_ || other.dim_ != dim_) throw ContractViolation("combined: incompatible models");
    auto m1 = offset_matrices();
    auto m2 = other.offset_matrices();
    std::map<std::vector<int>, Mat> out;
    for (auto& [k, v] : m1) out[k] = a * v;
    for (auto& [k, v] : m2) {
        auto it = out.find(k);
        if (it == out.end()) out[k] = b * v;
        else it->second += b * v;
    }
    return from_offset_matrices(dim_, bravais_, sites_, out);
}

CrystalModel haldane_model(double t, double t2, double phi, double M) {
    const double s3 = std::sqrt(3.0);
    std::vector<std::vector<double>> bravais{{s3 / 2, 1.5}, {-s3 / 2, 1.5}};
    std::vector<Site> sites{{{0.0, 0.0}, 1}, {{1.0 / 3.0, 1.0 / 3.0}, 1}};
    std::vector<Hopping> h;
    // nearest neighbours: H_AB = t (1 + e^{-ik1} + e^{-ik2})
    h.push_back({{0, 0}, 1, 0, scalar(t)});
    h.push_back({{-1, 0}, 1, 0, scalar(t)});
    h.push_back({{0, -1}, 1, 0, scalar(t)});
    // 2 sin x = -i (e^{ix} - e^{-ix}); A carries +d_z, B carries -d_z
    const double g = t2 * std::sin(phi);
    const cplx mi(0, -1);
    for (int s = 0; s < 2; ++s) {
        double sg = (s == 0) ? 1.0 : -1.0;
        h.push_back({{0, 0}, s, s, scalar(sg * M)});
        h.push_back({{1, 0}, s, s, scalar(sg * g * mi)});
        h.push_back({{1, -1}, s, s, scalar(-sg * g * mi)});
        h.push_back({{0, 1}, s, s, scalar(-sg * g * mi)});
    }
    return CrystalModel(2, bravais, sites, h);
}

AntiUnitary spin_half_theta(int n_doublets) {
    Mat isy = Mat::Zero(2, 2);
    isy(0, 1) = 1;
    isy(1, 0) = -1;
    return make_antiunitary(kron(Mat::Identity(n_doublets, n_doublets), isy), -1);
}

KaneMele kane_mele_model(const KaneMeleParams& p) {
    CrystalModel up = haldane_model(p.t, p.t2, p.phi, p.M);
    CrystalModel dn = haldane_model(p.t, p.t2, -p.phi, p.M);
    auto mu = up.offset_matrices();
    auto md = dn.offset_matrices();
    // site-major embedding: index 2*site + spin
    std::map<std::vector<int>, Mat> full;
    auto embed = [&](const std::map<std::vector<int>, Mat>& src, int spin) {
        for (const auto& [off, B] : src) {
            auto it = full.find(off);
            if (it == full.end()) it = full.emplace(off, Mat::Zero(4, 4)).first;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) it->second(2 * a + spin, 2 * b + spin) += B(a, b);
        }
    };
    embed(mu, 0);
    embed(md, 1);

    if (p.rashba != 0.0) {
        const double s3 = std::sqrt(3.0);
        // bond vectors r_B(cell n) - r_A for the three A <- B hops
        struct Bond { std::vector<int> off; double dx, dy; };
        std::vector<Bond> bonds{{{0, 0}, 0.0, 1.0}, {{-1, 0}, -s3 / 2, -0.5}, {{0, -1}, s3 / 2, -0.5}};
        for (const auto& b : bonds) {
            Mat spin = cplx(0, p.rashba) * (b.dy * pauli(1) - b.dx * pauli(2));
            // target A (index 0,1), source B in cell b.off (index 2,3)
            for (auto sgn : {1, -1}) {
                std::vector<int> off = b.off;
                if (sgn < 0) for (auto& v : off) v = -v;
                auto it = full.find(off);
                if (it == full.end()) it = full.emplace(off, Mat::Zero(4, 4)).first;
                if (sgn > 0) it->second.block(0, 2, 2, 2) += spin;
                else it->second.block(2, 0, 2, 2) += spin.adjoint();
            }
        }
    }
    std::vector<Site> sites{{{0.0, 0.0}, 2}, {{1.0 / 3.0, 1.0 / 3.0}, 2}};
    CrystalModel m = CrystalModel::from_offset_matrices(2, up.bravais(), sites, full);
    return {m, spin_half_theta(2)};
}

double check_trs(const BlochField& H, const AntiUnitary& theta, int dimension, int n) {
    double worst = 0.0;
    int total = 1;
    for (int i = 0; i < dimension; ++i) total *= n;
    for (int idx = 0; idx < total; ++idx) {
        KPoint k(static_cast<size_t>(dimension));
        int r = idx;
        for (int i = 0; i < dimension; ++i) {
            k[static_cast<size_t>(i)] = kTwoPi * (r % n) / n + 0.1234 / n;
            r /= n;
        }
        Mat lhs = theta.conjugate(H(k));
        Mat rhs = H(negate(k));
        worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
    }
    return worst;
}

double check_trs(const CrystalModel& m, const AntiUnitary& theta, int n) {
    return check_trs(field_of(m), theta, m.dimension(), n);
}

CrystalModel layered_3d_model(const CrystalModel& base, const Mat& interlayer) {
    if (base.dimension() != 2) throw ContractViolation("layered_3d_model: base must be 2d");
    auto bravais = base.bravais();
    for (auto& v : bravais) v.resize(3, 0.0);
    bravais.push_back({0.0, 0.0, 1.0});
    std::vector<Site> sites = base.sites();
    for (auto& s : sites) s.position.resize(3, 0.0);
    std::vector<Hopping> hops;
    for (const auto& h : base.hoppings()) {
        Hopping g = h;
        g.offset.push_back(0);
        hops.push_back(g);
    }
    const int ns = static_cast<int>(sites.size());
    for (int s = 0; s < ns; ++s) {
        int d = sites[static_cast<size_t>(s)].dim;
        if (interlayer.rows() != d || interlayer.cols() != d)
            throw ContractViolation("layered_3d_model: interlayer block must match site dimension");
        if (interlayer.cwiseAbs().maxCoeff() > 0.0) hops.push_back({{0, 0, 1}, s, s, interlayer});
    }
    return CrystalModel(3, bravais, sites, hops);
}

CrystalModel layered_3d_model(const CrystalModel& base, double interlayer) {
    int d = base.sites().front().dim;
    for (const auto& s : base.sites())
        if (s.dim != d) throw ContractViolation("layered_3d_model: scalar coupling needs uniform site dims");
    return layered_3d_model(base, Mat(interlayer * Mat::Identity(d, d)));
}

WilsonDirac wilson_dirac_model(int dimension, double m) {
    if (dimension != 2 && dimension != 3) throw ContractViolation("wilson_dirac_model: dimension 2 or 3");
    Mat g0 = kron(pauli(3), pauli(0));
    std::vector<std::vector<double>> bravais;
    for (int i = 0; i < dimension; ++i) {
        std::vector<double> a(static_cast<size_t>(dimension), 0.0);
        a[static_cast<size_t>(i)] = 1.0;
        bravais.push_back(a);
    }
    std::vector<Site> sites{{std::vector<double>(static_cast<size_t>(dimension), 0.0), 4}};
    std::vector<Hopping> hops;
    hops.push_back({std::vector<int>(static_cast<size_t>(dimension), 0), 0, 0, m * g0});
    for (int i = 0; i < dimension; ++i) {
        std::vector<int> off(static_cast<size_t>(dimension), 0);
        off[static_cast<size_t>(i)] = 1;
        Mat gi = kron(pauli(1), pauli(i + 1));
        // sin k G = (e^{ik} - e^{-ik}) G / 2i ; -cos k G0 = -(e^{ik} + e^{-ik}) G0 / 2
        hops.push_back({off, 0, 0, Mat(gi / cplx(0, 2) - 0.5 * g0)});
    }
    return {CrystalModel(dimension, bravais, sites, hops), spin_half_theta(2)};
}

CrystalModel random_model(int dimension, int n_sites, int site_dim, int r, std::mt19937_64& rng,
                          double scale) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> bravais;
    for (int i = 0; i < dimension; ++i) {
        std::vector<double> a(static_cast<size_t>(dimension), 0.0);
        a[static_cast<size_t>(i)] = 1.0;
        bravais.push_back(a);
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Site> sites;
    for (int s = 0; s < n_sites; ++s) {
        std::vector<double> pos(static_cast<size_t>(dimension));
        for (auto& x : pos) x = u(rng);
        sites.push_back({pos, site_dim});
    }
    const int n = n_sites * site_dim;
    int count = 1;
    for (int i = 0; i < dimension; ++i) count *= (2 * r + 1);
    std::map<std::vector<int>, Mat> blocks;
    for (int idx = 0; idx < count; ++idx) {
        std::vector<int> off(static_cast<size_t>(dimension));
        int q = idx;
        for (int i = 0; i < dimension; ++i) {
            off[static_cast<size_t>(i)] = q % (2 * r + 1) - r;
            q /= (2 * r + 1);
        }
        if (blocks.count(off)) continue;
        Mat B(n, n);
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) B(a, b) = scale * cplx(g(rng), g(rng));
        std::vector<int> mo = neg(off);
        if (mo == off) {
            blocks[off] = 0.5 * (B + B.adjoint());
        } else {
            blocks[off] = B;
            blocks[mo] = B.adjoint();
        }
    }
    return CrystalModel::from_offset_matrices(dimension, bravais, sites, blocks);
}

CrystalModel symmetrize_trs(const CrystalModel& m, const AntiUnitary& theta) {
    if (theta.U.rows() != m.bloch_dim()) throw ContractViolation("symmetrize_trs: theta size mismatch");
    auto blocks = m.offset_matrices();
    for (auto& [off, B] : blocks) B = 0.5 * (B + theta.conjugate(B));
    return CrystalModel::from_offset_matrices(m.dimension(), m.bravais(), m.sites(), blocks);
}

CrystalModel shifted(const CrystalModel& m, double c) {
    auto blocks = m.offset_matrices();
    std::vector<int> zero(static_cast<size_t>(m.dimension()), 0);
    auto it = blocks.find(zero);
    if (it == blocks.end()) it = blocks.emplace(zero, Mat::Zero(m.bloch_dim(), m.bloch_dim())).first;
    it->second += c * Mat::Identity(m.bloch_dim(), m.bloch_dim());
    return CrystalModel::from_offset_matrices(m.dimension(), m.bravais(), m.sites(), blocks);
}

DriveProtocol DriveProtocol::piecewise(std::vector<Segment> segments) {
    if (segments.empty()) throw ContractViolation("drive: empty schedule");
    DriveProtocol d;
    d.T_ = 0.0;
    for (const auto& s : segments) {
        if (!(s.duration > 0.0)) throw ContractViolation("drive: segment durations must be positive");
        if (s.model.bloch_dim() != segments.front().model.bloch_dim() ||
            s.model.dimension() != segments.front().model.dimension())
            throw ContractViolation("drive: segments have incompatible models");
        d.T_ += s.duration;
    }
    d.segments_ = std::move(segments);
    return d;
}

DriveProtocol DriveProtocol::modulated(double period, std::vector<Component> components) {
    if (!(period > 0.0)) throw ContractViolation("drive: period must be positive");
    if (components.empty()) throw ContractViolation("drive: no components");
    DriveProtocol d;
    d.T_ = period;
    d.components_ = std::move(components);
    return d;
}

int DriveProtocol::dimension() const {
    return segments_.empty() ? components_.front().model.dimension() : segments_.front().model.dimension();
}

int DriveProtocol::bloch_dim() const {
    return segments_.empty() ? components_.front().model.bloch_dim() : segments_.front().model.bloch_dim();
}

Mat DriveProtocol::hamiltonian(double t, const KPoint& k) const {
    double tm = std::fmod(t, T_);
    if (tm < 0) tm += T_;
    if (!segments_.empty()) {
        double acc = 0.0;
        for (const auto& s : segments_) {
            acc += s.duration;
            if (tm < acc) return s.model.bloch(k);
        }
        return segments_.back().model.bloch(k);
    }
    Mat H = Mat::Zero(bloch_dim(), bloch_dim());
    for (const auto& c : components_) H += c.coefficient(tm) * c.model.bloch(k);
    return H;
}

std::vector<double> DriveProtocol::breakpoints() const {
    std::vector<double> out;
    double acc = 0.0;
    if (segments_.empty()) return out;
    out.push_back(0.0);
    for (const auto& s : segments_) {
        acc += s.duration;
        out.push_back(acc);
    }
    return out;
}

std::vector<KPoint> trim_points(int dimension) {
    std::vector<KPoint> out;
    for (int b = 0; b < (1 << dimension); ++b) {
        KPoint k(static_cast<size_t>(dimension));
        for (int i = 0; i < dimension; ++i) k[static_cast<size_t>(i)] = ((b >> i) & 1) ? kPi : 0.0;
        out.push_back(k);
    }
    return out;
}

KPoint negate(const KPoint& k) {
    KPoint out(k.size());
    for (size_t i = 0; i < k.size(); ++i) out[i] = -k[i];
    return out;
}

}  // namespace toposcope

#include "silhlift/sfm.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <set>

namespace silhlift {

ObservationMatrix build_observation_matrix(const AnnotatedCollection& c, const std::vector<int>& subset)
{
    const int K = c.schema.keypoint_count();
    for (int k : subset)
        if (k < 0 || k >= K)
            throw InputError("keypoint subset index " + std::to_string(k) + " out of range");
    std::vector<const Instance*> kept;
    ObservationMatrix W;
    W.columns = subset;
    for (const auto& inst : c.instances) {
        int seen = 0;
        for (int k : subset)
            if (const auto* kp = inst.find_keypoint(k); kp && kp->visible)
                ++seen;
        if (seen < 3)
            W.excluded_ids.push_back(inst.id);
        else
            kept.push_back(&inst);
    }
    const int N = static_cast<int>(kept.size());
    const int C = static_cast<int>(subset.size());
    W.entries = Eigen::MatrixXd::Zero(2 * N, C);
    W.observed = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(2 * N, C, false);
    for (int n = 0; n < N; ++n) {
        W.instance_ids.push_back(kept[n]->id);
        for (int j = 0; j < C; ++j) {
            const auto* kp = kept[n]->find_keypoint(subset[j]);
            if (kp && kp->visible) {
                W.entries(2 * n, j) = kp->x;
                W.entries(2 * n + 1, j) = kp->y;
                W.observed(2 * n, j) = true;
                W.observed(2 * n + 1, j) = true;
            }
        }
    }
    return W;
}

double MeanShape::mean_radius() const
{
    if (S.cols() == 0)
        return 0.0;
    return S.colwise().norm().mean();
}

double MeanShape::max_radius() const
{
    if (S.cols() == 0)
        return 0.0;
    return S.colwise().norm().maxCoeff();
}

double reprojection_error(const ObservationMatrix& W, const Mat3X& S, const std::vector<ScaledOrthoCamera>& cameras)
{
    if (static_cast<int>(cameras.size()) != W.instances() || S.cols() != W.keypoints())
        throw InputError("reprojection_error: inconsistent dimensions");
    double err = 0;
    for (int n = 0; n < W.instances(); ++n)
        for (int k = 0; k < W.keypoints(); ++k)
            if (W.is_observed(n, k))
                err += (W.point(n, k) - cameras[n].project(S.col(k))).squaredNorm();
    return err;
}

namespace {

struct InstanceFit {
    std::vector<int> cols;
};

// Sum over observed columns of |w - M s - T|^2 with T at its optimum for M.
double centered_cost(const Mat2x3& M, const Mat2X& Wc, const Mat3X& Sc)
{
    return (Wc - M * Sc).squaredNorm();
}

// Camera update for one instance; returns (M, T) no worse than `prev` when given.
std::pair<Mat2x3, Vec2> update_camera(const ObservationMatrix& W, int n, const std::vector<int>& cols,
                                      const Mat3X& S, const Mat2x3* prev, int polish_steps)
{
    const int m = static_cast<int>(cols.size());
    Mat2X Wo(2, m);
    Mat3X So(3, m);
    for (int j = 0; j < m; ++j) {
        Wo.col(j) = W.point(n, cols[j]);
        So.col(j) = S.col(cols[j]);
    }
    const Vec2 wbar = Wo.rowwise().mean();
    const Vec3 sbar = So.rowwise().mean();
    const Mat2X Wc = Wo.colwise() - wbar;
    const Mat3X Sc = So.colwise() - sbar;

    // Unconstrained least squares on centered data, then projection.
    const Mat3 A = Sc * Sc.transpose();
    const Mat2x3 B = Wc * Sc.transpose();
    const Mat2x3 Mls = A.completeOrthogonalDecomposition().solve(B.transpose()).transpose();
    Mat2x3 M;
    try {
        M = project_to_scaled_rotation(Mls);
    } catch (const NumericError&) {
        if (!prev)
            throw;
        M = *prev;
    }
    double cost = centered_cost(M, Wc, Sc);
    if (prev) {
        const double prev_cost = centered_cost(*prev, Wc, Sc);
        if (prev_cost < cost) {
            M = *prev;
            cost = prev_cost;
        }
    }

    // Majorize-minimize: f(M) = |Wc - M Sc|^2 has a 2*lmax(A)-Lipschitz
    // gradient, so a projected step of 1/(2 lmax) never increases f.
    const double lmax = Eigen::SelfAdjointEigenSolver<Mat3>(A, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    if (lmax > 0) {
        for (int it = 0; it < polish_steps; ++it) {
            const Mat2x3 grad_half = M * A - B;
            Mat2x3 cand;
            try {
                cand = project_to_scaled_rotation(M - grad_half / lmax);
            } catch (const NumericError&) {
                break;
            }
            const double c = centered_cost(cand, Wc, Sc);
            if (!(c < cost))
                break;
            const bool tiny = cost - c <= 1e-15 * cost;
            M = cand;
            cost = c;
            if (tiny)
                break;
        }
    }
    return {M, wbar - M * sbar};
}

// Least-squares shape column given cameras; pseudo-inverse keeps the
// unobservable component at its previous value.
Vec3 update_point(const ObservationMatrix& W, int k, const std::vector<ScaledOrthoCamera>& cams, const Vec3& prev)
{
    Mat3 A = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    for (int n = 0; n < W.instances(); ++n) {
        if (!W.is_observed(n, k))
            continue;
        const auto& c = cams[n];
        A += c.M.transpose() * c.M;
        b += c.M.transpose() * (W.point(n, k) - c.T);
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(A);
    const Vec3 ev = es.eigenvalues();
    const double cutoff = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    const Vec3 r = es.eigenvectors().transpose() * (b - A * prev);
    Vec3 step = Vec3::Zero();
    for (int i = 0; i < 3; ++i)
        if (ev(i) > cutoff)
            step(i) = r(i) / ev(i);
    return prev + es.eigenvectors() * step;
}

void fix_gauge(Mat3X& S, std::vector<ScaledOrthoCamera>& cams)
{
    const Vec3 c = S.rowwise().mean();
    S.colwise() -= c;
    for (auto& cam : cams)
        cam.T += cam.M * c;
    const double r = S.colwise().norm().mean();
    if (!(r > 0))
        return;
    S /= r;
    for (auto& cam : cams) {
        cam.M *= r;
        cam.alpha *= r;
    }
}

void check_finite(const Mat3X& S, const std::vector<ScaledOrthoCamera>& cams, int iter)
{
    bool ok = S.allFinite();
    for (const auto& c : cams)
        ok = ok && c.M.allFinite() && c.T.allFinite();
    if (!ok)
        throw NumericError("factorization diverged (non-finite iterate) at iteration " + std::to_string(iter));
}

} // namespace

FactorizationResult rigid_factorization(const ObservationMatrix& W, const FactorizationOptions& opts)
{
    const int N = W.instances();
    const int K = W.keypoints();
    if (N == 0)
        throw InputError("rigid_factorization: no instance with at least 3 observed keypoints");
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k)
            if (W.observed(2 * n, k) != W.observed(2 * n + 1, k))
                throw InputError("observation matrix rows are not paired at instance " + std::to_string(n));
    for (int k = 0; k < K; ++k) {
        bool any = false;
        for (int n = 0; n < N && !any; ++n)
            any = W.is_observed(n, k);
        if (!any)
            throw InputError("keypoint never observed (column " + std::to_string(k) + ")");
    }

    std::vector<std::vector<int>> cols(N);
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k)
            if (W.is_observed(n, k))
                cols[n].push_back(k);

    // Rank-3 truncation of the centered, mean-filled observation matrix.
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2 * N, K);
    std::vector<ScaledOrthoCamera> cams(N);
    for (int n = 0; n < N; ++n) {
        Vec2 centroid = Vec2::Zero();
        for (int k : cols[n])
            centroid += W.point(n, k);
        centroid /= static_cast<double>(cols[n].size());
        for (int k : cols[n])
            C.block<2, 1>(2 * n, k) = W.point(n, k) - centroid;
        double spread = 0;
        for (int k : cols[n])
            spread += (W.point(n, k) - centroid).norm();
        spread /= static_cast<double>(cols[n].size());
        const double a0 = spread > 0 ? spread : 1.0;
        cams[n] = ScaledOrthoCamera::from_rotation(Mat3::Identity(), a0, centroid);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeThinV);
    Mat3X S = Mat3X::Zero(3, K);
    const int r = std::min<int>(3, static_cast<int>(svd.singularValues().size()));
    for (int i = 0; i < r; ++i)
        S.row(i) = std::sqrt(svd.singularValues()(i)) * svd.matrixV().col(i).transpose();
    fix_gauge(S, cams);

    FactorizationResult res;
    double prev_obj = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= opts.max_iters; ++it) {
        for (int n = 0; n < N; ++n) {
            const Mat2x3 prev = cams[n].M;
            auto [M, T] = update_camera(W, n, cols[n], S, it == 1 ? nullptr : &prev, opts.polish_steps);
            cams[n].M = M;
            cams[n].T = T;
            cams[n].alpha = std::sqrt(0.5 * M.squaredNorm());
        }
        check_finite(S, cams, it);
        for (int k = 0; k < K; ++k)
            S.col(k) = update_point(W, k, cams, S.col(k));
        fix_gauge(S, cams);
        check_finite(S, cams, it);

        const double obj = reprojection_error(W, S, cams);
        if (!std::isfinite(obj))
            throw NumericError("factorization diverged (non-finite objective) at iteration " + std::to_string(it));
        res.objective_history.push_back(obj);
        res.iterations = it;
        if (std::isfinite(prev_obj) && (prev_obj - obj) <= opts.tol * prev_obj) {
            res.converged = true;
            break;
        }
        if (obj == 0.0) {
            res.converged = true;
            break;
        }
        prev_obj = obj;
    }

    for (int n = 0; n < N; ++n)
        cams[n] = ScaledOrthoCamera::from_motion(cams[n].M, cams[n].T);
    res.cameras = std::move(cams);
    res.shape.S = std::move(S);
    res.shape.keypoint_indices = W.columns;
    return res;
}

ScaledOrthoCamera transform_camera(const ScaledOrthoCamera& cam, const Mat3& Q, double scale, const Vec3& t)
{
    const Mat2x3 M = cam.M * Q.transpose() / scale;
    return ScaledOrthoCamera::from_motion(M, cam.T - M * t);
}

GaugeAlignment align_gauge(const Mat3X& est_shape, const std::vector<ScaledOrthoCamera>& est_cameras,
                           const Mat3X& ref_shape, const std::vector<ScaledOrthoCamera>& ref_cameras)
{
    if (est_shape.cols() != ref_shape.cols())
        throw InputError("align_gauge: shapes differ in keypoint count");
    if (!ref_cameras.empty() && ref_cameras.size() != est_cameras.size())
        throw InputError("align_gauge: camera lists differ in length");
    const Vec3 me = est_shape.rowwise().mean();
    const Vec3 mr = ref_shape.rowwise().mean();
    const Mat3X A = est_shape.colwise() - me;
    const Mat3X B = ref_shape.colwise() - mr;

    Eigen::JacobiSVD<Mat3X> sa(A);
    Eigen::JacobiSVD<Mat3X> sb(B);
    auto rank_deficient = [](const Eigen::JacobiSVD<Mat3X>& s) {
        const auto& v = s.singularValues();
        return v.size() < 3 || !(v(2) > 1e-9 * v(0));
    };
    if (rank_deficient(sa) || rank_deficient(sb))
        throw NumericError("gauge underdetermined");

    Eigen::JacobiSVD<Mat3> svd(B * A.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    GaugeAlignment g;
    g.Q = svd.matrixU() * svd.matrixV().transpose();
    g.reflection = g.Q.determinant() < 0;
    g.scale = svd.singularValues().sum() / A.squaredNorm();
    g.translation = mr - g.scale * g.Q * me;
    g.aligned_shape = (g.scale * g.Q * est_shape).colwise() + g.translation;
    g.residual = (ref_shape - g.aligned_shape).norm();
    for (const auto& c : est_cameras)
        g.aligned_cameras.push_back(transform_camera(c, g.Q, g.scale, g.translation));
    for (std::size_t i = 0; i < ref_cameras.size(); ++i)
        g.angle_errors_deg.push_back(geodesic_angle_deg(g.aligned_cameras[i].R, ref_cameras[i].R));
    return g;
}

} // namespace silhlift

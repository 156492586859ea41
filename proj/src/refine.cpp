#include "silhlift/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace silhlift {

void squared_distance_1d(const std::vector<double>& f, std::vector<double>& d)
{
    const int n = static_cast<int>(f.size());
    d.assign(n, std::numeric_limits<double>::infinity());
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (!std::isfinite(f[q]))
            continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -std::numeric_limits<double>::infinity();
            z[1] = std::numeric_limits<double>::infinity();
            continue;
        }
        auto intersect = [&](int p) { return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p)); };
        double s = intersect(v[k]);
        while (s <= z[k]) // z[0] = -inf terminates the loop
            s = intersect(v[--k]);
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    if (k < 0)
        return;
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q)
            ++j;
        const double dq = q - v[j];
        d[q] = dq * dq + f[v[j]];
    }
}

DistanceField::DistanceField(const Mask& mask) : width_(mask.width), height_(mask.height)
{
    if (mask.empty())
        throw InputError("distance transform of a mask without foreground");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> grid(static_cast<std::size_t>(width_) * height_);
    for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = mask.pixels[i] ? 0.0 : inf;

    std::vector<double> f, d;
    f.resize(height_);
    for (int x = 0; x < width_; ++x) {
        for (int y = 0; y < height_; ++y)
            f[y] = grid[static_cast<std::size_t>(y) * width_ + x];
        squared_distance_1d(f, d);
        for (int y = 0; y < height_; ++y)
            grid[static_cast<std::size_t>(y) * width_ + x] = d[y];
    }
    f.resize(width_);
    for (int y = 0; y < height_; ++y) {
        std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(y) * width_, width_, f.begin());
        squared_distance_1d(f, d);
        std::copy(d.begin(), d.end(), grid.begin() + static_cast<std::ptrdiff_t>(y) * width_);
    }
    values_.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        values_[i] = std::sqrt(grid[i]);
}

DistanceField distance_transform(const Mask& mask) { return DistanceField(mask); }

double DistanceField::sample(double u, double v) const
{
    Vec2 g;
    return sample(u, v, g);
}

double DistanceField::sample(double u, double v, Vec2& grad) const
{
    const double cu = std::clamp(u, 0.0, double(width_ - 1));
    const double cv = std::clamp(v, 0.0, double(height_ - 1));
    const int x0 = std::min(static_cast<int>(std::floor(cu)), std::max(0, width_ - 2));
    const int y0 = std::min(static_cast<int>(std::floor(cv)), std::max(0, height_ - 2));
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = cu - x0;
    const double fy = cv - y0;
    const double f00 = at(x0, y0), f10 = at(x1, y0), f01 = at(x0, y1), f11 = at(x1, y1);
    const double val = (1 - fy) * ((1 - fx) * f00 + fx * f10) + fy * ((1 - fx) * f01 + fx * f11);
    grad.x() = (1 - fy) * (f10 - f00) + fy * (f11 - f01);
    grad.y() = (1 - fx) * (f01 - f00) + fx * (f11 - f10);
    if (x1 == x0)
        grad.x() = 0;
    if (y1 == y0)
        grad.y() = 0;

    const Vec2 excess(u - cu, v - cv);
    const double e = excess.norm();
    if (e > 0) {
        if (excess.x() != 0)
            grad.x() = excess.x() / e;
        if (excess.y() != 0)
            grad.y() = excess.y() / e;
    }
    return val + e;
}

int InstanceObservation::visible_count() const
{
    return static_cast<int>(std::count(visible.begin(), visible.end(), true));
}

InstanceObservation observation_for(const Instance& inst, const MeanShape& shape)
{
    InstanceObservation obs;
    const int K = shape.size();
    obs.points = Mat2X::Zero(2, K);
    obs.visible.assign(K, false);
    for (int j = 0; j < K; ++j) {
        const int idx = j < static_cast<int>(shape.keypoint_indices.size()) ? shape.keypoint_indices[j] : j;
        if (const auto* kp = inst.find_keypoint(idx); kp && kp->visible) {
            obs.points.col(j) = Vec2(kp->x, kp->y);
            obs.visible[j] = true;
        }
    }
    return obs;
}

EnergyTerms refinement_energy_terms(const Mat2x3& M, const Vec2& T, const MeanShape& S, const InstanceObservation& obs,
                                    const DistanceField& field, double lambda)
{
    EnergyTerms e;
    for (int k = 0; k < S.size(); ++k) {
        const Vec2 u = M * S.S.col(k) + T;
        if (obs.visible[k])
            e.reprojection += (obs.points.col(k) - u).squaredNorm();
        if (lambda != 0.0)
            e.penalty += field.sample(u.x(), u.y());
    }
    e.penalty *= lambda;
    return e;
}

double refinement_energy(const ScaledOrthoCamera& cam, const MeanShape& S, const InstanceObservation& obs,
                         const DistanceField& field, double lambda)
{
    return refinement_energy_terms(cam.M, cam.T, S, obs, field, lambda).total();
}

double refinement_energy_gradient(const Mat2x3& M, const Vec2& T, const MeanShape& S, const InstanceObservation& obs,
                                  const DistanceField& field, double lambda, Mat2x3& gM, Vec2& gT)
{
    gM.setZero();
    gT.setZero();
    double energy = 0;
    for (int k = 0; k < S.size(); ++k) {
        const Vec3 s = S.S.col(k);
        const Vec2 u = M * s + T;
        Vec2 g = Vec2::Zero();
        if (obs.visible[k]) {
            const Vec2 r = obs.points.col(k) - u;
            energy += r.squaredNorm();
            g -= 2.0 * r;
        }
        if (lambda != 0.0) {
            Vec2 dg;
            energy += lambda * field.sample(u.x(), u.y(), dg);
            g += lambda * dg;
        }
        gM += g * s.transpose();
        gT += g;
    }
    return energy;
}

RefineResult refine_camera(const ScaledOrthoCamera& cam0, const MeanShape& S, const InstanceObservation& obs,
                           const Mask& mask, const RefineOptions& opts)
{
    return refine_camera(cam0, S, obs, mask, DistanceField(mask), opts);
}

RefineResult refine_camera(const ScaledOrthoCamera& cam0, const MeanShape& S, const InstanceObservation& obs,
                           const Mask& mask, const DistanceField& field, const RefineOptions& opts)
{
    if (opts.lambda < 0)
        throw InputError("refine_camera: lambda must be non-negative");
    if (static_cast<int>(obs.visible.size()) != S.size())
        throw InputError("refine_camera: observation does not match the mean shape");

    // Pixels moved per unit change of M.
    const double shape_scale = std::max(S.S.norm() / std::sqrt(std::max(1, S.size())), 1e-12);
    const double step0 = opts.step0 > 0 ? opts.step0 : 1e-2 * mask.bounding_box().diagonal();

    Mat2x3 M = project_to_scaled_rotation(cam0.M);
    Vec2 T = cam0.T;
    RefineResult res;
    Mat2x3 gM;
    Vec2 gT;
    double E = refinement_energy_gradient(M, T, S, obs, field, opts.lambda, gM, gT);
    res.initial_energy = refinement_energy(cam0, S, obs, field, opts.lambda);
    if (res.initial_energy < E) {
        // projection of a slightly off-constraint cam0 made things worse
        M = cam0.M;
        E = res.initial_energy;
        refinement_energy_gradient(M, T, S, obs, field, opts.lambda, gM, gT);
    }

    double eta = step0;
    for (int it = 0; it < opts.max_iters; ++it) {
        res.iterations = it + 1;
        if (!gM.allFinite() || !gT.allFinite()) {
            std::ostringstream os;
            os << "non-finite gradient at iteration " << it << "; M=[" << M.format(Eigen::IOFormat(17, 0, ",", ";"))
               << "] T=[" << T.transpose() << "]";
            throw NumericError(os.str());
        }
        const double gnorm = std::sqrt((gM / shape_scale).squaredNorm() + gT.squaredNorm());
        if (gnorm == 0.0)
            break;
        bool accepted = false;
        double E_new = E;
        Mat2x3 M_new;
        Vec2 T_new;
        for (int h = 0; h <= opts.max_halvings; ++h) {
            M_new = M - eta * gM / (shape_scale * shape_scale * gnorm);
            T_new = T - eta * gT / gnorm;
            try {
                M_new = project_to_scaled_rotation(M_new);
            } catch (const NumericError&) {
                eta *= opts.backtrack;
                continue;
            }
            E_new = refinement_energy_terms(M_new, T_new, S, obs, field, opts.lambda).total();
            if (E_new < E) {
                accepted = true;
                break;
            }
            eta *= opts.backtrack;
        }
        if (!accepted)
            break;
        const double decrease = E - E_new;
        M = M_new;
        T = T_new;
        ++res.accepted_steps;
        E = refinement_energy_gradient(M, T, S, obs, field, opts.lambda, gM, gT);
        eta *= 2.0;
        if (decrease <= opts.tol * std::max(E_new, 1e-300))
            break;
    }
    if (res.accepted_steps == 0) {
        res.camera = cam0;
        res.energy = res.initial_energy;
        return res;
    }
    res.camera = ScaledOrthoCamera::from_motion(M, T);
    res.energy = E;
    return res;
}

RefineResult estimate_camera_for_new_image(const MeanShape& S, const InstanceObservation& obs, const Mask& mask,
                                           const RefineOptions& opts)
{
    if (obs.visible_count() < 1)
        throw InputError("underdetermined: no visible keypoint");
    const double r = std::max(S.max_radius(), 1e-12);
    const double a0 = 0.5 * mask.bounding_box().diagonal() / r;
    const auto cam0 = ScaledOrthoCamera::from_rotation(Mat3::Identity(), a0, mask.centroid());
    return refine_camera(cam0, S, obs, mask, opts);
}

} // namespace silhlift

#include "silhlift/camera.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace silhlift {

ScaledOrthoCamera ScaledOrthoCamera::from_rotation(const Mat3& R, double alpha, const Vec2& T)
{
    ScaledOrthoCamera c;
    c.R = R;
    c.alpha = alpha;
    c.T = T;
    c.M = alpha * R.topRows<2>();
    return c;
}

ScaledOrthoCamera ScaledOrthoCamera::from_motion(const Mat2x3& M, const Vec2& T)
{
    const auto d = decompose_motion(M);
    ScaledOrthoCamera c;
    c.M = M;
    c.T = T;
    c.R = d.R;
    c.alpha = d.alpha;
    return c;
}

ScaledOrthoCamera ScaledOrthoCamera::mirrored(int width) const
{
    ScaledOrthoCamera c = *this;
    c.M.row(0) = -M.row(0);
    c.R.row(0) = -R.row(0);
    c.R.row(2) = -R.row(2);
    c.T.x() = (width - 1) - T.x();
    return c;
}

Mat2x3 project_to_scaled_rotation(const Mat2x3& raw)
{
    if (!raw.allFinite())
        throw NumericError("non-finite motion block");
    Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>> svd(raw, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector2d s = svd.singularValues();
    if (s(0) <= 0.0)
        throw NumericError("degenerate motion block");
    const double a = 0.5 * (s(0) + s(1));
    // U * V^T is the orthonormal-row polar factor; defined even when s(1) == 0.
    return a * svd.matrixU() * svd.matrixV().leftCols<2>().transpose();
}

double scaled_rotation_violation(const Mat2x3& M)
{
    const double a2 = 0.5 * M.squaredNorm();
    if (a2 <= 0.0)
        return std::numeric_limits<double>::infinity();
    const Eigen::Matrix2d g = M * M.transpose();
    return (g - a2 * Eigen::Matrix2d::Identity()).norm() / a2;
}

MotionDecomposition decompose_motion(const Mat2x3& M, double tol)
{
    const double viol = scaled_rotation_violation(M);
    if (!(viol <= tol))
        throw NumericError("motion block violates the scaled-rotation constraint (relative error " +
                           std::to_string(viol) + ")");
    MotionDecomposition d;
    d.alpha = std::sqrt(0.5 * M.squaredNorm());
    Vec3 r1 = M.row(0).transpose() / d.alpha;
    Vec3 r2 = M.row(1).transpose() / d.alpha;
    d.R.row(0) = r1.transpose();
    d.R.row(1) = r2.transpose();
    d.R.row(2) = r1.cross(r2).transpose();
    return d;
}

namespace {
double wrap180(double deg)
{
    double w = std::fmod(deg, 360.0);
    if (w <= -180.0)
        w += 360.0;
    else if (w > 180.0)
        w -= 360.0;
    return w;
}
} // namespace

ViewpointAngles camera_to_viewpoint_angles(const Mat3& R_world, const Mat3& frame)
{
    const Mat3 R = R_world * frame;
    ViewpointAngles a;
    const double s_el = std::clamp(R(2, 1), -1.0, 1.0);
    a.elevation = rad2deg(std::asin(s_el));
    const double c_el = std::sqrt(std::max(0.0, 1.0 - s_el * s_el));
    if (c_el < 1e-9) {
        a.gimbal_lock = true;
        a.roll = 0.0;
        a.azimuth = wrap180(rad2deg(std::atan2(R(0, 2), R(0, 0))));
        return a;
    }
    a.azimuth = wrap180(rad2deg(std::atan2(-R(2, 0), R(2, 2))));
    a.roll = wrap180(rad2deg(std::atan2(-R(0, 1), R(1, 1))));
    return a;
}

Mat3 viewpoint_to_rotation(double azimuth_deg, double elevation_deg, double roll_deg)
{
    const Mat3 ry = rotation_about(Vec3::UnitY(), deg2rad(azimuth_deg));
    const Mat3 rx = rotation_about(Vec3::UnitX(), deg2rad(elevation_deg));
    const Mat3 rz = rotation_about(Vec3::UnitZ(), deg2rad(roll_deg));
    return rz * rx * ry;
}

} // namespace silhlift

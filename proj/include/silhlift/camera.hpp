#pragma once

#include "silhlift/common.hpp"

#include <string>

namespace silhlift {

/// Scaled orthographic camera: u = M X + T with M = alpha * (first two rows of R).
///
/// The camera looks along +R.row(2): of two points on the same viewing ray,
/// the one with smaller depth() is nearer to the camera.
struct ScaledOrthoCamera {
    Mat2x3 M = Mat2x3::Zero();
    Vec2 T = Vec2::Zero();
    Mat3 R = Mat3::Identity();
    double alpha = 1.0;

    static ScaledOrthoCamera from_rotation(const Mat3& R, double alpha, const Vec2& T);
    // M must already satisfy the scaled-rotation constraint.
    static ScaledOrthoCamera from_motion(const Mat2x3& M, const Vec2& T);

    Vec2 project(const Vec3& X) const { return M * X + T; }
    Vec3 view_axis() const { return R.row(2).transpose(); }
    double depth(const Vec3& X) const { return R.row(2).dot(X); }

    // Camera for the left-right flipped image of width `width`: first row of R
    // negated and T_x reflected.
    ScaledOrthoCamera mirrored(int width) const;
};

/// Nearest (Frobenius) matrix with M M^T = a^2 I, a > 0: both singular values
/// replaced by their mean. Throws NumericError("degenerate motion block") for
/// rank-0 input.
Mat2x3 project_to_scaled_rotation(const Mat2x3& raw);

struct MotionDecomposition {
    Mat3 R;
    double alpha;
};

/// alpha = sqrt(|M|_F^2 / 2), rows 1-2 of R = M / alpha, row 3 = cross product.
/// Throws NumericError when M violates the constraint by more than `tol`
/// (relative).
MotionDecomposition decompose_motion(const Mat2x3& M, double tol = 1e-6);

/// Relative violation of M M^T = alpha^2 I.
double scaled_rotation_violation(const Mat2x3& M);

struct ViewpointAngles {
    double azimuth = 0;   // degrees, (-180, 180]
    double elevation = 0; // degrees, [-90, 90]
    double roll = 0;      // degrees, (-180, 180]
    bool gimbal_lock = false;
};

/// R = Rz(roll) * Rx(elevation) * Ry(azimuth), expressed in `frame`: the
/// columns of `frame` are the world directions used as the x, y (up axis) and
/// z axes. Positive elevation looks down on the object (world up is -y).
ViewpointAngles camera_to_viewpoint_angles(const Mat3& R, const Mat3& frame = Mat3::Identity());
Mat3 viewpoint_to_rotation(double azimuth_deg, double elevation_deg, double roll_deg);

} // namespace silhlift

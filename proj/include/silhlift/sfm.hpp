#pragma once

#include "silhlift/camera.hpp"
#include "silhlift/dataset.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace silhlift {

/// Stacked keypoint observations: rows 2n and 2n+1 hold x and y of instance n,
/// columns are the selected keypoints.
struct ObservationMatrix {
    Eigen::MatrixXd entries;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> observed;
    std::vector<std::string> instance_ids;
    std::vector<int> columns;              // schema keypoint index of each column
    std::vector<std::string> excluded_ids; // fewer than 3 observed keypoints

    int instances() const { return static_cast<int>(entries.rows() / 2); }
    int keypoints() const { return static_cast<int>(entries.cols()); }
    bool is_observed(int n, int k) const { return observed(2 * n, k); }
    Vec2 point(int n, int k) const { return {entries(2 * n, k), entries(2 * n + 1, k)}; }
};

ObservationMatrix build_observation_matrix(const AnnotatedCollection& c, const std::vector<int>& subset);

/// 3xK rigid keypoint shape shared by a class.
struct MeanShape {
    Mat3X S;
    std::vector<std::string> keypoint_names;
    std::vector<int> keypoint_indices; // schema index of each column

    int size() const { return static_cast<int>(S.cols()); }
    double mean_radius() const;
    double max_radius() const;
};

struct FactorizationOptions {
    int max_iters = 500;
    double tol = 1e-9;
    std::uint64_t seed = 0;
    // Projected-gradient steps polishing each camera after the least-squares
    // and projection update.
    int polish_steps = 10;
};

struct FactorizationResult {
    MeanShape shape;
    std::vector<ScaledOrthoCamera> cameras; // one per row pair of W
    std::vector<double> objective_history;  // after each outer iteration
    int iterations = 0;
    bool converged = false;
};

/// Alternating least squares with missing data under the scaled-rotation
/// constraint. Only observed entries enter the objective. Runs single-threaded
/// and is deterministic; the initialization does not consume randomness.
FactorizationResult rigid_factorization(const ObservationMatrix& W, const FactorizationOptions& opts = {});

double reprojection_error(const ObservationMatrix& W, const Mat3X& S, const std::vector<ScaledOrthoCamera>& cameras);

struct GaugeAlignment {
    Mat3 Q = Mat3::Identity(); // orthogonal, det may be -1
    double scale = 1.0;
    Vec3 translation = Vec3::Zero();
    bool reflection = false;
    double residual = 0.0; // |S_ref - (s Q S_est + t)|_F
    Mat3X aligned_shape;
    std::vector<ScaledOrthoCamera> aligned_cameras;
    std::vector<double> angle_errors_deg; // geodesic, when reference cameras are given
};

/// Similarity (reflection allowed) taking the estimated shape onto the
/// reference; its inverse is applied to the estimated cameras. Throws
/// NumericError("gauge underdetermined") for shapes of rank < 3.
GaugeAlignment align_gauge(const Mat3X& est_shape, const std::vector<ScaledOrthoCamera>& est_cameras,
                           const Mat3X& ref_shape, const std::vector<ScaledOrthoCamera>& ref_cameras = {});

// Applies x_ref = s Q x + t to a camera defined on x.
ScaledOrthoCamera transform_camera(const ScaledOrthoCamera& cam, const Mat3& Q, double scale, const Vec3& t);

} // namespace silhlift

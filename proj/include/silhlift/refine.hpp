#pragma once

#include "silhlift/camera.hpp"
#include "silhlift/dataset.hpp"
#include "silhlift/sfm.hpp"

#include <vector>

namespace silhlift {

/// Exact Euclidean distance (in pixels) from every pixel center to the nearest
/// foreground pixel center. Continuous queries interpolate bilinearly inside
/// the raster; outside it the value at the nearest border point is extended
/// by the Euclidean excess distance.
class DistanceField {
public:
    DistanceField() = default;
    explicit DistanceField(const Mask& mask); // throws InputError for empty foreground

    int width() const { return width_; }
    int height() const { return height_; }
    double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    const std::vector<double>& values() const { return values_; }

    double sample(double u, double v) const;
    // Value and spatial gradient (d/du, d/dv).
    double sample(double u, double v, Vec2& grad) const;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> values_;
};

DistanceField distance_transform(const Mask& mask);

/// Squared distance transform along one dimension (lower envelope of
/// parabolas); `f` holds 0 at sites and +inf elsewhere.
void squared_distance_1d(const std::vector<double>& f, std::vector<double>& d);

/// Keypoint observations of one instance aligned with the mean-shape columns.
struct InstanceObservation {
    Mat2X points;
    std::vector<bool> visible;

    int visible_count() const;
};

InstanceObservation observation_for(const Instance& inst, const MeanShape& shape);

struct EnergyTerms {
    double reprojection = 0;
    double penalty = 0; // already multiplied by lambda
    double total() const { return reprojection + penalty; }
};

EnergyTerms refinement_energy_terms(const Mat2x3& M, const Vec2& T, const MeanShape& S, const InstanceObservation& obs,
                                    const DistanceField& field, double lambda);
double refinement_energy(const ScaledOrthoCamera& cam, const MeanShape& S, const InstanceObservation& obs,
                         const DistanceField& field, double lambda);

/// Energy gradient with respect to the unconstrained (M, T).
double refinement_energy_gradient(const Mat2x3& M, const Vec2& T, const MeanShape& S, const InstanceObservation& obs,
                                  const DistanceField& field, double lambda, Mat2x3& gM, Vec2& gT);

struct RefineOptions {
    double lambda = 1.0;
    double step0 = 0.0; // pixels; 0 selects 1e-2 * foreground bounding-box diagonal
    int max_iters = 300;
    double tol = 1e-8;
    double backtrack = 0.5;
    int max_halvings = 30;
};

struct RefineResult {
    ScaledOrthoCamera camera;
    double initial_energy = 0;
    double energy = 0;
    int accepted_steps = 0;
    int iterations = 0;
};

/// Projected gradient descent on (M, T) with backtracking; every accepted step
/// strictly lowers the energy and M is re-projected onto scaled rotations.
RefineResult refine_camera(const ScaledOrthoCamera& cam0, const MeanShape& S, const InstanceObservation& obs,
                           const Mask& mask, const RefineOptions& opts = {});
RefineResult refine_camera(const ScaledOrthoCamera& cam0, const MeanShape& S, const InstanceObservation& obs,
                           const Mask& mask, const DistanceField& field, const RefineOptions& opts = {});

/// Camera for an image outside the factorization: frontal initialization at
/// the mask centroid, then refine_camera. Throws InputError("underdetermined")
/// without visible keypoints.
RefineResult estimate_camera_for_new_image(const MeanShape& S, const InstanceObservation& obs, const Mask& mask,
                                           const RefineOptions& opts = {});

} // namespace silhlift

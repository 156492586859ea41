#pragma once

#include "silhlift/carve.hpp"

#include <vector>

namespace silhlift {

/// Image plane for one signed principal direction: `view` points from the
/// camera into the scene, `right` and `down` span the image (u and v).
struct ProjectionBasis {
    Vec3 view = Vec3::UnitZ();
    Vec3 right = Vec3::UnitX();
    Vec3 down = Vec3::UnitY();
};

ProjectionBasis make_basis(const Vec3& view, const Vec3& right_hint);

struct AverageMask {
    int axis = 0;
    int sign = 1;
    int resolution = 128;
    std::vector<double> values; // row-major, in [0, 1]
    std::size_t members = 0;
    ProjectionBasis basis;

    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * resolution + x]; }
};

/// Mask translated to its centroid and scaled so its bounding-box diagonal is
/// 0.8 * A, resampled (nearest pixel) on an A x A raster.
std::vector<double> normalize_mask(const Mask& mask, int resolution = 128);

/// Aligned mean of the member masks. The basis uses the signed axis as the
/// view direction and the members' mean image-right vector.
AverageMask average_mask(const DirectionCluster& cluster, const AnnotatedCollection& collection,
                         const std::vector<ScaledOrthoCamera>& cameras, const PrincipalDirections& dirs,
                         int resolution = 128);

/// One average mask per principal axis that has members, using the sign with
/// more members (ties go to the positive sign).
std::vector<AverageMask> class_average_masks(const std::array<DirectionCluster, 6>& clusters,
                                             const AnnotatedCollection& collection,
                                             const std::vector<ScaledOrthoCamera>& cameras,
                                             const PrincipalDirections& dirs, int resolution = 128);

/// Silhouette of the occupied voxel cubes seen along basis.view, rasterized
/// with square pixels of side `pitch` whose centers sit at (origin + i * pitch)
/// in (right, down) coordinates. A pixel is set when the line through its
/// center meets a closed occupied cube.
struct ProjectedRaster {
    Mask mask;
    Vec2 origin = Vec2::Zero();
    double pitch = 1.0;
};
ProjectedRaster project_labeling_raw(const VoxelLabeling& L, const ProjectionBasis& basis, double pitch);

/// Binary projection normalized to the canonical frame exactly like the
/// member masks.
std::vector<double> project_labeling(const VoxelLabeling& L, const ProjectionBasis& basis, int resolution = 128);

/// Mean absolute pixel difference to each average mask, averaged over the
/// available directions. Lower is better.
double score_proposal(const VoxelLabeling& L, const std::vector<AverageMask>& avg_masks);

struct Ranking {
    std::vector<std::size_t> order; // ascending score, ties by index
    std::vector<double> scores;     // per proposal, in input order
    std::size_t best() const { return order.front(); }
};

Ranking rank_scores(const std::vector<double>& scores);
Ranking select_best(const std::vector<VoxelLabeling>& proposals, const std::vector<AverageMask>& avg_masks);

} // namespace silhlift

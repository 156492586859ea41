#pragma once

#include "silhlift/camera.hpp"
#include "silhlift/dataset.hpp"
#include "silhlift/refine.hpp"
#include "silhlift/sfm.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace silhlift {

struct PrincipalDirections {
    std::array<Vec3, 3> axes; // descending explained variance
    Vec3 variances = Vec3::Zero();
    bool degenerate_variance = false;
};

/// PCA of the mean-shape columns. Each axis is flipped so its largest-magnitude
/// component is positive. A planar shape gets its third axis from the cross
/// product and is flagged.
PrincipalDirections principal_directions(const MeanShape& S);
PrincipalDirections principal_directions(const Mat3X& S);

struct ClusterMember {
    std::size_t index = 0; // into the camera list
    std::string id;
    double residual_deg = 0;
};

struct DirectionCluster {
    int axis = 0;
    int sign = 1;
    std::vector<ClusterMember> members;
};

// Slot of (axis, sign) in the cluster array.
inline int cluster_slot(int axis, int sign) { return 2 * axis + (sign > 0 ? 0 : 1); }

/// Each camera joins the nearest signed principal axis when its viewing axis is
/// within `threshold_deg` of it (ties go to the lower axis index).
std::array<DirectionCluster, 6> cluster_by_direction(const std::vector<ScaledOrthoCamera>& cameras,
                                                     const std::vector<std::string>& ids,
                                                     const PrincipalDirections& dirs, double threshold_deg = 15.0);

class CoverageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Triplet {
    std::string reference;
    std::vector<std::string> surrogates; // 0 or 2 ids
    std::array<int, 2> axes{-1, -1};
    std::uint64_t seed = 0;
    bool single_axis = false;   // fewer than two populated axes: both from one axis
    bool unconstrained = false; // no populated axis: reference views only
    bool rotational = false;    // synthesized rotational surrogates
};

/// Draws two distinct axes with probability proportional to their member
/// counts (signs pooled), then one member uniformly from each. The reference
/// and its flipped copy never serve as surrogates. Throws CoverageError when
/// fewer than two axes have eligible members.
Triplet sample_triplet(const std::string& reference_id, const std::array<DirectionCluster, 6>& clusters, Rng& rng);

/// sample_triplet with the degraded fallbacks: a single populated axis
/// supplies both surrogates; none yields an unconstrained triplet.
Triplet sample_triplet_or_fallback(const std::string& reference_id, const std::array<DirectionCluster, 6>& clusters,
                                   Rng& rng);

struct SurrogateView {
    Mask mask;
    ScaledOrthoCamera camera;
};

/// Reference camera composed with rotations of k*45 degrees (k = 0..7) about
/// `axis`, each paired with the unchanged reference silhouette.
std::vector<SurrogateView> synthesize_rotational_surrogates(const Instance& reference, const ScaledOrthoCamera& camera,
                                                            const ClassSchema& schema, const Vec3& axis);
// Principal axis most aligned with the world up direction.
Vec3 symmetry_axis(const PrincipalDirections& dirs);

struct VoxelGrid {
    int resolution = 0;
    Vec3 origin = Vec3::Zero(); // minimum corner
    double spacing = 1.0;

    static VoxelGrid centered(int resolution, double half_extent);
    std::size_t size() const { return static_cast<std::size_t>(resolution) * resolution * resolution; }
    std::size_t index(int x, int y, int z) const
    {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(resolution) * (y + static_cast<std::size_t>(resolution) * z);
    }
    Vec3 center(int x, int y, int z) const { return origin + spacing * Vec3(x + 0.5, y + 0.5, z + 0.5); }
    Vec3 center(std::size_t idx) const;
    bool operator==(const VoxelGrid&) const = default;
};

/// Default reconstruction grid: cube of side 2.4 * max keypoint radius of the
/// gauge-fixed shape (at least 2.4), centered on the origin.
VoxelGrid default_grid(const MeanShape& S, int resolution = 96);

/// Per-pixel signed distances to the silhouette boundary: positive outside
/// (distance to the nearest foreground pixel), negative inside (distance to
/// the nearest background pixel, the raster exterior counting as background).
class SilhouetteField {
public:
    explicit SilhouetteField(const Mask& mask);
    double signed_distance(double u, double v) const; // pixels
    const Mask& mask() const { return mask_; }

private:
    Mask mask_;
    DistanceField to_foreground_;
    DistanceField to_background_; // padded by one pixel
};

struct SignedConeField {
    std::string camera_id;
    VoxelGrid grid;
    std::vector<double> values; // world units; < 0 iff the voxel center projects onto foreground
};

SignedConeField cone_signed_field(const Instance& inst, const ScaledOrthoCamera& cam, const VoxelGrid& grid);
SignedConeField cone_signed_field(const SilhouetteField& sil, const ScaledOrthoCamera& cam, const VoxelGrid& grid,
                                  const std::string& id = {});
// values <- max(values, field of this view)
void accumulate_max_field(std::vector<double>& values, const SilhouetteField& sil, const ScaledOrthoCamera& cam,
                          const VoxelGrid& grid);

struct VoxelLabeling {
    VoxelGrid grid;
    std::vector<std::uint8_t> occupancy;

    std::size_t count() const;
    bool at(int x, int y, int z) const { return occupancy[grid.index(x, y, z)] != 0; }
    bool operator==(const VoxelLabeling&) const = default;
};

// True when every occupied voxel of `a` is occupied in `b`.
bool is_subset(const VoxelLabeling& a, const VoxelLabeling& b);

VoxelLabeling plain_visual_hull(const std::vector<SignedConeField>& fields);
VoxelLabeling plain_hull_from_max(const VoxelGrid& grid, const std::vector<double>& max_field);

/// Voxel sets of the reference rays. The image is tiled into cells of one
/// voxel footprint (alpha * spacing pixels, at least one pixel); a cell is
/// foreground when any of its pixels is. Every voxel belongs to the cell its
/// center projects into, so rays never share voxels. Voxels in a ray are
/// ordered camera-nearest first.
struct ImprintRays {
    std::vector<std::vector<std::uint32_t>> rays; // foreground cells that hit the grid
    std::vector<std::array<int, 2>> cells;        // cell coordinates of each ray
    double cell_pitch = 1.0;
    std::size_t foreground_cells = 0;
    std::size_t missed_cells = 0; // foreground cells containing no voxel center
};

ImprintRays build_imprint_rays(const Mask& mask, const ScaledOrthoCamera& cam, const VoxelGrid& grid);

/// Closed-form minimizer of sum_v l_v * C(v) subject to every ray holding an
/// occupied voxel: l_v = 1 iff C(v) < 0 or v is the argmin of C on some ray.
VoxelLabeling imprint_labeling(const VoxelGrid& grid, const std::vector<double>& max_field,
                               const std::vector<std::vector<std::uint32_t>>& rays);
double labeling_energy(const std::vector<std::uint8_t>& occupancy, const std::vector<double>& max_field);

struct ImprintStats {
    std::size_t foreground_cells = 0;
    std::size_t missed_cells = 0;
    std::size_t uncovered_rays = 0; // rays without an occupied voxel; always 0 for imprinted hulls
};

/// Imprinted visual hull. Throws InputError("grid too small") when more than
/// 1% of the reference foreground cells miss the grid.
VoxelLabeling imprinted_visual_hull(const std::vector<SignedConeField>& fields, const Instance& reference,
                                    const ScaledOrthoCamera& reference_camera, ImprintStats* stats = nullptr);
VoxelLabeling imprinted_hull_from_max(const VoxelGrid& grid, const std::vector<double>& max_field,
                                      const ImprintRays& rays, ImprintStats* stats = nullptr);

// Rays of `rays` that have no occupied voxel in `labeling`.
std::size_t count_uncovered_rays(const VoxelLabeling& labeling, const ImprintRays& rays);

/// Cameras and silhouette fields for every instance of a collection that
/// already contains the flipped copies. Fields are computed lazily and cached.
class ReconstructionContext {
public:
    ReconstructionContext(const AnnotatedCollection& collection, std::vector<ScaledOrthoCamera> cameras,
                          MeanShape shape, VoxelGrid grid, double threshold_deg = 15.0);

    const AnnotatedCollection& collection() const { return collection_; }
    const std::vector<ScaledOrthoCamera>& cameras() const { return cameras_; }
    const MeanShape& shape() const { return shape_; }
    const VoxelGrid& grid() const { return grid_; }
    const PrincipalDirections& directions() const { return dirs_; }
    const std::array<DirectionCluster, 6>& clusters() const { return clusters_; }

    std::size_t index_of(const std::string& id) const;
    // Camera of the flipped copy of instance i: its own camera when present,
    // otherwise the reflected camera.
    ScaledOrthoCamera mirror_camera(std::size_t i) const;
    const SilhouetteField& silhouette(std::size_t i) const;
    // Cone field of instance i on the grid (cached when caching is enabled).
    std::shared_ptr<const std::vector<double>> cone_field(std::size_t i) const;
    void set_field_cache(bool enabled) { cache_fields_ = enabled; }

private:
    AnnotatedCollection collection_;
    std::vector<ScaledOrthoCamera> cameras_;
    MeanShape shape_;
    VoxelGrid grid_;
    PrincipalDirections dirs_;
    std::array<DirectionCluster, 6> clusters_;
    bool cache_fields_ = false;
    mutable std::vector<std::unique_ptr<SilhouetteField>> silhouettes_;
    mutable std::vector<std::shared_ptr<const std::vector<double>>> fields_;
    mutable std::unique_ptr<std::mutex[]> locks_;
};

struct ReconstructOptions {
    int n_samples = 20;
    std::uint64_t seed = 0;
    bool imprint = true;
};

struct Proposal {
    VoxelLabeling labeling;
    Triplet triplet;
    ImprintStats stats;
};

/// n_samples proposals for one reference: each carves the reference, both
/// surrogates and the flipped copies of all three. Rotationally symmetric
/// classes yield a single proposal from the eight synthesized views.
/// Deterministic for a given (seed, reference id).
std::vector<Proposal> reconstruct_instance(const std::string& reference_id, const ReconstructionContext& ctx,
                                           const ReconstructOptions& opts = {});

/// Binary occupancy file: "CVXL", u32 G, f64 origin[3], f64 spacing (all
/// little-endian), then G^3 bits with x fastest, least significant bit first.
void write_cvxl(const VoxelLabeling& L, const std::filesystem::path& path);
VoxelLabeling read_cvxl(const std::filesystem::path& path);
void write_voxel_points(const VoxelLabeling& L, const std::filesystem::path& path);

} // namespace silhlift

#pragma once

#include "silhlift/carve.hpp"
#include "silhlift/mesh.hpp"

#include <memory>
#include <vector>

namespace silhlift {

/// Boundary faces of the occupied voxels as an outward-oriented closed mesh.
/// Grid edges shared by two diagonal voxels get one midpoint per voxel so
/// every mesh edge has exactly two incident triangles.
TriangleMesh extract_surface(const VoxelLabeling& L);

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Bounding-volume hierarchy over the triangles of a mesh. Queries return the
/// same value as a scan over all triangles.
class MeshDistanceIndex {
public:
    explicit MeshDistanceIndex(const TriangleMesh& mesh);
    double distance(const Vec3& p) const;
    const TriangleMesh& mesh() const { return mesh_; }

private:
    struct Node {
        Vec3 lo, hi;
        int first = 0, count = 0; // leaf range into order_ when count > 0
        int left = -1, right = -1;
    };
    int build(int first, int count, std::vector<Vec3>& centroids);

    TriangleMesh mesh_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

double point_to_mesh_distance(const Vec3& p, const TriangleMesh& mesh);
double point_to_mesh_distance_exhaustive(const Vec3& p, const TriangleMesh& mesh);

/// Area-weighted uniform surface samples.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

/// Root mean squared distance from samples on `a` to the surface of `b`.
double rms_distance(const TriangleMesh& a, const TriangleMesh& b, std::size_t n_samples = 20000,
                    std::uint64_t seed = 0);

struct SymmetricDistance {
    double rms_ab = 0;
    double rms_ba = 0;
    double percent = 0; // 100 * max / diagonal
};
SymmetricDistance symmetric_distance_report(const TriangleMesh& a, const TriangleMesh& b, double gt_bbox_diagonal,
                                            std::size_t n_samples = 20000, std::uint64_t seed = 0);
double symmetric_distance(const TriangleMesh& a, const TriangleMesh& b, double gt_bbox_diagonal,
                          std::size_t n_samples = 20000, std::uint64_t seed = 0);

/// Outward-oriented convex hull. Throws NumericError("degenerate hull") for
/// coplanar or collinear input.
TriangleMesh convex_hull_of_points(const std::vector<Vec3>& pts);

struct KMedoidsOptions {
    std::uint64_t seed = 0;
    int max_iters = 100;
    int restarts = 8; // seeded initializations; the lowest final cost is kept
};

struct KMedoidsResult {
    std::vector<int> medoids;    // cluster c has medoid medoids[c]; clusters by descending size
    std::vector<int> assignment; // point -> cluster
    std::vector<int> sizes;
    double cost = 0;
    std::vector<double> cost_history;
};

/// Alternating assignment / medoid update from a seeded start, finished with
/// greedy medoid swaps until no swap lowers the total cost. Repeated for
/// `restarts` starts; cost_history belongs to the returned run.
KMedoidsResult kmedoids(const std::vector<std::vector<double>>& dist, int k, const KMedoidsOptions& opts = {});
double kmedoids_cost(const std::vector<std::vector<double>>& dist, const std::vector<int>& medoids);

} // namespace silhlift

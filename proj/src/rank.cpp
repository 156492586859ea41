#include "silhlift/rank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace silhlift {

ProjectionBasis make_basis(const Vec3& view, const Vec3& right_hint)
{
    ProjectionBasis b;
    b.view = view.normalized();
    Vec3 r = right_hint - right_hint.dot(b.view) * b.view;
    if (r.norm() < 1e-9) {
        // any perpendicular direction
        const Vec3 other = std::abs(b.view.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
        r = other - other.dot(b.view) * b.view;
    }
    b.right = r.normalized();
    b.down = b.view.cross(b.right);
    return b;
}

std::vector<double> normalize_mask(const Mask& mask, int resolution)
{
    if (resolution < 2)
        throw InputError("canonical resolution must be at least 2");
    if (mask.empty())
        throw InputError("cannot normalize an empty mask");
    const Vec2 c = mask.centroid();
    const double scale = 0.8 * resolution / mask.bounding_box().diagonal();
    const double mid = 0.5 * (resolution - 1);
    std::vector<double> out(static_cast<std::size_t>(resolution) * resolution, 0.0);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x)
            if (mask.contains_point(c.x() + (x - mid) / scale, c.y() + (y - mid) / scale))
                out[static_cast<std::size_t>(y) * resolution + x] = 1.0;
    return out;
}

AverageMask average_mask(const DirectionCluster& cluster, const AnnotatedCollection& collection,
                         const std::vector<ScaledOrthoCamera>& cameras, const PrincipalDirections& dirs,
                         int resolution)
{
    if (cluster.members.empty())
        throw InputError("no members in the direction cluster");
    AverageMask avg;
    avg.axis = cluster.axis;
    avg.sign = cluster.sign;
    avg.resolution = resolution;
    avg.members = cluster.members.size();
    avg.values.assign(static_cast<std::size_t>(resolution) * resolution, 0.0);
    Vec3 right = Vec3::Zero();
    for (const auto& m : cluster.members) {
        const auto& inst = collection.instances.at(m.index);
        const auto raster = normalize_mask(inst.mask, resolution);
        for (std::size_t i = 0; i < raster.size(); ++i)
            avg.values[i] += raster[i];
        right += cameras.at(m.index).R.row(0).transpose();
    }
    for (double& v : avg.values)
        v /= static_cast<double>(cluster.members.size());
    avg.basis = make_basis(cluster.sign * dirs.axes[cluster.axis], right);
    return avg;
}

std::vector<AverageMask> class_average_masks(const std::array<DirectionCluster, 6>& clusters,
                                             const AnnotatedCollection& collection,
                                             const std::vector<ScaledOrthoCamera>& cameras,
                                             const PrincipalDirections& dirs, int resolution)
{
    std::vector<AverageMask> out;
    for (int j = 0; j < 3; ++j) {
        const auto& pos = clusters[cluster_slot(j, 1)];
        const auto& neg = clusters[cluster_slot(j, -1)];
        const auto& pick = pos.members.size() >= neg.members.size() ? pos : neg;
        if (!pick.members.empty())
            out.push_back(average_mask(pick, collection, cameras, dirs, resolution));
    }
    return out;
}

ProjectedRaster project_labeling_raw(const VoxelLabeling& L, const ProjectionBasis& basis, double pitch)
{
    if (!(pitch > 0))
        throw InputError("projection pitch must be positive");
    const int G = L.grid.resolution;
    const double h = L.grid.spacing;
    auto occ = [&](int x, int y, int z) {
        if (x < 0 || y < 0 || z < 0 || x >= G || y >= G || z >= G)
            return false;
        return L.occupancy[L.grid.index(x, y, z)] != 0;
    };

    // Fully enclosed voxels never change the silhouette.
    std::vector<std::size_t> visible;
    for (int z = 0; z < G; ++z)
        for (int y = 0; y < G; ++y)
            for (int x = 0; x < G; ++x)
                if (occ(x, y, z) && !(occ(x - 1, y, z) && occ(x + 1, y, z) && occ(x, y - 1, z) &&
                                      occ(x, y + 1, z) && occ(x, y, z - 1) && occ(x, y, z + 1)))
                    visible.push_back(L.grid.index(x, y, z));
    if (visible.empty())
        throw InputError("cannot project an empty labeling");

    const double hu = 0.5 * h * basis.right.cwiseAbs().sum();
    const double hv = 0.5 * h * basis.down.cwiseAbs().sum();
    double umin = std::numeric_limits<double>::infinity(), vmin = umin;
    double umax = -umin, vmax = -umin;
    for (auto i : visible) {
        const Vec3 c = L.grid.center(i);
        const double u = basis.right.dot(c), v = basis.down.dot(c);
        umin = std::min(umin, u - hu);
        umax = std::max(umax, u + hu);
        vmin = std::min(vmin, v - hv);
        vmax = std::max(vmax, v + hv);
    }
    ProjectedRaster out;
    out.pitch = pitch;
    out.origin = Vec2(umin + 0.5 * pitch, vmin + 0.5 * pitch);
    const int W = std::max(1, static_cast<int>(std::ceil((umax - umin) / pitch)));
    const int H = std::max(1, static_cast<int>(std::ceil((vmax - vmin) / pitch)));
    out.mask = Mask(W, H);

    for (auto i : visible) {
        const Vec3 c = L.grid.center(i);
        const Vec3 lo = c - Vec3::Constant(0.5 * h), hi = c + Vec3::Constant(0.5 * h);
        const double u = basis.right.dot(c), v = basis.down.dot(c);
        const int x0 = std::max(0, static_cast<int>(std::ceil((u - hu - out.origin.x()) / pitch)));
        const int x1 = std::min(W - 1, static_cast<int>(std::floor((u + hu - out.origin.x()) / pitch)));
        const int y0 = std::max(0, static_cast<int>(std::ceil((v - hv - out.origin.y()) / pitch)));
        const int y1 = std::min(H - 1, static_cast<int>(std::floor((v + hv - out.origin.y()) / pitch)));
        for (int py = y0; py <= y1; ++py)
            for (int px = x0; px <= x1; ++px) {
                if (out.mask.pixels[out.mask.index(px, py)])
                    continue;
                const Vec3 q = (out.origin.x() + px * pitch) * basis.right + (out.origin.y() + py * pitch) * basis.down;
                double tmin = -std::numeric_limits<double>::infinity();
                double tmax = std::numeric_limits<double>::infinity();
                bool hit = true;
                for (int k = 0; k < 3 && hit; ++k) {
                    const double d = basis.view(k);
                    if (std::abs(d) < 1e-15) {
                        hit = q(k) >= lo(k) && q(k) <= hi(k);
                        continue;
                    }
                    double t0 = (lo(k) - q(k)) / d, t1 = (hi(k) - q(k)) / d;
                    if (t0 > t1)
                        std::swap(t0, t1);
                    tmin = std::max(tmin, t0);
                    tmax = std::min(tmax, t1);
                    hit = tmin <= tmax;
                }
                if (hit)
                    out.mask.set(px, py, true);
            }
    }
    return out;
}

std::vector<double> project_labeling(const VoxelLabeling& L, const ProjectionBasis& basis, int resolution)
{
    return normalize_mask(project_labeling_raw(L, basis, 0.5 * L.grid.spacing).mask, resolution);
}

double score_proposal(const VoxelLabeling& L, const std::vector<AverageMask>& avg_masks)
{
    if (avg_masks.empty())
        throw InputError("score_proposal needs at least one average mask");
    if (L.count() == 0)
        return std::numeric_limits<double>::infinity();
    double total = 0;
    for (const auto& avg : avg_masks) {
        const auto proj = project_labeling(L, avg.basis, avg.resolution);
        double diff = 0;
        for (std::size_t i = 0; i < proj.size(); ++i)
            diff += std::abs(proj[i] - avg.values[i]);
        total += diff / static_cast<double>(proj.size());
    }
    return total / static_cast<double>(avg_masks.size());
}

Ranking rank_scores(const std::vector<double>& scores)
{
    if (scores.empty())
        throw InputError("nothing to rank");
    Ranking r;
    r.scores = scores;
    r.order.resize(scores.size());
    std::iota(r.order.begin(), r.order.end(), std::size_t{0});
    std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    return r;
}

Ranking select_best(const std::vector<VoxelLabeling>& proposals, const std::vector<AverageMask>& avg_masks)
{
    std::vector<double> scores(proposals.size());
    parallel_for(proposals.size(), [&](std::size_t i) { scores[i] = score_proposal(proposals[i], avg_masks); });
    return rank_scores(scores);
}

} // namespace silhlift

#include "silhlift/meshkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

namespace silhlift {

TriangleMesh extract_surface(const VoxelLabeling& L)
{
    const int G = L.grid.resolution;
    if (L.occupancy.size() != L.grid.size())
        throw InputError("extract_surface: occupancy does not match the grid");
    if (L.count() == 0)
        throw InputError("extract_surface: empty labeling");

    auto occ = [&](int x, int y, int z) {
        if (x < 0 || y < 0 || z < 0 || x >= G || y >= G || z >= G)
            return false;
        return L.occupancy[L.grid.index(x, y, z)] != 0;
    };
    using Point = std::array<int, 3>;
    auto point_key = [G](const Point& p) {
        const std::uint64_t n = static_cast<std::uint64_t>(G) + 1;
        return static_cast<std::uint64_t>(p[0]) + n * (static_cast<std::uint64_t>(p[1]) + n * p[2]);
    };

    TriangleMesh mesh;
    std::unordered_map<std::uint64_t, int> corner_ids;
    std::map<std::pair<std::uint64_t, std::size_t>, int> midpoint_ids;
    auto world = [&](double x, double y, double z) { return Vec3(L.grid.origin + L.grid.spacing * Vec3(x, y, z)); };
    auto corner_id = [&](const Point& p) {
        auto [it, inserted] = corner_ids.emplace(point_key(p), static_cast<int>(mesh.vertices.size()));
        if (inserted)
            mesh.vertices.push_back(world(p[0], p[1], p[2]));
        return it->second;
    };

    // Edge along `axis` from grid point p: true when exactly the two diagonal
    // cells around it are occupied.
    auto diagonal_edge = [&](const Point& p, int axis) {
        const int o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
        bool c[2][2];
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                Point q = p;
                q[o1] += i - 1;
                q[o2] += j - 1;
                c[i][j] = occ(q[0], q[1], q[2]);
            }
        return (c[0][0] && c[1][1] && !c[0][1] && !c[1][0]) || (c[0][1] && c[1][0] && !c[0][0] && !c[1][1]);
    };

    for (int z = 0; z < G; ++z)
        for (int y = 0; y < G; ++y)
            for (int x = 0; x < G; ++x) {
                if (!occ(x, y, z))
                    continue;
                const Point cell{x, y, z};
                const std::size_t cell_index = L.grid.index(x, y, z);
                for (int a = 0; a < 3; ++a)
                    for (int s : {1, -1}) {
                        Point n = cell;
                        n[a] += s;
                        if (occ(n[0], n[1], n[2]))
                            continue;
                        const int u = (a + 1) % 3, w = (a + 2) % 3;
                        std::array<Point, 4> corners;
                        const int du[4] = {0, 1, 1, 0}, dw[4] = {0, 0, 1, 1};
                        for (int k = 0; k < 4; ++k) {
                            Point p = cell;
                            p[a] += s > 0 ? 1 : 0;
                            p[u] += du[k];
                            p[w] += dw[k];
                            corners[k] = p;
                        }
                        if (s < 0)
                            std::swap(corners[1], corners[3]);

                        std::vector<int> ring;
                        bool split = false;
                        for (int k = 0; k < 4; ++k) {
                            const Point& p = corners[k];
                            const Point& q = corners[(k + 1) % 4];
                            ring.push_back(corner_id(p));
                            int axis = 0;
                            while (p[axis] == q[axis])
                                ++axis;
                            const Point lo = p[axis] < q[axis] ? p : q;
                            if (!diagonal_edge(lo, axis))
                                continue;
                            split = true;
                            const auto key = std::make_pair(point_key(lo) * 3 + axis, cell_index);
                            auto [it, inserted] = midpoint_ids.emplace(key, static_cast<int>(mesh.vertices.size()));
                            if (inserted) {
                                Vec3 m = world(lo[0], lo[1], lo[2]);
                                m(axis) += 0.5 * L.grid.spacing;
                                mesh.vertices.push_back(m);
                            }
                            ring.push_back(it->second);
                        }
                        if (!split) {
                            mesh.triangles.push_back({ring[0], ring[1], ring[2]});
                            mesh.triangles.push_back({ring[0], ring[2], ring[3]});
                            continue;
                        }
                        Vec3 center = Vec3::Zero();
                        for (const auto& p : corners)
                            center += world(p[0], p[1], p[2]);
                        const int c = static_cast<int>(mesh.vertices.size());
                        mesh.vertices.push_back(center / 4.0);
                        for (std::size_t k = 0; k < ring.size(); ++k)
                            mesh.triangles.push_back({c, ring[k], ring[(k + 1) % ring.size()]});
                    }
            }
    return mesh;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0)
        return a;
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3)
        return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0)
        return a + (d1 / (d1 - d3)) * ab;
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6)
        return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0)
        return a + (d2 / (d2 - d6)) * ac;
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    return (p - closest_point_on_triangle(p, a, b, c)).norm();
}

MeshDistanceIndex::MeshDistanceIndex(const TriangleMesh& mesh) : mesh_(mesh)
{
    if (mesh_.empty())
        throw InputError("distance query against an empty mesh");
    mesh_.check();
    const int n = static_cast<int>(mesh_.triangles.size());
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    std::vector<Vec3> centroids(n);
    for (int t = 0; t < n; ++t) {
        const auto& tri = mesh_.triangles[t];
        centroids[t] = (mesh_.vertices[tri[0]] + mesh_.vertices[tri[1]] + mesh_.vertices[tri[2]]) / 3.0;
    }
    nodes_.reserve(2 * n);
    build(0, n, centroids);
}

int MeshDistanceIndex::build(int first, int count, std::vector<Vec3>& centroids)
{
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    Vec3 clo = lo, chi = hi;
    for (int i = first; i < first + count; ++i) {
        for (int v : mesh_.triangles[order_[i]]) {
            lo = lo.cwiseMin(mesh_.vertices[v]);
            hi = hi.cwiseMax(mesh_.vertices[v]);
        }
        clo = clo.cwiseMin(centroids[order_[i]]);
        chi = chi.cwiseMax(centroids[order_[i]]);
    }
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    if (count <= 4) {
        nodes_[id].first = first;
        nodes_[id].count = count;
        return id;
    }
    int axis = 0;
    (chi - clo).maxCoeff(&axis);
    const int half = count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + first + half, order_.begin() + first + count,
                     [&](int a, int b) {
                         if (centroids[a](axis) != centroids[b](axis))
                             return centroids[a](axis) < centroids[b](axis);
                         return a < b;
                     });
    const int left = build(first, half, centroids);
    const int right = build(first + half, count - half, centroids);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

namespace {

double box_distance2(const Vec3& p, const Vec3& lo, const Vec3& hi)
{
    const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
    return d.squaredNorm();
}

} // namespace

double MeshDistanceIndex::distance(const Vec3& p) const
{
    double best = std::numeric_limits<double>::infinity();
    auto prune = [&](const Node& n) {
        // margin keeps the pruning conservative under rounding
        return box_distance2(p, n.lo, n.hi) > best * best * (1.0 + 1e-9);
    };
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
        const Node& n = nodes_[stack[--top]];
        if (prune(n))
            continue;
        if (n.count > 0) {
            for (int i = n.first; i < n.first + n.count; ++i) {
                const auto& t = mesh_.triangles[order_[i]];
                best = std::min(best, point_triangle_distance(p, mesh_.vertices[t[0]], mesh_.vertices[t[1]],
                                                              mesh_.vertices[t[2]]));
            }
            continue;
        }
        const Node& l = nodes_[n.left];
        const Node& r = nodes_[n.right];
        const bool left_first = box_distance2(p, l.lo, l.hi) <= box_distance2(p, r.lo, r.hi);
        stack[top++] = left_first ? n.right : n.left;
        stack[top++] = left_first ? n.left : n.right;
    }
    return best;
}

double point_to_mesh_distance(const Vec3& p, const TriangleMesh& mesh) { return MeshDistanceIndex(mesh).distance(p); }

double point_to_mesh_distance_exhaustive(const Vec3& p, const TriangleMesh& mesh)
{
    if (mesh.empty())
        throw InputError("distance query against an empty mesh");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : mesh.triangles)
        best = std::min(best, point_triangle_distance(p, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]));
    return best;
}

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed)
{
    if (mesh.empty())
        throw InputError("cannot sample an empty mesh");
    std::vector<double> cumulative(mesh.triangles.size());
    double total = 0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        total += mesh.triangle_area(t);
        cumulative[t] = total;
    }
    if (!(total > 0))
        throw InputError("cannot sample a mesh with zero surface area");
    Rng rng(seed);
    std::vector<Vec3> out(n);
    for (auto& p : out) {
        const double r = rng.uniform() * total;
        std::size_t t = std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin();
        t = std::min(t, cumulative.size() - 1);
        const double s1 = std::sqrt(rng.uniform());
        const double s2 = rng.uniform();
        const auto& tri = mesh.triangles[t];
        p = (1 - s1) * mesh.vertices[tri[0]] + s1 * (1 - s2) * mesh.vertices[tri[1]] + s1 * s2 * mesh.vertices[tri[2]];
    }
    return out;
}

double rms_distance(const TriangleMesh& a, const TriangleMesh& b, std::size_t n_samples, std::uint64_t seed)
{
    if (n_samples == 0)
        throw InputError("rms_distance: n_samples must be positive");
    const auto samples = sample_surface(a, n_samples, seed);
    const MeshDistanceIndex index(b);
    std::vector<double> d2(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        const double d = index.distance(samples[i]);
        d2[i] = d * d;
    });
    double sum = 0;
    for (double v : d2)
        sum += v;
    return std::sqrt(sum / static_cast<double>(samples.size()));
}

namespace {

std::uint64_t content_hash(const TriangleMesh& m)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& v : m.vertices)
        mix(v.data(), 3 * sizeof(double));
    for (const auto& t : m.triangles)
        mix(t.data(), 3 * sizeof(int));
    return h;
}

} // namespace

SymmetricDistance symmetric_distance_report(const TriangleMesh& a, const TriangleMesh& b, double gt_bbox_diagonal,
                                            std::size_t n_samples, std::uint64_t seed)
{
    if (!(gt_bbox_diagonal > 0))
        throw InputError("symmetric_distance: bounding-box diagonal must be positive");
    // Sampling streams follow the mesh contents, not the argument order, so
    // swapping a and b gives the same value.
    const bool swapped = content_hash(b) < content_hash(a);
    const TriangleMesh& first = swapped ? b : a;
    const TriangleMesh& second = swapped ? a : b;
    const double d12 = rms_distance(first, second, n_samples, derive_seed(seed, "ab"));
    const double d21 = rms_distance(second, first, n_samples, derive_seed(seed, "ba"));
    SymmetricDistance r;
    r.rms_ab = swapped ? d21 : d12;
    r.rms_ba = swapped ? d12 : d21;
    r.percent = 100.0 * std::max(r.rms_ab, r.rms_ba) / gt_bbox_diagonal;
    return r;
}

double symmetric_distance(const TriangleMesh& a, const TriangleMesh& b, double gt_bbox_diagonal,
                          std::size_t n_samples, std::uint64_t seed)
{
    return symmetric_distance_report(a, b, gt_bbox_diagonal, n_samples, seed).percent;
}

TriangleMesh convex_hull_of_points(const std::vector<Vec3>& pts)
{
    const int n = static_cast<int>(pts.size());
    if (n < 4)
        throw NumericError("degenerate hull: fewer than 4 points");
    for (const auto& p : pts)
        if (!p.allFinite())
            throw InputError("convex hull of non-finite points");

    int i0 = 0;
    for (int i = 1; i < n; ++i)
        if (pts[i].x() < pts[i0].x())
            i0 = i;
    int i1 = i0;
    for (int i = 0; i < n; ++i)
        if ((pts[i] - pts[i0]).norm() > (pts[i1] - pts[i0]).norm())
            i1 = i;
    const double scale = (pts[i1] - pts[i0]).norm();
    if (!(scale > 0))
        throw NumericError("degenerate hull: all points coincide");
    const Vec3 dir = (pts[i1] - pts[i0]) / scale;
    int i2 = -1;
    double best = 0;
    for (int i = 0; i < n; ++i) {
        const double d = (pts[i] - pts[i0]).cross(dir).norm();
        if (d > best) {
            best = d;
            i2 = i;
        }
    }
    if (i2 < 0 || best < 1e-9 * scale)
        throw NumericError("degenerate hull: points are collinear");
    const Vec3 normal = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
    int i3 = -1;
    best = 0;
    for (int i = 0; i < n; ++i) {
        const double d = std::abs(normal.dot(pts[i] - pts[i0]));
        if (d > best) {
            best = d;
            i3 = i;
        }
    }
    if (i3 < 0 || best < 1e-9 * scale)
        throw NumericError("degenerate hull: points are coplanar");

    const double eps = 1e-12 * scale * scale * scale;
    auto orient = [&](const std::array<int, 3>& f, const Vec3& p) {
        const Vec3& a = pts[f[0]];
        return (pts[f[1]] - a).cross(pts[f[2]] - a).dot(p - a);
    };
    std::vector<std::array<int, 3>> faces;
    if (normal.dot(pts[i3] - pts[i0]) > 0)
        faces = {{i0, i2, i1}, {i0, i1, i3}, {i1, i2, i3}, {i2, i0, i3}};
    else
        faces = {{i0, i1, i2}, {i0, i3, i1}, {i1, i3, i2}, {i2, i3, i0}};
    std::vector<bool> alive(faces.size(), true);

    for (int p = 0; p < n; ++p) {
        if (p == i0 || p == i1 || p == i2 || p == i3)
            continue;
        std::set<std::pair<int, int>> edges;
        std::vector<std::size_t> visible;
        for (std::size_t f = 0; f < faces.size(); ++f)
            if (alive[f] && orient(faces[f], pts[p]) > eps) {
                visible.push_back(f);
                for (int k = 0; k < 3; ++k)
                    edges.insert({faces[f][k], faces[f][(k + 1) % 3]});
            }
        if (visible.empty())
            continue;
        for (auto f : visible)
            alive[f] = false;
        for (const auto& [a, b] : edges)
            if (!edges.count({b, a})) {
                faces.push_back({a, b, p});
                alive.push_back(true);
            }
    }

    TriangleMesh mesh;
    std::vector<int> used(n, -1);
    for (std::size_t f = 0; f < faces.size(); ++f)
        if (alive[f])
            for (int v : faces[f])
                used[v] = 0;
    for (int i = 0; i < n; ++i)
        if (used[i] == 0) {
            used[i] = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(pts[i]);
        }
    for (std::size_t f = 0; f < faces.size(); ++f)
        if (alive[f])
            mesh.triangles.push_back({used[faces[f][0]], used[faces[f][1]], used[faces[f][2]]});
    return mesh;
}

namespace {

double assign(const std::vector<std::vector<double>>& dist, const std::vector<int>& medoids, std::vector<int>& labels)
{
    double cost = 0;
    labels.resize(dist.size());
    for (std::size_t i = 0; i < dist.size(); ++i) {
        int best = 0;
        for (std::size_t c = 1; c < medoids.size(); ++c)
            if (dist[i][medoids[c]] < dist[i][medoids[best]])
                best = static_cast<int>(c);
        labels[i] = best;
        cost += dist[i][medoids[best]];
    }
    return cost;
}

} // namespace

double kmedoids_cost(const std::vector<std::vector<double>>& dist, const std::vector<int>& medoids)
{
    std::vector<int> labels;
    return assign(dist, medoids, labels);
}

KMedoidsResult kmedoids(const std::vector<std::vector<double>>& dist, int k, const KMedoidsOptions& opts)
{
    const int n = static_cast<int>(dist.size());
    for (const auto& row : dist)
        if (static_cast<int>(row.size()) != n)
            throw InputError("kmedoids: distance matrix is not square");
    if (k < 1 || k > n)
        throw InputError("kmedoids: k = " + std::to_string(k) + " must be in [1, N = " + std::to_string(n) + "]");

    if (opts.restarts < 1)
        throw InputError("kmedoids: restarts must be at least 1");

    struct Run {
        std::vector<int> medoids, labels;
        double cost = 0;
        std::vector<double> history;
    };
    auto single_run = [&](Rng& rng) {
        Run r;
        std::vector<int> pool(n);
        std::iota(pool.begin(), pool.end(), 0);
        for (int i = 0; i < k; ++i)
            std::swap(pool[i], pool[i + rng.uniform_index(n - i)]);
        auto& medoids = r.medoids;
        auto& labels = r.labels;
        medoids.assign(pool.begin(), pool.begin() + k);
        double cost = assign(dist, medoids, labels);
        r.history.push_back(cost);
        for (int it = 0; it < opts.max_iters; ++it) {
            bool changed = false;
            for (int c = 0; c < k; ++c) {
                auto within = [&](int m) {
                    double s = 0;
                    for (int i = 0; i < n; ++i)
                        if (labels[i] == c)
                            s += dist[i][m];
                    return s;
                };
                int best = medoids[c];
                double best_sum = within(best);
                for (int m = 0; m < n; ++m)
                    if (labels[m] == c) {
                        const double s = within(m);
                        if (s < best_sum) {
                            best_sum = s;
                            best = m;
                        }
                    }
                if (best != medoids[c]) {
                    medoids[c] = best;
                    changed = true;
                }
            }
            if (!changed)
                break;
            cost = assign(dist, medoids, labels);
            r.history.push_back(cost);
        }

        for (;;) {
            double best_cost = cost;
            int best_c = -1, best_o = -1;
            for (int c = 0; c < k; ++c)
                for (int o = 0; o < n; ++o) {
                    if (std::find(medoids.begin(), medoids.end(), o) != medoids.end())
                        continue;
                    std::vector<int> trial = medoids;
                    trial[c] = o;
                    const double tc = kmedoids_cost(dist, trial);
                    if (tc < best_cost) {
                        best_cost = tc;
                        best_c = c;
                        best_o = o;
                    }
                }
            if (best_c < 0)
                break;
            medoids[best_c] = best_o;
            cost = assign(dist, medoids, labels);
            r.history.push_back(cost);
        }
        r.cost = cost;
        return r;
    };

    // Independent starts from one stream; the cheapest run wins, earlier on ties.
    Rng rng(opts.seed);
    Run best = single_run(rng);
    for (int s = 1; s < opts.restarts; ++s) {
        Run r = single_run(rng);
        if (r.cost < best.cost)
            best = std::move(r);
    }
    const std::vector<int>& medoids = best.medoids;
    const std::vector<int>& labels = best.labels;
    const double cost = best.cost;
    KMedoidsResult r;
    r.cost_history = best.history;

    std::vector<int> sizes(k, 0);
    for (int l : labels)
        ++sizes[l];
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (sizes[a] != sizes[b])
            return sizes[a] > sizes[b];
        return medoids[a] < medoids[b];
    });
    std::vector<int> relabel(k);
    for (int c = 0; c < k; ++c) {
        relabel[order[c]] = c;
        r.medoids.push_back(medoids[order[c]]);
        r.sizes.push_back(sizes[order[c]]);
    }
    r.assignment.resize(n);
    for (int i = 0; i < n; ++i)
        r.assignment[i] = relabel[labels[i]];
    r.cost = cost;
    return r;
}

} // namespace silhlift

#include "silhlift/carve.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

namespace silhlift {

namespace {

Vec3 sign_normalized(Vec3 a)
{
    int best = 0;
    for (int i = 1; i < 3; ++i)
        if (std::abs(a(i)) > std::abs(a(best)))
            best = i;
    return a(best) < 0 ? Vec3(-a) : a;
}

} // namespace

PrincipalDirections principal_directions(const MeanShape& S) { return principal_directions(S.S); }

PrincipalDirections principal_directions(const Mat3X& S)
{
    if (S.cols() < 2)
        throw InputError("principal_directions: need at least two points");
    const Mat3X C = S.colwise() - S.rowwise().mean();
    const Mat3 cov = C * C.transpose() / static_cast<double>(S.cols());
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    PrincipalDirections d;
    for (int i = 0; i < 3; ++i) {
        d.axes[i] = sign_normalized(es.eigenvectors().col(2 - i));
        d.variances(i) = std::max(0.0, es.eigenvalues()(2 - i));
    }
    if (!(d.variances(1) > 1e-8 * d.variances(0)))
        throw InputError("principal_directions: mean shape has rank < 2");
    if (!(d.variances(2) > 1e-8 * d.variances(0))) {
        d.degenerate_variance = true;
        d.axes[2] = sign_normalized(d.axes[0].cross(d.axes[1]).normalized());
    }
    return d;
}

std::array<DirectionCluster, 6> cluster_by_direction(const std::vector<ScaledOrthoCamera>& cameras,
                                                     const std::vector<std::string>& ids,
                                                     const PrincipalDirections& dirs, double threshold_deg)
{
    if (ids.size() != cameras.size())
        throw InputError("cluster_by_direction: ids and cameras differ in length");
    std::array<DirectionCluster, 6> out;
    for (int j = 0; j < 3; ++j)
        for (int s : {1, -1}) {
            out[cluster_slot(j, s)].axis = j;
            out[cluster_slot(j, s)].sign = s;
        }
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        const Vec3 v = cameras[i].view_axis().normalized();
        double best = std::numeric_limits<double>::infinity();
        int best_slot = -1;
        for (int j = 0; j < 3; ++j)
            for (int s : {1, -1}) {
                const double c = std::clamp(s * v.dot(dirs.axes[j]), -1.0, 1.0);
                const double ang = rad2deg(std::acos(c));
                if (ang < best) {
                    best = ang;
                    best_slot = cluster_slot(j, s);
                }
            }
        if (best <= threshold_deg)
            out[best_slot].members.push_back({i, ids[i], best});
    }
    return out;
}

namespace {

std::array<std::vector<const ClusterMember*>, 3> eligible_by_axis(const std::string& reference_id,
                                                                  const std::array<DirectionCluster, 6>& clusters)
{
    const std::string mirror = mirror_id(reference_id);
    std::array<std::vector<const ClusterMember*>, 3> out;
    for (int j = 0; j < 3; ++j)
        for (int s : {1, -1})
            for (const auto& m : clusters[cluster_slot(j, s)].members)
                if (m.id != reference_id && m.id != mirror)
                    out[j].push_back(&m);
    return out;
}

int draw_weighted(const std::array<std::size_t, 3>& counts, Rng& rng)
{
    const std::size_t total = counts[0] + counts[1] + counts[2];
    std::size_t r = rng.uniform_index(total);
    for (int j = 0; j < 3; ++j) {
        if (r < counts[j])
            return j;
        r -= counts[j];
    }
    return 2;
}

} // namespace

Triplet sample_triplet(const std::string& reference_id, const std::array<DirectionCluster, 6>& clusters, Rng& rng)
{
    const auto pools = eligible_by_axis(reference_id, clusters);
    std::array<std::size_t, 3> counts{pools[0].size(), pools[1].size(), pools[2].size()};
    const int populated = static_cast<int>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
    if (populated < 2)
        throw CoverageError("insufficient coverage: fewer than two populated principal directions");
    Triplet t;
    t.reference = reference_id;
    const int a = draw_weighted(counts, rng);
    counts[a] = 0;
    const int b = draw_weighted(counts, rng);
    t.axes = {a, b};
    t.surrogates.push_back(pools[a][rng.uniform_index(pools[a].size())]->id);
    t.surrogates.push_back(pools[b][rng.uniform_index(pools[b].size())]->id);
    return t;
}

Triplet sample_triplet_or_fallback(const std::string& reference_id, const std::array<DirectionCluster, 6>& clusters,
                                   Rng& rng)
{
    try {
        return sample_triplet(reference_id, clusters, rng);
    } catch (const CoverageError&) {
    }
    const auto pools = eligible_by_axis(reference_id, clusters);
    Triplet t;
    t.reference = reference_id;
    for (int j = 0; j < 3; ++j) {
        if (pools[j].empty())
            continue;
        t.single_axis = true;
        t.axes = {j, j};
        std::vector<const ClusterMember*> pool = pools[j];
        const std::size_t first = rng.uniform_index(pool.size());
        t.surrogates.push_back(pool[first]->id);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(first));
        if (!pool.empty())
            t.surrogates.push_back(pool[rng.uniform_index(pool.size())]->id);
        return t;
    }
    t.unconstrained = true;
    return t;
}

Vec3 symmetry_axis(const PrincipalDirections& dirs)
{
    int best = 0;
    for (int j = 1; j < 3; ++j)
        if (std::abs(dirs.axes[j].y()) > std::abs(dirs.axes[best].y()))
            best = j;
    return dirs.axes[best];
}

std::vector<SurrogateView> synthesize_rotational_surrogates(const Instance& reference, const ScaledOrthoCamera& camera,
                                                            const ClassSchema& schema, const Vec3& axis)
{
    if (!schema.rotational_symmetric)
        throw InputError("rotational surrogates requested for a class that is not rotationally symmetric");
    std::vector<SurrogateView> out;
    out.push_back({reference.mask, camera});
    for (int k = 1; k < 8; ++k) {
        const Mat3 R = camera.R * rotation_about(axis, deg2rad(45.0 * k));
        out.push_back({reference.mask, ScaledOrthoCamera::from_rotation(R, camera.alpha, camera.T)});
    }
    return out;
}

VoxelGrid VoxelGrid::centered(int resolution, double half_extent)
{
    if (resolution < 1 || !(half_extent > 0))
        throw InputError("invalid voxel grid");
    VoxelGrid g;
    g.resolution = resolution;
    g.origin = Vec3::Constant(-half_extent);
    g.spacing = 2.0 * half_extent / resolution;
    return g;
}

Vec3 VoxelGrid::center(std::size_t idx) const
{
    const std::size_t G = resolution;
    return center(static_cast<int>(idx % G), static_cast<int>((idx / G) % G), static_cast<int>(idx / (G * G)));
}

VoxelGrid default_grid(const MeanShape& S, int resolution)
{
    return VoxelGrid::centered(resolution, 1.2 * std::max(1.0, S.max_radius()));
}

namespace {

Mask padded_background(const Mask& m)
{
    Mask out(m.width + 2, m.height + 2);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.set(x, y, !m.at(x - 1, y - 1));
    return out;
}

} // namespace

SilhouetteField::SilhouetteField(const Mask& mask)
    : mask_(mask), to_foreground_(mask), to_background_(padded_background(mask))
{
}

double SilhouetteField::signed_distance(double u, double v) const
{
    if (mask_.contains_point(u, v))
        return -to_background_.sample(u + 1.0, v + 1.0);
    return to_foreground_.sample(u, v);
}

namespace {

// Calls fn(voxel index, projected point) for all voxels, x fastest.
template <typename Fn>
void for_each_projection(const ScaledOrthoCamera& cam, const VoxelGrid& grid, Fn&& fn)
{
    const int G = grid.resolution;
    const Vec2 base = cam.project(grid.center(0, 0, 0));
    const Vec2 dx = cam.M.col(0) * grid.spacing;
    const Vec2 dy = cam.M.col(1) * grid.spacing;
    const Vec2 dz = cam.M.col(2) * grid.spacing;
    std::size_t idx = 0;
    for (int z = 0; z < G; ++z)
        for (int y = 0; y < G; ++y) {
            const Vec2 row = base + double(y) * dy + double(z) * dz;
            for (int x = 0; x < G; ++x, ++idx)
                fn(idx, Vec2(row + double(x) * dx));
        }
}

} // namespace

SignedConeField cone_signed_field(const Instance& inst, const ScaledOrthoCamera& cam, const VoxelGrid& grid)
{
    return cone_signed_field(SilhouetteField(inst.mask), cam, grid, inst.id);
}

SignedConeField cone_signed_field(const SilhouetteField& sil, const ScaledOrthoCamera& cam, const VoxelGrid& grid,
                                  const std::string& id)
{
    SignedConeField f;
    f.camera_id = id;
    f.grid = grid;
    f.values.resize(grid.size());
    const double inv_alpha = 1.0 / cam.alpha;
    for_each_projection(cam, grid, [&](std::size_t i, const Vec2& u) {
        f.values[i] = sil.signed_distance(u.x(), u.y()) * inv_alpha;
    });
    return f;
}

void accumulate_max_field(std::vector<double>& values, const SilhouetteField& sil, const ScaledOrthoCamera& cam,
                          const VoxelGrid& grid)
{
    if (values.size() != grid.size())
        values.assign(grid.size(), -std::numeric_limits<double>::infinity());
    const double inv_alpha = 1.0 / cam.alpha;
    for_each_projection(cam, grid, [&](std::size_t i, const Vec2& u) {
        values[i] = std::max(values[i], sil.signed_distance(u.x(), u.y()) * inv_alpha);
    });
}

std::size_t VoxelLabeling::count() const
{
    return static_cast<std::size_t>(std::count(occupancy.begin(), occupancy.end(), std::uint8_t{1}));
}

bool is_subset(const VoxelLabeling& a, const VoxelLabeling& b)
{
    if (!(a.grid == b.grid))
        return false;
    for (std::size_t i = 0; i < a.occupancy.size(); ++i)
        if (a.occupancy[i] && !b.occupancy[i])
            return false;
    return true;
}

namespace {

std::vector<double> max_of(const std::vector<SignedConeField>& fields)
{
    if (fields.empty())
        throw InputError("visual hull needs at least one cone field");
    for (const auto& f : fields)
        if (!(f.grid == fields.front().grid) || f.values.size() != f.grid.size())
            throw InputError("cone fields are defined on mismatched grids");
    std::vector<double> m = fields.front().values;
    for (std::size_t k = 1; k < fields.size(); ++k)
        for (std::size_t i = 0; i < m.size(); ++i)
            m[i] = std::max(m[i], fields[k].values[i]);
    return m;
}

} // namespace

VoxelLabeling plain_hull_from_max(const VoxelGrid& grid, const std::vector<double>& max_field)
{
    VoxelLabeling L;
    L.grid = grid;
    L.occupancy.resize(grid.size());
    for (std::size_t i = 0; i < max_field.size(); ++i)
        L.occupancy[i] = max_field[i] < 0.0;
    return L;
}

VoxelLabeling plain_visual_hull(const std::vector<SignedConeField>& fields)
{
    return plain_hull_from_max(fields.front().grid, max_of(fields));
}

ImprintRays build_imprint_rays(const Mask& mask, const ScaledOrthoCamera& cam, const VoxelGrid& grid)
{
    ImprintRays out;
    const double pitch = std::max(1.0, cam.alpha * grid.spacing);
    out.cell_pitch = pitch;
    const int ncx = static_cast<int>(std::ceil(mask.width / pitch));
    const int ncy = static_cast<int>(std::ceil(mask.height / pitch));
    auto cell_of = [pitch](double c) { return static_cast<int>(std::floor((c + 0.5) / pitch)); };

    std::vector<std::uint8_t> fg(static_cast<std::size_t>(ncx) * ncy, 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.pixels[mask.index(x, y)])
                fg[static_cast<std::size_t>(cell_of(y)) * ncx + cell_of(x)] = 1;

    std::vector<std::vector<std::uint32_t>> per_cell(fg.size());
    for_each_projection(cam, grid, [&](std::size_t i, const Vec2& u) {
        const int a = cell_of(u.x()), b = cell_of(u.y());
        if (a < 0 || b < 0 || a >= ncx || b >= ncy)
            return;
        const std::size_t c = static_cast<std::size_t>(b) * ncx + a;
        if (fg[c])
            per_cell[c].push_back(static_cast<std::uint32_t>(i));
    });

    const Vec3 r3 = cam.view_axis();
    for (int b = 0; b < ncy; ++b)
        for (int a = 0; a < ncx; ++a) {
            const std::size_t c = static_cast<std::size_t>(b) * ncx + a;
            if (!fg[c])
                continue;
            ++out.foreground_cells;
            auto& ray = per_cell[c];
            if (ray.empty()) {
                ++out.missed_cells;
                continue;
            }
            std::vector<std::pair<double, std::uint32_t>> keyed;
            keyed.reserve(ray.size());
            for (auto v : ray)
                keyed.emplace_back(r3.dot(grid.center(v)), v);
            std::sort(keyed.begin(), keyed.end());
            for (std::size_t k = 0; k < ray.size(); ++k)
                ray[k] = keyed[k].second;
            out.rays.push_back(std::move(ray));
            out.cells.push_back({a, b});
        }
    return out;
}

VoxelLabeling imprint_labeling(const VoxelGrid& grid, const std::vector<double>& max_field,
                               const std::vector<std::vector<std::uint32_t>>& rays)
{
    VoxelLabeling L = plain_hull_from_max(grid, max_field);
    for (const auto& ray : rays) {
        if (ray.empty())
            continue;
        std::uint32_t best = ray.front();
        for (auto v : ray)
            if (max_field[v] < max_field[best])
                best = v;
        L.occupancy[best] = 1;
    }
    return L;
}

double labeling_energy(const std::vector<std::uint8_t>& occupancy, const std::vector<double>& max_field)
{
    double e = 0;
    for (std::size_t i = 0; i < occupancy.size(); ++i)
        if (occupancy[i])
            e += max_field[i];
    return e;
}

std::size_t count_uncovered_rays(const VoxelLabeling& labeling, const ImprintRays& rays)
{
    std::size_t n = 0;
    for (const auto& ray : rays.rays)
        if (std::none_of(ray.begin(), ray.end(), [&](auto v) { return labeling.occupancy[v] != 0; }))
            ++n;
    return n;
}

VoxelLabeling imprinted_hull_from_max(const VoxelGrid& grid, const std::vector<double>& max_field,
                                      const ImprintRays& rays, ImprintStats* stats)
{
    if (rays.missed_cells * 100 > rays.foreground_cells)
        throw InputError("grid too small: " + std::to_string(rays.missed_cells) + " of " +
                         std::to_string(rays.foreground_cells) + " reference rays miss the grid");
    VoxelLabeling L = imprint_labeling(grid, max_field, rays.rays);
    if (stats) {
        stats->foreground_cells = rays.foreground_cells;
        stats->missed_cells = rays.missed_cells;
        stats->uncovered_rays = count_uncovered_rays(L, rays);
    }
    return L;
}

VoxelLabeling imprinted_visual_hull(const std::vector<SignedConeField>& fields, const Instance& reference,
                                    const ScaledOrthoCamera& reference_camera, ImprintStats* stats)
{
    if (reference.mask.empty())
        throw InputError("imprinted_visual_hull: empty reference mask");
    const auto m = max_of(fields);
    if (std::none_of(fields.begin(), fields.end(), [&](const auto& f) { return f.camera_id == reference.id; }))
        throw InputError("imprinted_visual_hull: the reference field is not among the fields");
    const auto& grid = fields.front().grid;
    return imprinted_hull_from_max(grid, m, build_imprint_rays(reference.mask, reference_camera, grid), stats);
}

ReconstructionContext::ReconstructionContext(const AnnotatedCollection& collection,
                                             std::vector<ScaledOrthoCamera> cameras, MeanShape shape, VoxelGrid grid,
                                             double threshold_deg)
    : collection_(collection), cameras_(std::move(cameras)), shape_(std::move(shape)), grid_(grid)
{
    if (cameras_.size() != collection_.instances.size())
        throw InputError("one camera per instance is required");
    dirs_ = principal_directions(shape_);
    std::vector<std::string> ids;
    for (const auto& inst : collection_.instances)
        ids.push_back(inst.id);
    clusters_ = cluster_by_direction(cameras_, ids, dirs_, threshold_deg);
    silhouettes_.resize(cameras_.size());
    fields_.resize(cameras_.size());
    locks_ = std::make_unique<std::mutex[]>(cameras_.size());
}

std::size_t ReconstructionContext::index_of(const std::string& id) const
{
    if (auto i = collection_.find(id))
        return *i;
    throw InputError("unknown instance id: " + id);
}

ScaledOrthoCamera ReconstructionContext::mirror_camera(std::size_t i) const
{
    if (auto j = collection_.find(mirror_id(collection_.instances[i].id)))
        return cameras_[*j];
    return cameras_[i].mirrored(collection_.instances[i].mask.width);
}

const SilhouetteField& ReconstructionContext::silhouette(std::size_t i) const
{
    std::lock_guard lock(locks_[i]);
    if (!silhouettes_[i])
        silhouettes_[i] = std::make_unique<SilhouetteField>(collection_.instances[i].mask);
    return *silhouettes_[i];
}

std::shared_ptr<const std::vector<double>> ReconstructionContext::cone_field(std::size_t i) const
{
    const SilhouetteField& sil = silhouette(i);
    std::lock_guard lock(locks_[i]);
    if (fields_[i])
        return fields_[i];
    auto f = std::make_shared<std::vector<double>>(cone_signed_field(sil, cameras_[i], grid_).values);
    if (cache_fields_)
        fields_[i] = f;
    return f;
}

std::vector<Proposal> reconstruct_instance(const std::string& reference_id, const ReconstructionContext& ctx,
                                           const ReconstructOptions& opts)
{
    if (opts.n_samples < 1)
        throw InputError("n_samples must be at least 1");
    const std::size_t ref = ctx.index_of(reference_id);
    const Instance& reference = ctx.collection().instances[ref];
    const ScaledOrthoCamera& ref_cam = ctx.cameras()[ref];
    const VoxelGrid& grid = ctx.grid();
    const ImprintRays rays = build_imprint_rays(reference.mask, ref_cam, grid);
    const std::uint64_t stream = derive_seed(opts.seed, "sampling/" + reference_id);

    auto finish = [&](std::vector<double>& max_field, Proposal& p) {
        if (opts.imprint) {
            p.labeling = imprinted_hull_from_max(grid, max_field, rays, &p.stats);
        } else {
            p.labeling = plain_hull_from_max(grid, max_field);
            p.stats.foreground_cells = rays.foreground_cells;
            p.stats.missed_cells = rays.missed_cells;
            p.stats.uncovered_rays = count_uncovered_rays(p.labeling, rays);
        }
    };

    if (ctx.collection().schema.rotational_symmetric) {
        Proposal p;
        p.triplet.reference = reference_id;
        p.triplet.rotational = true;
        p.triplet.seed = stream;
        std::vector<double> max_field;
        for (const auto& view : synthesize_rotational_surrogates(reference, ref_cam, ctx.collection().schema,
                                                                 symmetry_axis(ctx.directions())))
            accumulate_max_field(max_field, ctx.silhouette(ref), view.camera, grid);
        finish(max_field, p);
        return {std::move(p)};
    }

    Rng rng(stream);
    std::vector<Proposal> proposals(opts.n_samples);
    for (auto& p : proposals) {
        p.triplet = sample_triplet_or_fallback(reference_id, ctx.clusters(), rng);
        p.triplet.seed = stream;
    }

    parallel_for(proposals.size(), [&](std::size_t s) {
        Proposal& p = proposals[s];
        std::vector<std::size_t> views{ref};
        for (const auto& id : p.triplet.surrogates)
            views.push_back(ctx.index_of(id));
        // Flipped copies; a view without a flipped instance would add the
        // same cone again and is skipped.
        const std::size_t base_views = views.size();
        for (std::size_t k = 0; k < base_views; ++k)
            if (auto j = ctx.collection().find(mirror_id(ctx.collection().instances[views[k]].id)))
                views.push_back(*j);
        std::sort(views.begin() + 1, views.end());
        views.erase(std::unique(views.begin() + 1, views.end()), views.end());

        std::vector<double> max_field(grid.size(), -std::numeric_limits<double>::infinity());
        for (auto v : views) {
            const auto f = ctx.cone_field(v);
            for (std::size_t i = 0; i < max_field.size(); ++i)
                max_field[i] = std::max(max_field[i], (*f)[i]);
        }
        finish(max_field, p);
    });
    return proposals;
}

namespace {

template <typename T>
void put_le(std::ostream& out, T value)
{
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in)
{
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

} // namespace

void write_cvxl(const VoxelLabeling& L, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw InputError("cannot write occupancy file: " + path.string());
    out.write("CVXL", 4);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(L.grid.resolution));
    for (int i = 0; i < 3; ++i)
        put_le<double>(out, L.grid.origin(i));
    put_le<double>(out, L.grid.spacing);
    std::vector<std::uint8_t> bits((L.occupancy.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < L.occupancy.size(); ++i)
        if (L.occupancy[i])
            bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    out.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
}

VoxelLabeling read_cvxl(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError("cannot open occupancy file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CVXL", 4) != 0)
        throw InputError("not a CVXL occupancy file: " + path.string());
    VoxelLabeling L;
    L.grid.resolution = static_cast<int>(get_le<std::uint32_t>(in));
    for (int i = 0; i < 3; ++i)
        L.grid.origin(i) = get_le<double>(in);
    L.grid.spacing = get_le<double>(in);
    if (!in || L.grid.resolution <= 0 || L.grid.resolution > 4096 || !(L.grid.spacing > 0))
        throw InputError("corrupt CVXL header: " + path.string());
    std::vector<std::uint8_t> bits((L.grid.size() + 7) / 8);
    in.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
    if (!in)
        throw InputError("truncated CVXL file: " + path.string());
    L.occupancy.resize(L.grid.size());
    for (std::size_t i = 0; i < L.occupancy.size(); ++i)
        L.occupancy[i] = (bits[i / 8] >> (i % 8)) & 1;
    return L;
}

void write_voxel_points(const VoxelLabeling& L, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw InputError("cannot write point list: " + path.string());
    out << std::setprecision(17);
    for (std::size_t i = 0; i < L.occupancy.size(); ++i)
        if (L.occupancy[i]) {
            const Vec3 c = L.grid.center(i);
            out << c.x() << ' ' << c.y() << ' ' << c.z() << '\n';
        }
}

} // namespace silhlift

#include "silhlift/shapes.hpp"

#include "silhlift/meshkit.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

namespace silhlift {

using nlohmann::json;

const std::vector<std::string>& demo_keypoint_names()
{
    static const std::vector<std::string> names = {"x+",  "x-",  "y+",  "y-",  "z+",  "z-",  "ppp",
                                                   "ppm", "pmp", "pmm", "mpp", "mpm", "mmp", "mmm"};
    return names;
}

std::vector<int> demo_mirror_map()
{
    // octant k (bits: x, y, z minus-signs) maps to k with the x bit toggled
    std::vector<int> m = {1, 0, 2, 3, 4, 5};
    for (int k = 0; k < 8; ++k)
        m.push_back(6 + (k ^ 4));
    return m;
}

ClassSchema demo_schema(const std::string& class_name)
{
    ClassSchema s;
    s.class_name = class_name;
    s.keypoint_names = demo_keypoint_names();
    s.mirror_map = demo_mirror_map();
    for (int i = 0; i < s.keypoint_count(); ++i)
        s.sfm_subset.push_back(i);
    return s;
}

namespace {

std::vector<Vec3> nominal_keypoints(const Vec3& tips, const Vec3& octant)
{
    std::vector<Vec3> k = {{tips.x(), 0, 0}, {-tips.x(), 0, 0}, {0, tips.y(), 0},
                           {0, -tips.y(), 0}, {0, 0, tips.z()}, {0, 0, -tips.z()}};
    for (int b = 0; b < 8; ++b)
        k.emplace_back((b & 4 ? -1 : 1) * octant.x(), (b & 2 ? -1 : 1) * octant.y(), (b & 1 ? -1 : 1) * octant.z());
    return k;
}

// Moves each point to the nearest point of the mesh surface.
void snap_to_surface(const TriangleMesh& mesh, std::vector<Vec3>& pts)
{
    for (auto& p : pts) {
        Vec3 best = p;
        double bd = std::numeric_limits<double>::infinity();
        for (const auto& t : mesh.triangles) {
            const Vec3 q = closest_point_on_triangle(p, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
            const double d = (q - p).squaredNorm();
            if (d < bd) {
                bd = d;
                best = q;
            }
        }
        p = best;
    }
}

} // namespace

TriangleMesh make_box_mesh(const Vec3& h, const Vec3& c)
{
    TriangleMesh m;
    for (int b = 0; b < 8; ++b)
        m.vertices.push_back(c + Vec3(b & 1 ? h.x() : -h.x(), b & 2 ? h.y() : -h.y(), b & 4 ? h.z() : -h.z()));
    m.triangles = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                   {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
    return m;
}

TriangleMesh make_ellipsoid_mesh(const Vec3& r, int rings, int segments)
{
    if (rings < 2 || segments < 3)
        throw InputError("ellipsoid tessellation too coarse");
    TriangleMesh m;
    m.vertices.emplace_back(0, r.y(), 0);
    for (int i = 1; i < rings; ++i) {
        const double phi = kPi * i / rings;
        for (int s = 0; s < segments; ++s) {
            const double th = 2 * kPi * s / segments;
            m.vertices.emplace_back(r.x() * std::sin(phi) * std::cos(th), r.y() * std::cos(phi),
                                    r.z() * std::sin(phi) * std::sin(th));
        }
    }
    m.vertices.emplace_back(0, -r.y(), 0);
    const int last = static_cast<int>(m.vertices.size()) - 1;
    auto ring = [&](int i, int s) { return 1 + (i - 1) * segments + (s % segments); };
    for (int s = 0; s < segments; ++s) {
        m.triangles.push_back({0, ring(1, s + 1), ring(1, s)});
        m.triangles.push_back({last, ring(rings - 1, s), ring(rings - 1, s + 1)});
    }
    for (int i = 1; i + 1 < rings; ++i)
        for (int s = 0; s < segments; ++s) {
            m.triangles.push_back({ring(i, s), ring(i, s + 1), ring(i + 1, s + 1)});
            m.triangles.push_back({ring(i, s), ring(i + 1, s + 1), ring(i + 1, s)});
        }
    if (m.signed_volume() < 0)
        for (auto& t : m.triangles)
            std::swap(t[1], t[2]);
    return m;
}

LabeledShape make_box(const std::string& name, const Vec3& h)
{
    LabeledShape s{name, make_box_mesh(h), nominal_keypoints(h, h)};
    return s;
}

LabeledShape make_ellipsoid(const std::string& name, const Vec3& r)
{
    LabeledShape s{name, make_ellipsoid_mesh(r), nominal_keypoints(r, r / std::sqrt(3.0))};
    snap_to_surface(s.mesh, s.keypoints);
    return s;
}

LabeledShape make_winged_box(const std::string& name, const Vec3& h, double wing_span, double wing_thickness,
                             double wing_depth)
{
    if (!(wing_thickness > 0) || !(wing_span > 0) || !(wing_depth > 0))
        throw InputError("winged box: wing dimensions must be positive");
    // Built on a voxel grid of pitch wing_thickness; dimensions are rounded to it.
    const double p = wing_thickness;
    auto cells = [p](double len) { return std::max(1, static_cast<int>(std::lround(len / p))); };
    const int bx = cells(2 * h.x()), by = cells(2 * h.y()), bz = cells(2 * h.z());
    const int span = cells(wing_span), depth = std::min(bz, cells(wing_depth));
    const int G = std::max({bx + 2 * span, by, bz});
    VoxelLabeling L;
    L.grid.resolution = G;
    L.grid.spacing = p;
    L.grid.origin = -0.5 * p * Vec3(bx + 2 * span, by, bz);
    L.occupancy.assign(L.grid.size(), 0);
    const int wing_y = by / 2;
    const int wing_z0 = (bz - depth) / 2;
    for (int z = 0; z < bz; ++z)
        for (int y = 0; y < by; ++y)
            for (int x = 0; x < bx + 2 * span; ++x) {
                const bool body = x >= span && x < span + bx;
                const bool wing = y == wing_y && z >= wing_z0 && z < wing_z0 + depth;
                if (body || wing)
                    L.occupancy[L.grid.index(x, y, z)] = 1;
            }
    LabeledShape s;
    s.name = name;
    s.mesh = extract_surface(L);
    const Vec3 body_half = 0.5 * p * Vec3(bx, by, bz);
    const double tip = body_half.x() + span * p;
    s.keypoints = nominal_keypoints(Vec3(tip, body_half.y(), body_half.z()), body_half);
    snap_to_surface(s.mesh, s.keypoints);
    return s;
}

std::vector<LabeledShape> demo_shape_family(int count, std::uint64_t seed)
{
    if (count < 1)
        throw InputError("shape count must be positive");
    Rng rng(derive_seed(seed, "shapes"));
    std::vector<LabeledShape> out;
    for (int i = 0; i < count; ++i) {
        const Vec3 h(rng.uniform(0.3, 0.5), rng.uniform(0.25, 0.4), rng.uniform(0.65, 1.0));
        char name[32];
        if (i % 2 == 0) {
            std::snprintf(name, sizeof name, "box_%02d", i);
            out.push_back(make_box(name, h));
        } else {
            std::snprintf(name, sizeof name, "ellipsoid_%02d", i);
            out.push_back(make_ellipsoid(name, h * 1.15));
        }
    }
    return out;
}

void write_shape_directory(const std::vector<LabeledShape>& shapes, const ClassSchema& schema,
                           const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    json j;
    j["class"] = schema.class_name;
    j["keypoints"] = schema.keypoint_names;
    j["mirror_map"] = schema.mirror_map;
    j["sfm_subset"] = schema.sfm_subset;
    j["rotational_symmetric"] = schema.rotational_symmetric;
    json meshes = json::object();
    for (const auto& s : shapes) {
        if (s.keypoints.size() != schema.keypoint_names.size())
            throw InputError("shape '" + s.name + "' has the wrong number of keypoints");
        write_obj(s.mesh, dir / (s.name + ".obj"));
        json labels = json::object();
        for (std::size_t k = 0; k < s.keypoints.size(); ++k)
            labels[schema.keypoint_names[k]] = {s.keypoints[k].x(), s.keypoints[k].y(), s.keypoints[k].z()};
        meshes[s.name + ".obj"] = labels;
    }
    j["meshes"] = meshes;
    std::ofstream(dir / "keypoints.json") << j.dump(2) << '\n';
}

ShapeDirectory read_shape_directory(const std::filesystem::path& dir)
{
    const auto path = dir / "keypoints.json";
    std::ifstream in(path);
    if (!in)
        throw InputError("missing keypoint annotations: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("malformed keypoint annotations " + path.string() + ": " + e.what());
    }
    ShapeDirectory out;
    try {
        out.schema.class_name = j.value("class", std::string("synthetic"));
        out.schema.keypoint_names = j.at("keypoints").get<std::vector<std::string>>();
        out.schema.mirror_map = j.at("mirror_map").get<std::vector<int>>();
        if (j.contains("sfm_subset"))
            out.schema.sfm_subset = j.at("sfm_subset").get<std::vector<int>>();
        else
            for (int i = 0; i < out.schema.keypoint_count(); ++i)
                out.schema.sfm_subset.push_back(i);
        out.schema.rotational_symmetric = j.value("rotational_symmetric", false);
        for (const auto& [file, labels] : j.at("meshes").items()) {
            LabeledShape s;
            s.name = std::filesystem::path(file).stem().string();
            s.mesh = read_obj(dir / file);
            for (const auto& kp : out.schema.keypoint_names) {
                if (!labels.contains(kp))
                    throw InputError("mesh '" + file + "': missing keypoint label '" + kp + "'");
                const auto v = labels.at(kp).get<std::vector<double>>();
                if (v.size() != 3)
                    throw InputError("mesh '" + file + "': keypoint '" + kp + "' needs 3 coordinates");
                s.keypoints.emplace_back(v[0], v[1], v[2]);
            }
            out.shapes.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw InputError("malformed keypoint annotations " + path.string() + ": " + e.what());
    }
    if (out.shapes.empty())
        throw InputError("no meshes listed in " + path.string());
    std::sort(out.shapes.begin(), out.shapes.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return out;
}

} // namespace silhlift

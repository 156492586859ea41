#pragma once

#include "silhlift/dataset.hpp"
#include "silhlift/mesh.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace silhlift {

/// Procedural test objects, symmetric under x -> -x. Each carries 14 labeled
/// surface keypoints: the six axis tips and eight octant points.
struct LabeledShape {
    std::string name;
    TriangleMesh mesh;
    std::vector<Vec3> keypoints;
};

const std::vector<std::string>& demo_keypoint_names();
std::vector<int> demo_mirror_map(); // swaps the x+ and x- keypoints
ClassSchema demo_schema(const std::string& class_name = "demo");

TriangleMesh make_box_mesh(const Vec3& half_extents, const Vec3& center = Vec3::Zero());
TriangleMesh make_ellipsoid_mesh(const Vec3& radii, int rings = 24, int segments = 48);

LabeledShape make_box(const std::string& name, const Vec3& half_extents);
LabeledShape make_ellipsoid(const std::string& name, const Vec3& radii);
// Box body with two thin plates sticking out along +-x at mid height.
LabeledShape make_winged_box(const std::string& name, const Vec3& half_extents, double wing_span,
                             double wing_thickness, double wing_depth);

/// Boxes and ellipsoids with seeded random proportions.
std::vector<LabeledShape> demo_shape_family(int count, std::uint64_t seed);

/// Directory layout read by the synth command: one OBJ per shape plus
/// keypoints.json with the class schema and per-mesh labeled points.
void write_shape_directory(const std::vector<LabeledShape>& shapes, const ClassSchema& schema,
                           const std::filesystem::path& dir);

struct ShapeDirectory {
    ClassSchema schema;
    std::vector<LabeledShape> shapes; // sorted by name
};
ShapeDirectory read_shape_directory(const std::filesystem::path& dir);

} // namespace silhlift

#pragma once

#include "silhlift/camera.hpp"
#include "silhlift/common.hpp"
#include "silhlift/mesh.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace silhlift {

struct KeypointObservation {
    int index = 0;
    double x = 0; // ignored unless visible
    double y = 0;
    bool visible = false;

    bool operator==(const KeypointObservation&) const = default;
};

struct Instance {
    std::string id;
    std::string class_name;
    Mask mask;
    std::vector<KeypointObservation> keypoints;
    bool mirrored = false;

    const KeypointObservation* find_keypoint(int index) const;
    bool operator==(const Instance&) const = default;
};

struct ClassSchema {
    std::string class_name;
    std::vector<std::string> keypoint_names;
    std::vector<int> mirror_map;
    std::vector<int> sfm_subset;
    bool rotational_symmetric = false;

    int keypoint_count() const { return static_cast<int>(keypoint_names.size()); }
    bool operator==(const ClassSchema&) const = default;
};

struct AnnotatedCollection {
    ClassSchema schema;
    std::vector<Instance> instances;

    const Instance& by_id(const std::string& id) const;
    std::optional<std::size_t> find(const std::string& id) const;
};

struct Violation {
    std::string instance_id; // empty for schema-level violations
    std::string field;
    std::string message;
};

std::vector<Violation> validate_collection(const AnnotatedCollection& c);

/// Reads a JSON manifest. Masks are either image paths (PBM/PGM, nonzero is
/// foreground), resolved relative to the manifest directory, or inline
/// run-length encodings. Instances flagged `occluded` are dropped. Throws
/// InputError naming the instance and field on any violation.
AnnotatedCollection load_collection(const std::filesystem::path& manifest_path);

struct SaveOptions {
    // Write masks as PGM files next to the manifest instead of inline RLE.
    bool mask_files = false;
};
void save_collection(const AnnotatedCollection& c, const std::filesystem::path& manifest_path,
                     const SaveOptions& opts = {});

// Row-major alternating background/foreground run lengths, starting with background.
std::vector<std::int64_t> encode_rle(const Mask& m);
Mask decode_rle(const std::vector<std::int64_t>& runs, int width, int height);

Mask read_mask_image(const std::filesystem::path& path);
void write_mask_pgm(const Mask& m, const std::filesystem::path& path);

Mask mirror_mask(const Mask& m);
Instance mirror_instance(const Instance& inst, const ClassSchema& schema);

/// Suffix appended to the id of a left-right flipped instance.
inline constexpr const char* kMirrorSuffix = "~flip";
std::string mirror_id(const std::string& id);

/// Originals followed immediately by their flipped copies.
AnnotatedCollection with_mirrors(const AnnotatedCollection& c);

/// Orthographic rendering of a closed mesh. A pixel is foreground iff its
/// center lies inside a projected triangle; keypoints project exactly and are
/// visible unless the mesh is hit nearer to the camera by more than
/// 1e-4 * bbox diagonal.
Instance render_synthetic_instance(const TriangleMesh& mesh, const std::vector<Vec3>& keypoints3d,
                                   const ScaledOrthoCamera& camera, int width, int height,
                                   const std::string& id = "synthetic", const std::string& class_name = "synthetic");

Mask rasterize_mesh(const TriangleMesh& mesh, const ScaledOrthoCamera& camera, int width, int height);

// True when the mesh covers `point` strictly nearer to the camera than
// depth(point) - eps.
bool occluded_by_mesh(const TriangleMesh& mesh, const ScaledOrthoCamera& camera, const Vec3& point, double eps);

} // namespace silhlift

#pragma once

#include "silhlift/carve.hpp"
#include "silhlift/meshkit.hpp"
#include "silhlift/rank.hpp"
#include "silhlift/shapes.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace silhlift {

enum class SelectionMode { ranked, random, oracle };
SelectionMode parse_selection(const std::string& s);
std::string to_string(SelectionMode m);

struct RunConfig {
    std::uint64_t seed = 0;
    int grid_res = 96;
    std::vector<double> threshold_deg{15.0}; // several values run a sweep
    int n_samples = 20;
    double lambda = 1.0;
    SelectionMode selection = SelectionMode::ranked;
    bool refine = true;
    bool imprint = true;
    int rms_samples = 20000;
    int canonical_res = 128;
    bool export_proposals = false;
    std::string gt; // ground-truth bundle for oracle selection

    // synth
    int n_views = 5;
    int image_size = 200;
    double elevation_mean = 10.0;
    double elevation_std = 15.0;
    double elevation_min = -20.0;
    double elevation_max = 60.0;
    std::vector<std::array<double, 3>> views; // explicit (azimuth, elevation, roll); overrides sampling
    double drop_keypoints = 0.0;              // probability of hiding each visible keypoint

    // cluster / demo shapes
    int k = 5;
    int shape_count = 10;

    void validate() const; // throws InputError
};

/// Applies "key": value pairs from a JSON object; unknown keys are errors.
void apply_config_json(RunConfig& cfg, const std::string& json_text);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
// Single setting from its textual form, e.g. ("grid_res", "64").
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string config_to_json(const RunConfig& cfg);

struct CameraSet {
    std::string class_name;
    MeanShape shape;
    std::vector<std::string> ids;
    std::vector<ScaledOrthoCamera> cameras;
    std::vector<bool> refined;
    std::vector<double> energy;      // refinement energy; reprojection residual when not refined
    std::vector<std::string> source; // "factorization" or "estimated"
    std::vector<std::string> warnings;

    std::optional<std::size_t> find(const std::string& id) const;
};

/// Factorization on the collection (flipped copies included), then per-image
/// refinement unless disabled. Instances with fewer than three keypoints get
/// a camera from estimate_camera_for_new_image; those without any are left
/// out with a warning.
CameraSet estimate_cameras(const AnnotatedCollection& collection_with_mirrors, const RunConfig& cfg);
void write_camera_file(const CameraSet& cams, const std::filesystem::path& path);
CameraSet read_camera_file(const std::filesystem::path& path);

struct GroundTruth {
    std::string class_name;
    std::map<std::string, TriangleMesh> meshes;             // by mesh name
    std::map<std::string, std::vector<Vec3>> keypoints;     // by mesh name
    std::map<std::string, std::string> mesh_of;             // instance id -> mesh name
    std::map<std::string, ScaledOrthoCamera> cameras;       // by instance id
    std::vector<std::string> keypoint_names;

    // Mean of the labeled 3D keypoints over all meshes, columns ordered as `indices`.
    Mat3X mean_keypoints(const std::vector<int>& indices) const;
};
void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& dir);
GroundTruth read_ground_truth(const std::filesystem::path& dir);

/// +1 when the estimated gauge has the orientation of the ground truth, -1
/// when it is mirrored.
double gauge_depth_sign(const MeanShape& shape, const GroundTruth& gt);

/// Maps a reconstruction from the estimated world into the ground-truth
/// object frame through the two cameras of the same image: pixel coordinates
/// are shared and depth (in pixels) is carried over with `depth_sign`, its
/// offset chosen so the bounding-box mid-depths agree.
TriangleMesh map_to_ground_truth(const TriangleMesh& est, const ScaledOrthoCamera& est_cam,
                                 const ScaledOrthoCamera& gt_cam, const TriangleMesh& gt_mesh, double depth_sign);

struct SynthOutput {
    AnnotatedCollection collection;
    GroundTruth gt;
};
SynthOutput synthesize(const ShapeDirectory& shapes, const RunConfig& cfg);

struct ProposalRecord {
    std::size_t index = 0;
    double score = 0;
    std::optional<double> oracle_error;
    Triplet triplet;
    std::size_t occupied = 0;
    std::size_t uncovered_rays = 0;
};

struct InstanceReconstruction {
    std::string id;
    std::vector<ProposalRecord> proposals; // in ranked order
    std::size_t selected = 0;              // proposal index
    VoxelLabeling labeling;                // selected proposal
    std::vector<VoxelLabeling> all;        // every proposal, when requested
    std::vector<std::string> average_directions;
};

struct ReconstructionRun {
    double threshold_deg = 15;
    std::vector<InstanceReconstruction> instances;
};

/// Proposals, ranking and selection for every original (unflipped) instance.
ReconstructionRun reconstruct_collection(const AnnotatedCollection& collection_with_mirrors, const CameraSet& cams,
                                         const RunConfig& cfg, double threshold_deg, const GroundTruth* gt = nullptr,
                                         bool keep_all = false);

struct EvaluationRow {
    std::string id;
    SymmetricDistance distance;
};
struct CameraErrors {
    std::vector<double> azimuth, elevation, roll, geodesic;
    double median_azimuth = 0, median_elevation = 0, median_roll = 0, median_geodesic = 0;
};
struct Evaluation {
    std::vector<EvaluationRow> rows;
    std::vector<std::string> missing;
    double mean_percent = 0;
    std::optional<CameraErrors> cameras;
};

CameraErrors camera_errors(const CameraSet& cams, const GroundTruth& gt);
SymmetricDistance evaluate_mesh(const TriangleMesh& recon, const std::string& id, const CameraSet& cams,
                                const GroundTruth& gt, double depth_sign, const RunConfig& cfg);

double median(std::vector<double> v);

// Command entry points. They return normally on success and throw
// InputError / NumericError otherwise.
void cmd_cameras(const std::filesystem::path& manifest, const std::filesystem::path& out, const RunConfig& cfg);
void cmd_reconstruct(const std::filesystem::path& manifest, const std::filesystem::path& cameras,
                     const std::filesystem::path& out_dir, const RunConfig& cfg);
void cmd_evaluate(const std::filesystem::path& recon_dir, const std::filesystem::path& gt_dir,
                  const std::filesystem::path& out_dir, const RunConfig& cfg);
void cmd_synth(const std::filesystem::path& mesh_dir, const std::filesystem::path& out_dir, const RunConfig& cfg);
void cmd_cluster(const std::filesystem::path& mesh_dir, const std::filesystem::path& out_dir, const RunConfig& cfg);
void cmd_demo_shapes(const std::filesystem::path& out_dir, const RunConfig& cfg);

} // namespace silhlift

/* silhlift C interface.
 *
 * Every function returns a status code; on failure silhlift_last_error()
 * describes the problem for the calling thread. Handles are opaque and owned
 * by the caller, who releases them with the matching *_free function.
 */
#ifndef SILHLIFT_H
#define SILHLIFT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SILHLIFT_API __declspec(dllexport)
#else
#define SILHLIFT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum silhlift_status {
    SILHLIFT_OK = 0,
    SILHLIFT_ERR_NUMERIC = 1, /* internal or numerical failure */
    SILHLIFT_ERR_INPUT = 2    /* bad input or usage */
} silhlift_status;

typedef struct silhlift_config silhlift_config;
typedef struct silhlift_collection silhlift_collection;
typedef struct silhlift_mesh silhlift_mesh;

SILHLIFT_API const char* silhlift_version(void);
SILHLIFT_API const char* silhlift_last_error(void);

/* Caps the worker threads; 0 restores the SILHLIFT_THREADS / hardware default. */
SILHLIFT_API void silhlift_set_threads(int n);

/* Run configuration. Keys: seed, grid_res, threshold_deg (comma list),
 * samples, lambda, selection, refine, imprint, rms_samples, canonical_res,
 * export_proposals, gt, n_views, image_size, elevation_mean, elevation_std,
 * elevation_min, elevation_max, views ("az,el,roll;..."), drop_keypoints, k,
 * shape_count. */
SILHLIFT_API silhlift_status silhlift_config_new(silhlift_config** out);
SILHLIFT_API void silhlift_config_free(silhlift_config* cfg);
SILHLIFT_API silhlift_status silhlift_config_set(silhlift_config* cfg, const char* key, const char* value);
SILHLIFT_API silhlift_status silhlift_config_load_file(silhlift_config* cfg, const char* path);
/* Effective configuration as JSON; the string lives until the next call on cfg. */
SILHLIFT_API silhlift_status silhlift_config_to_json(silhlift_config* cfg, const char** json);

SILHLIFT_API silhlift_status silhlift_run_cameras(const silhlift_config* cfg, const char* manifest,
                                                  const char* out_file);
SILHLIFT_API silhlift_status silhlift_run_reconstruct(const silhlift_config* cfg, const char* manifest,
                                                      const char* cameras, const char* out_dir);
SILHLIFT_API silhlift_status silhlift_run_evaluate(const silhlift_config* cfg, const char* recon_dir,
                                                   const char* gt_dir, const char* out_dir);
SILHLIFT_API silhlift_status silhlift_run_synth(const silhlift_config* cfg, const char* mesh_dir, const char* out_dir);
SILHLIFT_API silhlift_status silhlift_run_cluster(const silhlift_config* cfg, const char* mesh_dir,
                                                  const char* out_dir);
SILHLIFT_API silhlift_status silhlift_run_demo_shapes(const silhlift_config* cfg, const char* out_dir);

/* Annotated collections. */
SILHLIFT_API silhlift_status silhlift_collection_load(const char* manifest, silhlift_collection** out);
SILHLIFT_API void silhlift_collection_free(silhlift_collection* c);
SILHLIFT_API size_t silhlift_collection_size(const silhlift_collection* c);
SILHLIFT_API silhlift_status silhlift_collection_instance_id(const silhlift_collection* c, size_t i, const char** id);

/* Triangle meshes. */
SILHLIFT_API silhlift_status silhlift_mesh_load(const char* path, silhlift_mesh** out); /* .obj or .ply */
SILHLIFT_API void silhlift_mesh_free(silhlift_mesh* m);
SILHLIFT_API size_t silhlift_mesh_vertex_count(const silhlift_mesh* m);
SILHLIFT_API size_t silhlift_mesh_triangle_count(const silhlift_mesh* m);
/* 100 * max of the two directed RMS distances over `diagonal`. */
SILHLIFT_API silhlift_status silhlift_mesh_symmetric_distance(const silhlift_mesh* a, const silhlift_mesh* b,
                                                              double diagonal, size_t n_samples, uint64_t seed,
                                                              double* out_percent);

#ifdef __cplusplus
}
#endif

#endif

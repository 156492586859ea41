#include "silhlift/silhlift.h"

#include "silhlift/pipeline.hpp"

#include <exception>
#include <new>
#include <string>

struct silhlift_config {
    silhlift::RunConfig cfg;
    std::string json;
};

struct silhlift_collection {
    silhlift::AnnotatedCollection c;
};

struct silhlift_mesh {
    silhlift::TriangleMesh m;
};

namespace {

thread_local std::string last_error;

template <typename Fn>
silhlift_status guarded(Fn&& fn)
{
    try {
        fn();
        last_error.clear();
        return SILHLIFT_OK;
    } catch (const silhlift::InputError& e) {
        last_error = e.what();
        return SILHLIFT_ERR_INPUT;
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return SILHLIFT_ERR_NUMERIC;
    } catch (const std::filesystem::filesystem_error& e) {
        last_error = e.what();
        return SILHLIFT_ERR_INPUT;
    } catch (const std::exception& e) {
        last_error = e.what();
        return SILHLIFT_ERR_NUMERIC;
    } catch (...) {
        last_error = "unknown failure";
        return SILHLIFT_ERR_NUMERIC;
    }
}

void require(const void* p, const char* what)
{
    if (!p)
        throw silhlift::InputError(std::string("null argument: ") + what);
}

} // namespace

extern "C" {

const char* silhlift_version(void) { return "1.0.0"; }

const char* silhlift_last_error(void) { return last_error.c_str(); }

void silhlift_set_threads(int n) { silhlift::set_worker_count(n < 0 ? 0 : n); }

silhlift_status silhlift_config_new(silhlift_config** out)
{
    return guarded([&] {
        require(out, "out");
        *out = new silhlift_config;
    });
}

void silhlift_config_free(silhlift_config* cfg) { delete cfg; }

silhlift_status silhlift_config_set(silhlift_config* cfg, const char* key, const char* value)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(key, "key");
        require(value, "value");
        silhlift::apply_config_value(cfg->cfg, key, value);
    });
}

silhlift_status silhlift_config_load_file(silhlift_config* cfg, const char* path)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(path, "path");
        silhlift::apply_config_file(cfg->cfg, path);
    });
}

silhlift_status silhlift_config_to_json(silhlift_config* cfg, const char** json)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(json, "json");
        cfg->json = silhlift::config_to_json(cfg->cfg);
        *json = cfg->json.c_str();
    });
}

silhlift_status silhlift_run_cameras(const silhlift_config* cfg, const char* manifest, const char* out_file)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(manifest, "manifest");
        require(out_file, "out_file");
        silhlift::cmd_cameras(manifest, out_file, cfg->cfg);
    });
}

silhlift_status silhlift_run_reconstruct(const silhlift_config* cfg, const char* manifest, const char* cameras,
                                         const char* out_dir)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(manifest, "manifest");
        require(cameras, "cameras");
        require(out_dir, "out_dir");
        silhlift::cmd_reconstruct(manifest, cameras, out_dir, cfg->cfg);
    });
}

silhlift_status silhlift_run_evaluate(const silhlift_config* cfg, const char* recon_dir, const char* gt_dir,
                                      const char* out_dir)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(recon_dir, "recon_dir");
        require(gt_dir, "gt_dir");
        require(out_dir, "out_dir");
        silhlift::cmd_evaluate(recon_dir, gt_dir, out_dir, cfg->cfg);
    });
}

silhlift_status silhlift_run_synth(const silhlift_config* cfg, const char* mesh_dir, const char* out_dir)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(mesh_dir, "mesh_dir");
        require(out_dir, "out_dir");
        silhlift::cmd_synth(mesh_dir, out_dir, cfg->cfg);
    });
}

silhlift_status silhlift_run_cluster(const silhlift_config* cfg, const char* mesh_dir, const char* out_dir)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(mesh_dir, "mesh_dir");
        require(out_dir, "out_dir");
        silhlift::cmd_cluster(mesh_dir, out_dir, cfg->cfg);
    });
}

silhlift_status silhlift_run_demo_shapes(const silhlift_config* cfg, const char* out_dir)
{
    return guarded([&] {
        require(cfg, "cfg");
        require(out_dir, "out_dir");
        silhlift::cmd_demo_shapes(out_dir, cfg->cfg);
    });
}

silhlift_status silhlift_collection_load(const char* manifest, silhlift_collection** out)
{
    return guarded([&] {
        require(manifest, "manifest");
        require(out, "out");
        auto* c = new silhlift_collection;
        try {
            c->c = silhlift::load_collection(manifest);
        } catch (...) {
            delete c;
            throw;
        }
        *out = c;
    });
}

void silhlift_collection_free(silhlift_collection* c) { delete c; }

size_t silhlift_collection_size(const silhlift_collection* c) { return c ? c->c.instances.size() : 0; }

silhlift_status silhlift_collection_instance_id(const silhlift_collection* c, size_t i, const char** id)
{
    return guarded([&] {
        require(c, "collection");
        require(id, "id");
        if (i >= c->c.instances.size())
            throw silhlift::InputError("instance index out of range");
        *id = c->c.instances[i].id.c_str();
    });
}

silhlift_status silhlift_mesh_load(const char* path, silhlift_mesh** out)
{
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        const std::filesystem::path p(path);
        auto* m = new silhlift_mesh;
        try {
            m->m = p.extension() == ".ply" ? silhlift::read_ply(p) : silhlift::read_obj(p);
        } catch (...) {
            delete m;
            throw;
        }
        *out = m;
    });
}

void silhlift_mesh_free(silhlift_mesh* m) { delete m; }

size_t silhlift_mesh_vertex_count(const silhlift_mesh* m) { return m ? m->m.vertices.size() : 0; }

size_t silhlift_mesh_triangle_count(const silhlift_mesh* m) { return m ? m->m.triangles.size() : 0; }

silhlift_status silhlift_mesh_symmetric_distance(const silhlift_mesh* a, const silhlift_mesh* b, double diagonal,
                                                 size_t n_samples, uint64_t seed, double* out_percent)
{
    return guarded([&] {
        require(a, "a");
        require(b, "b");
        require(out_percent, "out_percent");
        *out_percent = silhlift::symmetric_distance(a->m, b->m, diagonal, n_samples, seed);
    });
}

} // extern "C"

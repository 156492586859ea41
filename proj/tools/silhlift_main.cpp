// Command-line front end; every command goes through the C interface.
#include "silhlift/silhlift.h"

#include <CLI11.hpp>

#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace {

struct Setting {
    const char* key;
    std::string value;
    CLI::Option* option = nullptr;
};

// Flags shared by all subcommands, applied on top of --config.
struct SharedFlags {
    std::string config;
    std::vector<Setting> settings;
    CLI::Option* no_refine = nullptr;
    CLI::Option* no_imprint = nullptr;
    CLI::Option* export_proposals = nullptr;
    CLI::Option* config_opt = nullptr;

    void add(CLI::App* app)
    {
        settings = {{"seed", {}}, {"grid_res", {}}, {"threshold_deg", {}}, {"samples", {}}, {"lambda", {}},
                    {"selection", {}}, {"rms_samples", {}}, {"gt", {}}, {"threads", {}}};
        const char* flags[] = {"--seed", "--grid-res", "--threshold-deg", "--samples", "--lambda",
                               "--selection", "--rms-samples", "--gt", "--threads"};
        const char* help[] = {"root random seed",
                              "voxel grid resolution per axis",
                              "principal-direction clustering threshold in degrees; a comma list runs a sweep",
                              "proposals per reference instance",
                              "silhouette term weight for camera refinement",
                              "ranked, random or oracle",
                              "surface samples per direction for mesh distances",
                              "ground-truth bundle directory (oracle selection, error columns)",
                              "worker threads (0 = default)"};
        for (std::size_t i = 0; i < settings.size(); ++i)
            settings[i].option = app->add_option(flags[i], settings[i].value, help[i]);
        no_refine = app->add_flag("--no-refine", "skip silhouette-based camera refinement");
        no_imprint = app->add_flag("--no-imprint", "carve plain visual hulls");
        export_proposals = app->add_flag("--export-proposals", "write every proposal's occupancy file");
        config_opt = app->add_option("--config", config, "JSON configuration file");
    }
};

struct ConfigHandle {
    silhlift_config* cfg = nullptr;
    ~ConfigHandle() { silhlift_config_free(cfg); }
};

int fail(silhlift_status s)
{
    std::fprintf(stderr, "error: %s\n", silhlift_last_error());
    return static_cast<int>(s);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Object reconstruction from silhouettes and keypoints of annotated image collections"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(silhlift_version()));

    std::string out, manifest, cameras, recon_dir, gt_dir, mesh_dir;

    auto* cam = app.add_subcommand("cameras", "factorize and refine cameras for a manifest");
    cam->add_option("manifest", manifest, "annotation manifest (JSON)")->required();
    cam->add_option("--out", out, "camera file to write")->required();

    auto* rec = app.add_subcommand("reconstruct", "carve, rank and select reconstructions");
    rec->add_option("manifest", manifest, "annotation manifest (JSON)")->required();
    rec->add_option("cameras", cameras, "camera file from the cameras command")->required();
    rec->add_option("--out", out, "output directory")->required();

    auto* ev = app.add_subcommand("evaluate", "compare reconstructions with ground truth");
    ev->add_option("reconstructions", recon_dir, "output directory of the reconstruct command")->required();
    ev->add_option("ground_truth", gt_dir, "ground-truth bundle directory")->required();
    ev->add_option("--out", out, "output directory")->required();

    auto* syn = app.add_subcommand("synth", "render a synthetic manifest from labeled meshes");
    syn->add_option("meshes", mesh_dir, "directory with OBJ meshes and keypoints.json")->required();
    syn->add_option("--out", out, "output directory")->required();
    std::string n_views, image_size, view_list, drop;
    auto* o_views = syn->add_option("--views", n_views, "views per mesh");
    auto* o_size = syn->add_option("--image-size", image_size, "image width and height in pixels");
    auto* o_list = syn->add_option("--view-list", view_list, "explicit views \"az,el,roll;az,el,roll\" in degrees");
    auto* o_drop = syn->add_option("--drop-keypoints", drop, "probability of hiding each visible keypoint");

    auto* clu = app.add_subcommand("cluster", "K-medoids clustering of meshes by symmetric distance");
    clu->add_option("meshes", mesh_dir, "directory of OBJ meshes")->required();
    clu->add_option("--out", out, "output directory")->required();
    std::string k;
    auto* o_k = clu->add_option("--k", k, "number of clusters (default 5)");

    auto* demo = app.add_subcommand("demo-shapes", "write a procedural labeled shape family");
    demo->add_option("--out", out, "output directory")->required();
    std::string count;
    auto* o_count = demo->add_option("--count", count, "number of shapes (default 10)");

    std::vector<std::pair<CLI::App*, std::unique_ptr<SharedFlags>>> shared;
    for (auto* sub : {cam, rec, ev, syn, clu, demo}) {
        auto flags = std::make_unique<SharedFlags>();
        flags->add(sub);
        shared.emplace_back(sub, std::move(flags));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    ConfigHandle h;
    if (auto s = silhlift_config_new(&h.cfg); s != SILHLIFT_OK)
        return fail(s);

    SharedFlags* flags = nullptr;
    CLI::App* active = nullptr;
    for (auto& [sub, f] : shared)
        if (sub->parsed()) {
            flags = f.get();
            active = sub;
        }

    if (flags->config_opt->count() > 0)
        if (auto s = silhlift_config_load_file(h.cfg, flags->config.c_str()); s != SILHLIFT_OK)
            return fail(s);
    for (const auto& st : flags->settings) {
        if (st.option->count() == 0)
            continue;
        if (std::string(st.key) == "threads") {
            try {
                silhlift_set_threads(std::stoi(st.value));
            } catch (const std::exception&) {
                std::fprintf(stderr, "error: --threads expects an integer\n");
                return 2;
            }
            continue;
        }
        if (auto s = silhlift_config_set(h.cfg, st.key, st.value.c_str()); s != SILHLIFT_OK)
            return fail(s);
    }
    std::vector<std::pair<const char*, std::string>> values;
    if (flags->no_refine->count() > 0)
        values.emplace_back("refine", "false");
    if (flags->no_imprint->count() > 0)
        values.emplace_back("imprint", "false");
    if (flags->export_proposals->count() > 0)
        values.emplace_back("export_proposals", "true");
    if (o_views->count() > 0)
        values.emplace_back("n_views", n_views);
    if (o_size->count() > 0)
        values.emplace_back("image_size", image_size);
    if (o_list->count() > 0)
        values.emplace_back("views", view_list);
    if (o_drop->count() > 0)
        values.emplace_back("drop_keypoints", drop);
    if (o_k->count() > 0)
        values.emplace_back("k", k);
    if (o_count->count() > 0)
        values.emplace_back("shape_count", count);
    for (const auto& [key, value] : values)
        if (auto s = silhlift_config_set(h.cfg, key, value.c_str()); s != SILHLIFT_OK)
            return fail(s);

    silhlift_status s = SILHLIFT_OK;
    if (active == cam)
        s = silhlift_run_cameras(h.cfg, manifest.c_str(), out.c_str());
    else if (active == rec)
        s = silhlift_run_reconstruct(h.cfg, manifest.c_str(), cameras.c_str(), out.c_str());
    else if (active == ev)
        s = silhlift_run_evaluate(h.cfg, recon_dir.c_str(), gt_dir.c_str(), out.c_str());
    else if (active == syn)
        s = silhlift_run_synth(h.cfg, mesh_dir.c_str(), out.c_str());
    else if (active == clu)
        s = silhlift_run_cluster(h.cfg, mesh_dir.c_str(), out.c_str());
    else if (active == demo)
        s = silhlift_run_demo_shapes(h.cfg, out.c_str());
    return s == SILHLIFT_OK ? 0 : fail(s);
}

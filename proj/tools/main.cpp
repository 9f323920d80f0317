#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gsrig/dataset.hpp"
#include "gsrig/gradcheck.hpp"
#include "gsrig/metrics.hpp"
#include "gsrig/synth.hpp"
#include "gsrig/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gsrig;

namespace {

void parse_size(const std::string& s, int& w, int& h) {
    const size_t x = s.find('x');
    if (x == std::string::npos)
        throw ArgumentError("--size expects WxH, got '" + s + "'");
    w = std::stoi(s.substr(0, x));
    h = std::stoi(s.substr(x + 1));
}

// "zeros", "0.1,0.2,..." -> coefficient vector of the requested length.
std::vector<double> parse_coeffs(const std::string& s, size_t n) {
    std::vector<double> out;
    if (s == "zeros") {
        out.assign(n, 0.0);
        return out;
    }
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    if (out.size() != n)
        throw ArgumentError("expected " + std::to_string(n) +
                            " comma-separated values, got " +
                            std::to_string(out.size()));
    return out;
}

std::vector<DriveEntry> load_drive(const std::string& path, const Dataset& ds) {
    std::ifstream f(path);
    if (!f) throw LoadError("cannot open: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw LoadError("corrupt JSON in " + path + ": " + e.what());
    }
    std::vector<DriveEntry> drive;
    for (const auto& e : j) {
        DriveEntry d;
        d.gamma_exp = e.at("exp").get<std::vector<double>>();
        const auto& pose = e.at("pose");
        for (int i = 0; i < 4; ++i) d.gamma_pose[i] = pose.at(i);
        const auto& cam = e.at("camera");
        if (cam.is_number_integer()) {
            const int idx = cam;
            if (idx < 0 || idx >= int(ds.cameras.size()))
                throw ArgumentError("drive camera index out of range: " +
                                    std::to_string(idx));
            d.camera = ds.cameras[idx];
        } else {
            d.camera = camera_from_json_array(cam.get<std::vector<double>>());
        }
        drive.push_back(d);
    }
    return drive;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    f << text << "\n";
    if (!f) throw LoadError("cannot write: " + path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Riggable gaussian-splat avatar toolkit"};
    app.require_subcommand(1);

    std::string data_dir, out_path, ckpt_path, drive_path, split = "setting1";
    std::string prior = "learnable", size_str, exp_str = "zeros",
                pose_str = "zeros";
    int iters = -1, camera_index = 0;
    uint64_t seed = 1;
    bool masked = false;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--out", out_path, "output dataset directory")->required();
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--size", size_str, "frame size as WxH");
    synth->add_option("--iters", iters)->description("training frame count");

    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_path, "checkpoint directory")->required();
    train->add_option("--prior", prior, "learnable | fixed | none");
    train->add_option("--iters", iters, "training iterations");
    train->add_option("--seed", seed, "training seed");

    auto* render = app.add_subcommand("render", "Render one driven frame");
    render->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
    render->add_option("--data", data_dir, "dataset the checkpoint was trained on")->required();
    render->add_option("--out", out_path, "output PNG path")->required();
    render->add_option("--exp", exp_str, "expression coefficients, 'zeros' or comma list");
    render->add_option("--pose", pose_str, "head axis-angle + jaw, 'zeros' or 4 comma values");
    render->add_option("--camera", camera_index, "dataset camera index");

    auto* reanim = app.add_subcommand("reanimate", "Render a drive sequence");
    reanim->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
    reanim->add_option("--data", data_dir, "dataset the checkpoint was trained on")->required();
    reanim->add_option("--drive", drive_path, "JSON drive sequence")->required();
    reanim->add_option("--out", out_path, "output frame directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a split");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
    eval_cmd->add_option("--split", split, "which split to score")
        ->check(CLI::IsMember({"train", "setting1", "setting2"}));
    eval_cmd->add_option("--out", out_path, "also write the report here");
    eval_cmd->add_flag("--masked", masked, "require head masks on the split");

    auto* ablate = app.add_subcommand("ablate", "Train and compare prior modes");
    ablate->add_option("--data", data_dir, "dataset directory")->required();
    ablate->add_option("--iters", iters, "iterations per mode");
    ablate->add_option("--seed", seed, "shared seed for all modes");
    ablate->add_option("--out", out_path, "also write the report here");

    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Finite-difference gradient gate");
    gradcheck_cmd->add_option("--seed", seed, "instance seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 2;
    }

    try {
        if (synth->parsed()) {
            SynthConfig cfg;
            cfg.seed = seed;
            if (!size_str.empty()) parse_size(size_str, cfg.width, cfg.height);
            if (iters > 0) cfg.train_frames = iters;
            generate_dataset(cfg, out_path);
            std::cout << json{{"dataset", out_path}}.dump() << "\n";
        } else if (train->parsed()) {
            Dataset ds = load_dataset(data_dir);
            TrainConfig cfg;
            cfg.seed = seed;
            cfg.prior_mode = prior_mode_from_string(prior);
            if (iters > 0) cfg.iterations = iters;
            TrainerState state = init_trainer(ds, cfg);
            gsrig::train(state, ds, &std::cout);
            save_checkpoint(state, out_path, ds.fingerprint);
            std::cout << json{{"checkpoint", out_path},
                              {"gaussians", state.gaussian_count()}}
                             .dump()
                      << "\n";
        } else if (render->parsed()) {
            Dataset ds = load_dataset(data_dir);
            TrainerState state = load_checkpoint(ckpt_path, ds);
            const auto exp = parse_coeffs(exp_str, size_t(ds.expression_dim));
            const auto pose_v = parse_coeffs(pose_str, 4);
            if (camera_index < 0 || camera_index >= int(ds.cameras.size()))
                throw ArgumentError("--camera index out of range");
            const Image img = render_model(
                state, exp, {pose_v[0], pose_v[1], pose_v[2], pose_v[3]},
                ds.cameras[camera_index]);
            save_png_srgb(img, out_path);
            save_f32(img, out_path + ".f32");
            std::cout << json{{"image", out_path}}.dump() << "\n";
        } else if (reanim->parsed()) {
            Dataset ds = load_dataset(data_dir);
            TrainerState state = load_checkpoint(ckpt_path, ds);
            const auto drive = load_drive(drive_path, ds);
            fs::create_directories(out_path);
            const auto images = reanimate(state, drive);
            for (size_t i = 0; i < images.size(); ++i) {
                char name[16];
                std::snprintf(name, sizeof(name), "%05zu.png", i);
                save_png_srgb(images[i], (fs::path(out_path) / name).string());
            }
            std::cout << json{{"frames", images.size()}, {"out", out_path}}.dump()
                      << "\n";
        } else if (eval_cmd->parsed()) {
            Dataset ds = load_dataset(data_dir);
            TrainerState state = load_checkpoint(ckpt_path, ds);
            EvalReport report = evaluate(state, ds, split);
            if (masked && std::isnan(report.mean_psnr_masked))
                throw ArgumentError("--masked: split has no masks");
            const std::string text = report.to_json();
            if (!out_path.empty()) write_text(out_path, text);
            std::cout << text << "\n";
        } else if (ablate->parsed()) {
            Dataset ds = load_dataset(data_dir);
            TrainConfig cfg;
            cfg.seed = seed;
            if (iters > 0) cfg.iterations = iters;
            AblationReport report = ablation_run(ds, cfg);
            const std::string text = report.to_json();
            if (!out_path.empty()) write_text(out_path, text);
            std::cout << text << "\n";
        } else if (gradcheck_cmd->parsed()) {
            const auto results = run_gradcheck(seed);
            for (const auto& r : results)
                std::cout << json{{"op", r.op},
                                  {"max_rel_err", r.max_rel_err},
                                  {"pass", r.pass}}
                                 .dump()
                          << "\n";
            if (!all_passed(results)) {
                std::cerr << json{{"error", "gradient check failed"}}.dump()
                          << "\n";
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}

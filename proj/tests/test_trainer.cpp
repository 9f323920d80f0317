#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gsrig/metrics.hpp"
#include "gsrig/synth.hpp"
#include "gsrig/trainer.hpp"

using namespace gsrig;
namespace fs = std::filesystem;

namespace {

// One tiny dataset shared by every case in this file; generating it per
// case would dominate the runtime.
const Dataset& tiny_dataset() {
    static Dataset ds = [] {
        SynthConfig cfg;
        cfg.seed = 23;
        cfg.icosphere_subdivision = 1;
        cfg.expression_count = 3;
        cfg.background_points = 50;
        cfg.width = 24;
        cfg.height = 24;
        cfg.train_frames = 6;
        cfg.setting1_frames = 2;
        cfg.setting2_frames = 2;
        cfg.train_cameras = 2;
        cfg.setting2_cameras = 2;
        const fs::path dir = fs::temp_directory_path() / "gsrig_trainer_fixture";
        fs::remove_all(dir);
        generate_dataset(cfg, dir.string());
        return load_dataset(dir.string());
    }();
    return ds;
}

TrainConfig tiny_config(int iterations = 3) {
    TrainConfig cfg;
    cfg.iterations = iterations;
    cfg.seed = 5;
    cfg.log_every = 1000000;
    return cfg;
}

}  // namespace

TEST_CASE("trainer initializes from mesh vertices plus background points") {
    TrainerState s = init_trainer(tiny_dataset(), tiny_config());
    const auto& ds = tiny_dataset();
    CHECK(s.gaussian_count() == ds.mesh.vertex_count() + ds.init_points.size());
    for (size_t i = 0; i < s.gaussian_count(); ++i) {
        CHECK(s.rotations(int(i), 0) == 1.0);  // identity quaternions
        CHECK(s.rotations(int(i), 1) == 0.0);
        const double op = 1.0 / (1.0 + std::exp(-s.opacity_logits(int(i), 0)));
        CHECK(op == doctest::Approx(0.1).epsilon(1e-10));
    }
    // Mesh splats are tagged apart from the background.
    CHECK(s.source_tags[0] == SourceTag::MeshSeeded);
    CHECK(s.source_tags[s.gaussian_count() - 1] == SourceTag::Background);
    CHECK(s.scene_extent > 0.0);
}

TEST_CASE("one training step produces a finite positive loss and moves params") {
    TrainerState s = init_trainer(tiny_dataset(), tiny_config());
    const ad::Tensor before = s.positions;
    const StepResult r = train_step_on_frame(s, tiny_dataset(), 1);
    CHECK(std::isfinite(r.breakdown.at("total")));
    CHECK(r.breakdown.at("total") > 0.0);
    CHECK(r.breakdown.at("l1") > 0.0);
    CHECK(s.positions.v != before.v);
    CHECK(s.iteration == 1);
    // Quaternions stay normalized after the update.
    for (size_t i = 0; i < s.gaussian_count(); ++i) {
        double n2 = 0;
        for (int c = 0; c < 4; ++c) n2 += s.rotations(int(i), c) * s.rotations(int(i), c);
        CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("identical seeds give bitwise identical short runs") {
    TrainerState a = init_trainer(tiny_dataset(), tiny_config(8));
    TrainerState b = init_trainer(tiny_dataset(), tiny_config(8));
    train(a, tiny_dataset(), nullptr);
    train(b, tiny_dataset(), nullptr);
    CHECK(a.positions.v == b.positions.v);
    CHECK(a.rotations.v == b.rotations.v);
    CHECK(a.opacity_logits.v == b.opacity_logits.v);
    CHECK(a.field.triplane[0].v == b.field.triplane[0].v);
    CHECK(a.iteration == b.iteration);
}

TEST_CASE("checkpoint round trip renders bitwise identically") {
    const Dataset& ds = tiny_dataset();
    TrainerState s = init_trainer(ds, tiny_config());
    for (int i = 0; i < 3; ++i) train_step(s, ds);

    const fs::path dir = fs::temp_directory_path() / "gsrig_ckpt_rt";
    fs::remove_all(dir);
    save_checkpoint(s, dir.string(), ds.fingerprint);
    TrainerState loaded = load_checkpoint(dir.string(), ds);
    CHECK(loaded.iteration == s.iteration);
    CHECK(loaded.gaussian_count() == s.gaussian_count());
    CHECK(loaded.config.prior_mode == s.config.prior_mode);

    const FrameRecord& fr = ds.frames[2];
    const Image a = render_model(s, fr.gamma_exp, fr.gamma_pose, fr.camera);
    const Image b = render_model(loaded, fr.gamma_exp, fr.gamma_pose, fr.camera);
    CHECK(a.data == b.data);

    // The RNG stream survives too, so continued training stays on rails.
    const StepResult r1 = train_step(s, ds);
    const StepResult r2 = train_step(loaded, ds);
    CHECK(r1.frame_index == r2.frame_index);
    CHECK(s.positions.v == loaded.positions.v);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint refuses a foreign dataset fingerprint") {
    const Dataset& ds = tiny_dataset();
    TrainerState s = init_trainer(ds, tiny_config());
    const fs::path dir = fs::temp_directory_path() / "gsrig_ckpt_fp";
    fs::remove_all(dir);
    save_checkpoint(s, dir.string(), ds.fingerprint + 1);
    CHECK_THROWS_AS(load_checkpoint(dir.string(), ds), SchemaError);
    fs::remove_all(dir);
}

TEST_CASE("densification prunes, clones, and splits by the published rules") {
    const Dataset& ds = tiny_dataset();
    TrainerState s = init_trainer(ds, tiny_config());
    const size_t n = s.gaussian_count();

    // Hand-craft the statistics: gaussian 0 transparent, 1 high-gradient
    // small (clone), 2 high-gradient large (split), rest untouched.
    s.opacity_logits(0, 0) = std::log(1e-3 / (1 - 1e-3));
    s.grad2d_accum.assign(n, 0.0);
    s.grad2d_count.assign(n, 1);
    s.grad2d_accum[1] = s.grad2d_accum[2] = 10 * s.config.densify_grad_threshold;
    const double split_thresh = s.config.split_scale_fraction * s.scene_extent;
    for (int c = 0; c < 3; ++c) {
        s.log_scales(1, c) = std::log(0.5 * split_thresh);
        s.log_scales(2, c) = std::log(4.0 * split_thresh);
    }
    const Vec3 pos1(s.positions(1, 0), s.positions(1, 1), s.positions(1, 2));
    const Vec3 pos2(s.positions(2, 0), s.positions(2, 1), s.positions(2, 2));

    const DensifyResult r = densify_and_prune(s);
    CHECK(r.pruned == 1);
    CHECK(r.cloned == 1);
    CHECK(r.split == 1);
    // -1 pruned, +1 clone, +1 from the split (one in, two out).
    CHECK(s.gaussian_count() == n + 1);
    CHECK(s.bindings.size() == s.gaussian_count());
    CHECK(s.grad2d_accum.size() == s.gaussian_count());
    for (double a : s.grad2d_accum) CHECK(a == 0.0);

    // Row 0 was pruned, so the clone pair occupies rows 0-1 and the split
    // children rows 2-3. The clone keeps its scale and sits half a sigma
    // away; the children shrink by 1.6 and straddle the parent.
    const Vec3 clone(s.positions(0, 0), s.positions(0, 1), s.positions(0, 2));
    const Vec3 copy(s.positions(1, 0), s.positions(1, 1), s.positions(1, 2));
    CHECK((clone - pos1).norm() < 1e-12);
    CHECK((copy - clone).norm() ==
          doctest::Approx(0.5 * 0.5 * split_thresh).epsilon(1e-9));
    CHECK(s.source_tags[1] == SourceTag::Densified);
    CHECK(s.log_scales(1, 0) == s.log_scales(0, 0));  // clone keeps scales
    const Vec3 child_a(s.positions(2, 0), s.positions(2, 1), s.positions(2, 2));
    const Vec3 child_b(s.positions(3, 0), s.positions(3, 1), s.positions(3, 2));
    CHECK(((child_a + child_b) / 2 - pos2).norm() < 1e-9);
    CHECK(s.log_scales(2, 0) ==
          doctest::Approx(std::log(4.0 * split_thresh) - std::log(1.6)));
    CHECK(s.source_tags[2] == SourceTag::Densified);
    CHECK(s.source_tags[3] == SourceTag::Densified);

    // Optimizer moments restart for the rebuilt cloud tensors.
    CHECK(s.adam.state().find("positions") == s.adam.state().end());
}

TEST_CASE("reanimation with canonical drive matches the direct render") {
    const Dataset& ds = tiny_dataset();
    TrainerState s = init_trainer(ds, tiny_config());
    DriveEntry e;
    e.gamma_exp.assign(ds.expression_dim, 0.0);
    e.camera = ds.cameras[0];
    const auto images = reanimate(s, {e});
    REQUIRE(images.size() == 1);
    const Image direct = render_model(s, e.gamma_exp, e.gamma_pose, e.camera);
    CHECK(images[0].data == direct.data);
}

TEST_CASE("render rejects mismatched expression dimension") {
    TrainerState s = init_trainer(tiny_dataset(), tiny_config());
    CHECK_THROWS_AS(
        render_model(s, {0.0}, {0, 0, 0, 0}, tiny_dataset().cameras[0]),
        ArgumentError);
}

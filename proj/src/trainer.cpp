#include "gsrig/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace gsrig {

namespace fs = std::filesystem;
using ad::Tape;
using ad::Tensor;
using nlohmann::json;

namespace {

Tape::Id sigmoid(Tape& t, Tape::Id x) {
    const Tensor& v = t.val(x);
    return t.div(t.constant(Tensor(v.rows, v.cols, 1.0)),
                 t.add_scalar(t.exp(t.scale(x, -1.0)), 1.0));
}

// Parameter tensors in a fixed order shared by registration, Adam updates
// and checkpoint serialization.
struct ParamRef {
    std::string name;
    Tensor* tensor;
};

std::vector<ParamRef> cloud_params(TrainerState& s) {
    return {{"cloud.positions", &s.positions},
            {"cloud.rotations", &s.rotations},
            {"cloud.log_scales", &s.log_scales},
            {"cloud.opacity_logits", &s.opacity_logits},
            {"cloud.colors", &s.colors}};
}

std::vector<ParamRef> field_params(TrainerState& s) {
    std::vector<ParamRef> out;
    s.field.for_each_tensor(
        [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
    return out;
}

// register_field pushes leaves in for_each_tensor order; flatten the id
// struct the same way so names and ids line up.
std::vector<Tape::Id> flatten_field_ids(const FieldIds& ids) {
    std::vector<Tape::Id> out;
    for (int p = 0; p < 3; ++p) out.push_back(ids.triplane[p]);
    auto mlp = [&](const std::vector<Tape::Id>& w, const std::vector<Tape::Id>& b) {
        for (size_t l = 0; l < w.size(); ++l) {
            out.push_back(w[l]);
            out.push_back(b[l]);
        }
    };
    mlp(ids.f_head_w, ids.f_head_b);
    mlp(ids.g_w, ids.g_b);
    out.push_back(ids.t_codes);
    mlp(ids.t_w, ids.t_b);
    mlp(ids.r_w, ids.r_b);
    mlp(ids.s_w, ids.s_b);
    return out;
}

std::vector<int> far_indices_from(const std::vector<GaussianBinding>& bindings) {
    std::vector<int> out;
    for (size_t i = 0; i < bindings.size(); ++i)
        if (!bindings[i].near_mesh) out.push_back(int(i));
    return out;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t(img.width * img.height, img.channels);
    t.v = img.data;
    return t;
}

void renormalize_quats(Tensor& q) {
    for (int i = 0; i < q.rows; ++i) {
        double n = 0;
        for (int c = 0; c < 4; ++c) n += q(i, c) * q(i, c);
        n = std::sqrt(n);
        if (n < 1e-12) {
            q(i, 0) = 1;
            q(i, 1) = q(i, 2) = q(i, 3) = 0;
        } else {
            for (int c = 0; c < 4; ++c) q(i, c) /= n;
        }
    }
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["iterations"] = c.iterations;
    j["densify_until"] = c.densify_until;
    j["densify_interval"] = c.densify_interval;
    j["densify_grad_threshold"] = c.densify_grad_threshold;
    j["prune_opacity_threshold"] = c.prune_opacity_threshold;
    j["split_scale_fraction"] = c.split_scale_fraction;
    j["seed"] = c.seed;
    j["prior_mode"] = to_string(c.prior_mode);
    j["log_every"] = c.log_every;
    j["lr_positions"] = {c.lr_positions.lr_start, c.lr_positions.lr_end,
                         c.lr_positions.decay_steps};
    j["lr_field"] = {c.lr_field.lr_start, c.lr_field.lr_end,
                     c.lr_field.decay_steps};
    j["lr_rotations"] = c.lr_rotations;
    j["lr_log_scales"] = c.lr_log_scales;
    j["lr_opacity"] = c.lr_opacity;
    j["lr_colors"] = c.lr_colors;
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.iterations = j.at("iterations");
    c.densify_until = j.at("densify_until");
    c.densify_interval = j.at("densify_interval");
    c.densify_grad_threshold = j.at("densify_grad_threshold");
    c.prune_opacity_threshold = j.at("prune_opacity_threshold");
    c.split_scale_fraction = j.at("split_scale_fraction");
    c.seed = j.at("seed");
    c.prior_mode = prior_mode_from_string(j.at("prior_mode"));
    c.log_every = j.at("log_every");
    c.lr_positions = {j.at("lr_positions")[0], j.at("lr_positions")[1],
                      j.at("lr_positions")[2]};
    c.lr_field = {j.at("lr_field")[0], j.at("lr_field")[1], j.at("lr_field")[2]};
    c.lr_rotations = j.at("lr_rotations");
    c.lr_log_scales = j.at("lr_log_scales");
    c.lr_opacity = j.at("lr_opacity");
    c.lr_colors = j.at("lr_colors");
    return c;
}

void quantize_f32(Tensor& t) {
    for (double& x : t.v) x = double(float(x));
}

}  // namespace

GaussianCloud TrainerState::cloud() const {
    GaussianCloud c;
    const int n = positions.rows;
    for (int i = 0; i < n; ++i) {
        c.positions.emplace_back(positions(i, 0), positions(i, 1), positions(i, 2));
        c.rotations.emplace_back(rotations(i, 0), rotations(i, 1), rotations(i, 2),
                                 rotations(i, 3));
        c.log_scales.emplace_back(log_scales(i, 0), log_scales(i, 1),
                                  log_scales(i, 2));
        c.opacity_logits.push_back(opacity_logits(i, 0));
        c.colors.emplace_back(colors(i, 0), colors(i, 1), colors(i, 2));
    }
    c.source_tags = source_tags;
    return c;
}

TrainerState init_trainer(const Dataset& dataset, const TrainConfig& config) {
    TrainerState s;
    s.config = config;
    s.rng.seed(config.seed);
    s.train_frames = dataset.split_indices("train");

    const MorphableMesh& mesh = dataset.mesh;
    std::vector<Vec3> points(mesh.vertices_can);
    points.insert(points.end(), dataset.init_points.begin(),
                  dataset.init_points.end());
    const size_t n = points.size();
    if (n < 4) throw ArgumentError("init_scene: fewer than 4 initial points");

    s.positions = Tensor(int(n), 3);
    s.rotations = Tensor(int(n), 4);
    s.log_scales = Tensor(int(n), 3);
    s.opacity_logits = Tensor(int(n), 1, std::log(0.1 / 0.9));
    s.colors = Tensor(int(n), 3, 0.5);
    KdTree init_tree(points);
    for (size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) s.positions(int(i), c) = points[i][c];
        s.rotations(int(i), 0) = 1.0;
        const auto nn = init_tree.knn(points[i], 4);
        const double mean_d =
            (nn.distances[1] + nn.distances[2] + nn.distances[3]) / 3.0;
        const double ls = std::log(std::max(mean_d, 1e-6));
        for (int c = 0; c < 3; ++c) s.log_scales(int(i), c) = ls;
        const bool is_vertex = i < mesh.vertex_count();
        if (!is_vertex) {
            const Vec3& col = dataset.init_colors[i - mesh.vertex_count()];
            for (int c = 0; c < 3; ++c) s.colors(int(i), c) = col[c];
        }
        s.source_tags.push_back(is_vertex ? SourceTag::MeshSeeded
                                          : SourceTag::Background);
    }

    DeformationConfig dcfg;
    dcfg.prior_mode = config.prior_mode;
    s.field = init_field(dcfg, mesh, points, dataset.expression_dim,
                         int(s.train_frames.size()), config.seed);
    s.scene_extent = s.field.scene_radius;
    s.mesh = mesh;
    s.vertex_tree = KdTree(mesh.vertices_can);
    s.bindings = bind_points(points, s.vertex_tree, dcfg, s.field.far_threshold);
    s.vertex_bindings = bind_points(mesh.vertices_can, s.vertex_tree, dcfg,
                                    s.field.far_threshold);
    s.far_indices = far_indices_from(s.bindings);
    s.grad2d_accum.assign(n, 0.0);
    s.grad2d_count.assign(n, 0);
    return s;
}

StepResult train_step_on_frame(TrainerState& s, const Dataset& dataset,
                               int frame_index) {
    const FrameRecord& fr = dataset.frames[frame_index];
    const MorphableMesh& mesh = dataset.mesh;
    const auto verts = evaluate_mesh(mesh, fr.gamma_exp, fr.gamma_pose);
    const auto fbd =
        frame_binding_data(s.bindings, mesh, verts, s.field.far_threshold);
    const auto fbd_v =
        frame_binding_data(s.vertex_bindings, mesh, verts, s.field.far_threshold);

    int frame_row = -1;
    for (size_t i = 0; i < s.train_frames.size(); ++i)
        if (s.train_frames[i] == frame_index) frame_row = int(i);

    Tape tape;
    FieldIds ids = register_field(tape, s.field);
    Tape::Id pos_id = tape.leaf(s.positions);
    Tape::Id rot_id = tape.leaf(s.rotations);
    Tape::Id ls_id = tape.leaf(s.log_scales);
    Tape::Id op_id = tape.leaf(s.opacity_logits);
    Tape::Id col_id = tape.leaf(s.colors);

    DeformOutputs def =
        deform_forward(tape, s.field, ids, pos_id, rot_id, ls_id, fbd,
                       fr.gamma_exp, fr.gamma_pose, frame_row);

    // The mesh-match loss runs the same field over the vertices themselves.
    Tensor vpos(int(mesh.vertex_count()), 3);
    Tensor delta_v(int(mesh.vertex_count()), 3);
    for (size_t i = 0; i < mesh.vertex_count(); ++i)
        for (int c = 0; c < 3; ++c) {
            vpos(int(i), c) = mesh.vertices_can[i][c];
            delta_v(int(i), c) = verts[i][c] - mesh.vertices_can[i][c];
        }
    Tensor vquat(int(mesh.vertex_count()), 4);
    for (int i = 0; i < vquat.rows; ++i) vquat(i, 0) = 1.0;
    DeformOutputs def_v = deform_forward(
        tape, s.field, ids, tape.constant(vpos), tape.constant(vquat),
        tape.constant(Tensor(int(mesh.vertex_count()), 3)), fbd_v, fr.gamma_exp,
        fr.gamma_pose, frame_row);

    RasterStats stats;
    Tape::Id rendered =
        raster_op(tape, def.x_def, def.q_def, def.log_scale_def,
                  sigmoid(tape, op_id), col_id, fr.camera, &stats);
    Tape::Id gt = tape.constant(image_to_tensor(fr.image));

    LossTerms terms;
    terms.l1 = l1_loss(tape, rendered, gt);
    terms.dssim = dssim_loss(tape, rendered, gt, fr.camera.width, fr.camera.height);
    terms.mesh = mesh_match_loss(tape, def_v.deform, delta_v);
    FarFieldLosses far =
        far_field_losses(tape, def.deform, def.q_prime, def.s_raw, s.far_indices);
    terms.global_def = far.global_def;
    terms.global_rot = far.global_rot;
    terms.global_scale = far.global_scale;
    terms.eta = small_term_losses(tape, def.eta, def.eta).eta;
    if (def.t_vec >= 0) terms.t_frame = tape.sum(tape.square(def.t_vec));

    StepResult result;
    result.frame_index = frame_index;
    Tape::Id total;
    try {
        total = total_loss(tape, terms, LossWeights{}, &result.breakdown);
    } catch (const TrainingError& e) {
        std::ostringstream msg;
        msg << e.what() << "; breakdown:";
        for (const auto& [k, v] : result.breakdown) msg << " " << k << "=" << v;
        throw TrainingError(msg.str());
    }
    tape.backward(total);

    const double lr_pos = ad::lr_at(s.config.lr_positions, s.iteration);
    const double lr_field = ad::lr_at(s.config.lr_field, s.iteration);
    s.adam.step("cloud.positions", s.positions, tape.grad(pos_id), lr_pos);
    s.adam.step("cloud.rotations", s.rotations, tape.grad(rot_id),
                s.config.lr_rotations);
    s.adam.step("cloud.log_scales", s.log_scales, tape.grad(ls_id),
                s.config.lr_log_scales);
    s.adam.step("cloud.opacity_logits", s.opacity_logits, tape.grad(op_id),
                s.config.lr_opacity);
    s.adam.step("cloud.colors", s.colors, tape.grad(col_id), s.config.lr_colors);
    const auto fids = flatten_field_ids(ids);
    auto fparams = field_params(s);
    for (size_t i = 0; i < fparams.size(); ++i)
        s.adam.step(fparams[i].name, *fparams[i].tensor, tape.grad(fids[i]),
                    lr_field);

    renormalize_quats(s.rotations);
    for (double& c : s.colors.v) c = std::clamp(c, 0.0, 1.0);

    for (size_t i = 0; i < s.gaussian_count(); ++i)
        if (stats.visible[i]) {
            s.grad2d_accum[i] += stats.grad_mean2d_norm[i];
            s.grad2d_count[i] += 1;
        }

    s.iteration += 1;
    return result;
}

StepResult train_step(TrainerState& s, const Dataset& dataset) {
    std::uniform_int_distribution<size_t> pick(0, s.train_frames.size() - 1);
    return train_step_on_frame(s, dataset, s.train_frames[pick(s.rng)]);
}

DensifyResult densify_and_prune(TrainerState& s) {
    DensifyResult res;
    const size_t n = s.gaussian_count();
    const double split_thresh = s.config.split_scale_fraction * s.scene_extent;

    Tensor positions(0, 3), rotations(0, 4), log_scales(0, 3),
        opacity_logits(0, 1), colors(0, 3);
    std::vector<SourceTag> tags;
    auto append = [&](int src, const Vec3& pos, const Vec3& ls, SourceTag tag) {
        const int r = positions.rows;
        positions.rows = rotations.rows = log_scales.rows = opacity_logits.rows =
            colors.rows = r + 1;
        for (int c = 0; c < 3; ++c) positions.v.push_back(pos[c]);
        for (int c = 0; c < 4; ++c) rotations.v.push_back(s.rotations(src, c));
        for (int c = 0; c < 3; ++c) log_scales.v.push_back(ls[c]);
        opacity_logits.v.push_back(s.opacity_logits(src, 0));
        for (int c = 0; c < 3; ++c) colors.v.push_back(s.colors(src, c));
        tags.push_back(tag);
    };

    for (size_t i = 0; i < n; ++i) {
        const double opacity =
            1.0 / (1.0 + std::exp(-s.opacity_logits(int(i), 0)));
        if (opacity < s.config.prune_opacity_threshold) {
            res.pruned += 1;
            continue;
        }
        const Vec3 pos(s.positions(int(i), 0), s.positions(int(i), 1),
                       s.positions(int(i), 2));
        const Vec3 ls(s.log_scales(int(i), 0), s.log_scales(int(i), 1),
                      s.log_scales(int(i), 2));
        const double mean_grad =
            s.grad2d_count[i] ? s.grad2d_accum[i] / s.grad2d_count[i] : 0.0;
        if (mean_grad <= s.config.densify_grad_threshold) {
            append(int(i), pos, ls, s.source_tags[i]);
            continue;
        }
        int major = 0;
        for (int c = 1; c < 3; ++c)
            if (ls[c] > ls[major]) major = c;
        const double sigma = std::exp(ls[major]);
        const Vec4 q(s.rotations(int(i), 0), s.rotations(int(i), 1),
                     s.rotations(int(i), 2), s.rotations(int(i), 3));
        const Vec3 axis = quat_to_matrix(quat_normalized(q)).col(major);
        if (sigma <= split_thresh) {
            append(int(i), pos, ls, s.source_tags[i]);
            append(int(i), pos + 0.5 * sigma * axis, ls, SourceTag::Densified);
            res.cloned += 1;
        } else {
            const Vec3 ls_small = ls.array() - std::log(1.6);
            append(int(i), pos + 0.5 * sigma * axis, ls_small,
                   SourceTag::Densified);
            append(int(i), pos - 0.5 * sigma * axis, ls_small,
                   SourceTag::Densified);
            res.split += 1;
        }
    }

    s.positions = std::move(positions);
    s.rotations = std::move(rotations);
    s.log_scales = std::move(log_scales);
    s.opacity_logits = std::move(opacity_logits);
    s.colors = std::move(colors);
    s.source_tags = std::move(tags);
    renormalize_quats(s.rotations);

    std::vector<Vec3> pts;
    for (int i = 0; i < s.positions.rows; ++i)
        pts.emplace_back(s.positions(i, 0), s.positions(i, 1), s.positions(i, 2));
    s.bindings =
        bind_points(pts, s.vertex_tree, s.field.config, s.field.far_threshold);
    s.far_indices = far_indices_from(s.bindings);
    for (const auto& p : cloud_params(s)) s.adam.reset(p.name);
    s.grad2d_accum.assign(pts.size(), 0.0);
    s.grad2d_count.assign(pts.size(), 0);
    return res;
}

void train(TrainerState& s, const Dataset& dataset, std::ostream* log_stream) {
    const int start = s.iteration;
    for (int i = start; i < s.config.iterations; ++i) {
        StepResult step = train_step(s, dataset);
        if (s.iteration <= s.config.densify_until &&
            s.iteration % s.config.densify_interval == 0)
            densify_and_prune(s);
        if (log_stream && (s.iteration % s.config.log_every == 0 ||
                           s.iteration == s.config.iterations)) {
            json line;
            line["iteration"] = s.iteration;
            line["gaussians"] = s.gaussian_count();
            line["frame"] = step.frame_index;
            line["lr_positions"] = ad::lr_at(s.config.lr_positions, s.iteration - 1);
            line["lr_field"] = ad::lr_at(s.config.lr_field, s.iteration - 1);
            line["loss"] = step.breakdown;
            (*log_stream) << line.dump() << "\n";
        }
    }
}

Image render_model(TrainerState& s, const std::vector<double>& gamma_exp,
                   const std::array<double, 4>& gamma_pose, const Camera& camera,
                   int frame_row) {
    if (int(gamma_exp.size()) != s.field.expression_dim)
        throw ArgumentError(
            "render: expression vector has " + std::to_string(gamma_exp.size()) +
            " coefficients, expected " + std::to_string(s.field.expression_dim));
    const auto verts = evaluate_mesh(s.mesh, gamma_exp, gamma_pose);
    const auto fbd =
        frame_binding_data(s.bindings, s.mesh, verts, s.field.far_threshold);

    Tape tape;
    FieldIds ids = register_field(tape, s.field);
    Tape::Id pos_id = tape.constant(s.positions);
    Tape::Id rot_id = tape.constant(s.rotations);
    Tape::Id ls_id = tape.constant(s.log_scales);
    DeformOutputs def = deform_forward(tape, s.field, ids, pos_id, rot_id, ls_id,
                                       fbd, gamma_exp, gamma_pose, frame_row);
    Tape::Id rendered = raster_op(tape, def.x_def, def.q_def, def.log_scale_def,
                                  sigmoid(tape, tape.constant(s.opacity_logits)),
                                  tape.constant(s.colors), camera);
    return tensor_to_image(tape.val(rendered), camera.width, camera.height);
}

std::vector<Image> reanimate(TrainerState& s,
                             const std::vector<DriveEntry>& drive) {
    std::vector<Image> out;
    for (const DriveEntry& e : drive)
        out.push_back(render_model(s, e.gamma_exp, e.gamma_pose, e.camera, -1));
    return out;
}

void save_checkpoint(TrainerState& s, const std::string& dir,
                     uint64_t dataset_fingerprint) {
    const fs::path final_dir(dir);
    const fs::path tmp_dir(dir + ".tmp");
    std::error_code ec;
    fs::remove_all(tmp_dir, ec);
    fs::create_directories(tmp_dir);

    auto params = cloud_params(s);
    for (const auto& p : field_params(s)) params.push_back(p);
    for (auto& p : params) quantize_f32(*p.tensor);
    // Commit the quantized state: bindings derive from positions and the
    // optimizer moments are stored at f32, so both must match what a
    // reload reconstructs or save -> load would not be bitwise.
    for (auto& [name, moments] : s.adam.state()) {
        for (double& x : moments.m) x = double(float(x));
        for (double& x : moments.v) x = double(float(x));
    }
    {
        std::vector<Vec3> pts;
        for (int i = 0; i < s.positions.rows; ++i)
            pts.emplace_back(s.positions(i, 0), s.positions(i, 1),
                             s.positions(i, 2));
        s.bindings = bind_points(pts, s.vertex_tree, s.field.config,
                                 s.field.far_threshold);
        s.far_indices = far_indices_from(s.bindings);
    }

    json manifest;
    manifest["version"] = 1;
    manifest["config"] = config_to_json(s.config);
    manifest["iteration"] = s.iteration;
    manifest["dataset_fingerprint"] = dataset_fingerprint;
    manifest["source_tags"] = [&] {
        std::vector<int> t;
        for (SourceTag tag : s.source_tags) t.push_back(int(tag));
        return t;
    }();
    {
        std::ostringstream rs;
        rs << s.rng;
        manifest["rng_state"] = rs.str();
    }

    std::ofstream blob(tmp_dir / "tensors.f32", std::ios::binary);
    size_t offset = 0;
    json table = json::object();
    auto dump_tensor = [&](const std::string& name, const Tensor& t) {
        std::vector<float> buf(t.v.begin(), t.v.end());
        blob.write(reinterpret_cast<const char*>(buf.data()),
                   std::streamsize(buf.size() * sizeof(float)));
        table[name] = {{"rows", t.rows},
                       {"cols", t.cols},
                       {"dtype", "f32"},
                       {"file", "tensors.f32"},
                       {"byte_offset", offset}};
        offset += buf.size() * sizeof(float);
    };
    for (const auto& p : params) dump_tensor(p.name, *p.tensor);

    json adam_state = json::object();
    for (const auto& [name, moments] : s.adam.state()) {
        Tensor m(1, int(moments.m.size()));
        m.v = moments.m;
        Tensor v(1, int(moments.v.size()));
        v.v = moments.v;
        dump_tensor("adam." + name + ".m", m);
        dump_tensor("adam." + name + ".v", v);
        adam_state[name] = moments.t;
    }
    manifest["adam_steps"] = adam_state;
    manifest["tensors"] = table;
    blob.close();
    if (!blob) throw LoadError("cannot write: " + (tmp_dir / "tensors.f32").string());

    std::ofstream mf(tmp_dir / "manifest.json");
    mf << manifest.dump(2) << "\n";
    mf.close();
    if (!mf) throw LoadError("cannot write: " + (tmp_dir / "manifest.json").string());

    fs::remove_all(final_dir, ec);
    fs::rename(tmp_dir, final_dir);
}

TrainerState load_checkpoint(const std::string& dir, const Dataset& dataset) {
    const fs::path d(dir);
    std::ifstream mf(d / "manifest.json");
    if (!mf) throw LoadError("cannot open: " + (d / "manifest.json").string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw LoadError("corrupt JSON in " + (d / "manifest.json").string() +
                        ": " + e.what());
    }
    if (manifest.at("dataset_fingerprint").get<uint64_t>() != dataset.fingerprint)
        throw SchemaError("checkpoint was trained on a different dataset");

    TrainerState s = init_trainer(dataset, config_from_json(manifest.at("config")));
    s.iteration = manifest.at("iteration");
    {
        std::istringstream rs(manifest.at("rng_state").get<std::string>());
        rs >> s.rng;
    }

    std::ifstream blob(d / "tensors.f32", std::ios::binary);
    if (!blob) throw LoadError("cannot open: " + (d / "tensors.f32").string());
    const json& table = manifest.at("tensors");
    auto read_tensor = [&](const std::string& name) {
        const json& e = table.at(name);
        Tensor t(e.at("rows"), e.at("cols"));
        std::vector<float> buf(t.size());
        blob.seekg(std::streamoff(e.at("byte_offset").get<size_t>()));
        blob.read(reinterpret_cast<char*>(buf.data()),
                  std::streamsize(buf.size() * sizeof(float)));
        if (!blob) throw LoadError("truncated tensor " + name + " in checkpoint");
        for (size_t i = 0; i < buf.size(); ++i) t.v[i] = double(buf[i]);
        return t;
    };

    // Cloud tensors may have been densified; size everything from the table.
    s.positions = read_tensor("cloud.positions");
    s.rotations = read_tensor("cloud.rotations");
    s.log_scales = read_tensor("cloud.log_scales");
    s.opacity_logits = read_tensor("cloud.opacity_logits");
    s.colors = read_tensor("cloud.colors");
    s.source_tags.clear();
    for (int t : manifest.at("source_tags")) s.source_tags.push_back(SourceTag(t));
    for (const auto& p : field_params(s)) *p.tensor = read_tensor(p.name);

    s.adam.reset_all();
    for (const auto& [name, steps] : manifest.at("adam_steps").items()) {
        ad::Adam::Moments m;
        m.m = read_tensor("adam." + name + ".m").v;
        m.v = read_tensor("adam." + name + ".v").v;
        m.t = steps;
        s.adam.state()[name] = std::move(m);
    }

    std::vector<Vec3> pts;
    for (int i = 0; i < s.positions.rows; ++i)
        pts.emplace_back(s.positions(i, 0), s.positions(i, 1), s.positions(i, 2));
    s.bindings =
        bind_points(pts, s.vertex_tree, s.field.config, s.field.far_threshold);
    s.far_indices = far_indices_from(s.bindings);
    s.grad2d_accum.assign(pts.size(), 0.0);
    s.grad2d_count.assign(pts.size(), 0);
    return s;
}

}  // namespace gsrig

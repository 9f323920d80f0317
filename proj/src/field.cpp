#include "gsrig/field.hpp"

#include <cmath>
#include <random>

namespace gsrig {

using ad::Tape;
using ad::Tensor;

PriorMode prior_mode_from_string(const std::string& s) {
    if (s == "learnable") return PriorMode::Learnable;
    if (s == "fixed") return PriorMode::Fixed;
    if (s == "none") return PriorMode::None;
    throw ArgumentError("unknown prior mode: " + s);
}

std::string to_string(PriorMode m) {
    switch (m) {
        case PriorMode::Learnable: return "learnable";
        case PriorMode::Fixed: return "fixed";
        case PriorMode::None: return "none";
    }
    return "?";
}

namespace {

int pe_dim(int base, int levels) { return base + 2 * base * levels; }

Tensor random_layer(int in, int out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(in, out);
    for (auto& x : w.v) x = u(rng);
    return w;
}

Mlp make_mlp(int in, int hidden, int out, int layers, std::mt19937_64& rng) {
    Mlp m;
    int prev = in;
    for (int l = 0; l < layers - 1; ++l) {
        m.weights.push_back(random_layer(prev, hidden, rng));
        m.biases.push_back(Tensor(1, hidden));
        prev = hidden;
    }
    m.weights.push_back(Tensor(prev, out));  // zero-init output layer
    m.biases.push_back(Tensor(1, out));
    return m;
}

// Softplus-activated MLP, linear last layer.
Tape::Id mlp_forward(Tape& t, Tape::Id x, const std::vector<Tape::Id>& w,
                     const std::vector<Tape::Id>& b, double beta) {
    Tape::Id h = x;
    for (size_t l = 0; l < w.size(); ++l) {
        h = t.affine(h, w[l], b[l]);
        if (l + 1 < w.size()) h = t.softplus(h, beta);
    }
    return h;
}

}  // namespace

int DeformationField::g_input_dim() const {
    const int pos = pe_dim(3, config.pe_freqs_pos);
    if (config.prior_mode == PriorMode::Learnable)
        return pos + pe_dim(3, config.pe_freqs_def);
    return pos + expression_dim + 4;
}

void DeformationField::for_each_tensor(
    const std::function<void(const std::string&, Tensor&)>& fn) {
    for (int p = 0; p < 3; ++p)
        fn("field.triplane." + std::to_string(p), triplane[p]);
    auto mlp = [&](const std::string& name, Mlp& m) {
        for (size_t l = 0; l < m.weights.size(); ++l) {
            fn("field." + name + ".w" + std::to_string(l), m.weights[l]);
            fn("field." + name + ".b" + std::to_string(l), m.biases[l]);
        }
    };
    mlp("f_head", f_head);
    mlp("g", g_mlp);
    fn("field.t_codes", t_codes);
    mlp("t", t_mlp);
    mlp("r_star", r_star);
    mlp("s_star", s_star);
}

DeformationField init_field(const DeformationConfig& cfg, const MorphableMesh& mesh,
                            const std::vector<Vec3>& init_points,
                            int expression_dim, int train_frame_count,
                            uint64_t seed) {
    DeformationField f;
    f.config = cfg;
    f.far_threshold = cfg.d_factor * mesh.bounding_radius();
    f.expression_dim = expression_dim;
    f.train_frame_count = train_frame_count;

    // Normalization box: bounding sphere of all canonical points.
    Vec3 c = Vec3::Zero();
    for (const auto& p : init_points) c += p;
    c /= double(init_points.size());
    double r = 0;
    for (const auto& p : init_points) r = std::max(r, (p - c).norm());
    f.scene_center = c;
    f.scene_radius = std::max(r, 1e-6);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> feat(-0.05, 0.05);
    const int res = cfg.triplane_resolution, ch = cfg.triplane_channels;
    for (int p = 0; p < 3; ++p) {
        f.triplane[p] = Tensor(res * res, ch);
        for (auto& x : f.triplane[p].v) x = feat(rng);
    }

    f.f_head = make_mlp(3 * ch, cfg.mlp_hidden, cfg.k, 2, rng);
    f.g_mlp = make_mlp(f.g_input_dim(), cfg.mlp_hidden, 3, 2, rng);
    f.t_codes = Tensor(std::max(train_frame_count, 1), 16);
    f.t_mlp = make_mlp(16, cfg.mlp_hidden, 3, 2, rng);
    const int rs_in = pe_dim(3, cfg.pe_freqs_pos) + pe_dim(3, cfg.pe_freqs_def);
    f.r_star = make_mlp(rs_in, cfg.mlp_hidden, 3, 4, rng);
    f.s_star = make_mlp(rs_in, cfg.mlp_hidden, 3, 4, rng);
    return f;
}

GaussianBinding bind_point(const Vec3& position, const KdTree& tree,
                           const DeformationConfig& cfg, double far_threshold) {
    GaussianBinding b;
    const int k = std::min<int>(cfg.k, int(tree.size()));
    KnnResult r = tree.knn(position, k);
    b.knn_indices = std::move(r.indices);
    b.knn_distances = std::move(r.distances);
    b.mesh_distance = b.knn_distances.front();
    b.near_mesh = b.mesh_distance < far_threshold;

    // Inverse-distance weights; an exact vertex hit collapses to one-hot.
    b.u.assign(b.knn_distances.size(), 0.0);
    bool exact = false;
    for (size_t i = 0; i < b.knn_distances.size(); ++i)
        if (b.knn_distances[i] == 0.0) {
            b.u[i] = 1.0;
            exact = true;
            break;
        }
    if (!exact) {
        double den = 0;
        for (size_t i = 0; i < b.u.size(); ++i) {
            b.u[i] = 1.0 / (b.knn_distances[i] + 1e-8);
            den += b.u[i];
        }
        for (auto& w : b.u) w /= den;
    }
    return b;
}

std::vector<GaussianBinding> bind_points(const std::vector<Vec3>& positions,
                                         const KdTree& tree,
                                         const DeformationConfig& cfg,
                                         double far_threshold) {
    std::vector<GaussianBinding> out;
    out.reserve(positions.size());
    for (const auto& p : positions)
        out.push_back(bind_point(p, tree, cfg, far_threshold));
    return out;
}

FrameBindingData frame_binding_data(const std::vector<GaussianBinding>& bindings,
                                    const MorphableMesh& mesh,
                                    const std::vector<Vec3>& deformed_vertices,
                                    double far_threshold) {
    const int n = int(bindings.size());
    const int k = n > 0 ? int(bindings[0].knn_indices.size()) : 0;
    FrameBindingData d;
    d.deltas = Tensor(n, 3 * k);
    d.dwavg = Tensor(n, 3);
    d.mu = Tensor(n, k);
    d.q_mesh = Tensor(n, 4);
    d.fixed_prior = Tensor(n, 3);
    const double sigma_d = far_threshold / 3.0;

    std::vector<Vec3> src(k), dst(k), dv(k);
    for (int i = 0; i < n; ++i) {
        const GaussianBinding& b = bindings[i];
        for (int j = 0; j < k; ++j) {
            const int vi = b.knn_indices[j];
            src[j] = mesh.vertices_can[vi];
            dst[j] = deformed_vertices[vi];
            dv[j] = dst[j] - src[j];
            for (int c = 0; c < 3; ++c) d.deltas(i, 3 * j + c) = dv[j][c];
            if (b.near_mesh) d.mu(i, j) = b.u[j];
        }
        const Vec3 avg = dwavg(dv, b.knn_distances);
        for (int c = 0; c < 3; ++c) d.dwavg(i, c) = avg[c];

        const double decay = std::exp(-b.mesh_distance * b.mesh_distance /
                                      (2.0 * sigma_d * sigma_d));
        for (int c = 0; c < 3; ++c) d.fixed_prior(i, c) = decay * avg[c];

        Vec4 q(1, 0, 0, 0);
        if (b.near_mesh && k >= 3) {
            KabschResult kr = kabsch(src, dst);
            if (kr.degenerate)
                ++d.degenerate_kabsch;
            else
                q = matrix_to_quat(kr.rotation);
        }
        for (int c = 0; c < 4; ++c) d.q_mesh(i, c) = q[c];
    }
    return d;
}

FieldIds register_field(Tape& tape, DeformationField& f) {
    FieldIds ids;
    for (int p = 0; p < 3; ++p) ids.triplane[p] = tape.leaf(f.triplane[p]);
    auto reg = [&tape](Mlp& m, std::vector<Tape::Id>& w, std::vector<Tape::Id>& b) {
        for (size_t l = 0; l < m.weights.size(); ++l) {
            w.push_back(tape.leaf(m.weights[l]));
            b.push_back(tape.leaf(m.biases[l]));
        }
    };
    reg(f.f_head, ids.f_head_w, ids.f_head_b);
    reg(f.g_mlp, ids.g_w, ids.g_b);
    ids.t_codes = tape.leaf(f.t_codes);
    reg(f.t_mlp, ids.t_w, ids.t_b);
    reg(f.r_star, ids.r_w, ids.r_b);
    reg(f.s_star, ids.s_w, ids.s_b);
    return ids;
}

DeformOutputs deform_forward(Tape& t, const DeformationField& field,
                             const FieldIds& ids, Tape::Id positions,
                             Tape::Id quats, Tape::Id log_scales,
                             const FrameBindingData& fbd,
                             const std::vector<double>& gamma_exp,
                             const std::array<double, 4>& gamma_pose,
                             int train_frame_row) {
    const DeformationConfig& cfg = field.config;
    const int n = t.val(positions).rows;
    DeformOutputs out;

    // Positions normalized to the scene box.
    Tape::Id neg_center = t.constant([&] {
        Tensor c(1, 3);
        for (int i = 0; i < 3; ++i) c(0, i) = -field.scene_center[i];
        return c;
    }());
    Tape::Id x_norm =
        t.scale(t.add_rowvec(positions, neg_center), 1.0 / field.scene_radius);
    Tape::Id pe_pos = positional_encode(t, x_norm, cfg.pe_freqs_pos);

    const double beta = cfg.softplus_beta;

    // --- positional deformation -----------------------------------------
    Tape::Id dw_const = t.constant(fbd.dwavg);
    Tape::Id prior = -1;
    if (cfg.prior_mode == PriorMode::Learnable) {
        Tape::Id feats =
            t.triplane_sample(x_norm, ids.triplane[0], ids.triplane[1],
                              ids.triplane[2], cfg.triplane_resolution,
                              cfg.triplane_channels);
        Tape::Id w_raw = mlp_forward(t, feats, ids.f_head_w, ids.f_head_b, beta);
        out.weights = t.add(w_raw, t.constant(fbd.mu));
        prior = t.linear_combine(out.weights, fbd.deltas);
    } else if (cfg.prior_mode == PriorMode::Fixed) {
        prior = t.constant(fbd.fixed_prior);
    }

    Tape::Id g_in;
    if (cfg.prior_mode == PriorMode::Learnable) {
        g_in = t.concat_cols({pe_pos, positional_encode(t, dw_const, cfg.pe_freqs_def)});
    } else {
        Tensor gamma(n, field.expression_dim + 4);
        for (int i = 0; i < n; ++i) {
            for (int e = 0; e < field.expression_dim; ++e)
                gamma(i, e) = gamma_exp[e];
            for (int p = 0; p < 4; ++p)
                gamma(i, field.expression_dim + p) = gamma_pose[p];
        }
        g_in = t.concat_cols({pe_pos, t.constant(std::move(gamma))});
    }
    out.eta = mlp_forward(t, g_in, ids.g_w, ids.g_b, beta);

    // Per-frame translation: learnable code through T, zero at inference
    // and in the ablation modes.
    if (cfg.prior_mode == PriorMode::Learnable && train_frame_row >= 0) {
        Tape::Id code = t.select_rows(ids.t_codes, {train_frame_row});
        out.t_vec = mlp_forward(t, code, ids.t_w, ids.t_b, beta);
    } else {
        out.t_vec = t.constant(Tensor(1, 3));
    }

    out.deform = out.eta;
    if (prior >= 0) out.deform = t.add(out.deform, prior);
    out.deform = t.add_rowvec(out.deform, out.t_vec);
    out.x_def = t.add(positions, out.deform);

    // --- rotation ---------------------------------------------------------
    Tape::Id rs_in =
        t.concat_cols({pe_pos, positional_encode(t, dw_const, cfg.pe_freqs_def)});
    Tape::Id r_axis = mlp_forward(t, rs_in, ids.r_w, ids.r_b, beta);
    Tape::Id q_corr = t.axis_angle_to_quat(r_axis);
    out.q_prime = t.quat_mul(t.constant(fbd.q_mesh), q_corr);
    out.q_def = t.quat_mul(quats, out.q_prime);

    // --- scale ------------------------------------------------------------
    out.s_raw = mlp_forward(t, rs_in, ids.s_w, ids.s_b, beta);
    out.log_scale_def = t.add(log_scales, out.s_raw);
    return out;
}

}  // namespace gsrig

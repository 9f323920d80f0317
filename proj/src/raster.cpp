#include "gsrig/raster.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace gsrig {

namespace {

struct TileGrid {
    int tiles_x, tiles_y;
};

TileGrid grid_for(const Camera& cam) {
    return {(cam.width + kTileSize - 1) / kTileSize,
            (cam.height + kTileSize - 1) / kTileSize};
}

double max_eigenvalue2(const Eigen::Matrix2d& c) {
    const double mid = 0.5 * (c(0, 0) + c(1, 1));
    const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    return mid + std::sqrt(std::max(0.0, mid * mid - det));
}

bool depth_less(const ProjectedSplat& a, const ProjectedSplat& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.source_index < b.source_index;
}

// One contribution along a pixel's sorted list.
struct Contribution {
    int splat;      // index into the splat array
    double alpha;
    double t_before;
    bool capped;    // alpha hit the 0.99 cap
    double gauss;   // exp(power), saved for the opacity gradient
};

// Front-to-back blend for a single pixel. Returns final transmittance and
// appends contributions when collect is non-null.
double blend_pixel(const std::vector<ProjectedSplat>& splats,
                   const std::vector<Eigen::Matrix2d>& conics,
                   const std::vector<int>& order, double px, double py,
                   Vec3& rgb, std::vector<Contribution>* collect) {
    double t = 1.0;
    rgb.setZero();
    for (int idx : order) {
        const ProjectedSplat& s = splats[idx];
        const double dx = px - s.mean2d[0];
        const double dy = py - s.mean2d[1];
        const Eigen::Matrix2d& a = conics[idx];
        const double maha =
            a(0, 0) * dx * dx + 2 * a(0, 1) * dx * dy + a(1, 1) * dy * dy;
        if (maha > kSupportMahalanobis2) continue;
        const double gauss = std::exp(-0.5 * maha);
        double alpha = s.opacity * gauss;
        const bool capped = alpha > kAlphaCap;
        if (capped) alpha = kAlphaCap;
        if (alpha < kAlphaSkip) continue;
        rgb += s.color * (alpha * t);
        if (collect) collect->push_back({idx, alpha, t, capped, gauss});
        t *= (1.0 - alpha);
        if (t < kTransmittanceStop) break;
    }
    return t;
}

std::vector<Eigen::Matrix2d> make_conics(const std::vector<ProjectedSplat>& splats) {
    std::vector<Eigen::Matrix2d> conics(splats.size());
    for (size_t i = 0; i < splats.size(); ++i)
        conics[i] = splats[i].cov2d.inverse();
    return conics;
}

std::vector<std::vector<int>> bin_tiles(const std::vector<ProjectedSplat>& splats,
                                        const Camera& cam, TileGrid g) {
    std::vector<std::vector<int>> lists(size_t(g.tiles_x) * g.tiles_y);
    for (size_t i = 0; i < splats.size(); ++i) {
        const ProjectedSplat& s = splats[i];
        const double r = 3.0 * std::sqrt(max_eigenvalue2(s.cov2d));
        const int x0 = std::max(0, int(std::floor((s.mean2d[0] - r) / kTileSize)));
        const int x1 = std::min(g.tiles_x - 1,
                                int(std::floor((s.mean2d[0] + r) / kTileSize)));
        const int y0 = std::max(0, int(std::floor((s.mean2d[1] - r) / kTileSize)));
        const int y1 = std::min(g.tiles_y - 1,
                                int(std::floor((s.mean2d[1] + r) / kTileSize)));
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                lists[size_t(ty) * g.tiles_x + tx].push_back(int(i));
    }
    for (auto& l : lists)
        std::sort(l.begin(), l.end(), [&](int a, int b) {
            return depth_less(splats[a], splats[b]);
        });
    return lists;
}

}  // namespace

std::optional<ProjectedSplat> project(const Vec3& position, const Mat3& cov3d,
                                      const Camera& camera) {
    const Mat3 r = camera.rotation();
    const Vec3 p = r * position + camera.translation();
    if (p.z() <= camera.near_clip) return std::nullopt;

    ProjectedSplat s;
    s.depth = p.z();
    s.mean2d[0] = camera.fx * p.x() / p.z() + camera.cx;
    s.mean2d[1] = camera.fy * p.y() / p.z() + camera.cy;

    Eigen::Matrix<double, 2, 3> j;
    j << camera.fx / p.z(), 0, -camera.fx * p.x() / (p.z() * p.z()),
        0, camera.fy / p.z(), -camera.fy * p.y() / (p.z() * p.z());
    const Eigen::Matrix<double, 2, 3> m = j * r;
    s.cov2d = m * cov3d * m.transpose() +
              kCovDilation * Eigen::Matrix2d::Identity();
    return s;
}

RenderOutput render(const std::vector<ProjectedSplat>& splats,
                    const Camera& camera, RenderForwardState* save) {
    const TileGrid g = grid_for(camera);
    auto lists = bin_tiles(splats, camera, g);
    const auto conics = make_conics(splats);

    RenderOutput out;
    out.image = Image(camera.width, camera.height, 3);
    out.transmittance = Image(camera.width, camera.height, 1, 1.0);

    for (int ty = 0; ty < g.tiles_y; ++ty)
        for (int tx = 0; tx < g.tiles_x; ++tx) {
            const auto& order = lists[size_t(ty) * g.tiles_x + tx];
            if (order.empty()) continue;
            const int x1 = std::min(camera.width, (tx + 1) * kTileSize);
            const int y1 = std::min(camera.height, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y1; ++y)
                for (int x = tx * kTileSize; x < x1; ++x) {
                    Vec3 rgb;
                    const double t = blend_pixel(splats, conics, order,
                                                 x + 0.5, y + 0.5, rgb, nullptr);
                    for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = rgb[c];
                    out.transmittance.at(x, y, 0) = t;
                }
        }

    if (save) {
        save->camera = camera;
        save->splats = splats;
        save->tile_lists = std::move(lists);
        save->tiles_x = g.tiles_x;
        save->tiles_y = g.tiles_y;
        save->valid = true;
    }
    return out;
}

RenderOutput render_reference(const std::vector<ProjectedSplat>& splats,
                              const Camera& camera) {
    std::vector<int> order(splats.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return depth_less(splats[a], splats[b]);
    });
    const auto conics = make_conics(splats);

    RenderOutput out;
    out.image = Image(camera.width, camera.height, 3);
    out.transmittance = Image(camera.width, camera.height, 1, 1.0);
    for (int y = 0; y < camera.height; ++y)
        for (int x = 0; x < camera.width; ++x) {
            Vec3 rgb;
            const double t = blend_pixel(splats, conics, order, x + 0.5,
                                         y + 0.5, rgb, nullptr);
            for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = rgb[c];
            out.transmittance.at(x, y, 0) = t;
        }
    return out;
}

SplatGrads render_backward(const Image& output_grad,
                           const RenderForwardState& st) {
    if (!st.valid)
        throw ArgumentError("render_backward: missing forward state");
    const Camera& cam = st.camera;
    if (output_grad.width != cam.width || output_grad.height != cam.height ||
        output_grad.channels != 3)
        throw ShapeError("render_backward: output_grad shape mismatch");

    const auto conics = make_conics(st.splats);
    SplatGrads g;
    g.mean2d.assign(st.splats.size(), Eigen::Vector2d::Zero());
    g.cov2d.assign(st.splats.size(), Eigen::Matrix2d::Zero());
    g.color.assign(st.splats.size(), Vec3::Zero());
    g.opacity.assign(st.splats.size(), 0.0);

    std::vector<Contribution> contribs;
    for (int ty = 0; ty < st.tiles_y; ++ty)
        for (int tx = 0; tx < st.tiles_x; ++tx) {
            const auto& order = st.tile_lists[size_t(ty) * st.tiles_x + tx];
            if (order.empty()) continue;
            const int x1 = std::min(cam.width, (tx + 1) * kTileSize);
            const int y1 = std::min(cam.height, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y1; ++y)
                for (int x = tx * kTileSize; x < x1; ++x) {
                    const Vec3 go(output_grad.at(x, y, 0),
                                  output_grad.at(x, y, 1),
                                  output_grad.at(x, y, 2));
                    if (go.isZero()) continue;
                    const double px = x + 0.5, py = y + 0.5;
                    contribs.clear();
                    Vec3 rgb;
                    blend_pixel(st.splats, conics, order, px, py, rgb, &contribs);

                    // Walk back-to-front; accum = sum of later c_j a_j T_j.
                    Vec3 accum = Vec3::Zero();
                    for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                        const Contribution& c = *it;
                        const ProjectedSplat& s = st.splats[c.splat];
                        const double w = c.alpha * c.t_before;
                        g.color[c.splat] += go * w;
                        const double dalpha =
                            go.dot(c.t_before * s.color - accum / (1.0 - c.alpha));
                        accum += s.color * w;
                        if (c.capped) continue;  // flat region of min()
                        g.opacity[c.splat] += dalpha * c.gauss;
                        const double dpower = dalpha * c.alpha;
                        const Eigen::Vector2d d(px - s.mean2d[0], py - s.mean2d[1]);
                        const Eigen::Vector2d v = conics[c.splat] * d;
                        g.mean2d[c.splat] += dpower * v;
                        g.cov2d[c.splat] += (0.5 * dpower) * (v * v.transpose());
                    }
                }
        }
    return g;
}

Image tensor_to_image(const ad::Tensor& t, int width, int height) {
    Image img(width, height, t.cols);
    std::copy(t.v.begin(), t.v.end(), img.data.begin());
    return img;
}

ad::Tape::Id raster_op(ad::Tape& tape, ad::Tape::Id positions,
                       ad::Tape::Id quats, ad::Tape::Id log_scales,
                       ad::Tape::Id opacities, ad::Tape::Id colors,
                       const Camera& camera, RasterStats* stats) {
    const ad::Tensor& pos = tape.val(positions);
    const ad::Tensor& qt = tape.val(quats);
    const ad::Tensor& ls = tape.val(log_scales);
    const ad::Tensor& op = tape.val(opacities);
    const ad::Tensor& col = tape.val(colors);
    const int n = pos.rows;
    if (qt.rows != n || ls.rows != n || op.rows != n || col.rows != n ||
        pos.cols != 3 || qt.cols != 4 || ls.cols != 3 || op.cols != 1 ||
        col.cols != 3)
        throw ShapeError("raster_op: input shape mismatch");

    std::vector<ProjectedSplat> splats;
    std::vector<int> source;  // projected splat -> gaussian row
    splats.reserve(n);
    for (int i = 0; i < n; ++i) {
        const Vec4 q = quat_normalized(Vec4(qt(i, 0), qt(i, 1), qt(i, 2), qt(i, 3)));
        const Mat3 cov3d =
            covariance_from_params(q, Vec3(ls(i, 0), ls(i, 1), ls(i, 2)));
        auto s = project(Vec3(pos(i, 0), pos(i, 1), pos(i, 2)), cov3d, camera);
        if (!s) continue;
        s->source_index = int(splats.size());
        s->color = Vec3(col(i, 0), col(i, 1), col(i, 2));
        s->opacity = op(i, 0);
        splats.push_back(*s);
        source.push_back(i);
    }

    auto state = std::make_shared<RenderForwardState>();
    RenderOutput out = render(splats, camera, state.get());
    ad::Tensor img(camera.width * camera.height, 3);
    std::copy(out.image.data.begin(), out.image.data.end(), img.v.begin());

    auto backward = [positions, quats, log_scales, opacities, colors, camera,
                     state, source, stats](ad::Tape& t, ad::Tape::Id o) {
        const ad::Tensor& gimg = t.grad(o);
        Image grad_img(camera.width, camera.height, 3);
        std::copy(gimg.v.begin(), gimg.v.end(), grad_img.data.begin());
        const SplatGrads sg = render_backward(grad_img, *state);

        const ad::Tensor& pos = t.val(positions);
        const ad::Tensor& qt = t.val(quats);
        const ad::Tensor& ls = t.val(log_scales);
        ad::Tensor& gpos = t.grad_mut(positions);
        ad::Tensor& gq = t.grad_mut(quats);
        ad::Tensor& gls = t.grad_mut(log_scales);
        ad::Tensor& gop = t.grad_mut(opacities);
        ad::Tensor& gcol = t.grad_mut(colors);

        if (stats) {
            stats->grad_mean2d_norm.assign(pos.rows, 0.0);
            stats->visible.assign(pos.rows, 0);
        }

        const Mat3 rcam = camera.rotation();
        for (size_t k = 0; k < state->splats.size(); ++k) {
            const int i = source[k];
            if (stats) {
                stats->visible[i] = 1;
                stats->grad_mean2d_norm[i] = sg.mean2d[k].norm();
            }
            for (int c = 0; c < 3; ++c) gcol(i, c) += sg.color[k][c];
            gop(i, 0) += sg.opacity[k];

            // Recompute projection intermediates for the chain rule.
            const Vec3 x(pos(i, 0), pos(i, 1), pos(i, 2));
            const Vec3 p = rcam * x + camera.translation();
            const double z = p.z();
            Eigen::Matrix<double, 2, 3> j;
            j << camera.fx / z, 0, -camera.fx * p.x() / (z * z),
                0, camera.fy / z, -camera.fy * p.y() / (z * z);
            const Eigen::Matrix<double, 2, 3> m = j * rcam;

            const Vec4 qraw(qt(i, 0), qt(i, 1), qt(i, 2), qt(i, 3));
            const double qn = qraw.norm();
            const Vec4 q = qraw / qn;
            const Mat3 rq = quat_to_matrix(q);
            const Vec3 s2 = (2.0 * Vec3(ls(i, 0), ls(i, 1), ls(i, 2))).array().exp();
            const Mat3 cov3d = rq * s2.asDiagonal() * rq.transpose();

            // cov2d = M cov3d M^T (+const): gradients to cov3d and M.
            const Eigen::Matrix2d& gc = sg.cov2d[k];
            const Mat3 gcov3 = m.transpose() * gc * m;
            const Eigen::Matrix<double, 2, 3> gm = 2.0 * gc * m * cov3d;
            const Eigen::Matrix<double, 2, 3> gj = gm * rcam.transpose();

            // Position gradient: mean2d path plus the Jacobian's dependence
            // on the camera-space point.
            Vec3 gp = Vec3::Zero();
            const Eigen::Vector2d& gmean = sg.mean2d[k];
            gp.x() += gmean[0] * camera.fx / z;
            gp.y() += gmean[1] * camera.fy / z;
            gp.z() += -gmean[0] * camera.fx * p.x() / (z * z) -
                      gmean[1] * camera.fy * p.y() / (z * z);
            gp.x() += gj(0, 2) * (-camera.fx / (z * z));
            gp.y() += gj(1, 2) * (-camera.fy / (z * z));
            gp.z() += gj(0, 0) * (-camera.fx / (z * z)) +
                      gj(1, 1) * (-camera.fy / (z * z)) +
                      gj(0, 2) * (2 * camera.fx * p.x() / (z * z * z)) +
                      gj(1, 2) * (2 * camera.fy * p.y() / (z * z * z));
            const Vec3 gx = rcam.transpose() * gp;
            for (int c = 0; c < 3; ++c) gpos(i, c) += gx[c];

            // cov3d = Rq diag(s^2) Rq^T.
            const Mat3 grq = 2.0 * gcov3 * rq * s2.asDiagonal();
            for (int c = 0; c < 3; ++c) {
                const Vec3 rk = rq.col(c);
                gls(i, c) += 2.0 * s2[c] * rk.dot(gcov3 * rk);
            }

            // dR/d(unit quat), then the normalization Jacobian.
            const double w = q[0], xq = q[1], yq = q[2], zq = q[3];
            Mat3 dr[4];
            dr[0] << 0, -2 * zq, 2 * yq, 2 * zq, 0, -2 * xq, -2 * yq, 2 * xq, 0;
            dr[1] << 0, 2 * yq, 2 * zq, 2 * yq, -4 * xq, -2 * w, 2 * zq, 2 * w, -4 * xq;
            dr[2] << -4 * yq, 2 * xq, 2 * w, 2 * xq, 0, 2 * zq, -2 * w, 2 * zq, -4 * yq;
            dr[3] << -4 * zq, -2 * w, 2 * xq, 2 * w, -4 * zq, 2 * yq, 2 * xq, 2 * yq, 0;
            Vec4 gqhat;
            for (int c = 0; c < 4; ++c)
                gqhat[c] = (grq.array() * dr[c].array()).sum();
            const Vec4 gqraw = (gqhat - q * q.dot(gqhat)) / qn;
            for (int c = 0; c < 4; ++c) gq(i, c) += gqraw[c];
        }
    };

    return tape.custom({positions, quats, log_scales, opacities, colors},
                       std::move(img), std::move(backward));
}

}  // namespace gsrig

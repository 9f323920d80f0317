#include "gsrig/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace gsrig::ad {

namespace {
using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat map(const Tensor& t) { return CMapMat(t.v.data(), t.rows, t.cols); }
MapMat map(Tensor& t) { return MapMat(t.v.data(), t.rows, t.cols); }
}  // namespace

Tape::Id Tape::push(Tensor value, std::function<void(Tape&, Id)> bwd) {
    Node n;
    n.grad = Tensor(value.rows, value.cols);
    n.value = std::move(value);
    n.bwd = std::move(bwd);
    nodes_.push_back(std::move(n));
    return Id(nodes_.size() - 1);
}

Tape::Id Tape::leaf(const Tensor& t) { return push(t, nullptr); }
Tape::Id Tape::constant(Tensor t) { return push(std::move(t), nullptr); }

void Tape::check_same(Id a, Id b, const char* op) const {
    if (!nodes_[a].value.same_shape(nodes_[b].value))
        throw ShapeError(std::string(op) + ": shape mismatch");
}

Tape::Id Tape::add(Id a, Id b) {
    check_same(a, b, "add");
    Tensor out = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += nodes_[b].value.v[i];
    return push(std::move(out), [a, b](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        auto& ga = t.nodes_[a].grad.v;
        auto& gb = t.nodes_[b].grad.v;
        for (size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

Tape::Id Tape::sub(Id a, Id b) {
    check_same(a, b, "sub");
    Tensor out = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] -= nodes_[b].value.v[i];
    return push(std::move(out), [a, b](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        auto& ga = t.nodes_[a].grad.v;
        auto& gb = t.nodes_[b].grad.v;
        for (size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

Tape::Id Tape::mul(Id a, Id b) {
    check_same(a, b, "mul");
    Tensor out = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] *= nodes_[b].value.v[i];
    return push(std::move(out), [a, b](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        const auto& va = t.nodes_[a].value.v;
        const auto& vb = t.nodes_[b].value.v;
        auto& ga = t.nodes_[a].grad.v;
        auto& gb = t.nodes_[b].grad.v;
        for (size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * vb[i];
            gb[i] += g[i] * va[i];
        }
    });
}

Tape::Id Tape::div(Id a, Id b) {
    check_same(a, b, "div");
    Tensor out = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] /= nodes_[b].value.v[i];
    return push(std::move(out), [a, b](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        const auto& va = t.nodes_[a].value.v;
        const auto& vb = t.nodes_[b].value.v;
        auto& ga = t.nodes_[a].grad.v;
        auto& gb = t.nodes_[b].grad.v;
        for (size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] / vb[i];
            gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
        }
    });
}

Tape::Id Tape::scale(Id a, double c) {
    Tensor out = nodes_[a].value;
    for (auto& x : out.v) x *= c;
    return push(std::move(out), [a, c](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        auto& ga = t.nodes_[a].grad.v;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

Tape::Id Tape::add_scalar(Id a, double c) {
    Tensor out = nodes_[a].value;
    for (auto& x : out.v) x += c;
    return push(std::move(out), [a](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        auto& ga = t.nodes_[a].grad.v;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Tape::Id Tape::square(Id a) {
    Tensor out = nodes_[a].value;
    for (auto& x : out.v) x *= x;
    return push(std::move(out), [a](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        const auto& va = t.nodes_[a].value.v;
        auto& ga = t.nodes_[a].grad.v;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * va[i] * g[i];
    });
}

Tape::Id Tape::abs(Id a) {
    Tensor out = nodes_[a].value;
    for (auto& x : out.v) x = std::abs(x);
    return push(std::move(out), [a](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        const auto& va = t.nodes_[a].value.v;
        auto& ga = t.nodes_[a].grad.v;
        for (size_t i = 0; i < g.size(); ++i)
            ga[i] += (va[i] > 0 ? 1.0 : va[i] < 0 ? -1.0 : 0.0) * g[i];
    });
}

Tape::Id Tape::exp(Id a) {
    Tensor out = nodes_[a].value;
    for (auto& x : out.v) x = std::exp(x);
    return push(std::move(out), [a](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        const auto& vo = t.nodes_[o].value.v;
        auto& ga = t.nodes_[a].grad.v;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += vo[i] * g[i];
    });
}

Tape::Id Tape::sin(Id a) {
    Tensor out = nodes_[a].value;
    for (auto& x : out.v) x = std::sin(x);
    return push(std::move(out), [a](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        const auto& va = t.nodes_[a].value.v;
        auto& ga = t.nodes_[a].grad.v;
        for (size_t i = 0; i < g.size(); ++i) ga[i] += std::cos(va[i]) * g[i];
    });
}

Tape::Id Tape::cos(Id a) {
    Tensor out = nodes_[a].value;
    for (auto& x : out.v) x = std::cos(x);
    return push(std::move(out), [a](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        const auto& va = t.nodes_[a].value.v;
        auto& ga = t.nodes_[a].grad.v;
        for (size_t i = 0; i < g.size(); ++i) ga[i] -= std::sin(va[i]) * g[i];
    });
}

Tape::Id Tape::softplus(Id a, double beta) {
    Tensor out = nodes_[a].value;
    for (auto& x : out.v) {
        const double bx = beta * x;
        x = bx > 30.0 ? x + std::log1p(std::exp(-bx)) / beta
                      : std::log1p(std::exp(bx)) / beta;
    }
    return push(std::move(out), [a, beta](Tape& t, Id o) {
        const auto& g = t.nodes_[o].grad.v;
        const auto& va = t.nodes_[a].value.v;
        auto& ga = t.nodes_[a].grad.v;
        for (size_t i = 0; i < g.size(); ++i) {
            const double bx = beta * va[i];
            const double s = bx > 0 ? 1.0 / (1.0 + std::exp(-bx))
                                    : std::exp(bx) / (1.0 + std::exp(bx));
            ga[i] += s * g[i];
        }
    });
}

Tape::Id Tape::sum(Id a) {
    double s = 0;
    for (double x : nodes_[a].value.v) s += x;
    return push(Tensor::scalar(s), [a](Tape& t, Id o) {
        const double g = t.nodes_[o].grad.v[0];
        for (auto& x : t.nodes_[a].grad.v) x += g;
    });
}

Tape::Id Tape::mean(Id a) {
    const double n = double(nodes_[a].value.size());
    double s = 0;
    for (double x : nodes_[a].value.v) s += x;
    return push(Tensor::scalar(s / n), [a, n](Tape& t, Id o) {
        const double g = t.nodes_[o].grad.v[0] / n;
        for (auto& x : t.nodes_[a].grad.v) x += g;
    });
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: empty");
    const int rows = nodes_[parts[0]].value.rows;
    int cols = 0;
    for (Id p : parts) {
        if (nodes_[p].value.rows != rows)
            throw ShapeError("concat_cols: row mismatch");
        cols += nodes_[p].value.cols;
    }
    Tensor out(rows, cols);
    int off = 0;
    for (Id p : parts) {
        const Tensor& x = nodes_[p].value;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < x.cols; ++c) out(r, off + c) = x(r, c);
        off += x.cols;
    }
    std::vector<Id> ps = parts;
    return push(std::move(out), [ps](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        int off = 0;
        for (Id p : ps) {
            Tensor& gp = t.nodes_[p].grad;
            for (int r = 0; r < gp.rows; ++r)
                for (int c = 0; c < gp.cols; ++c) gp(r, c) += g(r, off + c);
            off += gp.cols;
        }
    });
}

Tape::Id Tape::slice_cols(Id a, int c0, int c1) {
    const Tensor& x = nodes_[a].value;
    if (c0 < 0 || c1 > x.cols || c0 >= c1)
        throw ArgumentError("slice_cols: bad range");
    Tensor out(x.rows, c1 - c0);
    for (int r = 0; r < x.rows; ++r)
        for (int c = c0; c < c1; ++c) out(r, c - c0) = x(r, c);
    return push(std::move(out), [a, c0](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        Tensor& ga = t.nodes_[a].grad;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) ga(r, c0 + c) += g(r, c);
    });
}

Tape::Id Tape::select_rows(Id a, std::vector<int> indices) {
    const Tensor& x = nodes_[a].value;
    Tensor out(int(indices.size()), x.cols);
    for (size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] < 0 || indices[r] >= x.rows)
            throw ArgumentError("select_rows: index out of range");
        for (int c = 0; c < x.cols; ++c) out(int(r), c) = x(indices[r], c);
    }
    return push(std::move(out), [a, idx = std::move(indices)](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        Tensor& ga = t.nodes_[a].grad;
        for (size_t r = 0; r < idx.size(); ++r)
            for (int c = 0; c < g.cols; ++c) ga(idx[r], c) += g(int(r), c);
    });
}

Tape::Id Tape::add_rowvec(Id a, Id row) {
    const Tensor& x = nodes_[a].value;
    const Tensor& rv = nodes_[row].value;
    if (rv.rows != 1 || rv.cols != x.cols)
        throw ShapeError("add_rowvec: row vector shape mismatch");
    Tensor out = x;
    for (int r = 0; r < x.rows; ++r)
        for (int c = 0; c < x.cols; ++c) out(r, c) += rv(0, c);
    return push(std::move(out), [a, row](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        Tensor& ga = t.nodes_[a].grad;
        Tensor& gr = t.nodes_[row].grad;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) {
                ga(r, c) += g(r, c);
                gr(0, c) += g(r, c);
            }
    });
}

Tape::Id Tape::affine(Id x, Id w, Id b) {
    const Tensor& xv = nodes_[x].value;
    const Tensor& wv = nodes_[w].value;
    const Tensor& bv = nodes_[b].value;
    if (xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols)
        throw ShapeError("affine: shape mismatch");
    Tensor out(xv.rows, wv.cols);
    map(out).noalias() = map(xv) * map(wv);
    map(out).rowwise() += map(bv).row(0);
    return push(std::move(out), [x, w, b](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        map(t.nodes_[x].grad).noalias() +=
            map(g) * map(t.nodes_[w].value).transpose();
        map(t.nodes_[w].grad).noalias() +=
            map(t.nodes_[x].value).transpose() * map(g);
        map(t.nodes_[b].grad).row(0) += map(g).colwise().sum();
    });
}

Tape::Id Tape::linear_combine(Id w, Tensor deltas) {
    const Tensor& wv = nodes_[w].value;
    const int k = wv.cols;
    if (deltas.rows != wv.rows || deltas.cols != 3 * k)
        throw ShapeError("linear_combine: deltas shape mismatch");
    Tensor out(wv.rows, 3);
    for (int r = 0; r < wv.rows; ++r)
        for (int j = 0; j < k; ++j)
            for (int d = 0; d < 3; ++d)
                out(r, d) += wv(r, j) * deltas(r, 3 * j + d);
    return push(std::move(out), [w, k, ds = std::move(deltas)](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        Tensor& gw = t.nodes_[w].grad;
        for (int r = 0; r < g.rows; ++r)
            for (int j = 0; j < k; ++j)
                for (int d = 0; d < 3; ++d)
                    gw(r, j) += g(r, d) * ds(r, 3 * j + d);
    });
}

namespace {

// q = (cos(t/2), h(t) * r) with h(t) = sin(t/2)/t; series below ~1e-3.
void aa_quat_coeffs(double theta, double& h, double& g) {
    if (theta < 1e-3) {
        const double t2 = theta * theta;
        h = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
        g = -1.0 / 24.0 + t2 / 960.0;
    } else {
        h = std::sin(0.5 * theta) / theta;
        g = (0.5 * std::cos(0.5 * theta) * theta - std::sin(0.5 * theta)) /
            (theta * theta * theta);
    }
}

}  // namespace

Tape::Id Tape::axis_angle_to_quat(Id aa) {
    const Tensor& r = nodes_[aa].value;
    if (r.cols != 3) throw ShapeError("axis_angle_to_quat: needs (N,3)");
    Tensor out(r.rows, 4);
    for (int i = 0; i < r.rows; ++i) {
        const double theta =
            std::sqrt(r(i, 0) * r(i, 0) + r(i, 1) * r(i, 1) + r(i, 2) * r(i, 2));
        double h, g;
        aa_quat_coeffs(theta, h, g);
        out(i, 0) = std::cos(0.5 * theta);
        for (int d = 0; d < 3; ++d) out(i, d + 1) = h * r(i, d);
    }
    return push(std::move(out), [aa](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        const Tensor& r = t.nodes_[aa].value;
        Tensor& gr = t.nodes_[aa].grad;
        for (int i = 0; i < r.rows; ++i) {
            const Vec3 v(r(i, 0), r(i, 1), r(i, 2));
            const double theta = v.norm();
            double h, gg;
            aa_quat_coeffs(theta, h, gg);
            // dqw/dr = -(h/2) r ; dqv_d/dr_e = h*delta + g*r_d*r_e
            const double gw = g(i, 0);
            Vec3 acc = -(0.5 * h) * gw * v;
            double dot = 0;
            for (int d = 0; d < 3; ++d) dot += g(i, d + 1) * v[d];
            for (int e = 0; e < 3; ++e)
                acc[e] += h * g(i, e + 1) + gg * dot * v[e];
            for (int e = 0; e < 3; ++e) gr(i, e) += acc[e];
        }
    });
}

Tape::Id Tape::quat_mul(Id a, Id b) {
    const Tensor& av = nodes_[a].value;
    const Tensor& bv = nodes_[b].value;
    if (av.cols != 4 || !av.same_shape(bv))
        throw ShapeError("quat_mul: needs matching (N,4)");
    Tensor out(av.rows, 4);
    for (int i = 0; i < av.rows; ++i) {
        const double a0 = av(i, 0), a1 = av(i, 1), a2 = av(i, 2), a3 = av(i, 3);
        const double b0 = bv(i, 0), b1 = bv(i, 1), b2 = bv(i, 2), b3 = bv(i, 3);
        out(i, 0) = a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3;
        out(i, 1) = a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2;
        out(i, 2) = a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1;
        out(i, 3) = a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0;
    }
    return push(std::move(out), [a, b](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        const Tensor& av = t.nodes_[a].value;
        const Tensor& bv = t.nodes_[b].value;
        Tensor& ga = t.nodes_[a].grad;
        Tensor& gb = t.nodes_[b].grad;
        for (int i = 0; i < g.rows; ++i) {
            const double g0 = g(i, 0), g1 = g(i, 1), g2 = g(i, 2), g3 = g(i, 3);
            const double a0 = av(i, 0), a1 = av(i, 1), a2 = av(i, 2), a3 = av(i, 3);
            const double b0 = bv(i, 0), b1 = bv(i, 1), b2 = bv(i, 2), b3 = bv(i, 3);
            ga(i, 0) += g0 * b0 + g1 * b1 + g2 * b2 + g3 * b3;
            ga(i, 1) += -g0 * b1 + g1 * b0 - g2 * b3 + g3 * b2;
            ga(i, 2) += -g0 * b2 + g1 * b3 + g2 * b0 - g3 * b1;
            ga(i, 3) += -g0 * b3 - g1 * b2 + g2 * b1 + g3 * b0;
            gb(i, 0) += g0 * a0 + g1 * a1 + g2 * a2 + g3 * a3;
            gb(i, 1) += -g0 * a1 + g1 * a0 + g2 * a3 - g3 * a2;
            gb(i, 2) += -g0 * a2 - g1 * a3 + g2 * a0 + g3 * a1;
            gb(i, 3) += -g0 * a3 + g1 * a2 - g2 * a1 + g3 * a0;
        }
    });
}

Tape::Id Tape::quat_normalize(Id q) {
    const Tensor& qv = nodes_[q].value;
    if (qv.cols != 4) throw ShapeError("quat_normalize: needs (N,4)");
    Tensor out(qv.rows, 4);
    for (int i = 0; i < qv.rows; ++i) {
        double n = 0;
        for (int c = 0; c < 4; ++c) n += qv(i, c) * qv(i, c);
        n = std::sqrt(n);
        for (int c = 0; c < 4; ++c) out(i, c) = qv(i, c) / n;
    }
    return push(std::move(out), [q](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        const Tensor& qv = t.nodes_[q].value;
        const Tensor& ov = t.nodes_[o].value;
        Tensor& gq = t.nodes_[q].grad;
        for (int i = 0; i < g.rows; ++i) {
            double n = 0, dot = 0;
            for (int c = 0; c < 4; ++c) {
                n += qv(i, c) * qv(i, c);
                dot += g(i, c) * ov(i, c);
            }
            n = std::sqrt(n);
            for (int c = 0; c < 4; ++c)
                gq(i, c) += (g(i, c) - dot * ov(i, c)) / n;
        }
    });
}

namespace {

struct BilinearTap {
    int i0, j0;
    double fx, fy;  // fractions within the cell
};

BilinearTap tap_for(double u, double v, int res) {
    // u, v in [-1,1] mapped onto the (res-1)^2 cell grid; clamped.
    auto to_grid = [res](double x) {
        double g = (x + 1.0) * 0.5 * (res - 1);
        return std::clamp(g, 0.0, double(res - 1));
    };
    const double gu = to_grid(u), gv = to_grid(v);
    BilinearTap t;
    t.i0 = std::min(int(gu), res - 2);
    t.j0 = std::min(int(gv), res - 2);
    t.fx = gu - t.i0;
    t.fy = gv - t.j0;
    return t;
}

bool inside(double x) { return x > -1.0 && x < 1.0; }

}  // namespace

Tape::Id Tape::triplane_sample(Id pos, Id plane_xy, Id plane_xz, Id plane_yz,
                               int res, int ch) {
    const Tensor& p = nodes_[pos].value;
    if (p.cols != 3) throw ShapeError("triplane_sample: pos needs (N,3)");
    const Id planes[3] = {plane_xy, plane_xz, plane_yz};
    for (Id pl : planes)
        if (nodes_[pl].value.rows != res * res || nodes_[pl].value.cols != ch)
            throw ShapeError("triplane_sample: plane needs (res*res, ch)");
    const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

    Tensor out(p.rows, 3 * ch);
    for (int n = 0; n < p.rows; ++n)
        for (int pl = 0; pl < 3; ++pl) {
            const BilinearTap t =
                tap_for(p(n, axes[pl][0]), p(n, axes[pl][1]), res);
            const Tensor& f = nodes_[planes[pl]].value;
            const int base = pl * ch;
            for (int c = 0; c < ch; ++c) {
                const double v00 = f(t.j0 * res + t.i0, c);
                const double v10 = f(t.j0 * res + t.i0 + 1, c);
                const double v01 = f((t.j0 + 1) * res + t.i0, c);
                const double v11 = f((t.j0 + 1) * res + t.i0 + 1, c);
                out(n, base + c) = (1 - t.fy) * ((1 - t.fx) * v00 + t.fx * v10) +
                                   t.fy * ((1 - t.fx) * v01 + t.fx * v11);
            }
        }

    return push(std::move(out),
                [pos, plane_xy, plane_xz, plane_yz, res, ch](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        const Tensor& p = t.nodes_[pos].value;
        const Id planes[3] = {plane_xy, plane_xz, plane_yz};
        const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
        Tensor& gp = t.nodes_[pos].grad;
        const double cell = 0.5 * (res - 1);  // d(grid)/d(coord)
        for (int n = 0; n < p.rows; ++n)
            for (int pl = 0; pl < 3; ++pl) {
                const double u = p(n, axes[pl][0]), v = p(n, axes[pl][1]);
                const BilinearTap tp = tap_for(u, v, res);
                const Tensor& f = t.nodes_[planes[pl]].value;
                Tensor& gf = t.nodes_[planes[pl]].grad;
                const int base = pl * ch;
                double du = 0, dv = 0;
                for (int c = 0; c < ch; ++c) {
                    const double go = g(n, base + c);
                    if (go == 0) continue;
                    const int i00 = tp.j0 * res + tp.i0;
                    const int i01 = (tp.j0 + 1) * res + tp.i0;
                    gf(i00, c) += go * (1 - tp.fy) * (1 - tp.fx);
                    gf(i00 + 1, c) += go * (1 - tp.fy) * tp.fx;
                    gf(i01, c) += go * tp.fy * (1 - tp.fx);
                    gf(i01 + 1, c) += go * tp.fy * tp.fx;
                    const double v00 = f(i00, c), v10 = f(i00 + 1, c);
                    const double v01 = f(i01, c), v11 = f(i01 + 1, c);
                    du += go * ((1 - tp.fy) * (v10 - v00) + tp.fy * (v11 - v01));
                    dv += go * ((1 - tp.fx) * (v01 - v00) + tp.fx * (v11 - v10));
                }
                if (inside(u)) gp(n, axes[pl][0]) += du * cell;
                if (inside(v)) gp(n, axes[pl][1]) += dv * cell;
            }
    });
}

Tape::Id Tape::filter2d(Id img, int h, int w, const std::vector<double>& kernel,
                        int kh, int kw) {
    const Tensor& x = nodes_[img].value;
    if (x.rows != h * w) throw ShapeError("filter2d: image rows != H*W");
    if (int(kernel.size()) != kh * kw)
        throw ShapeError("filter2d: kernel size mismatch");
    if (h < kh || w < kw) throw ArgumentError("filter2d: image smaller than kernel");
    const int c = x.cols;
    const int oh = h - kh + 1, ow = w - kw + 1;
    Tensor out(oh * ow, c);
    for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
            for (int i = 0; i < kh; ++i)
                for (int j = 0; j < kw; ++j) {
                    const double k = kernel[i * kw + j];
                    const int src = (y + i) * w + (xx + j);
                    for (int cc = 0; cc < c; ++cc)
                        out(y * ow + xx, cc) += k * x(src, cc);
                }
    return push(std::move(out), [img, h, w, kernel, kh, kw, c](Tape& t, Id o) {
        const Tensor& g = t.nodes_[o].grad;
        Tensor& gx = t.nodes_[img].grad;
        const int oh = h - kh + 1, ow = w - kw + 1;
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx)
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j) {
                        const double k = kernel[i * kw + j];
                        const int src = (y + i) * w + (xx + j);
                        for (int cc = 0; cc < c; ++cc)
                            gx(src, cc) += k * g(y * ow + xx, cc);
                    }
    });
}

Tape::Id Tape::custom(const std::vector<Id>& inputs, Tensor output,
                      std::function<void(Tape&, Id)> backward) {
    (void)inputs;  // inputs are captured by the callback; kept for clarity
    return push(std::move(output), std::move(backward));
}

void Tape::backward(Id scalar_out) {
    if (nodes_[scalar_out].value.size() != 1)
        throw ArgumentError("backward: output must be scalar");
    for (auto& n : nodes_) std::fill(n.grad.v.begin(), n.grad.v.end(), 0.0);
    nodes_[scalar_out].grad.v[0] = 1.0;
    for (Id i = scalar_out; i >= 0; --i)
        if (nodes_[i].bwd) nodes_[i].bwd(*this, i);
}

Tape::Id positional_encode(Tape& t, Tape::Id x, int levels) {
    std::vector<Tape::Id> parts{x};
    for (int l = 0; l < levels; ++l) {
        const double f = std::pow(2.0, l) * M_PI;
        Tape::Id s = t.scale(x, f);
        parts.push_back(t.sin(s));
        parts.push_back(t.cos(s));
    }
    return t.concat_cols(parts);
}

}  // namespace gsrig::ad

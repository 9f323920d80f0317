#include "gsrig/kdtree.hpp"

#include <algorithm>
#include <cmath>

namespace gsrig {

// Candidates ordered worst-first so the root is the eviction target.
// "Worse" means larger squared distance, or equal distance with the
// larger index (the tie rule keeps lower indices).
struct KdTree::Heap {
    struct Entry {
        double d2;
        int idx;
    };
    std::vector<Entry> v;
    int cap;

    explicit Heap(int k) : cap(k) { v.reserve(k); }

    static bool better(const Entry& a, const Entry& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        return a.idx < b.idx;
    }
    static bool cmp(const Entry& a, const Entry& b) { return better(a, b); }

    void push(double d2, int idx) {
        Entry e{d2, idx};
        if (int(v.size()) < cap) {
            v.push_back(e);
            std::push_heap(v.begin(), v.end(), cmp);
        } else if (better(e, v.front())) {
            std::pop_heap(v.begin(), v.end(), cmp);
            v.back() = e;
            std::push_heap(v.begin(), v.end(), cmp);
        }
    }
    bool full() const { return int(v.size()) == cap; }
    double worst_d2() const { return v.front().d2; }
};

KdTree::KdTree(const std::vector<Vec3>& points) : points_(points) {
    if (points_.empty()) return;
    std::vector<int> idx(points_.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    nodes_.reserve(points_.size());
    root_ = build(idx, 0, int(idx.size()));
}

int KdTree::build(std::vector<int>& idx, int lo, int hi) {
    if (lo >= hi) return -1;
    // Split on the widest axis of this subset.
    Vec3 mn = points_[idx[lo]], mx = mn;
    for (int i = lo; i < hi; ++i) {
        mn = mn.cwiseMin(points_[idx[i]]);
        mx = mx.cwiseMax(points_[idx[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const int mid = (lo + hi) / 2;
    std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                     [&](int a, int b) {
                         if (points_[a][axis] != points_[b][axis])
                             return points_[a][axis] < points_[b][axis];
                         return a < b;
                     });
    Node n;
    n.point = idx[mid];
    n.axis = axis;
    const int self = int(nodes_.size());
    nodes_.push_back(n);
    nodes_[self].left = build(idx, lo, mid);
    nodes_[self].right = build(idx, mid + 1, hi);
    return self;
}

void KdTree::search(int node, const Vec3& q, int k, Heap& heap) const {
    if (node < 0) return;
    const Node& n = nodes_[node];
    const Vec3& p = points_[n.point];
    heap.push((q - p).squaredNorm(), n.point);

    const double delta = q[n.axis] - p[n.axis];
    const int near = delta <= 0 ? n.left : n.right;
    const int far = delta <= 0 ? n.right : n.left;
    search(near, q, k, heap);
    // The far side can still hold an equal-distance lower index, so
    // descend on <= rather than <.
    if (!heap.full() || delta * delta <= heap.worst_d2())
        search(far, q, k, heap);
}

KnnResult KdTree::knn(const Vec3& query, int k) const {
    if (k < 1 || size_t(k) > points_.size())
        throw ArgumentError("knn: K must satisfy 1 <= K <= point count");
    Heap heap(k);
    search(root_, query, k, heap);
    std::sort(heap.v.begin(), heap.v.end(), Heap::cmp);
    KnnResult r;
    r.indices.reserve(k);
    r.distances.reserve(k);
    for (const auto& e : heap.v) {
        r.indices.push_back(e.idx);
        r.distances.push_back(std::sqrt(e.d2));
    }
    return r;
}

}  // namespace gsrig

#pragma once

#include <vector>

#include "gsrig/types.hpp"

namespace gsrig {

struct KnnResult {
    std::vector<int> indices;       // ascending by distance, ties by index
    std::vector<double> distances;  // Euclidean
};

// Exact 3D k-d tree over a fixed point set. Queries return the K nearest
// points; equal distances are broken toward the lower point index.
class KdTree {
   public:
    KdTree() = default;
    explicit KdTree(const std::vector<Vec3>& points);

    KnnResult knn(const Vec3& query, int k) const;
    size_t size() const { return points_.size(); }

   private:
    struct Node {
        int point = -1;
        int axis = 0;
        int left = -1, right = -1;
    };
    struct Heap;  // bounded worst-first candidate set

    int build(std::vector<int>& idx, int lo, int hi);
    void search(int node, const Vec3& q, int k, Heap& heap) const;

    std::vector<Vec3> points_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace gsrig

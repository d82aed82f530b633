#include "meshgs/mesh_ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <queue>
#include <unordered_map>

namespace meshgs {

Mesh subdivide_midpoint(const Mesh& mesh) {
    Mesh out;
    out.vertices = mesh.vertices;
    out.faces.reserve(mesh.faces.size() * 4);
    std::unordered_map<std::uint64_t, int> midpoint;
    auto mid = [&](int a, int b) {
        const std::uint64_t key = (static_cast<std::uint64_t>(std::min(a, b)) << 32) | static_cast<std::uint32_t>(std::max(a, b));
        const auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        const int idx = static_cast<int>(out.vertices.size());
        out.vertices.push_back(0.5 * (mesh.vertices[a] + mesh.vertices[b]));
        midpoint.emplace(key, idx);
        return idx;
    };
    for (const Face& f : mesh.faces) {
        const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
        out.faces.push_back({f[0], ab, ca});
        out.faces.push_back({f[1], bc, ab});
        out.faces.push_back({f[2], ca, bc});
        out.faces.push_back({ab, bc, ca});
    }
    return out;
}

Mesh compact(const Mesh& mesh) {
    std::vector<int> remap(mesh.vertices.size(), -1);
    Mesh out;
    out.faces.reserve(mesh.faces.size());
    for (const Face& f : mesh.faces) {
        Face g;
        for (int c = 0; c < 3; ++c) {
            int& r = remap[f[c]];
            if (r < 0) {
                r = static_cast<int>(out.vertices.size());
                out.vertices.push_back(mesh.vertices[f[c]]);
            }
            g[c] = r;
        }
        out.faces.push_back(g);
    }
    return out;
}

namespace {

using Quadric = Eigen::Matrix4d;

struct Candidate {
    double cost;
    int a, b;
    std::uint32_t stamp_a, stamp_b;
    Vec3 target;
};

struct CandidateOrder {
    bool operator()(const Candidate& x, const Candidate& y) const {
        if (x.cost != y.cost) return x.cost > y.cost;
        if (x.a != y.a) return x.a > y.a;
        return x.b > y.b;
    }
};

double quadric_cost(const Quadric& q, const Vec3& p) {
    const Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
    return std::max(0.0, h.dot(q * h));
}

class Decimator {
public:
    explicit Decimator(const Mesh& mesh) : v_(mesh.vertices), f_(mesh.faces) {
        alive_face_.assign(f_.size(), 1);
        alive_vertex_.assign(v_.size(), 1);
        stamp_.assign(v_.size(), 0);
        adj_.resize(v_.size());
        q_.assign(v_.size(), Quadric::Zero());
        for (size_t i = 0; i < f_.size(); ++i) {
            const Face& f = f_[i];
            for (int c = 0; c < 3; ++c) adj_[f[c]].push_back(static_cast<int>(i));
            const Vec3 n = (v_[f[1]] - v_[f[0]]).cross(v_[f[2]] - v_[f[0]]);
            const double len = n.norm();
            if (!(len > 0.0)) continue;
            const Vec3 u = n / len;
            const Eigen::Vector4d plane(u.x(), u.y(), u.z(), -u.dot(v_[f[0]]));
            const Quadric k = (0.5 * len) * plane * plane.transpose();
            for (int c = 0; c < 3; ++c) q_[f[c]] += k;
        }
        face_count_ = f_.size();
    }

    Mesh run(size_t target) {
        for (int v = 0; v < static_cast<int>(v_.size()); ++v)
            for (int n : neighbours(v))
                if (v < n) push(v, n);
        while (face_count_ > target && !heap_.empty()) {
            const Candidate c = heap_.top();
            heap_.pop();
            if (!alive_vertex_[c.a] || !alive_vertex_[c.b]) continue;
            if (stamp_[c.a] != c.stamp_a || stamp_[c.b] != c.stamp_b) continue;
            if (!collapse_allowed(c.a, c.b, c.target)) continue;
            collapse(c.a, c.b, c.target);
        }
        Mesh out;
        out.vertices = v_;
        for (size_t i = 0; i < f_.size(); ++i)
            if (alive_face_[i]) out.faces.push_back(f_[i]);
        return compact(out);
    }

private:
    std::vector<int> neighbours(int v) const {
        std::vector<int> n;
        for (int fi : adj_[v]) {
            if (!alive_face_[fi]) continue;
            for (int c : f_[fi])
                if (c != v) n.push_back(c);
        }
        std::sort(n.begin(), n.end());
        n.erase(std::unique(n.begin(), n.end()), n.end());
        return n;
    }

    void push(int a, int b) {
        if (a > b) std::swap(a, b);
        const Quadric q = q_[a] + q_[b];
        Eigen::Matrix3d m = q.topLeftCorner<3, 3>();
        const Vec3 rhs = -q.topRightCorner<3, 1>();
        Vec3 best = 0.5 * (v_[a] + v_[b]);
        double best_cost = quadric_cost(q, best);
        const Eigen::FullPivLU<Eigen::Matrix3d> lu(m);
        if (lu.isInvertible() && std::abs(lu.determinant()) > 1e-12 * std::max(1.0, m.norm() * m.norm() * m.norm())) {
            const Vec3 p = lu.solve(rhs);
            // Keep the optimum near the edge so that thin features do not explode.
            const double reach = 2.0 * (v_[a] - v_[b]).norm();
            if (p.allFinite() && (p - best).norm() <= reach) {
                const double cost = quadric_cost(q, p);
                if (cost < best_cost) {
                    best = p;
                    best_cost = cost;
                }
            }
        }
        for (const Vec3& p : {v_[a], v_[b]}) {
            const double cost = quadric_cost(q, p);
            if (cost < best_cost) {
                best = p;
                best_cost = cost;
            }
        }
        heap_.push({best_cost, a, b, stamp_[a], stamp_[b], best});
    }

    bool collapse_allowed(int a, int b, const Vec3& target) const {
        // Link condition: the shared neighbours are exactly the apexes of
        // the faces on edge ab.
        const std::vector<int> na = neighbours(a), nb = neighbours(b);
        std::vector<int> shared;
        std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(shared));
        std::vector<int> apex;
        for (int fi : adj_[a]) {
            if (!alive_face_[fi]) continue;
            const Face& f = f_[fi];
            if (f[0] != b && f[1] != b && f[2] != b) continue;
            for (int c : f)
                if (c != a && c != b) apex.push_back(c);
        }
        std::sort(apex.begin(), apex.end());
        if (apex != shared) return false;
        if (apex.size() != 2) return false;
        // No face around a or b may flip or collapse.
        for (int v : {a, b})
            for (int fi : adj_[v]) {
                if (!alive_face_[fi]) continue;
                const Face& f = f_[fi];
                const bool has_a = f[0] == a || f[1] == a || f[2] == a;
                const bool has_b = f[0] == b || f[1] == b || f[2] == b;
                if (has_a && has_b) continue;
                Vec3 p[3], q[3];
                for (int c = 0; c < 3; ++c) {
                    p[c] = v_[f[c]];
                    q[c] = (f[c] == a || f[c] == b) ? target : p[c];
                }
                const Vec3 before = (p[1] - p[0]).cross(p[2] - p[0]);
                const Vec3 after = (q[1] - q[0]).cross(q[2] - q[0]);
                const double an = after.norm(), bn = before.norm();
                if (!(an > 1e-12 * std::max(1.0, bn))) return false;
                if (before.dot(after) < 0.2 * an * bn) return false;
            }
        return true;
    }

    void collapse(int a, int b, const Vec3& target) {
        v_[a] = target;
        q_[a] += q_[b];
        alive_vertex_[b] = 0;
        for (int fi : adj_[b]) {
            if (!alive_face_[fi]) continue;
            Face& f = f_[fi];
            const bool has_a = f[0] == a || f[1] == a || f[2] == a;
            if (has_a) {
                alive_face_[fi] = 0;
                --face_count_;
                continue;
            }
            for (int& c : f)
                if (c == b) c = a;
            adj_[a].push_back(fi);
        }
        adj_[b].clear();
        std::vector<int> kept;
        for (int fi : adj_[a])
            if (alive_face_[fi]) kept.push_back(fi);
        std::sort(kept.begin(), kept.end());
        kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
        adj_[a] = std::move(kept);
        ++stamp_[a];
        for (int n : neighbours(a)) push(a, n);
    }

    std::vector<Vec3> v_;
    std::vector<Face> f_;
    std::vector<std::uint8_t> alive_face_, alive_vertex_;
    std::vector<std::uint32_t> stamp_;
    std::vector<std::vector<int>> adj_;
    std::vector<Quadric> q_;
    size_t face_count_ = 0;
    std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> heap_;
};

} // namespace

Mesh decimate_qem(const Mesh& mesh, size_t target_faces) {
    if (mesh.faces.size() <= target_faces) return compact(mesh);
    return Decimator(mesh).run(target_faces);
}

Mesh fit_face_budget(const Mesh& mesh, size_t budget) {
    if (budget < 4) throw ConfigError("face budget must be at least 4");
    if (mesh.faces.empty()) throw ConfigError("cannot fit an empty mesh to a face budget");
    Mesh out = compact(mesh);
    if (out.faces.size() > budget) return decimate_qem(out, budget);
    while (out.faces.size() * 4 <= budget) out = subdivide_midpoint(out);
    return out;
}

} // namespace meshgs

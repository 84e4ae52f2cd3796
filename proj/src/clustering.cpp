#include "cellscape/clustering.hpp"

#include "cellscape/error.hpp"
#include "cellscape/kdtree.hpp"
#include "cellscape/parallel.hpp"
#include "cellscape/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

namespace cellscape {

NeighborGraph knn_graph(const Matrix<float>& data, std::size_t k) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1", "k");
    if (k >= n) {
        throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " needs more than " + std::to_string(n) + " rows",
                    "k");
    }
    for (float v : data.values()) {
        if (std::isnan(v)) throw Error(ErrorCode::NaNInput, "kNN input contains NaN", "data");
    }

    NeighborGraph g;
    g.n_nodes = n;
    g.directed = true;
    g.offsets.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) g.offsets[i] = i * k;
    g.neighbors.resize(n * k);
    g.weights.assign(n * k, 1.0f);

    if (d == 2) {
        std::vector<Point2> pts(n);
        for (std::size_t i = 0; i < n; ++i) pts[i] = {data(i, 0), data(i, 1)};
        const KdTree2D tree(pts);
        parallel_for(n, [&](std::size_t i) {
            const auto nn = tree.knn_query(pts[i], k, i);
            for (std::size_t j = 0; j < k; ++j) g.neighbors[i * k + j] = static_cast<std::uint32_t>(nn[j].index);
        });
        return g;
    }

    parallel_chunks(n, 64, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<Neighbor> cand(n - 1);
        for (std::size_t i = begin; i < end; ++i) {
            const auto a = data.row(i);
            std::size_t c = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const auto b = data.row(j);
                double s = 0.0;
                for (std::size_t t = 0; t < d; ++t) {
                    const double diff = static_cast<double>(a[t]) - static_cast<double>(b[t]);
                    s += diff * diff;
                }
                cand[c++] = {j, s};
            }
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                              [](const Neighbor& x, const Neighbor& y) {
                                  return x.squared_distance < y.squared_distance ||
                                         (x.squared_distance == y.squared_distance && x.index < y.index);
                              });
            for (std::size_t j = 0; j < k; ++j) g.neighbors[i * k + j] = static_cast<std::uint32_t>(cand[j].index);
        }
    });
    return g;
}

NeighborGraph jaccard_weights(const NeighborGraph& knn) {
    const std::size_t n = knn.n_nodes;
    std::vector<std::vector<std::uint32_t>> sets(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto nb = knn.neighbors_of(i);
        sets[i].assign(nb.begin(), nb.end());
        std::sort(sets[i].begin(), sets[i].end());
        sets[i].erase(std::unique(sets[i].begin(), sets[i].end()), sets[i].end());
    }
    // Undirected adjacency: i's row holds j if either lists the other.
    std::vector<std::vector<std::uint32_t>> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto j : sets[i]) {
            if (j == i) continue;
            rows[i].push_back(j);
            rows[j].push_back(static_cast<std::uint32_t>(i));
        }
    }
    std::vector<std::vector<float>> row_weights(n);
    parallel_for(n, [&](std::size_t i) {
        auto& r = rows[i];
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
        std::vector<std::uint32_t> kept;
        auto& w = row_weights[i];
        for (auto j : r) {
            const auto& a = sets[i];
            const auto& b = sets[j];
            std::size_t inter = 0;
            for (std::size_t x = 0, y = 0; x < a.size() && y < b.size();) {
                if (a[x] < b[y]) {
                    ++x;
                } else if (b[y] < a[x]) {
                    ++y;
                } else {
                    ++inter;
                    ++x;
                    ++y;
                }
            }
            const std::size_t uni = a.size() + b.size() - inter;
            if (inter == 0) continue;
            kept.push_back(j);
            w.push_back(static_cast<float>(static_cast<double>(inter) / static_cast<double>(uni)));
        }
        r = std::move(kept);
    });

    NeighborGraph g;
    g.n_nodes = n;
    g.directed = false;
    g.offsets.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) g.offsets[i + 1] = g.offsets[i] + rows[i].size();
    g.neighbors.reserve(g.offsets[n]);
    g.weights.reserve(g.offsets[n]);
    for (std::size_t i = 0; i < n; ++i) {
        g.neighbors.insert(g.neighbors.end(), rows[i].begin(), rows[i].end());
        g.weights.insert(g.weights.end(), row_weights[i].begin(), row_weights[i].end());
    }
    return g;
}

namespace {

// Weighted graph at one Louvain level. A self-loop stores the total weight
// of the adjacency entries collapsed into it, so degrees sum to 2m.
struct LevelGraph {
    std::vector<std::vector<std::pair<std::uint32_t, double>>> adj;
    std::vector<double> degree;
    double total = 0.0;  // 2m

    std::size_t size() const { return adj.size(); }
};

LevelGraph level_from(const NeighborGraph& g) {
    LevelGraph lg;
    lg.adj.resize(g.n_nodes);
    lg.degree.assign(g.n_nodes, 0.0);
    for (std::size_t i = 0; i < g.n_nodes; ++i) {
        auto nb = g.neighbors_of(i);
        auto w = g.weights_of(i);
        for (std::size_t e = 0; e < nb.size(); ++e) {
            lg.adj[i].emplace_back(nb[e], static_cast<double>(w[e]));
            lg.degree[i] += w[e];
        }
        lg.total += lg.degree[i];
    }
    return lg;
}

double level_modularity(const LevelGraph& g, std::span<const std::uint32_t> comm, double resolution) {
    if (g.total <= 0.0) return 0.0;
    const std::size_t n_comm = comm.empty() ? 0 : *std::max_element(comm.begin(), comm.end()) + 1;
    std::vector<double> in(n_comm, 0.0);
    std::vector<double> tot(n_comm, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        tot[comm[i]] += g.degree[i];
        for (auto [j, w] : g.adj[i]) {
            if (comm[j] == comm[i]) in[comm[i]] += w;
        }
    }
    double q = 0.0;
    for (std::size_t c = 0; c < n_comm; ++c) {
        const double a = tot[c] / g.total;
        q += in[c] / g.total - resolution * a * a;
    }
    return q;
}

// Renumbers labels to 0..C-1 by first appearance.
std::size_t densify(std::vector<std::uint32_t>& labels) {
    std::unordered_map<std::uint32_t, std::uint32_t> remap;
    for (auto& l : labels) {
        auto [it, inserted] = remap.emplace(l, static_cast<std::uint32_t>(remap.size()));
        l = it->second;
    }
    return remap.size();
}

// Local-move phase. Returns true if any node changed community.
bool local_moves(const LevelGraph& g, std::vector<std::uint32_t>& comm, double resolution, std::uint64_t seed) {
    const std::size_t n = g.size();
    std::vector<double> tot(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) tot[comm[i]] += g.degree[i];

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(seed);
    rng.shuffle(std::span<std::uint32_t>(order));

    std::vector<double> link(n, 0.0);
    std::vector<std::uint32_t> touched;
    bool any_moved = false;
    double q = level_modularity(g, comm, resolution);
    while (true) {
        bool moved = false;
        for (auto i : order) {
            const std::uint32_t ci = comm[i];
            const double ki = g.degree[i];
            touched.clear();
            for (auto [j, w] : g.adj[i]) {
                if (j == i) continue;
                const auto cj = comm[j];
                if (link[cj] == 0.0) touched.push_back(cj);
                link[cj] += w;
            }
            tot[ci] -= ki;
            std::uint32_t best = ci;
            double best_gain = link[ci] - resolution * tot[ci] * ki / g.total;
            for (auto c : touched) {
                const double gain = link[c] - resolution * tot[c] * ki / g.total;
                if (gain > best_gain || (gain == best_gain && c < best)) {
                    best_gain = gain;
                    best = c;
                }
            }
            tot[best] += ki;
            for (auto c : touched) link[c] = 0.0;
            link[ci] = 0.0;
            if (best != ci) {
                comm[i] = best;
                moved = true;
            }
        }
        if (!moved) break;
        any_moved = true;
        const double q_new = level_modularity(g, comm, resolution);
        const double gain = q_new - q;
        q = q_new;
        if (gain < 1e-7) break;
    }
    return any_moved;
}

LevelGraph aggregate(const LevelGraph& g, std::span<const std::uint32_t> comm, std::size_t n_comm) {
    LevelGraph out;
    out.adj.resize(n_comm);
    out.degree.assign(n_comm, 0.0);
    out.total = g.total;
    std::vector<std::unordered_map<std::uint32_t, double>> acc(n_comm);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto ci = comm[i];
        out.degree[ci] += g.degree[i];
        for (auto [j, w] : g.adj[i]) acc[ci][comm[j]] += w;
    }
    for (std::size_t c = 0; c < n_comm; ++c) {
        out.adj[c].assign(acc[c].begin(), acc[c].end());
        std::sort(out.adj[c].begin(), out.adj[c].end());
    }
    return out;
}

}  // namespace

double modularity(const NeighborGraph& g, std::span<const std::uint32_t> labels, double resolution) {
    if (labels.size() != g.n_nodes) throw Error(ErrorCode::LengthMismatch, "one label per node required", "labels");
    std::vector<std::uint32_t> dense(labels.begin(), labels.end());
    densify(dense);
    return level_modularity(level_from(g), dense, resolution);
}

std::vector<std::uint32_t> louvain(const NeighborGraph& g, double resolution, std::uint64_t seed) {
    if (g.directed) throw Error(ErrorCode::DirectedGraphError, "louvain needs an undirected graph", "graph");
    if (!(resolution > 0.0)) throw Error(ErrorCode::InvalidArgument, "resolution must be > 0", "resolution");
    const std::size_t n = g.n_nodes;
    std::vector<std::uint32_t> membership(n);
    std::iota(membership.begin(), membership.end(), 0u);
    if (n == 0) return membership;

    LevelGraph level = level_from(g);
    if (level.total <= 0.0) return membership;
    double q = level_modularity(level, membership, resolution);
    for (std::uint64_t pass = 0;; ++pass) {
        std::vector<std::uint32_t> comm(level.size());
        std::iota(comm.begin(), comm.end(), 0u);
        if (!local_moves(level, comm, resolution, derive_seed(seed, pass))) break;
        const std::size_t n_comm = densify(comm);
        const double q_new = level_modularity(level, comm, resolution);
        if (q_new - q < 1e-7) break;
        q = q_new;
        for (auto& m : membership) m = comm[m];
        if (n_comm == level.size()) break;
        level = aggregate(level, comm, n_comm);
    }
    densify(membership);
    return membership;
}

CellTable phenograph(const CellTable& table, const PhenographParams& params) {
    const auto& data = table.layer(params.layer);
    const auto knn = knn_graph(data, params.k);
    const auto weighted = jaccard_weights(knn);
    const auto labels = louvain(weighted, params.resolution, params.seed);
    const std::size_t n_clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::string> categories(n_clusters);
    for (std::size_t c = 0; c < n_clusters; ++c) categories[c] = std::to_string(c);

    const std::string name = params.out_annotation.empty() ? "phenograph_" + params.layer : params.out_annotation;
    return table.with_annotation(name, CategoricalColumn(labels, std::move(categories)))
        .with_record(make_record("phenograph", {{"layer", params.layer},
                                                {"k", params.k},
                                                {"resolution", params.resolution},
                                                {"seed", params.seed},
                                                {"out_annotation", name},
                                                {"n_clusters", n_clusters},
                                                {"modularity", modularity(weighted, labels, params.resolution)}}));
}

CellTable utag_smooth(const CellTable& table, const std::string& layer, double radius, const std::string& out_layer) {
    if (!(radius > 0.0) || !std::isfinite(radius)) {
        throw Error(ErrorCode::NonPositiveRadius, "smoothing radius must be > 0", "radius");
    }
    const auto& src = table.layer(layer);
    const std::size_t n = src.rows();
    const std::size_t d = src.cols();
    const KdTree2D tree(table.coords());
    std::vector<float> out(n * d);
    parallel_chunks(n, 256, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<double> sum(d);
        for (std::size_t i = begin; i < end; ++i) {
            const auto members = tree.radius_query({table.coords()(i, 0), table.coords()(i, 1)}, radius);
            std::fill(sum.begin(), sum.end(), 0.0);
            for (auto j : members) {
                const auto row = src.row(j);
                for (std::size_t t = 0; t < d; ++t) sum[t] += row[t];
            }
            for (std::size_t t = 0; t < d; ++t) {
                out[i * d + t] = static_cast<float>(sum[t] / static_cast<double>(members.size()));
            }
        }
    });
    return table.with_layer(out_layer, Matrix<float>(n, d, std::move(out)))
        .with_record(make_record("utag_smooth", {{"layer", layer}, {"radius", radius}, {"out_layer", out_layer}}));
}

double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "labelings differ in length", "labels");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    std::map<std::pair<std::uint32_t, std::uint32_t>, double> joint;
    std::map<std::uint32_t, double> ra;
    std::map<std::uint32_t, double> rb;
    for (std::size_t i = 0; i < n; ++i) {
        joint[{a[i], b[i]}] += 1;
        ra[a[i]] += 1;
        rb[b[i]] += 1;
    }
    auto pairs = [](double x) { return x * (x - 1) / 2; };
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& [key, c] : joint) index += pairs(c);
    for (const auto& [key, c] : ra) sa += pairs(c);
    for (const auto& [key, c] : rb) sb += pairs(c);
    const double expected = sa * sb / pairs(static_cast<double>(n));
    const double max_index = (sa + sb) / 2;
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

}  // namespace cellscape

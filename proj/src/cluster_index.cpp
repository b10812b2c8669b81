#include "pic/cluster_index.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "pic/errors.hpp"

namespace pic {

SqDist sqdist_raw(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    if (a.size() != b.size()) throw DimensionError("sqdist: dimension mismatch");
    SqDist s = 0;
    for (size_t i = 0; i < a.size(); i++) {
        __int128 d = __int128(a[i]) - __int128(b[i]);
        s += SqDist(d * d);
    }
    return s;
}

int64_t sqdist_i64(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    SqDist s = sqdist_raw(a, b);
    if (s > SqDist(INT64_MAX)) throw RangeError("squared distance exceeds int64");
    return int64_t(s);
}

int64_t dot_i64(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    if (a.size() != b.size()) throw DimensionError("dot: dimension mismatch");
    __int128 s = 0;
    for (size_t i = 0; i < a.size(); i++) s += __int128(a[i]) * __int128(b[i]);
    if (s > __int128(INT64_MAX) || s < -__int128(INT64_MAX)) throw RangeError("dot product exceeds int64");
    return int64_t(s);
}

uint32_t default_cluster_count(size_t n) {
    if (n == 0) return 0;
    return static_cast<uint32_t>(std::ceil(std::sqrt(double(n))));
}

namespace {

// alpha nearest leaders among `candidates` (ordinals into cluster array),
// ranked by (distance, leader ref) for determinism.
std::vector<uint32_t> nearest_leaders(const std::vector<int64_t>& raws,
                                      const std::vector<uint32_t>& candidates,
                                      const std::vector<Cluster>& clusters,
                                      const std::function<const std::vector<int64_t>&(uint32_t)>& coords,
                                      uint32_t alpha) {
    std::vector<std::pair<SqDist, uint32_t>> ranked;
    ranked.reserve(candidates.size());
    for (uint32_t ord : candidates) ranked.emplace_back(sqdist_raw(raws, coords(ord)), ord);
    std::sort(ranked.begin(), ranked.end(), [&](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first < y.first;
        return clusters[x.second].leader < clusters[y.second].leader;
    });
    if (ranked.size() > alpha) ranked.resize(alpha);
    std::vector<uint32_t> out;
    out.reserve(ranked.size());
    for (const auto& [d, ord] : ranked) out.push_back(ord);
    return out;
}

} // namespace

ClusterIndex build_index(const std::vector<IndexedVector>& vectors, uint32_t c, uint32_t levels,
                         uint32_t alpha, uint64_t seed) {
    const size_t n = vectors.size();
    if (c < 1 || levels < 1 || alpha < 1) throw ConfigError("index params must be >= 1");
    if (c > n) throw ConfigError("cannot pick more representatives than vectors");
    const size_t dim = vectors.front().raws.size();
    for (const auto& v : vectors)
        if (v.raws.size() != dim) throw DimensionError("index input dimension mismatch");

    std::mt19937_64 rng(seed);
    std::vector<uint32_t> order(n);
    for (size_t i = 0; i < n; i++) order[i] = static_cast<uint32_t>(i);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<uint32_t> leader_input(order.begin(), order.begin() + c);
    // Canonical presentation: clusters sorted by leader ref.
    std::sort(leader_input.begin(), leader_input.end(),
              [&](uint32_t a, uint32_t b) { return vectors[a].ref < vectors[b].ref; });

    ClusterIndex idx;
    idx.dim = static_cast<uint32_t>(dim);
    idx.params = ClusterParams{levels, alpha};
    idx.clusters.reserve(c);
    std::vector<const std::vector<int64_t>*> leader_raws;
    leader_raws.reserve(c);
    std::vector<bool> is_leader(n, false);
    for (uint32_t src : leader_input) {
        is_leader[src] = true;
        idx.clusters.push_back(Cluster{vectors[src].ref, {vectors[src].ref}});
        leader_raws.push_back(&vectors[src].raws);
    }

    // Representative hierarchy: level j (1-based from the top) holds a random
    // subset of size ~C^(j/L); the bottom level is all C leaders.
    idx.levels.resize(levels);
    std::vector<uint32_t> all(c);
    for (uint32_t i = 0; i < c; i++) all[i] = i;
    idx.levels[levels - 1] = all;
    for (uint32_t j = levels - 1; j >= 1; j--) {
        double frac = double(j) / double(levels);
        auto size_j = static_cast<size_t>(std::max(1.0, std::round(std::pow(double(c), frac))));
        std::vector<uint32_t> below = idx.levels[j];
        std::shuffle(below.begin(), below.end(), rng);
        below.resize(std::min(size_j, below.size()));
        std::sort(below.begin(), below.end());
        idx.levels[j - 1] = std::move(below);
    }

    auto coords = [&](uint32_t ord) -> const std::vector<int64_t>& { return *leader_raws[ord]; };

    for (size_t i = 0; i < n; i++) {
        if (is_leader[i]) continue;
        std::vector<uint32_t> candidates;
        if (levels == 1) {
            candidates = all;
        } else {
            // Descend the hierarchy: keep the nearest node per level, then
            // consider the next level's nodes routed under it.
            uint32_t current = nearest_leaders(vectors[i].raws, idx.levels[0], idx.clusters, coords, 1)[0];
            for (size_t lvl = 1; lvl < idx.levels.size(); lvl++) {
                std::vector<uint32_t> children;
                for (uint32_t ord : idx.levels[lvl]) {
                    auto parents = nearest_leaders(coords(ord), idx.levels[lvl - 1], idx.clusters, coords, 1);
                    if (parents[0] == current) children.push_back(ord);
                }
                if (std::find(children.begin(), children.end(), current) == children.end())
                    children.push_back(current);
                current = nearest_leaders(vectors[i].raws, children, idx.clusters, coords, 1)[0];
                if (lvl + 1 == idx.levels.size()) candidates = children;
            }
            // Pad so soft assignment always has alpha choices.
            if (candidates.size() < alpha) candidates = all;
        }
        for (uint32_t ord : nearest_leaders(vectors[i].raws, candidates, idx.clusters, coords, alpha))
            idx.clusters[ord].members.push_back(vectors[i].ref);
    }
    return idx;
}

void extend_index(ClusterIndex& idx, const std::string& owner,
                  const std::vector<IndexedVector>& new_vectors,
                  const std::function<std::vector<int64_t>(const VectorRef&)>& leader_coords) {
    std::vector<uint32_t> own;
    for (uint32_t i = 0; i < idx.clusters.size(); i++)
        if (idx.clusters[i].leader.owner_id == owner) own.push_back(i);
    if (own.empty()) throw ConfigError("extend_index: owner has no clusters");
    std::vector<std::vector<int64_t>> coords_store(own.size());
    std::map<uint32_t, size_t> slot;
    for (size_t i = 0; i < own.size(); i++) {
        coords_store[i] = leader_coords(idx.clusters[own[i]].leader);
        slot[own[i]] = i;
    }
    auto coords = [&](uint32_t ord) -> const std::vector<int64_t>& { return coords_store[slot[ord]]; };
    for (const auto& v : new_vectors) {
        if (v.ref.owner_id != owner) throw ConfigError("extend_index: foreign owner in batch");
        for (uint32_t ord : nearest_leaders(v.raws, own, idx.clusters, coords, idx.params.alpha))
            idx.clusters[ord].members.push_back(v.ref);
    }
}

ClusterIndex merge(const ClusterIndex& global, const ClusterIndex& incoming,
                   const std::string& owner) {
    if (incoming.empty()) return global;
    for (const auto& cl : incoming.clusters) {
        if (cl.leader.owner_id != owner)
            throw ProtocolError("merge: incoming cluster not labeled with the declared owner");
        for (const auto& m : cl.members)
            if (m.owner_id != owner) throw ProtocolError("merge: incoming member with foreign owner");
    }
    if (global.empty()) {
        ClusterIndex out = incoming;
        return out;
    }
    if (index_owners(global).count(owner))
        throw ProtocolError("merge: owner already present in the global index");
    if (global.dim != incoming.dim) throw DimensionError("merge: index dimension mismatch");
    if (global.params.levels != incoming.params.levels)
        throw ConfigError("merge: level count mismatch");
    ClusterIndex out = global;
    uint32_t off = static_cast<uint32_t>(out.clusters.size());
    out.clusters.insert(out.clusters.end(), incoming.clusters.begin(), incoming.clusters.end());
    for (size_t j = 0; j < out.levels.size(); j++)
        for (uint32_t ord : incoming.levels[j]) out.levels[j].push_back(ord + off);
    return out;
}

void remove_owner(ClusterIndex& idx, const std::string& owner) {
    std::vector<uint32_t> remap(idx.clusters.size(), UINT32_MAX);
    std::vector<Cluster> kept;
    for (uint32_t i = 0; i < idx.clusters.size(); i++) {
        if (idx.clusters[i].leader.owner_id == owner) continue;
        remap[i] = static_cast<uint32_t>(kept.size());
        kept.push_back(std::move(idx.clusters[i]));
    }
    idx.clusters = std::move(kept);
    for (auto& level : idx.levels) {
        std::vector<uint32_t> nl;
        for (uint32_t ord : level)
            if (remap[ord] != UINT32_MAX) nl.push_back(remap[ord]);
        level = std::move(nl);
    }
}

std::set<std::string> index_owners(const ClusterIndex& idx) {
    std::set<std::string> out;
    for (const auto& cl : idx.clusters) out.insert(cl.leader.owner_id);
    return out;
}

std::vector<std::pair<uint32_t, VectorRef>> leaders(const ClusterIndex& idx,
                                                    const std::set<std::string>& owner_filter) {
    std::vector<std::pair<uint32_t, VectorRef>> out;
    for (uint32_t i = 0; i < idx.clusters.size(); i++)
        if (owner_filter.count(idx.clusters[i].leader.owner_id))
            out.emplace_back(i, idx.clusters[i].leader);
    return out;
}

const std::vector<VectorRef>& members(const ClusterIndex& idx, uint32_t leader_ordinal) {
    if (leader_ordinal >= idx.clusters.size()) throw RangeError("members: no such cluster");
    return idx.clusters[leader_ordinal].members;
}

std::vector<uint32_t> probe_set(const std::vector<uint32_t>& ranked_leaders, uint32_t beta) {
    std::vector<uint32_t> out(ranked_leaders.begin(),
                              ranked_leaders.begin() +
                                  std::min<size_t>(beta, ranked_leaders.size()));
    return out;
}

std::vector<KnnHit> brute_force_knn(const std::vector<int64_t>& query,
                                    const std::vector<IndexedVector>& vectors, size_t k) {
    std::vector<std::pair<SqDist, size_t>> all;
    all.reserve(vectors.size());
    for (size_t i = 0; i < vectors.size(); i++)
        all.emplace_back(sqdist_raw(query, vectors[i].raws), i);
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (all.size() > k) all.resize(k);
    std::vector<KnnHit> out;
    out.reserve(all.size());
    for (const auto& [d, i] : all) out.push_back(KnnHit{vectors[i].ref, d});
    return out;
}

namespace {

void write_ref(ByteWriter& w, const VectorRef& r) {
    w.str(r.owner_id);
    w.str(r.image_id);
    w.u32be(r.vector_ordinal);
}

VectorRef read_ref(ByteReader& r) {
    VectorRef v;
    v.owner_id = r.str();
    v.image_id = r.str();
    v.vector_ordinal = r.u32be();
    return v;
}

} // namespace

Bytes serialize_index(const ClusterIndex& idx) {
    ByteWriter w;
    w.magic("PICX");
    w.u8(1);
    w.u32be(idx.dim);
    w.u32be(idx.params.levels);
    w.u32be(idx.params.alpha);
    w.u32be(static_cast<uint32_t>(idx.clusters.size()));
    for (const auto& cl : idx.clusters) {
        write_ref(w, cl.leader);
        w.u32be(static_cast<uint32_t>(cl.members.size()));
        for (const auto& m : cl.members) write_ref(w, m);
    }
    w.u32be(static_cast<uint32_t>(idx.levels.size()));
    for (const auto& level : idx.levels) {
        w.u32be(static_cast<uint32_t>(level.size()));
        for (uint32_t ord : level) w.u32be(ord);
    }
    return w.take();
}

ClusterIndex parse_index(const Bytes& in) {
    ByteReader r(in);
    r.expect_magic("PICX");
    if (r.u8() != 1) throw ParseError("unsupported index version");
    ClusterIndex idx;
    idx.dim = r.u32be();
    idx.params.levels = r.u32be();
    idx.params.alpha = r.u32be();
    uint32_t nclusters = r.u32be();
    idx.clusters.reserve(nclusters);
    for (uint32_t i = 0; i < nclusters; i++) {
        Cluster cl;
        cl.leader = read_ref(r);
        uint32_t nm = r.u32be();
        cl.members.reserve(nm);
        for (uint32_t j = 0; j < nm; j++) cl.members.push_back(read_ref(r));
        if (cl.members.empty() || !(cl.members.front() == cl.leader))
            throw ParseError("index: cluster does not start with its leader");
        idx.clusters.push_back(std::move(cl));
    }
    uint32_t nlevels = r.u32be();
    idx.levels.resize(nlevels);
    for (auto& level : idx.levels) {
        uint32_t cnt = r.u32be();
        level.reserve(cnt);
        for (uint32_t j = 0; j < cnt; j++) {
            uint32_t ord = r.u32be();
            if (ord >= nclusters) throw ParseError("index: level ordinal out of range");
            level.push_back(ord);
        }
    }
    if (!r.done()) throw ParseError("index: trailing bytes");
    return idx;
}

std::string index_to_json(const ClusterIndex& idx) {
    nlohmann::json j;
    j["dim"] = idx.dim;
    j["levels"] = idx.params.levels;
    j["alpha"] = idx.params.alpha;
    j["clusters"] = nlohmann::json::array();
    for (const auto& cl : idx.clusters) {
        nlohmann::json c;
        c["leader"] = cl.leader.locator();
        c["owner"] = cl.leader.owner_id;
        c["members"] = nlohmann::json::array();
        for (const auto& m : cl.members) c["members"].push_back(m.locator());
        j["clusters"].push_back(std::move(c));
    }
    j["hierarchy"] = idx.levels;
    return j.dump(2);
}

} // namespace pic

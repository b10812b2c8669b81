#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "pic/bytes.hpp"

namespace pic {

// Squared distances on fixed-point raws. 128-bit accumulation; raws are
// bounded well below 2^55 by the capacity guard, so no wrap is possible.
using SqDist = unsigned __int128;

SqDist sqdist_raw(const std::vector<int64_t>& a, const std::vector<int64_t>& b);
int64_t sqdist_i64(const std::vector<int64_t>& a, const std::vector<int64_t>& b);
int64_t dot_i64(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

// Points at one stored ciphertext in the encrypted DB.
struct VectorRef {
    std::string owner_id;
    std::string image_id;
    uint32_t vector_ordinal = 0;

    std::string locator() const {
        return owner_id + "/" + image_id + "#" + std::to_string(vector_ordinal);
    }

    friend bool operator==(const VectorRef& a, const VectorRef& b) {
        return a.owner_id == b.owner_id && a.image_id == b.image_id &&
               a.vector_ordinal == b.vector_ordinal;
    }
    friend bool operator<(const VectorRef& a, const VectorRef& b) {
        if (a.owner_id != b.owner_id) return a.owner_id < b.owner_id;
        if (a.image_id != b.image_id) return a.image_id < b.image_id;
        return a.vector_ordinal < b.vector_ordinal;
    }
};

// Build-time input: a reference plus the plaintext fixed-point coordinates.
// Clustering happens client-side; the topology that leaves the client never
// contains coordinates.
struct IndexedVector {
    VectorRef ref;
    std::vector<int64_t> raws;
};

struct Cluster {
    VectorRef leader;
    std::vector<VectorRef> members; // members[0] == leader
};

struct ClusterParams {
    uint32_t levels = 1; // L
    uint32_t alpha = 1;  // soft-assignment fan-out
};

// Cluster-pruning topology: bottom-level clusters plus the representative
// hierarchy (each level a subset of the bottom leaders, top to bottom).
struct ClusterIndex {
    uint32_t dim = 0;
    ClusterParams params;
    std::vector<Cluster> clusters;
    std::vector<std::vector<uint32_t>> levels; // levels.back() = all leader ordinals

    bool empty() const { return clusters.empty(); }
    size_t leader_count() const { return clusters.size(); }
};

uint32_t default_cluster_count(size_t n); // C = ceil(sqrt(N))

// C random representatives (seed-deterministic); every other vector attaches
// to its alpha nearest bottom leaders. With L > 1 the upper levels are random
// subsets sized C^(j/L) used for faster approximate attachment.
ClusterIndex build_index(const std::vector<IndexedVector>& vectors, uint32_t c, uint32_t levels,
                         uint32_t alpha, uint64_t seed);

// Attaches new vectors to their alpha nearest existing leaders of the same
// owner; leader set unchanged. leader_coords resolves a leader ref to its
// plaintext raws (the caller owns the plaintext).
void extend_index(ClusterIndex& idx, const std::string& owner,
                  const std::vector<IndexedVector>& new_vectors,
                  const std::function<std::vector<int64_t>(const VectorRef&)>& leader_coords);

// Disjoint union keeping per-owner subtrees intact. Every incoming ref must
// belong to `owner`, and `owner` must not already be present.
ClusterIndex merge(const ClusterIndex& global, const ClusterIndex& incoming,
                   const std::string& owner);

void remove_owner(ClusterIndex& idx, const std::string& owner);

std::set<std::string> index_owners(const ClusterIndex& idx);

// Bottom-level leaders of permitted owners, with their cluster ordinals.
std::vector<std::pair<uint32_t, VectorRef>> leaders(const ClusterIndex& idx,
                                                    const std::set<std::string>& owner_filter);

const std::vector<VectorRef>& members(const ClusterIndex& idx, uint32_t leader_ordinal);

// Top beta entries of an already ranked leader list.
std::vector<uint32_t> probe_set(const std::vector<uint32_t>& ranked_leaders, uint32_t beta);

// Exact k smallest squared distances; ties resolved by insertion order.
struct KnnHit {
    VectorRef ref;
    SqDist dist;
};
std::vector<KnnHit> brute_force_knn(const std::vector<int64_t>& query,
                                    const std::vector<IndexedVector>& vectors, size_t k);

// Versioned binary file ("PICX") and a human-readable JSON dump.
Bytes serialize_index(const ClusterIndex& idx);
ClusterIndex parse_index(const Bytes& in);
std::string index_to_json(const ClusterIndex& idx);

} // namespace pic

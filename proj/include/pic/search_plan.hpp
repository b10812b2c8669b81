#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pic/cluster_index.hpp"
#include "pic/parallel_search.hpp"

namespace pic {

// One result row: basic scheme value = vote score, advanced = scaled distance.
struct RankedImage {
    std::string owner_id;
    std::string image_id;
    int64_t value = 0;

    friend bool operator==(const RankedImage& a, const RankedImage& b) {
        return a.owner_id == b.owner_id && a.image_id == b.image_id && a.value == b.value;
    }
};

struct SearchOutcome {
    size_t permitted_owners = 0;
    std::vector<RankedImage> ranked;
};

// Sentinel for "seed the threshold from the data" (twice the nearest value).
inline constexpr int64_t kAutoThreshold = INT64_MIN;

// Deduplicating member collection: members of the requested clusters, in
// cluster-then-stored order, skipping refs already returned for this query
// vector. Shared by the cloud entity and the plaintext oracle so both sides
// expand identically.
std::vector<VectorRef> collect_members(const ClusterIndex& idx,
                                       const std::vector<uint32_t>& cluster_ordinals,
                                       std::set<VectorRef>& already_sent);

// Rank leader ordinals by (distance, leader ref) ascending.
std::vector<uint32_t> rank_leaders(const std::vector<std::pair<int64_t, uint32_t>>& dists,
                                   const ClusterIndex& idx);

// Basic-scheme selection: per query vector, probe the beta nearest clusters,
// expand one leader at a time until k_nn member records arrived (or leaders
// ran out), then vote: every k-NN member of a query vector adds 1 to its
// image's score. Final ranking: score desc, then (owner, image) asc.
class BasicPlanner {
public:
    BasicPlanner(size_t n_qvecs, uint32_t k_nn, uint32_t beta);

    void set_leader_ranking(size_t qvec, std::vector<uint32_t> ranked_ordinals);

    // Next clusters to fetch per query vector; empty when the plan is done.
    std::map<uint32_t, std::vector<uint32_t>> next_fetch();

    void feed(size_t qvec, const std::vector<PlainDistRecord>& records);

    std::vector<RankedImage> finalize(size_t limit) const;

private:
    struct PerQvec {
        std::vector<uint32_t> ranked;
        size_t probed = 0;
        std::vector<PlainDistRecord> records;
    };
    std::vector<PerQvec> q_;
    uint32_t k_nn_;
    uint32_t beta_;
};

// Advanced-scheme selection over per-image frequency vectors. Level 1 keeps
// clusters whose leader distance passes theta (binary-searched until at least
// `cluster_target` pass); level 2 keeps images whose distance passes
// theta_prime (binary-searched until k_nn images pass, widening theta first
// when the fetched clusters cannot supply enough). Thetas < 0 auto-seed at
// twice the nearest observed distance.
class AdvancedPlanner {
public:
    AdvancedPlanner(uint32_t k_nn, uint32_t cluster_target, int64_t theta, int64_t theta_prime);

    void set_leader_distances(std::vector<std::pair<int64_t, uint32_t>> dists);

    // Cluster ordinals to fetch next (newly selected only); empty = move on.
    std::vector<uint32_t> next_fetch();

    void feed(const std::vector<PlainDistRecord>& records);

    bool done() const { return done_; }

    std::vector<RankedImage> finalize(size_t limit) const;

private:
    void select_clusters();

    uint32_t k_nn_;
    uint32_t cluster_target_;
    int64_t theta0_;
    int64_t theta_prime0_;
    std::vector<std::pair<int64_t, uint32_t>> leader_dists_; // (dist, ordinal)
    ThresholdState level1_;
    std::set<uint32_t> selected_;
    std::set<uint32_t> fetched_;
    std::vector<PlainDistRecord> member_records_;
    std::vector<PlainDistRecord> final_selection_;
    bool have_leaders_ = false;
    bool done_ = false;
};

} // namespace pic

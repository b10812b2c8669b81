#include "pic/search_plan.hpp"

#include <algorithm>

#include "pic/errors.hpp"

namespace pic {

std::vector<VectorRef> collect_members(const ClusterIndex& idx,
                                       const std::vector<uint32_t>& cluster_ordinals,
                                       std::set<VectorRef>& already_sent) {
    std::vector<VectorRef> out;
    for (uint32_t ord : cluster_ordinals) {
        for (const auto& ref : members(idx, ord)) {
            if (already_sent.insert(ref).second) out.push_back(ref);
        }
    }
    return out;
}

std::vector<uint32_t> rank_leaders(const std::vector<std::pair<int64_t, uint32_t>>& dists,
                                   const ClusterIndex& idx) {
    std::vector<std::pair<int64_t, uint32_t>> sorted = dists;
    std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return idx.clusters[a.second].leader < idx.clusters[b.second].leader;
    });
    std::vector<uint32_t> out;
    out.reserve(sorted.size());
    for (const auto& [d, ord] : sorted) out.push_back(ord);
    return out;
}

// ---- BasicPlanner ----

BasicPlanner::BasicPlanner(size_t n_qvecs, uint32_t k_nn, uint32_t beta)
    : q_(n_qvecs), k_nn_(std::max(1u, k_nn)), beta_(std::max(1u, beta)) {}

void BasicPlanner::set_leader_ranking(size_t qvec, std::vector<uint32_t> ranked_ordinals) {
    q_.at(qvec).ranked = std::move(ranked_ordinals);
}

std::map<uint32_t, std::vector<uint32_t>> BasicPlanner::next_fetch() {
    std::map<uint32_t, std::vector<uint32_t>> plan;
    for (size_t i = 0; i < q_.size(); i++) {
        auto& q = q_[i];
        if (q.records.size() >= k_nn_ || q.probed >= q.ranked.size()) continue;
        // First round probes the beta nearest clusters, later rounds expand
        // to the next-nearest leader one at a time.
        size_t take = q.probed == 0 ? std::min<size_t>(beta_, q.ranked.size() - q.probed) : 1;
        std::vector<uint32_t> next(q.ranked.begin() + long(q.probed),
                                   q.ranked.begin() + long(q.probed + take));
        q.probed += take;
        plan.emplace(uint32_t(i), std::move(next));
    }
    return plan;
}

void BasicPlanner::feed(size_t qvec, const std::vector<PlainDistRecord>& records) {
    auto& q = q_.at(qvec);
    q.records.insert(q.records.end(), records.begin(), records.end());
}

std::vector<RankedImage> BasicPlanner::finalize(size_t limit) const {
    std::map<std::pair<std::string, std::string>, int64_t> score;
    for (const auto& q : q_) {
        std::vector<PlainDistRecord> recs = q.records;
        std::sort(recs.begin(), recs.end(), [](const PlainDistRecord& a, const PlainDistRecord& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            return a.ref < b.ref;
        });
        size_t take = std::min<size_t>(k_nn_, recs.size());
        for (size_t i = 0; i < take; i++)
            score[{recs[i].ref.owner_id, recs[i].ref.image_id}]++;
    }
    std::vector<RankedImage> out;
    out.reserve(score.size());
    for (const auto& [key, s] : score) out.push_back(RankedImage{key.first, key.second, s});
    std::sort(out.begin(), out.end(), [](const RankedImage& a, const RankedImage& b) {
        if (a.value != b.value) return a.value > b.value;
        if (a.owner_id != b.owner_id) return a.owner_id < b.owner_id;
        return a.image_id < b.image_id;
    });
    if (limit > 0 && out.size() > limit) out.resize(limit);
    return out;
}

// ---- AdvancedPlanner ----

AdvancedPlanner::AdvancedPlanner(uint32_t k_nn, uint32_t cluster_target, int64_t theta,
                                 int64_t theta_prime)
    : k_nn_(std::max(1u, k_nn)),
      cluster_target_(std::max(1u, cluster_target)),
      theta0_(theta),
      theta_prime0_(theta_prime) {}

void AdvancedPlanner::set_leader_distances(std::vector<std::pair<int64_t, uint32_t>> dists) {
    leader_dists_ = std::move(dists);
    have_leaders_ = true;
    if (leader_dists_.empty()) {
        done_ = true;
        return;
    }
    int64_t lo_dist = INT64_MAX, hi_dist = INT64_MIN;
    for (const auto& [d, ord] : leader_dists_) {
        lo_dist = std::min(lo_dist, d);
        hi_dist = std::max(hi_dist, d);
    }
    // Auto-seed: twice the nearest leader distance (half its magnitude when
    // values are negated similarities).
    int64_t theta0 = theta0_;
    if (theta0 == kAutoThreshold)
        theta0 = lo_dist >= 0 ? (lo_dist > INT64_MAX / 2 ? INT64_MAX : lo_dist * 2) : lo_dist / 2;
    level1_ = make_threshold_state(theta0, hi_dist, cluster_target_, std::min<int64_t>(lo_dist, 0));
    select_clusters();
}

void AdvancedPlanner::select_clusters() {
    std::vector<PlainDistRecord> as_records;
    as_records.reserve(leader_dists_.size());
    for (const auto& [d, ord] : leader_dists_) {
        PlainDistRecord r;
        r.dist = d;
        r.ref.vector_ordinal = ord; // ordinal-only carrier for the selection
        as_records.push_back(std::move(r));
    }
    auto [passing, final_state] = threshold_select(as_records, level1_);
    level1_ = final_state;
    for (const auto& r : passing) selected_.insert(r.ref.vector_ordinal);
}

std::vector<uint32_t> AdvancedPlanner::next_fetch() {
    if (!have_leaders_) throw ProtocolError("planner: leader distances not set");
    while (!done_) {
        std::vector<uint32_t> pending;
        for (uint32_t ord : selected_)
            if (!fetched_.count(ord)) pending.push_back(ord);
        if (!pending.empty()) {
            std::sort(pending.begin(), pending.end());
            fetched_.insert(pending.begin(), pending.end());
            return pending;
        }
        // Level 2: enough images passing theta'?
        int64_t lo_dist = INT64_MAX, hi_dist = INT64_MIN;
        for (const auto& r : member_records_) {
            lo_dist = std::min(lo_dist, r.dist);
            hi_dist = std::max(hi_dist, r.dist);
        }
        if (!member_records_.empty()) {
            int64_t t0 = theta_prime0_;
            if (t0 == kAutoThreshold)
                t0 = lo_dist >= 0 ? (lo_dist > INT64_MAX / 2 ? INT64_MAX : lo_dist * 2)
                                  : lo_dist / 2;
            auto [passing, st] = threshold_select(
                member_records_,
                make_threshold_state(t0, hi_dist, k_nn_, std::min<int64_t>(lo_dist, 0)));
            final_selection_ = std::move(passing);
            if (final_selection_.size() >= k_nn_) {
                done_ = true;
                break;
            }
        }
        if (selected_.size() >= leader_dists_.size()) {
            done_ = true; // every cluster already selected and fetched
            break;
        }
        // Not enough images: widen theta so more clusters pass level 1.
        level1_ = make_threshold_state(level1_.theta, level1_.hi,
                                       std::min(selected_.size() + 1, leader_dists_.size()));
        level1_.lo = level1_.theta;
        select_clusters();
        if (selected_.size() <= fetched_.size() && level1_.theta >= level1_.hi) {
            done_ = true;
            break;
        }
    }
    return {};
}

void AdvancedPlanner::feed(const std::vector<PlainDistRecord>& records) {
    member_records_.insert(member_records_.end(), records.begin(), records.end());
}

std::vector<RankedImage> AdvancedPlanner::finalize(size_t limit) const {
    std::vector<PlainDistRecord> sel = final_selection_;
    std::sort(sel.begin(), sel.end(), [](const PlainDistRecord& a, const PlainDistRecord& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.ref < b.ref;
    });
    std::vector<RankedImage> out;
    out.reserve(sel.size());
    for (const auto& r : sel) out.push_back(RankedImage{r.ref.owner_id, r.ref.image_id, r.dist});
    if (limit > 0 && out.size() > limit) out.resize(limit);
    return out;
}

} // namespace pic

#pragma once

#include <cstdint>
#include <vector>

#include "pic/cluster_index.hpp"
#include "pic/enc_vector.hpp"

namespace pic {

enum class Kernel { distance, dot };

// Map-side output: encrypted similarity value per candidate.
struct DistRecord {
    VectorRef ref;
    Ciphertext ct;
};

// Reduce-side output: decrypted scaled value.
struct PlainDistRecord {
    VectorRef ref;
    int64_t dist = 0;

    friend bool operator==(const PlainDistRecord& a, const PlainDistRecord& b) {
        return a.ref == b.ref && a.dist == b.dist;
    }
};

// Partitions candidates across workers; each worker computes phi on its
// shard. Output sorted by ref, identical for any worker count.
std::vector<DistRecord> map_distances(const EncVector& query,
                                      const std::vector<std::pair<VectorRef, const EncVector*>>& candidates,
                                      unsigned workers, Kernel kernel);

// Decrypts in parallel shards and keeps records with dist <= theta; the merge
// is order-independent and the result is sorted by (dist, ref).
std::vector<PlainDistRecord> reduce_threshold(const std::vector<DistRecord>& records,
                                              const HEKey& key_ka, const HEParams& params,
                                              int64_t theta, unsigned workers);

// Slot-preserving parallel decryption of phi outputs (centered, scaled).
std::vector<int64_t> decrypt_batch(const std::vector<Ciphertext>& cts, const HEKey& key,
                                   const HEParams& params, unsigned workers);

// Binary-search state for growing/shrinking a distance threshold until the
// observed result count reaches target_k.
struct ThresholdState {
    int64_t theta = 0;
    int64_t lo = 0;
    int64_t hi = 0;
    size_t target_k = 1;
    bool done = false;
    unsigned iterations = 0;
};

ThresholdState make_threshold_state(int64_t theta0, int64_t hi, size_t target_k, int64_t lo = 0);

// One step: widen toward hi when short of target_k, stop when satisfied
// (tightening once more if the over-fetch exceeds 4x). Hard bound of 64
// iterations on integer bounds.
ThresholdState adjust_threshold(ThresholdState s, size_t observed_count);

// Full loop over already-decrypted records: repeatedly filter and adjust
// until terminal; returns the records passing the final theta, sorted by
// (dist, ref), plus the final state.
std::pair<std::vector<PlainDistRecord>, ThresholdState>
threshold_select(const std::vector<PlainDistRecord>& decrypted, ThresholdState init);

} // namespace pic

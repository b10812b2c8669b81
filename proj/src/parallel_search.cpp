#include "pic/parallel_search.hpp"

#include <algorithm>
#include <thread>

#include "pic/errors.hpp"

namespace pic {

namespace {

// Runs fn(i) for i in [0, count) across `workers` threads; exceptions from
// any shard are rethrown on the caller's thread.
void parallel_for(size_t count, unsigned workers, const std::function<void(size_t)>& fn) {
    if (workers <= 1 || count <= 1) {
        for (size_t i = 0; i < count; i++) fn(i);
        return;
    }
    unsigned t = std::min<size_t>(workers, count);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(t);
    for (unsigned w = 0; w < t; w++) {
        pool.emplace_back([&, w]() {
            try {
                for (size_t i = w; i < count; i += t) fn(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

} // namespace

std::vector<DistRecord> map_distances(const EncVector& query,
                                      const std::vector<std::pair<VectorRef, const EncVector*>>& candidates,
                                      unsigned workers, Kernel kernel) {
    std::vector<DistRecord> out(candidates.size());
    parallel_for(candidates.size(), workers, [&](size_t i) {
        const auto& [ref, vec] = candidates[i];
        out[i].ref = ref;
        out[i].ct = kernel == Kernel::distance ? phi_distance(query, *vec) : phi_dot(query, *vec);
    });
    std::sort(out.begin(), out.end(),
              [](const DistRecord& a, const DistRecord& b) { return a.ref < b.ref; });
    return out;
}

std::vector<PlainDistRecord> reduce_threshold(const std::vector<DistRecord>& records,
                                              const HEKey& key_ka, const HEParams& params,
                                              int64_t theta, unsigned workers) {
    std::vector<PlainDistRecord> plain(records.size());
    parallel_for(records.size(), workers, [&](size_t i) {
        plain[i].ref = records[i].ref;
        plain[i].dist = to_int64(decrypt_scaled(records[i].ct, key_ka, params));
    });
    std::vector<PlainDistRecord> out;
    out.reserve(plain.size());
    for (auto& p : plain)
        if (p.dist <= theta) out.push_back(std::move(p));
    std::sort(out.begin(), out.end(), [](const PlainDistRecord& a, const PlainDistRecord& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.ref < b.ref;
    });
    return out;
}

std::vector<int64_t> decrypt_batch(const std::vector<Ciphertext>& cts, const HEKey& key,
                                   const HEParams& params, unsigned workers) {
    std::vector<int64_t> out(cts.size());
    parallel_for(cts.size(), workers, [&](size_t i) {
        out[i] = to_int64(decrypt_scaled(cts[i], key, params));
    });
    return out;
}

ThresholdState make_threshold_state(int64_t theta0, int64_t hi, size_t target_k, int64_t lo) {
    ThresholdState s;
    s.lo = lo;
    s.hi = std::max<int64_t>(hi, lo);
    s.theta = std::clamp(theta0, s.lo, s.hi);
    s.target_k = std::max<size_t>(target_k, 1);
    return s;
}

ThresholdState adjust_threshold(ThresholdState s, size_t observed_count) {
    if (s.done) return s;
    s.iterations++;
    if (observed_count >= s.target_k) {
        if (observed_count > 4 * s.target_k && s.theta > s.lo && s.iterations < 64) {
            // Over-fetch: tighten toward lo.
            s.hi = s.theta;
            int64_t mid = s.lo + (s.theta - s.lo) / 2;
            if (mid == s.theta) {
                s.done = true;
                return s;
            }
            s.theta = mid;
            return s;
        }
        s.done = true;
        return s;
    }
    if (s.theta >= s.hi || s.iterations >= 64) {
        // Bounds exhausted; callers fall back to whatever passes hi.
        s.theta = s.hi;
        s.done = true;
        return s;
    }
    int64_t gap = s.hi - s.theta;
    s.lo = s.theta;
    s.theta += gap - gap / 2; // ceil(gap/2), strictly increasing
    return s;
}

std::pair<std::vector<PlainDistRecord>, ThresholdState>
threshold_select(const std::vector<PlainDistRecord>& decrypted, ThresholdState init) {
    ThresholdState s = init;
    auto filter = [&](int64_t theta) {
        std::vector<PlainDistRecord> out;
        for (const auto& r : decrypted)
            if (r.dist <= theta) out.push_back(r);
        return out;
    };
    std::vector<PlainDistRecord> current = filter(s.theta);
    while (!s.done) {
        int64_t before = s.theta;
        s = adjust_threshold(s, current.size());
        if (s.theta != before) current = filter(s.theta);
    }
    std::sort(current.begin(), current.end(), [](const PlainDistRecord& a, const PlainDistRecord& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.ref < b.ref;
    });
    return {std::move(current), s};
}

} // namespace pic

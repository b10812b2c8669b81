#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "pic/cluster_index.hpp"
#include "pic/errors.hpp"

using namespace pic;

namespace {

std::vector<IndexedVector> random_corpus(std::mt19937_64& mt, const std::string& owner, size_t n,
                                         size_t dim, int64_t lo = 0, int64_t hi = 1000) {
    std::uniform_int_distribution<int64_t> d(lo, hi);
    std::vector<IndexedVector> out;
    out.reserve(n);
    for (size_t i = 0; i < n; i++) {
        IndexedVector v;
        v.ref = VectorRef{owner, "img" + std::to_string(i / 4), uint32_t(i % 4)};
        v.raws.resize(dim);
        for (auto& r : v.raws) r = d(mt);
        out.push_back(std::move(v));
    }
    return out;
}

// Independent quadratic scan, reimplemented without SqDist helpers.
std::vector<VectorRef> knn_oracle(const std::vector<int64_t>& q,
                                  const std::vector<IndexedVector>& vs, size_t k) {
    std::vector<std::pair<long double, size_t>> all;
    for (size_t i = 0; i < vs.size(); i++) {
        long double s = 0;
        for (size_t j = 0; j < q.size(); j++) {
            long double d = (long double)q[j] - (long double)vs[i].raws[j];
            s += d * d;
        }
        all.emplace_back(s, i);
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<VectorRef> out;
    for (size_t i = 0; i < std::min(k, all.size()); i++) out.push_back(vs[all[i].second].ref);
    return out;
}

// Flat search through the index: rank leaders by distance, probe beta
// clusters, return the k nearest members found.
std::vector<VectorRef> index_search(const ClusterIndex& idx, const std::vector<IndexedVector>& vs,
                                    const std::vector<int64_t>& q, uint32_t beta, size_t k) {
    std::map<std::string, const std::vector<int64_t>*> by_loc;
    for (const auto& v : vs) by_loc[v.ref.locator()] = &v.raws;
    std::vector<std::pair<SqDist, uint32_t>> ranked;
    for (uint32_t i = 0; i < idx.clusters.size(); i++)
        ranked.emplace_back(sqdist_raw(q, *by_loc.at(idx.clusters[i].leader.locator())), i);
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return idx.clusters[a.second].leader < idx.clusters[b.second].leader;
    });
    std::vector<uint32_t> ranked_ords;
    for (const auto& [d, o] : ranked) ranked_ords.push_back(o);
    std::set<VectorRef> seen;
    std::vector<std::pair<SqDist, VectorRef>> hits;
    for (uint32_t ord : probe_set(ranked_ords, beta))
        for (const auto& ref : members(idx, ord))
            if (seen.insert(ref).second)
                hits.emplace_back(sqdist_raw(q, *by_loc.at(ref.locator())), ref);
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });
    std::vector<VectorRef> out;
    for (size_t i = 0; i < std::min(k, hits.size()); i++) out.push_back(hits[i].second);
    return out;
}

double recall_at_k(const ClusterIndex& idx, const std::vector<IndexedVector>& vs,
                   std::mt19937_64& mt, uint32_t beta, size_t k, size_t queries, size_t dim) {
    std::uniform_int_distribution<int64_t> d(0, 1000);
    size_t hit = 0, total = 0;
    for (size_t t = 0; t < queries; t++) {
        std::vector<int64_t> q(dim);
        for (auto& r : q) r = d(mt);
        auto exact = knn_oracle(q, vs, k);
        auto got = index_search(idx, vs, q, beta, k);
        std::set<VectorRef> got_set(got.begin(), got.end());
        for (const auto& ref : exact) {
            total++;
            if (got_set.count(ref)) hit++;
        }
    }
    return double(hit) / double(total);
}

} // namespace

TEST_CASE("build_index: structure and degenerate cases") {
    std::mt19937_64 mt(1);
    auto vs = random_corpus(mt, "a", 40, 4);

    SUBCASE("N = C: every vector leads its own singleton cluster") {
        ClusterIndex idx = build_index(vs, 40, 1, 1, 7);
        CHECK(idx.leader_count() == 40);
        for (const auto& cl : idx.clusters) {
            CHECK(cl.members.size() == 1);
            CHECK(cl.members[0] == cl.leader);
        }
    }

    SUBCASE("default C is ceil(sqrt(N))") {
        CHECK(default_cluster_count(100) == 10);
        CHECK(default_cluster_count(1000) == 32);
        CHECK(default_cluster_count(50) == 8);
        CHECK(default_cluster_count(0) == 0);
    }

    SUBCASE("determinism and parameter validation") {
        ClusterIndex a = build_index(vs, 6, 1, 1, 99);
        ClusterIndex b = build_index(vs, 6, 1, 1, 99);
        CHECK(serialize_index(a) == serialize_index(b));
        ClusterIndex c = build_index(vs, 6, 1, 1, 100);
        CHECK(serialize_index(a) != serialize_index(c)); // different seed, different leaders
        CHECK_THROWS_AS(build_index(vs, 41, 1, 1, 1), ConfigError);
        CHECK_THROWS_AS(build_index(vs, 0, 1, 1, 1), ConfigError);
    }
}

TEST_CASE("soft assignment: alpha nearest leaders, brute-force checked") {
    std::mt19937_64 mt(2);
    auto vs = random_corpus(mt, "a", 100, 3);
    ClusterIndex idx = build_index(vs, 10, 1, 2, 5);

    std::map<std::string, const std::vector<int64_t>*> by_loc;
    for (const auto& v : vs) by_loc[v.ref.locator()] = &v.raws;
    std::set<std::string> leader_locs;
    for (const auto& cl : idx.clusters) leader_locs.insert(cl.leader.locator());

    for (const auto& v : vs) {
        if (leader_locs.count(v.ref.locator())) continue;
        // the two clusters holding v must be exactly its 2 nearest leaders
        std::vector<std::pair<SqDist, uint32_t>> ranked;
        for (uint32_t i = 0; i < idx.clusters.size(); i++)
            ranked.emplace_back(sqdist_raw(v.raws, *by_loc.at(idx.clusters[i].leader.locator())), i);
        std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return idx.clusters[a.second].leader < idx.clusters[b.second].leader;
        });
        std::set<uint32_t> expect = {ranked[0].second, ranked[1].second};
        std::set<uint32_t> got;
        for (uint32_t i = 0; i < idx.clusters.size(); i++)
            for (const auto& mref : idx.clusters[i].members)
                if (mref == v.ref) got.insert(i);
        CHECK(got == expect);
    }
}

TEST_CASE("coverage: every vector reachable from some bottom cluster") {
    std::mt19937_64 mt(3);
    for (uint32_t levels : {1u, 2u, 3u}) {
        auto vs = random_corpus(mt, "a", 120, 4);
        ClusterIndex idx = build_index(vs, 16, levels, 1, 11);
        CHECK(idx.levels.size() == levels);
        CHECK(idx.levels.back().size() == 16);
        std::set<std::string> covered;
        for (const auto& cl : idx.clusters)
            for (const auto& mref : cl.members) covered.insert(mref.locator());
        CHECK(covered.size() == 120);
        if (levels > 1) CHECK(idx.levels[0].size() <= idx.levels[1].size());
    }
}

TEST_CASE("merge: disjoint union with owner labels") {
    std::mt19937_64 mt(4);
    auto va = random_corpus(mt, "alice", 30, 4);
    auto vb = random_corpus(mt, "bob", 20, 4);
    ClusterIndex ia = build_index(va, 6, 1, 1, 1);
    ClusterIndex ib = build_index(vb, 5, 1, 1, 2);

    ClusterIndex global;
    global = merge(global, ia, "alice");
    CHECK(serialize_index(global) == serialize_index(ia)); // empty + X = X
    global = merge(global, ib, "bob");
    CHECK(global.leader_count() == 11);
    CHECK(index_owners(global) == std::set<std::string>{"alice", "bob"});

    CHECK_THROWS_AS(merge(global, ia, "alice"), ProtocolError); // owner collision
    CHECK_THROWS_AS(merge(global, ia, "bob"), ProtocolError);   // mislabeled owner

    SUBCASE("owner-restricted search equals the standalone index") {
        std::uniform_int_distribution<int64_t> d(0, 1000);
        for (int t = 0; t < 10; t++) {
            std::vector<int64_t> q(4);
            for (auto& r : q) r = d(mt);
            // restrict the merged index to alice's clusters
            ClusterIndex restricted = global;
            remove_owner(restricted, "bob");
            auto lhs = index_search(restricted, va, q, 6, 5);
            auto rhs = index_search(ia, va, q, 6, 5);
            CHECK(lhs == rhs);
        }
    }

    SUBCASE("leaders filter") {
        CHECK(leaders(global, {}).empty());
        CHECK(leaders(global, {"alice", "bob"}).size() == 11);
        CHECK(leaders(global, {"alice"}).size() == 6);
        for (const auto& [ord, ref] : leaders(global, {"bob"})) CHECK(ref.owner_id == "bob");
    }
}

TEST_CASE("probe_set and exhaustiveness at beta = C") {
    std::mt19937_64 mt(5);
    std::vector<uint32_t> ranked = {3, 1, 4, 0, 2};
    CHECK(probe_set(ranked, 1) == std::vector<uint32_t>{3});
    CHECK(probe_set(ranked, 3) == std::vector<uint32_t>{3, 1, 4});
    CHECK(probe_set(ranked, 99).size() == 5);

    for (uint32_t alpha : {1u, 2u}) {
        auto vs = random_corpus(mt, "a", 200, 6);
        uint32_t c = default_cluster_count(vs.size());
        ClusterIndex idx = build_index(vs, c, 1, alpha, 9);
        std::uniform_int_distribution<int64_t> d(0, 1000);
        for (int t = 0; t < 20; t++) {
            std::vector<int64_t> q(6);
            for (auto& r : q) r = d(mt);
            auto exact = knn_oracle(q, vs, 5);
            auto got = index_search(idx, vs, q, c, 5);
            CHECK(std::set<VectorRef>(exact.begin(), exact.end()) ==
                  std::set<VectorRef>(got.begin(), got.end()));
        }
    }
}

TEST_CASE("recall is monotone in beta and alpha") {
    std::mt19937_64 mt(6);
    auto vs = random_corpus(mt, "a", 300, 5);

    std::mt19937_64 qmt(60);
    ClusterIndex i1 = build_index(vs, 17, 1, 1, 13);
    double r1 = recall_at_k(i1, vs, qmt, 1, 5, 30, 5);
    std::mt19937_64 qmt2(60);
    double r2 = recall_at_k(i1, vs, qmt2, 2, 5, 30, 5);
    std::mt19937_64 qmt3(60);
    double r4 = recall_at_k(i1, vs, qmt3, 4, 5, 30, 5);
    CHECK(r2 >= r1);
    CHECK(r4 >= r2);

    ClusterIndex a2 = build_index(vs, 17, 1, 2, 13);
    std::mt19937_64 qmt4(60);
    double ra2 = recall_at_k(a2, vs, qmt4, 1, 5, 30, 5);
    CHECK(ra2 >= r1); // same leaders (same seed), fatter clusters
}

TEST_CASE("brute_force_knn: exactness and tie behavior") {
    std::vector<IndexedVector> vs;
    for (int i = 0; i < 6; i++)
        vs.push_back(IndexedVector{VectorRef{"a", "img" + std::to_string(i), 0},
                                   {int64_t(i % 3), 0}});
    auto top1 = brute_force_knn({1, 0}, vs, 1);
    REQUIRE(top1.size() == 1);
    CHECK(top1[0].ref.image_id == "img1"); // exact hit, insertion order on ties
    CHECK(top1[0].dist == 0);

    auto full = brute_force_knn({0, 0}, vs, 6);
    CHECK(full.size() == 6);
    // ties keep insertion order: img0 (d=0) before img3 (d=0)
    CHECK(full[0].ref.image_id == "img0");
    CHECK(full[1].ref.image_id == "img3");

    std::mt19937_64 mt(7);
    auto corpus = random_corpus(mt, "a", 150, 8);
    std::uniform_int_distribution<int64_t> d(0, 1000);
    for (int t = 0; t < 20; t++) {
        std::vector<int64_t> q(8);
        for (auto& r : q) r = d(mt);
        auto got = brute_force_knn(q, corpus, 7);
        auto expect = knn_oracle(q, corpus, 7);
        REQUIRE(got.size() == expect.size());
        for (size_t i = 0; i < got.size(); i++) CHECK(got[i].ref == expect[i]);
    }
}

TEST_CASE("extend_index attaches new vectors to existing leaders") {
    std::mt19937_64 mt(8);
    auto vs = random_corpus(mt, "a", 50, 4);
    ClusterIndex idx = build_index(vs, 7, 1, 1, 3);
    std::map<std::string, std::vector<int64_t>> by_loc;
    for (const auto& v : vs) by_loc[v.ref.locator()] = v.raws;

    std::vector<IndexedVector> extra;
    for (int i = 0; i < 10; i++) {
        IndexedVector v;
        v.ref = VectorRef{"a", "new" + std::to_string(i), 0};
        v.raws = {int64_t(i), int64_t(i), 0, 0};
        extra.push_back(v);
    }
    extend_index(idx, "a", extra, [&](const VectorRef& r) { return by_loc.at(r.locator()); });
    CHECK(idx.leader_count() == 7);
    size_t total = 0;
    for (const auto& cl : idx.clusters) total += cl.members.size();
    CHECK(total == 60);
    CHECK_THROWS_AS(extend_index(idx, "nobody", extra, [&](const VectorRef& r) {
                        return by_loc.at(r.locator());
                    }),
                    ConfigError);
}

TEST_CASE("index file: binary round trip and JSON dump") {
    std::mt19937_64 mt(9);
    auto vs = random_corpus(mt, "alice", 60, 4);
    ClusterIndex idx = build_index(vs, 8, 2, 2, 77);

    Bytes b = serialize_index(idx);
    ClusterIndex back = parse_index(b);
    CHECK(serialize_index(back) == b);
    CHECK(back.dim == idx.dim);
    CHECK(back.leader_count() == idx.leader_count());
    CHECK(back.levels == idx.levels);

    Bytes bad = b;
    bad[1] = 'X';
    CHECK_THROWS_AS(parse_index(bad), ParseError);

    std::string j = index_to_json(idx);
    CHECK(j.find("\"alice/") != std::string::npos);
    CHECK(j.find("\"alpha\": 2") != std::string::npos);
}

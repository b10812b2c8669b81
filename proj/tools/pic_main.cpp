// Operator CLI: initialize a system, register users, upload descriptors,
// search (encrypted pipeline), run the plaintext oracle, benchmark, and host
// KA/CS behind the PIC1 wire protocol.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>

#include <CLI11.hpp>

#include "pic/access_policy.hpp"
#include "pic/errors.hpp"
#include "pic/remote.hpp"
#include "pic/store.hpp"

using namespace pic;

namespace {

struct CommonSearchArgs {
    std::string state_dir;
    std::string user;
    std::string query_path;
    std::string format = "fvecs";
    std::string manifest;
    std::vector<std::string> attrs;
    unsigned k_nn = 0;
    double theta = -1;
    double theta_prime = -1;
    size_t top = 0;
    unsigned workers = 0;
    std::string remote_ka;
    std::string remote_cs;
};

std::vector<std::vector<float>> load_query_vectors(const CommonSearchArgs& a) {
    auto descs = load_vectors(a.query_path,
                              a.format == "tsv" ? VectorFormat::tsv : VectorFormat::fvecs,
                              a.manifest);
    std::vector<std::vector<float>> out;
    for (const auto& d : descs)
        out.insert(out.end(), d.vectors.begin(), d.vectors.end());
    if (out.empty()) throw ProtocolError("query file holds no vectors");
    return out;
}

std::pair<std::string, uint16_t> split_hostport(const std::string& s) {
    size_t c = s.rfind(':');
    if (c == std::string::npos) throw ConfigError("expected HOST:PORT, got " + s);
    return {s.substr(0, c), static_cast<uint16_t>(std::stoul(s.substr(c + 1)))};
}

void print_outcome(const SearchOutcome& out) {
    std::cout << "access: " << out.permitted_owners << " owners\n";
    size_t rank = 1;
    for (const auto& r : out.ranked)
        std::cout << rank++ << '\t' << r.owner_id << '/' << r.image_id << '\t' << r.value << '\n';
}

int64_t scale_threshold(double theta, const FxpConfig& fxp) {
    if (theta < 0) return kAutoThreshold;
    return llround(std::ldexp(theta, int(2 * fxp.frac_bits())));
}

SearchRequest build_request(System& sys, const CommonSearchArgs& a) {
    SearchRequest req;
    req.querier = a.user;
    req.query_vectors = load_query_vectors(a);
    req.attributes = a.attrs;
    req.k_nn = a.k_nn;
    req.theta = scale_threshold(a.theta, sys.config().fxp);
    req.theta_prime = scale_threshold(a.theta_prime, sys.config().fxp);
    return req;
}

int run_search(const CommonSearchArgs& a, bool oracle) {
    auto sys = SystemStore::load(a.state_dir);
    if (a.workers > 0) sys->set_workers(a.workers);
    if (!a.remote_ka.empty()) {
        auto [h, p] = split_hostport(a.remote_ka);
        sys->set_ka_channel(std::make_unique<TcpChannel>(h, p, &sys->audit()));
    }
    if (!a.remote_cs.empty()) {
        auto [h, p] = split_hostport(a.remote_cs);
        sys->set_cs_client_channel(std::make_unique<TcpChannel>(h, p, &sys->audit()));
    }
    SearchRequest req = build_request(*sys, a);
    const bool advanced = sys->config().scheme == SystemConfig::Scheme::advanced;
    SearchOutcome out;
    if (oracle)
        out = advanced ? sys->oracle_search_advanced(req) : sys->oracle_search_basic(req);
    else
        out = advanced ? sys->search_advanced(req) : sys->search_basic(req);
    if (a.top > 0 && out.ranked.size() > a.top) out.ranked.resize(a.top);
    print_outcome(out);
    if (!oracle) SystemStore::append_audit(*sys, a.state_dir);
    return 0;
}

double run_timed(const std::function<void()>& fn, unsigned trials) {
    auto t0 = std::chrono::steady_clock::now();
    for (unsigned i = 0; i < trials; i++) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / trials;
}

int run_bench(unsigned lambda, unsigned m_lvl, unsigned dim, unsigned trials, FxpConfig fxp) {
    Rng rng(7);
    std::cout << "op\tmean_ms\n";
    HEParams params;
    std::cout << "gen_params\t" << run_timed([&] { params = gen_params(lambda, m_lvl, rng); }, 1)
              << '\n';
    HEKey k = gen_key(params, rng);
    std::cout << "gen_key\t" << run_timed([&] { (void)gen_key(params, rng); }, trials) << '\n';
    std::cout << "split_key_2\t" << run_timed([&] { (void)split_key(k, 2, params, rng); }, trials)
              << '\n';
    std::cout << "split_key_3\t" << run_timed([&] { (void)split_key(k, 3, params, rng); }, trials)
              << '\n';

    std::vector<double> coords(dim);
    for (auto& c : coords) c = rng.real01() * 100.0;
    PlainVector pv = PlainVector::encode_reals(coords, fxp);
    EncVector ev;
    std::cout << "encrypt_vector\t"
              << run_timed([&] { ev = encrypt_vector(pv, k, params, rng); }, trials) << '\n';
    HEKey f = gen_key(params, rng);
    std::cout << "key_modification\t"
              << run_timed([&] { (void)convert_vector(ev, f, ConvertMode::append); }, trials)
              << '\n';
    EncVector ev2 = encrypt_vector(pv, k, params, rng);
    Ciphertext dist;
    std::cout << "phi_distance\t" << run_timed([&] { dist = phi_distance(ev, ev2); }, trials)
              << '\n';
    std::cout << "phi_dot\t" << run_timed([&] { (void)phi_dot(ev, ev2); }, trials) << '\n';
    std::cout << "decrypt_distance\t"
              << run_timed([&] { (void)decrypt_scaled(dist, k, params); }, trials) << '\n';

    AccessTree tree = AccessTree::parse(
        "(and \"a1\" (or \"a2\" \"a3\") (thresh 2 \"a4\" \"a5\" \"a6\"))");
    AttributeSet attrs = hash_attributes({"a1", "a2", "a4", "a5"});
    std::cout << "policy_eval_6leaf\t" << run_timed([&] { (void)tree.evaluate(attrs); }, trials)
              << '\n';

    std::cout << "size\tbytes\n";
    std::cout << "key_file\t" << serialize_key(k, params).size() << '\n';
    std::cout << "ciphertext_file\t" << serialize_ciphertext(dist, params).size() << '\n';
    std::cout << "ciphertext_payload\t" << params.ciphertext_payload_bytes() << '\n';
    std::cout << "enc_vector_payload\t" << enc_vector_payload_bytes(dim, params) << '\n';
    std::cout << "enc_vector_file\t" << serialize_enc_vector(ev, params).size() << '\n';
    std::cout << "access_tree\t" << tree.to_bytes().size() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pic: privacy-preserving encrypted image search"};
    app.require_subcommand(1);

    // ---- init ----
    auto* init = app.add_subcommand("init", "create a system state directory");
    std::string state_dir, config_path;
    uint64_t seed = 1;
    unsigned lambda = 128, m_lvl = 2;
    std::string scheme = "basic";
    bool have_seed = false;
    init->add_option("--state", state_dir, "state directory")->required();
    init->add_option("--config", config_path, "key=value config file");
    auto* opt_lambda = init->add_option("--lambda", lambda, "security parameter (bits)");
    auto* opt_mlvl = init->add_option("--m-lvl", m_lvl, "matrix size parameter (d = 2*m)");
    auto* opt_scheme = init->add_option("--scheme", scheme, "basic|advanced");
    auto* opt_seed = init->add_option("--seed", seed, "master seed");
    init->callback([&] {
        SystemConfig cfg;
        if (!config_path.empty()) cfg = load_config_file(config_path);
        if (opt_lambda->count()) cfg.lambda = lambda;
        if (opt_mlvl->count()) cfg.m_lvl = m_lvl;
        if (opt_scheme->count())
            cfg.scheme = scheme == "advanced" ? SystemConfig::Scheme::advanced
                                              : SystemConfig::Scheme::basic;
        if (opt_seed->count()) cfg.seed = seed;
        (void)have_seed;
        if (SystemStore::exists(state_dir)) throw ProtocolError("state already initialized");
        System sys(cfg);
        sys.init();
        SystemStore::save(sys, state_dir);
        std::cout << "initialized: lambda=" << cfg.lambda << " d=" << 2 * cfg.m_lvl
                  << " scheme=" << (cfg.scheme == SystemConfig::Scheme::basic ? "basic" : "advanced")
                  << '\n';
    });

    // ---- register ----
    auto* reg = app.add_subcommand("register", "register a user and their access policy");
    std::string reg_state, reg_user, reg_policy;
    reg->add_option("--state", reg_state)->required();
    reg->add_option("--user", reg_user)->required();
    reg->add_option("--policy", reg_policy, "s-expression, e.g. (and \"student\" \"cs\")")
        ->required();
    reg->callback([&] {
        auto sys = SystemStore::load(reg_state);
        sys->register_user(reg_user, reg_policy);
        SystemStore::save(*sys, reg_state);
        std::cout << "registered: " << reg_user << '\n';
    });

    // ---- build-vocab ----
    auto* bv = app.add_subcommand("build-vocab", "k-means visual vocabulary from an fvecs file");
    std::string bv_in, bv_out;
    uint32_t bv_v = 1000, bv_iters = 50;
    uint64_t bv_seed = 1;
    bv->add_option("--vectors", bv_in)->required();
    bv->add_option("--out", bv_out)->required();
    bv->add_option("--v", bv_v, "vocabulary size");
    bv->add_option("--iters", bv_iters);
    bv->add_option("--seed", bv_seed);
    bv->callback([&] {
        auto vecs = load_fvecs(bv_in);
        Vocabulary vocab = build_vocabulary(vecs, bv_v, bv_iters, bv_seed);
        write_fvecs(bv_out, vocab.words);
        std::cout << "vocabulary: v=" << vocab.v << " dim=" << vocab.dim
                  << " inertia=" << kmeans_inertia(vecs, vocab) << '\n';
    });

    // ---- upload ----
    auto* up = app.add_subcommand("upload", "encrypt and upload descriptors for a user");
    std::string up_state, up_user, up_vectors, up_manifest, up_format = "fvecs";
    up->add_option("--state", up_state)->required();
    up->add_option("--user", up_user)->required();
    up->add_option("--vectors", up_vectors)->required();
    up->add_option("--manifest", up_manifest, "image_id<TAB>start<TAB>count lines");
    up->add_option("--format", up_format, "fvecs|tsv");
    up->callback([&] {
        auto sys = SystemStore::load(up_state);
        auto descs = load_vectors(up_vectors,
                                  up_format == "tsv" ? VectorFormat::tsv : VectorFormat::fvecs,
                                  up_manifest);
        if (sys->config().scheme == SystemConfig::Scheme::advanced)
            sys->upload_advanced(up_user, descs);
        else
            sys->upload_basic(up_user, descs);
        SystemStore::save(*sys, up_state);
        std::cout << "uploaded: " << descs.size() << " images\n";
    });

    // ---- search / oracle ----
    CommonSearchArgs sa;
    auto add_search_opts = [&](CLI::App* cmd) {
        cmd->add_option("--state", sa.state_dir)->required();
        cmd->add_option("--user", sa.user)->required();
        cmd->add_option("--query", sa.query_path, "fvecs/tsv file with the query descriptor")
            ->required();
        cmd->add_option("--format", sa.format, "fvecs|tsv");
        cmd->add_option("--manifest", sa.manifest);
        cmd->add_option("--attr", sa.attrs, "querier attribute (repeatable)");
        cmd->add_option("--theta", sa.theta, "advanced level-1 threshold (real units)");
        cmd->add_option("--theta-prime", sa.theta_prime, "advanced level-2 threshold");
        cmd->add_option("--top", sa.top, "truncate ranked output");
        cmd->add_option("--workers", sa.workers, "parallel map/reduce workers");
        cmd->add_option("--k-nn", sa.k_nn, "votes per query vector (basic) / result floor (advanced)");
        cmd->add_option("--ka", sa.remote_ka, "remote KA HOST:PORT");
        cmd->add_option("--cs", sa.remote_cs, "remote CS HOST:PORT");
    };
    auto* search = app.add_subcommand("search", "run the encrypted search pipeline");
    add_search_opts(search);
    search->callback([&] { run_search(sa, false); });
    auto* oracle = app.add_subcommand("oracle", "run the plaintext pipeline, same output format");
    add_search_opts(oracle);
    oracle->callback([&] { run_search(sa, true); });

    // ---- bench ----
    auto* bench = app.add_subcommand("bench", "per-operation timings and structure sizes");
    unsigned bn_lambda = 128, bn_mlvl = 2, bn_dim = 128, bn_trials = 5;
    bench->add_option("--lambda", bn_lambda);
    bench->add_option("--m-lvl", bn_mlvl);
    bench->add_option("--dim", bn_dim);
    bench->add_option("--trials", bn_trials);
    bench->callback([&] { run_bench(bn_lambda, bn_mlvl, bn_dim, bn_trials, FxpConfig{}); });

    // ---- serve ----
    auto* serve = app.add_subcommand("serve", "host KA or CS behind the PIC1 wire protocol");
    std::string sv_state, sv_role, sv_cs;
    uint16_t sv_port = 0;
    serve->add_option("--state", sv_state)->required();
    serve->add_option("--role", sv_role, "ka|cs")->required();
    serve->add_option("--port", sv_port)->required();
    serve->add_option("--cs", sv_cs, "CS HOST:PORT (required for role ka)");
    serve->callback([&] {
        auto sys = SystemStore::load(sv_state);
        if (sv_role == "ka") {
            if (sv_cs.empty()) throw ConfigError("--cs HOST:PORT required for role ka");
            auto [h, p] = split_hostport(sv_cs);
            static TcpChannel cs_channel(h, p, &sys->audit());
            sys->ka().set_cs_channel(&cs_channel);
            EntityServer server(sys->ka(), sv_port);
            std::cout << "ka listening on " << server.port() << std::endl;
            server.run();
        } else if (sv_role == "cs") {
            EntityServer server(sys->cs(), sv_port);
            std::cout << "cs listening on " << server.port() << std::endl;
            server.run();
        } else {
            throw ConfigError("role must be ka or cs");
        }
    });

    // ---- rebuild-index ----
    auto* rebuild = app.add_subcommand("rebuild-index", "re-cluster an owner's vectors from scratch");
    std::string rb_state, rb_user;
    rebuild->add_option("--state", rb_state)->required();
    rebuild->add_option("--user", rb_user)->required();
    rebuild->callback([&] {
        auto sys = SystemStore::load(rb_state);
        sys->rebuild_index(rb_user);
        SystemStore::save(*sys, rb_state);
        std::cout << "rebuilt: " << sys->cs().index().leader_count() << " leaders total\n";
    });

    // ---- dump-index ----
    auto* dump = app.add_subcommand("dump-index", "print the merged index as JSON");
    std::string di_state;
    dump->add_option("--state", di_state)->required();
    dump->callback([&] {
        auto sys = SystemStore::load(di_state);
        std::cout << index_to_json(sys->cs().index()) << '\n';
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error\t" << e.what() << '\n';
        return 1;
    }
    return 0;
}

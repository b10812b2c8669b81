#include "pic/store.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pic/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pic {

namespace {

void write_file(const fs::path& p, const Bytes& b) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + p.string());
    f.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

void write_file(const fs::path& p, const std::string& s) {
    write_file(p, Bytes(s.begin(), s.end()));
}

Bytes read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error("cannot read " + p.string());
    return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string read_text(const fs::path& p) {
    Bytes b = read_file(p);
    return std::string(b.begin(), b.end());
}

Bytes encode_blob_map(const std::map<std::string, Bytes>& m) {
    ByteWriter w;
    w.u32be(static_cast<uint32_t>(m.size()));
    for (const auto& [k, v] : m) {
        w.str(k);
        w.blob(v);
    }
    return w.take();
}

std::map<std::string, Bytes> decode_blob_map(const Bytes& b) {
    ByteReader r(b);
    std::map<std::string, Bytes> m;
    uint32_t n = r.u32be();
    for (uint32_t i = 0; i < n; i++) {
        std::string k = r.str();
        m.emplace(std::move(k), r.blob());
    }
    return m;
}

std::string scheme_name(SystemConfig::Scheme s) {
    return s == SystemConfig::Scheme::basic ? "basic" : "advanced";
}

json audit_record_to_json(const AuditRecord& r) {
    json j;
    switch (r.type) {
        case AuditRecord::Type::Message: j["type"] = "message"; break;
        case AuditRecord::Type::Compute: j["type"] = "compute"; break;
        case AuditRecord::Type::SpanBegin: j["type"] = "span_begin"; break;
        case AuditRecord::Type::SpanEnd: j["type"] = "span_end"; break;
    }
    j["seq"] = r.seq;
    if (r.type == AuditRecord::Type::Message) {
        j["from"] = r.sender;
        j["to"] = r.receiver;
        j["kind"] = r.msg_kind;
        j["content"] = content_class_name(r.content);
        j["key"] = r.key_tag.str();
        j["bytes"] = r.bytes;
    } else if (r.type == AuditRecord::Type::Compute) {
        j["entity"] = r.entity;
        j["op"] = r.op;
        j["count"] = r.count;
    } else {
        j["span"] = r.span;
        j["principal"] = r.principal;
    }
    return j;
}

} // namespace

bool SystemStore::exists(const std::string& dir) {
    return fs::exists(fs::path(dir) / "system.json");
}

void SystemStore::save(System& sys, const std::string& dir) {
    fs::path root(dir);
    fs::create_directories(root);

    const SystemConfig& cfg = sys.cfg_;
    json j;
    j["initialized"] = sys.initialized_;
    j["n"] = sys.params_.n.get_str();
    j["config"] = {
        {"lambda", cfg.lambda},
        {"m_lvl", cfg.m_lvl},
        {"word_bits", cfg.fxp.word_bits},
        {"int_bits", cfg.fxp.int_bits},
        {"scheme", scheme_name(cfg.scheme)},
        {"c_policy", cfg.c_policy == SystemConfig::CPolicy::sqrt_n ? "sqrt_n" : "explicit"},
        {"c", cfg.c_explicit},
        {"levels", cfg.levels},
        {"alpha", cfg.alpha},
        {"beta", cfg.beta},
        {"k_nn", cfg.k_nn},
        {"v", cfg.vocab_size},
        {"vocab_iters", cfg.vocab_iters},
        {"kernel", cfg.kernel == Kernel::distance ? "distance" : "dot"},
        {"workers", cfg.workers},
        {"seed", cfg.seed},
        {"result_limit", cfg.result_limit},
    };
    json users = json::array();
    for (const auto& [id, c] : sys.clients_)
        users.push_back({{"id", id}, {"policy", c->policy_expr}});
    j["users"] = users;
    write_file(root / "system.json", j.dump(2));

    if (sys.initialized_) {
        write_file(root / "keys" / "master.pick", serialize_key(*sys.master_, sys.params_));
        write_file(root / "keys" / "ka.pick",
                   serialize_key(*sys.ka_->master_share(), sys.params_));
        write_file(root / "keys" / "cs.pick",
                   serialize_key(*sys.cs_->master_share(), sys.params_));
        for (const auto& [id, key] : sys.ka_->user_mid_shares())
            write_file(root / "keys" / ("mid_" + id + ".pick"), serialize_key(key, sys.params_));
        for (const auto& [id, key] : sys.cs_->user_last_shares())
            write_file(root / "keys" / ("last_" + id + ".pick"), serialize_key(key, sys.params_));
        for (const auto& [id, c] : sys.clients_)
            write_file(root / "keys" / ("user_" + id + ".pick"),
                       serialize_key(*c->user_key(), sys.params_));
    }

    std::map<std::string, Bytes> db;
    for (const auto& [loc, vec] : sys.cs_->db())
        db.emplace(loc, serialize_enc_vector(vec, sys.params_));
    write_file(root / "db.bin", encode_blob_map(db));
    write_file(root / "index.picx", serialize_index(sys.cs_->index()));
    write_file(root / "index.json", index_to_json(sys.cs_->index()));

    std::map<std::string, Bytes> envs;
    for (const auto& [owner, env] : sys.cs_->envelopes()) envs.emplace(owner, env.to_bytes());
    write_file(root / "envelopes.bin", encode_blob_map(envs));
    write_file(root / "blobs.bin", encode_blob_map(sys.cs_->blobs()));

    for (const auto& [id, c] : sys.clients_) {
        fs::path cdir = root / "clients" / id;
        fs::create_directories(cdir);
        std::vector<std::vector<float>> records;
        std::ostringstream manifest;
        size_t start = 0;
        for (const auto& img : c->images) {
            records.insert(records.end(), img.vectors.begin(), img.vectors.end());
            manifest << img.image_id << '\t' << start << '\t' << img.vectors.size() << '\n';
            start += img.vectors.size();
        }
        write_file(cdir / "images.fvecs", encode_fvecs(records));
        write_file(cdir / "images.manifest", manifest.str());
        if (!c->own_index.empty())
            write_file(cdir / "own_index.picx", serialize_index(c->own_index));
    }

    append_audit(sys, dir);
}

// Appends this run's audit trace (human-readable, diagnostic only).
void SystemStore::append_audit(System& sys, const std::string& dir) {
    std::ofstream alog(fs::path(dir) / "audit.jsonl", std::ios::app);
    for (const auto& r : sys.audit_.snapshot()) alog << audit_record_to_json(r).dump() << '\n';
}

std::unique_ptr<System> SystemStore::load(const std::string& dir) {
    fs::path root(dir);
    json j = json::parse(read_text(root / "system.json"));
    json jc = j["config"];

    SystemConfig cfg;
    cfg.lambda = jc["lambda"];
    cfg.m_lvl = jc["m_lvl"];
    cfg.fxp.word_bits = jc["word_bits"];
    cfg.fxp.int_bits = jc["int_bits"];
    cfg.scheme = jc["scheme"] == "advanced" ? SystemConfig::Scheme::advanced
                                            : SystemConfig::Scheme::basic;
    cfg.c_policy = jc["c_policy"] == "explicit" ? SystemConfig::CPolicy::explicit_c
                                                : SystemConfig::CPolicy::sqrt_n;
    cfg.c_explicit = jc["c"];
    cfg.levels = jc["levels"];
    cfg.alpha = jc["alpha"];
    cfg.beta = jc["beta"];
    cfg.k_nn = jc["k_nn"];
    cfg.vocab_size = jc["v"];
    cfg.vocab_iters = jc["vocab_iters"];
    cfg.kernel = jc["kernel"] == "dot" ? Kernel::dot : Kernel::distance;
    cfg.workers = jc["workers"];
    cfg.seed = jc["seed"];
    cfg.result_limit = jc["result_limit"];

    auto sys = std::make_unique<System>(cfg);
    if (!j["initialized"].get<bool>()) return sys;

    sys->params_.lambda = cfg.lambda;
    sys->params_.m_lvl = cfg.m_lvl;
    sys->params_.n = mpz_class(j["n"].get<std::string>());
    sys->initialized_ = true;
    const HEParams& params = sys->params_;

    sys->master_ = parse_key(read_file(root / "keys" / "master.pick"), params);

    std::map<std::string, HEKey> mids, lasts;
    std::map<std::string, std::string> policy_exprs;
    for (const auto& u : j["users"]) {
        std::string id = u["id"];
        mids.emplace(id, parse_key(read_file(root / "keys" / ("mid_" + id + ".pick")), params));
        lasts.emplace(id, parse_key(read_file(root / "keys" / ("last_" + id + ".pick")), params));
        policy_exprs[id] = u["policy"];
    }
    sys->ka_->restore(params, parse_key(read_file(root / "keys" / "ka.pick"), params),
                      std::move(mids));

    std::map<std::string, EncVector> db;
    for (const auto& [loc, blob] : decode_blob_map(read_file(root / "db.bin")))
        db.emplace(loc, parse_enc_vector(blob, params, "k"));
    std::map<std::string, Envelope> envs;
    for (const auto& [owner, blob] : decode_blob_map(read_file(root / "envelopes.bin")))
        envs.emplace(owner, Envelope::from_bytes(blob));
    sys->cs_->restore(params, parse_key(read_file(root / "keys" / "cs.pick"), params),
                      std::move(lasts), std::move(db), parse_index(read_file(root / "index.picx")),
                      policy_exprs, std::move(envs),
                      decode_blob_map(read_file(root / "blobs.bin")));

    for (const auto& u : j["users"]) {
        std::string id = u["id"];
        auto client = std::make_unique<ClientEntity>(id, cfg, sys->audit_);
        client->restore_key(params, parse_key(read_file(root / "keys" / ("user_" + id + ".pick")),
                                              params));
        client->policy_expr = u["policy"];

        fs::path cdir = root / "clients" / id;
        auto records = decode_fvecs(read_file(cdir / "images.fvecs"));
        auto manifest = parse_manifest(read_text(cdir / "images.manifest"));
        for (const auto& d : group_by_manifest(records, manifest))
            client->images.push_back(OwnedImage{d.image_id, d.vectors});
        if (fs::exists(cdir / "own_index.picx"))
            client->own_index = parse_index(read_file(cdir / "own_index.picx"));

        if (!client->images.empty()) {
            if (cfg.scheme == SystemConfig::Scheme::basic) {
                std::vector<ImageDescriptor> descs;
                for (const auto& img : client->images)
                    descs.push_back(ImageDescriptor{img.image_id, img.vectors});
                client->fxp_vectors = sys->fxp_encode_images(id, descs, 0);
            } else {
                // Deterministic rebuild of the advanced caches from the
                // mirrored images (same derived seeds as the upload path).
                std::vector<std::vector<float>> all_vecs;
                for (const auto& img : client->images)
                    all_vecs.insert(all_vecs.end(), img.vectors.begin(), img.vectors.end());
                client->vocab = build_vocabulary(all_vecs, cfg.vocab_size, cfg.vocab_iters,
                                                 Rng(cfg.seed).derive("vocab:" + id).u64());
                std::vector<std::vector<uint32_t>> counts;
                for (const auto& img : client->images)
                    counts.push_back(quantize(ImageDescriptor{img.image_id, img.vectors},
                                              client->vocab));
                client->stats = build_corpus_stats(counts);
                for (size_t i = 0; i < client->images.size(); i++) {
                    FrequencyVector f =
                        weight_tfidf(client->images[i].image_id, counts[i], client->stats);
                    std::vector<int64_t> raws;
                    raws.reserve(f.weights.size());
                    for (double w : f.weights) raws.push_back(encode(w, cfg.fxp).raw);
                    client->freq_raws[client->images[i].image_id] = std::move(raws);
                }
            }
        }
        sys->clients_.emplace(id, std::move(client));
    }
    return sys;
}

// ---- flat key=value config ----

SystemConfig parse_config_text(const std::string& text) {
    SystemConfig cfg;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
            if (blank) continue;
            throw ParseError("config: malformed line " + std::to_string(lineno));
        }
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "lambda") cfg.lambda = std::stoul(val);
            else if (key == "m_lvl") cfg.m_lvl = std::stoul(val);
            else if (key == "word_bits") cfg.fxp.word_bits = std::stoul(val);
            else if (key == "int_bits") cfg.fxp.int_bits = std::stoul(val);
            else if (key == "scheme")
                cfg.scheme = val == "advanced" ? SystemConfig::Scheme::advanced
                                               : SystemConfig::Scheme::basic;
            else if (key == "c_policy")
                cfg.c_policy = val == "explicit" ? SystemConfig::CPolicy::explicit_c
                                                 : SystemConfig::CPolicy::sqrt_n;
            else if (key == "c") cfg.c_explicit = std::stoul(val);
            else if (key == "levels") cfg.levels = std::stoul(val);
            else if (key == "alpha") cfg.alpha = std::stoul(val);
            else if (key == "beta") cfg.beta = std::stoul(val);
            else if (key == "k_nn") cfg.k_nn = std::stoul(val);
            else if (key == "v") cfg.vocab_size = std::stoul(val);
            else if (key == "vocab_iters") cfg.vocab_iters = std::stoul(val);
            else if (key == "kernel") cfg.kernel = val == "dot" ? Kernel::dot : Kernel::distance;
            else if (key == "workers") cfg.workers = std::stoul(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "result_limit") cfg.result_limit = std::stoull(val);
            else throw ParseError("config: unknown key '" + key + "'");
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError("config: bad value for '" + key + "'");
        }
    }
    cfg.fxp.validate();
    return cfg;
}

SystemConfig load_config_file(const std::string& path) {
    return parse_config_text(read_text(path));
}

std::string config_to_text(const SystemConfig& cfg) {
    std::ostringstream out;
    out << "lambda=" << cfg.lambda << '\n'
        << "m_lvl=" << cfg.m_lvl << '\n'
        << "word_bits=" << cfg.fxp.word_bits << '\n'
        << "int_bits=" << cfg.fxp.int_bits << '\n'
        << "scheme=" << scheme_name(cfg.scheme) << '\n'
        << "c_policy=" << (cfg.c_policy == SystemConfig::CPolicy::sqrt_n ? "sqrt_n" : "explicit")
        << '\n'
        << "c=" << cfg.c_explicit << '\n'
        << "levels=" << cfg.levels << '\n'
        << "alpha=" << cfg.alpha << '\n'
        << "beta=" << cfg.beta << '\n'
        << "k_nn=" << cfg.k_nn << '\n'
        << "v=" << cfg.vocab_size << '\n'
        << "vocab_iters=" << cfg.vocab_iters << '\n'
        << "kernel=" << (cfg.kernel == Kernel::distance ? "distance" : "dot") << '\n'
        << "workers=" << cfg.workers << '\n'
        << "seed=" << cfg.seed << '\n'
        << "result_limit=" << cfg.result_limit << '\n';
    return out.str();
}

} // namespace pic

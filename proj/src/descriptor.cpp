#include "pic/descriptor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "pic/errors.hpp"

namespace pic {

namespace {

Bytes read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open file: " + path);
    return Bytes(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

double sqdist_f(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); i++) {
        double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s;
}

double sqdist_fd(const std::vector<float>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); i++) {
        double d = double(a[i]) - b[i];
        s += d * d;
    }
    return s;
}

} // namespace

Bytes encode_fvecs(const std::vector<std::vector<float>>& vectors) {
    ByteWriter w;
    for (const auto& v : vectors) {
        uint32_t dim = static_cast<uint32_t>(v.size());
        for (int s = 0; s < 32; s += 8) w.u8(static_cast<uint8_t>(dim >> s)); // LE int32
        for (float x : v) w.f32le(x);
    }
    return w.take();
}

std::vector<std::vector<float>> decode_fvecs(const Bytes& data) {
    std::vector<std::vector<float>> out;
    ByteReader r(data);
    while (!r.done()) {
        if (r.remaining() < 4) throw ParseError("fvecs: truncated record header");
        uint32_t dim = 0;
        for (int i = 0; i < 4; i++) dim |= uint32_t(r.u8()) << (8 * i);
        if (dim == 0 || dim > (1u << 20)) throw ParseError("fvecs: malformed dimension");
        if (r.remaining() < size_t(dim) * 4) throw ParseError("fvecs: truncated record");
        std::vector<float> v(dim);
        for (uint32_t i = 0; i < dim; i++) v[i] = r.f32le();
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<std::vector<float>> load_fvecs(const std::string& path) {
    return decode_fvecs(read_file(path));
}

void write_fvecs(const std::string& path, const std::vector<std::vector<float>>& vectors) {
    Bytes b = encode_fvecs(vectors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot write file: " + path);
    f.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

Bytes encode_ivecs(const std::vector<std::vector<int32_t>>& vectors) {
    ByteWriter w;
    for (const auto& v : vectors) {
        uint32_t dim = static_cast<uint32_t>(v.size());
        for (int s = 0; s < 32; s += 8) w.u8(static_cast<uint8_t>(dim >> s));
        for (int32_t x : v)
            for (int s = 0; s < 32; s += 8) w.u8(static_cast<uint8_t>(uint32_t(x) >> s));
    }
    return w.take();
}

std::vector<std::vector<int32_t>> decode_ivecs(const Bytes& data) {
    std::vector<std::vector<int32_t>> out;
    ByteReader r(data);
    while (!r.done()) {
        if (r.remaining() < 4) throw ParseError("ivecs: truncated record header");
        uint32_t dim = 0;
        for (int i = 0; i < 4; i++) dim |= uint32_t(r.u8()) << (8 * i);
        if (dim == 0 || dim > (1u << 20)) throw ParseError("ivecs: malformed dimension");
        if (r.remaining() < size_t(dim) * 4) throw ParseError("ivecs: truncated record");
        std::vector<int32_t> v(dim);
        for (uint32_t i = 0; i < dim; i++) {
            uint32_t raw = 0;
            for (int s = 0; s < 32; s += 8) raw |= uint32_t(r.u8()) << s;
            v[i] = int32_t(raw);
        }
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<std::vector<int32_t>> load_ivecs(const std::string& path) {
    return decode_ivecs(read_file(path));
}

void write_ivecs(const std::string& path, const std::vector<std::vector<int32_t>>& vectors) {
    Bytes b = encode_ivecs(vectors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot write file: " + path);
    f.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

std::vector<ManifestEntry> parse_manifest(const std::string& text) {
    std::vector<ManifestEntry> out;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string start, count;
        if (!std::getline(ls, e.image_id, '\t') || !std::getline(ls, start, '\t') ||
            !std::getline(ls, count, '\t'))
            throw ParseError("manifest: malformed line " + std::to_string(lineno));
        try {
            e.start_record = std::stoull(start);
            e.count = std::stoull(count);
        } catch (const std::exception&) {
            throw ParseError("manifest: bad numbers on line " + std::to_string(lineno));
        }
        if (e.count == 0) throw ParseError("manifest: empty image on line " + std::to_string(lineno));
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    Bytes b = read_file(path);
    return parse_manifest(std::string(b.begin(), b.end()));
}

std::vector<ImageDescriptor> group_by_manifest(const std::vector<std::vector<float>>& records,
                                               const std::vector<ManifestEntry>& manifest) {
    std::vector<ImageDescriptor> out;
    for (const auto& e : manifest) {
        if (e.start_record + e.count > records.size())
            throw ParseError("manifest: range beyond record count for " + e.image_id);
        ImageDescriptor d;
        d.image_id = e.image_id;
        d.vectors.assign(records.begin() + long(e.start_record),
                         records.begin() + long(e.start_record + e.count));
        for (const auto& v : d.vectors)
            if (v.size() != d.vectors.front().size())
                throw ParseError("dimension mismatch within image " + e.image_id);
        out.push_back(std::move(d));
    }
    return out;
}

namespace {

std::vector<ImageDescriptor> load_tsv(const std::string& path) {
    Bytes b = read_file(path);
    std::istringstream in(std::string(b.begin(), b.end()));
    std::vector<ImageDescriptor> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, field;
        if (!std::getline(ls, id, '\t')) throw ParseError("tsv: malformed line " + std::to_string(lineno));
        std::vector<float> v;
        while (std::getline(ls, field, '\t')) {
            try {
                v.push_back(std::stof(field));
            } catch (const std::exception&) {
                throw ParseError("tsv: bad number on line " + std::to_string(lineno));
            }
        }
        if (v.empty()) throw ParseError("tsv: record without coordinates on line " + std::to_string(lineno));
        if (out.empty() || out.back().image_id != id) {
            out.push_back(ImageDescriptor{id, {}});
        }
        if (!out.back().vectors.empty() && out.back().vectors.front().size() != v.size())
            throw ParseError("tsv: dimension mismatch within image " + id);
        out.back().vectors.push_back(std::move(v));
    }
    return out;
}

} // namespace

std::vector<ImageDescriptor> load_vectors(const std::string& path, VectorFormat format,
                                          const std::string& manifest_path) {
    if (format == VectorFormat::tsv) return load_tsv(path);
    auto records = load_fvecs(path);
    if (manifest_path.empty()) {
        // No manifest: every record is its own image, ids by record ordinal.
        std::vector<ImageDescriptor> out;
        for (size_t i = 0; i < records.size(); i++)
            out.push_back(ImageDescriptor{std::to_string(i), {records[i]}});
        return out;
    }
    return group_by_manifest(records, load_manifest(manifest_path));
}

Vocabulary build_vocabulary(const std::vector<std::vector<float>>& vectors, uint32_t v,
                            uint32_t max_iters, uint64_t seed) {
    if (v < 2) throw ConfigError("vocabulary size must be >= 2");
    if (vectors.size() < v)
        throw ConfigError("insufficient vectors: need at least " + std::to_string(v));
    const size_t n = vectors.size();
    const size_t dim = vectors.front().size();
    for (const auto& x : vectors)
        if (x.size() != dim) throw DimensionError("k-means input dimension mismatch");

    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> centroids;
    centroids.reserve(v);

    // k-means++ seeding
    size_t first = rng() % n;
    centroids.emplace_back(vectors[first].begin(), vectors[first].end());
    std::vector<double> best(n, std::numeric_limits<double>::max());
    while (centroids.size() < v) {
        double total = 0;
        for (size_t i = 0; i < n; i++) {
            double d = sqdist_fd(vectors[i], centroids.back());
            if (d < best[i]) best[i] = d;
            total += best[i];
        }
        size_t pick = 0;
        if (total > 0) {
            std::uniform_real_distribution<double> dist(0.0, total);
            double target = dist(rng);
            double acc = 0;
            for (size_t i = 0; i < n; i++) {
                acc += best[i];
                if (acc >= target) { pick = i; break; }
            }
        } else {
            pick = rng() % n; // all points identical to some centroid already
        }
        centroids.emplace_back(vectors[pick].begin(), vectors[pick].end());
    }

    std::vector<uint32_t> assign(n, 0);
    for (uint32_t iter = 0; iter < max_iters; iter++) {
        for (size_t i = 0; i < n; i++) {
            double bd = std::numeric_limits<double>::max();
            uint32_t bj = 0;
            for (uint32_t j = 0; j < v; j++) {
                double d = sqdist_fd(vectors[i], centroids[j]);
                if (d < bd) { bd = d; bj = j; }
            }
            assign[i] = bj;
        }
        std::vector<std::vector<double>> sums(v, std::vector<double>(dim, 0.0));
        std::vector<size_t> counts(v, 0);
        for (size_t i = 0; i < n; i++) {
            counts[assign[i]]++;
            for (size_t k = 0; k < dim; k++) sums[assign[i]][k] += vectors[i][k];
        }
        double moved = 0;
        for (uint32_t j = 0; j < v; j++) {
            if (counts[j] == 0) {
                // Re-seed an empty cluster with the point farthest from its
                // current assignment's centroid.
                size_t far = 0;
                double fd = -1;
                for (size_t i = 0; i < n; i++) {
                    double d = sqdist_fd(vectors[i], centroids[assign[i]]);
                    if (d > fd) { fd = d; far = i; }
                }
                for (size_t k = 0; k < dim; k++) {
                    double nv = double(vectors[far][k]);
                    moved = std::max(moved, std::fabs(nv - centroids[j][k]));
                    centroids[j][k] = nv;
                }
                assign[far] = j;
                continue;
            }
            for (size_t k = 0; k < dim; k++) {
                double nv = sums[j][k] / double(counts[j]);
                moved = std::max(moved, std::fabs(nv - centroids[j][k]));
                centroids[j][k] = nv;
            }
        }
        if (moved < 1e-6) break;
    }

    Vocabulary vocab;
    vocab.v = v;
    vocab.dim = static_cast<uint32_t>(dim);
    vocab.words.reserve(v);
    for (const auto& c : centroids) vocab.words.emplace_back(c.begin(), c.end());

    // Words must be pairwise distinct; a duplicate is re-seeded to an input
    // point not already used as a word.
    for (uint32_t j = 0; j < v; j++) {
        bool dup = false;
        for (uint32_t j2 = 0; j2 < j && !dup; j2++) dup = vocab.words[j] == vocab.words[j2];
        if (!dup) continue;
        bool fixed = false;
        for (size_t i = 0; i < n && !fixed; i++) {
            std::vector<float> cand(vectors[i].begin(), vectors[i].end());
            bool used = false;
            for (uint32_t j2 = 0; j2 < v && !used; j2++) used = j2 != j && cand == vocab.words[j2];
            if (!used) {
                vocab.words[j] = std::move(cand);
                fixed = true;
            }
        }
        if (!fixed) throw ConfigError("insufficient distinct vectors for the vocabulary size");
    }
    return vocab;
}

std::vector<uint32_t> quantize(const ImageDescriptor& desc, const Vocabulary& vocab) {
    if (desc.vectors.empty()) throw DimensionError("descriptor has no vectors");
    std::vector<uint32_t> counts(vocab.v, 0);
    for (const auto& x : desc.vectors) {
        if (x.size() != vocab.dim) throw DimensionError("descriptor/vocabulary dimension mismatch");
        double bd = std::numeric_limits<double>::max();
        uint32_t bj = 0;
        for (uint32_t j = 0; j < vocab.v; j++) {
            double d = sqdist_f(x, vocab.words[j]);
            if (d < bd) { bd = d; bj = j; } // strict: ties keep the lowest index
        }
        counts[bj]++;
    }
    return counts;
}

CorpusStats build_corpus_stats(const std::vector<std::vector<uint32_t>>& per_image_counts) {
    CorpusStats s;
    s.num_images = static_cast<uint32_t>(per_image_counts.size());
    if (per_image_counts.empty()) return s;
    s.doc_freq.assign(per_image_counts.front().size(), 0);
    for (const auto& counts : per_image_counts) {
        if (counts.size() != s.doc_freq.size())
            throw DimensionError("corpus stats: count vector size mismatch");
        for (size_t i = 0; i < counts.size(); i++)
            if (counts[i] > 0) s.doc_freq[i]++;
    }
    return s;
}

FrequencyVector weight_tfidf(const std::string& image_id, const std::vector<uint32_t>& counts,
                             const CorpusStats& stats) {
    if (stats.num_images < 1) throw ConfigError("tf-idf requires N >= 1");
    if (counts.size() != stats.doc_freq.size())
        throw DimensionError("tf-idf: counts/doc_freq size mismatch");
    uint64_t n_total = 0;
    for (uint32_t c : counts) n_total += c;
    if (n_total == 0) throw ConfigError("tf-idf requires n_I >= 1");
    FrequencyVector f;
    f.image_id = image_id;
    f.weights.assign(counts.size(), 0.0);
    for (size_t i = 0; i < counts.size(); i++) {
        if (counts[i] == 0) continue;
        if (stats.doc_freq[i] == 0)
            throw Error("tf-idf: word present in image but absent from corpus stats");
        f.weights[i] = (double(counts[i]) / double(n_total)) *
                       std::log(double(stats.num_images) / double(stats.doc_freq[i]));
    }
    return f;
}

std::vector<double> weight_query_tfidf(const std::vector<uint32_t>& counts,
                                       const CorpusStats& owner_stats) {
    if (counts.size() != owner_stats.doc_freq.size())
        throw DimensionError("query tf-idf: counts/doc_freq size mismatch");
    uint64_t n_total = 0;
    for (uint32_t c : counts) n_total += c;
    std::vector<double> w(counts.size(), 0.0);
    if (n_total == 0) return w;
    for (size_t i = 0; i < counts.size(); i++) {
        if (counts[i] == 0 || owner_stats.doc_freq[i] == 0) continue;
        w[i] = (double(counts[i]) / double(n_total)) *
               std::log(double(owner_stats.num_images) / double(owner_stats.doc_freq[i]));
    }
    return w;
}

double kmeans_inertia(const std::vector<std::vector<float>>& vectors, const Vocabulary& vocab) {
    double total = 0;
    for (const auto& x : vectors) {
        double bd = std::numeric_limits<double>::max();
        for (const auto& wrd : vocab.words) bd = std::min(bd, sqdist_f(x, wrd));
        total += bd;
    }
    return total;
}

} // namespace pic

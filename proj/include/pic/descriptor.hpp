#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pic/bytes.hpp"

namespace pic {

// All feature vectors of one image. Extraction from pixels happens upstream;
// vectors arrive precomputed.
struct ImageDescriptor {
    std::string image_id;
    std::vector<std::vector<float>> vectors;
};

struct ManifestEntry {
    std::string image_id;
    size_t start_record = 0;
    size_t count = 0;
};

// fvecs: repeated [int32 little-endian dim][dim x float32 little-endian].
// ivecs is the same layout with int32 payloads.
std::vector<std::vector<float>> load_fvecs(const std::string& path);
void write_fvecs(const std::string& path, const std::vector<std::vector<float>>& vectors);
Bytes encode_fvecs(const std::vector<std::vector<float>>& vectors);
std::vector<std::vector<float>> decode_fvecs(const Bytes& data);
std::vector<std::vector<int32_t>> load_ivecs(const std::string& path);
void write_ivecs(const std::string& path, const std::vector<std::vector<int32_t>>& vectors);
Bytes encode_ivecs(const std::vector<std::vector<int32_t>>& vectors);
std::vector<std::vector<int32_t>> decode_ivecs(const Bytes& data);

// Manifest lines: image_id<TAB>start_record<TAB>count
std::vector<ManifestEntry> load_manifest(const std::string& path);
std::vector<ManifestEntry> parse_manifest(const std::string& text);

std::vector<ImageDescriptor> group_by_manifest(const std::vector<std::vector<float>>& records,
                                               const std::vector<ManifestEntry>& manifest);

enum class VectorFormat { fvecs, tsv };

// fvecs needs the sidecar manifest; tsv groups consecutive rows that share an
// image_id ("image_id<TAB>coord<TAB>coord...").
std::vector<ImageDescriptor> load_vectors(const std::string& path, VectorFormat format,
                                          const std::string& manifest_path = {});

// Visual dictionary: v centroids from k-means over feature vectors.
struct Vocabulary {
    uint32_t v = 0;
    uint32_t dim = 0;
    std::vector<std::vector<float>> words;
};

// k-means with k-means++ seeding, Euclidean metric. Stops after max_iters or
// when no centroid moves more than 1e-6. Deterministic for a fixed seed.
Vocabulary build_vocabulary(const std::vector<std::vector<float>>& vectors, uint32_t v,
                            uint32_t max_iters, uint64_t seed);

// Per-word occurrence counts f_{i,I}; each vector votes for its nearest word
// (ties to the lowest word index). Sum of counts = vector count of the image.
std::vector<uint32_t> quantize(const ImageDescriptor& desc, const Vocabulary& vocab);

// Corpus-level stats: N images and per-word document frequency f_i (number of
// images whose count for the word is nonzero).
struct CorpusStats {
    uint32_t num_images = 0;
    std::vector<uint32_t> doc_freq;
};

CorpusStats build_corpus_stats(const std::vector<std::vector<uint32_t>>& per_image_counts);

struct FrequencyVector {
    std::string image_id;
    std::vector<double> weights;
};

// w_i = (f_{i,I} / n_I) * ln(N / f_i); zero whenever f_{i,I} = 0.
FrequencyVector weight_tfidf(const std::string& image_id, const std::vector<uint32_t>& counts,
                             const CorpusStats& stats);

// Query-side weighting: the querier's own counts for the tf part, the owner's
// document frequencies for the idf part. Words the owner corpus never saw
// (f_i = 0) get weight zero.
std::vector<double> weight_query_tfidf(const std::vector<uint32_t>& counts,
                                       const CorpusStats& owner_stats);

double kmeans_inertia(const std::vector<std::vector<float>>& vectors, const Vocabulary& vocab);

} // namespace pic

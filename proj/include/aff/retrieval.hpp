#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "aff/matrix.hpp"
#include "aff/synth.hpp"
#include "aff/train.hpp"

namespace aff {

// Exact cosine-similarity index. Rows are L2-normalized at build time and
// immutable afterwards.
struct RetrievalIndex {
    std::vector<std::string> ids;
    Matrix embeddings;  // one unit-norm row per id
    std::string provenance;

    std::size_t size() const { return ids.size(); }
    std::size_t dim() const { return embeddings.cols(); }
};

RetrievalIndex build_index(const std::vector<std::string>& ids, const Matrix& embeddings,
                           const std::string& provenance = "");

struct SearchHit {
    std::string id;
    double score;
};

// Descending cosine score, ties broken by ascending id. k <= index size.
std::vector<SearchHit> search(const RetrievalIndex& index, const Matrix& query,
                              std::size_t k);

// Average precision of a ranking. Junk ids are removed before ranks are
// assigned. Returns nullopt when the positive set is empty after junk
// removal (query skipped, not counted in mAP). truncate = 0 scores the full
// ranking; otherwise only the first `truncate` entries count (mAP@k).
std::optional<double> average_precision(const std::vector<std::string>& ranked,
                                        const std::set<std::string>& positives,
                                        const std::set<std::string>& junk = {},
                                        std::size_t truncate = 0);

enum class Protocol { symmetric, asymmetric, ensemble };

std::string protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& s);

struct EvalReport {
    std::string protocol;
    std::string query_model;
    std::string gallery_model;
    std::vector<std::string> query_ids;
    std::vector<double> per_query_ap;
    std::size_t skipped_queries = 0;
    double map = 0.0;
    double index_build_seconds = 0.0;   // timing lives in the manifest, not
    double mean_query_seconds = 0.0;    // the canonical report JSON
};

// Untrained fusion reference: per-family L2-normalized features (locals
// flattened row-major) concatenated, then L2-normalized.
Matrix ensemble_embed(const FeatureBundle& bundle);

// Embeds one family of the bundle on its own (locals flattened, normalized);
// used by the single-family baselines. Index is over the spec family order.
Matrix single_family_embed(const FeatureBundle& bundle, FamilyKind kind,
                           std::size_t slot);

// symmetric: gallery model embeds both sides. asymmetric: encoder embeds the
// query views, gallery model embeds the gallery. ensemble: concatenation on
// both sides, no trained model involved.
EvalReport evaluate_protocol(Protocol protocol, const SynthDataset& ds,
                             const GalleryEncoder* gallery, const QueryEncoder* encoder,
                             std::size_t truncate = 0);

// mAP of retrieving with one raw family on both sides.
double single_family_map(const SynthDataset& ds, FamilyKind kind, std::size_t slot);

}  // namespace aff

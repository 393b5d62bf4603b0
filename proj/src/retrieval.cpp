#include "aff/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <set>

namespace aff {

RetrievalIndex build_index(const std::vector<std::string>& ids, const Matrix& embeddings,
                           const std::string& provenance) {
    if (ids.empty() || embeddings.rows() == 0) {
        throw SchemaError("build_index: empty input");
    }
    if (ids.size() != embeddings.rows()) {
        throw SchemaError("build_index: " + std::to_string(ids.size()) + " ids vs " +
                          std::to_string(embeddings.rows()) + " rows");
    }
    std::set<std::string> seen;
    for (const auto& id : ids) {
        if (!seen.insert(id).second) throw SchemaError("build_index: duplicate id " + id);
    }

    RetrievalIndex index;
    index.ids = ids;
    index.provenance = provenance;
    index.embeddings = Matrix(embeddings.rows(), embeddings.cols());
    for (std::size_t i = 0; i < embeddings.rows(); ++i) {
        index.embeddings.set_row(i, l2_normalize(embeddings.row(i)));
    }
    return index;
}

std::vector<SearchHit> search(const RetrievalIndex& index, const Matrix& query,
                              std::size_t k) {
    if (query.rows() != 1 || query.cols() != index.dim()) {
        throw SchemaError("search: query must be 1x" + std::to_string(index.dim()));
    }
    if (k > index.size()) throw SchemaError("search: k exceeds index size");

    const Matrix q = l2_normalize(query);
    std::vector<SearchHit> hits(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < index.dim(); ++j) s += index.embeddings(i, j) * q(0, j);
        hits[i] = {index.ids[i], s};
    }
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    hits.resize(k);
    return hits;
}

std::optional<double> average_precision(const std::vector<std::string>& ranked,
                                        const std::set<std::string>& positives,
                                        const std::set<std::string>& junk,
                                        std::size_t truncate) {
    std::set<std::string> pos;
    for (const auto& id : positives)
        if (!junk.count(id)) pos.insert(id);
    if (pos.empty()) return std::nullopt;

    double acc = 0.0;
    std::size_t hits = 0;
    std::size_t rank = 0;
    for (const auto& id : ranked) {
        if (junk.count(id)) continue;  // junk never consumes a rank
        ++rank;
        if (truncate != 0 && rank > truncate) break;
        if (pos.count(id)) {
            ++hits;
            acc += double(hits) / double(rank);
        }
    }
    return acc / double(pos.size());
}

std::string protocol_name(Protocol p) {
    switch (p) {
        case Protocol::symmetric: return "symmetric";
        case Protocol::asymmetric: return "asymmetric";
        case Protocol::ensemble: return "ensemble";
    }
    return "symmetric";
}

Protocol protocol_from_name(const std::string& s) {
    if (s == "symmetric") return Protocol::symmetric;
    if (s == "asymmetric") return Protocol::asymmetric;
    if (s == "ensemble") return Protocol::ensemble;
    throw ConfigError("unknown protocol '" + s + "'");
}

Matrix ensemble_embed(const FeatureBundle& bundle) {
    Matrix out(1, 0);
    std::size_t width = 0;
    for (const auto& g : bundle.globals) width += g.cols();
    for (const auto& l : bundle.locals) width += l.size();
    out = Matrix(1, width);
    std::size_t col = 0;
    for (const auto& g : bundle.globals) {
        const Matrix n = l2_normalize(g);
        for (std::size_t j = 0; j < n.cols(); ++j) out(0, col++) = n(0, j);
    }
    for (const auto& l : bundle.locals) {
        Matrix flat(1, l.size());
        for (std::size_t i = 0; i < l.size(); ++i) flat(0, i) = l.at(i);
        const Matrix n = l2_normalize(flat);
        for (std::size_t j = 0; j < n.cols(); ++j) out(0, col++) = n(0, j);
    }
    return l2_normalize(out);
}

Matrix single_family_embed(const FeatureBundle& bundle, FamilyKind kind,
                           std::size_t slot) {
    if (kind == FamilyKind::local) {
        if (slot >= bundle.locals.size()) throw SchemaError("single_family: local slot");
        const Matrix& l = bundle.locals[slot];
        Matrix flat(1, l.size());
        for (std::size_t i = 0; i < l.size(); ++i) flat(0, i) = l.at(i);
        return l2_normalize(flat);
    }
    if (slot >= bundle.globals.size()) throw SchemaError("single_family: global slot");
    return l2_normalize(bundle.globals[slot]);
}

namespace {

struct EmbeddingSet {
    std::vector<std::string> ids;
    std::vector<int> labels;
    Matrix rows;
};

template <typename Fn>
EmbeddingSet embed_split(const std::vector<SynthItem>& items, Fn&& embed) {
    EmbeddingSet out;
    if (items.empty()) throw SchemaError("evaluate: empty split");
    const Matrix first = embed(items.front());
    out.rows = Matrix(items.size(), first.cols());
    for (std::size_t i = 0; i < items.size(); ++i) {
        out.ids.push_back(items[i].bundle.item_id);
        out.labels.push_back(items[i].bundle.label);
        out.rows.set_row(i, embed(items[i]));
    }
    return out;
}

}  // namespace

EvalReport evaluate_protocol(Protocol protocol, const SynthDataset& ds,
                             const GalleryEncoder* gallery, const QueryEncoder* encoder,
                             std::size_t truncate) {
    if (protocol != Protocol::ensemble && gallery == nullptr) {
        throw ConfigError("evaluate: protocol " + protocol_name(protocol) +
                          " requires a trained gallery model");
    }
    if (protocol == Protocol::asymmetric && encoder == nullptr) {
        throw ConfigError("evaluate: asymmetric protocol requires a query encoder");
    }

    EvalReport report;
    report.protocol = protocol_name(protocol);

    auto gallery_embed = [&](const SynthItem& item) {
        return protocol == Protocol::ensemble ? ensemble_embed(item.bundle)
                                              : gallery->embed(item.bundle);
    };
    auto query_embed = [&](const SynthItem& item) {
        switch (protocol) {
            case Protocol::symmetric: return gallery->embed(item.bundle);
            case Protocol::asymmetric: return encoder->embed(item.query_view);
            case Protocol::ensemble: return ensemble_embed(item.bundle);
        }
        return Matrix();
    };
    report.gallery_model = protocol == Protocol::ensemble ? "ensemble" : gallery->kind();
    report.query_model = protocol == Protocol::asymmetric
                             ? "encoder"
                             : (protocol == Protocol::ensemble ? "ensemble" : gallery->kind());

    const auto t_build0 = std::chrono::steady_clock::now();
    const EmbeddingSet gal = embed_split(ds.gallery, gallery_embed);
    const RetrievalIndex index = build_index(gal.ids, gal.rows, report.gallery_model);
    report.index_build_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_build0).count();

    const EmbeddingSet queries = embed_split(ds.query, query_embed);
    const std::set<std::string> junk(ds.junk_ids.begin(), ds.junk_ids.end());

    const auto t_q0 = std::chrono::steady_clock::now();
    double ap_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t qi = 0; qi < queries.ids.size(); ++qi) {
        std::set<std::string> positives;
        for (std::size_t gi = 0; gi < gal.ids.size(); ++gi) {
            if (gal.labels[gi] == queries.labels[qi]) positives.insert(gal.ids[gi]);
        }
        const auto hits = search(index, queries.rows.row(qi), index.size());
        std::vector<std::string> ranked;
        ranked.reserve(hits.size());
        for (const auto& h : hits) ranked.push_back(h.id);

        const auto ap = average_precision(ranked, positives, junk, truncate);
        report.query_ids.push_back(queries.ids[qi]);
        if (ap.has_value()) {
            report.per_query_ap.push_back(*ap);
            ap_sum += *ap;
            ++counted;
        } else {
            report.per_query_ap.push_back(-1.0);  // skipped marker in the CSV
            ++report.skipped_queries;
        }
    }
    report.mean_query_seconds =
        queries.ids.empty()
            ? 0.0
            : std::chrono::duration<double>(std::chrono::steady_clock::now() - t_q0).count() /
                  double(queries.ids.size());
    report.map = counted == 0 ? 0.0 : ap_sum / double(counted);
    return report;
}

double single_family_map(const SynthDataset& ds, FamilyKind kind, std::size_t slot) {
    auto embed = [&](const SynthItem& item) {
        return single_family_embed(item.bundle, kind, slot);
    };
    const EmbeddingSet gal = embed_split(ds.gallery, embed);
    const RetrievalIndex index = build_index(gal.ids, gal.rows, "single-family");
    const EmbeddingSet queries = embed_split(ds.query, embed);

    double ap_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t qi = 0; qi < queries.ids.size(); ++qi) {
        std::set<std::string> positives;
        for (std::size_t gi = 0; gi < gal.ids.size(); ++gi) {
            if (gal.labels[gi] == queries.labels[qi]) positives.insert(gal.ids[gi]);
        }
        const auto hits = search(index, queries.rows.row(qi), index.size());
        std::vector<std::string> ranked;
        for (const auto& h : hits) ranked.push_back(h.id);
        const auto ap = average_precision(ranked, positives);
        if (ap.has_value()) {
            ap_sum += *ap;
            ++counted;
        }
    }
    return counted == 0 ? 0.0 : ap_sum / double(counted);
}

}  // namespace aff

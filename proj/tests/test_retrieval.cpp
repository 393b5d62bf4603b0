#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "aff/retrieval.hpp"
#include "aff/rng.hpp"
#include "oracles.hpp"

using namespace aff;

namespace {

std::vector<std::string> ids_of(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("id" + std::to_string(i));
    return out;
}

}  // namespace

TEST_CASE("build_index basics") {
    Rng rng(1);
    const RetrievalIndex one = build_index({"a"}, rng.gaussian_matrix(1, 4));
    CHECK(one.size() == 1);

    CHECK_THROWS_AS(build_index({"a", "a"}, rng.gaussian_matrix(2, 4)), SchemaError);
    CHECK_THROWS_AS(build_index({}, Matrix()), SchemaError);

    Matrix with_zero = rng.gaussian_matrix(3, 4);
    for (std::size_t j = 0; j < 4; ++j) with_zero(1, j) = 0.0;
    CHECK_THROWS_AS(build_index(ids_of(3), with_zero), DegenerateInputError);

    const RetrievalIndex idx = build_index(ids_of(5), rng.gaussian_matrix(5, 6));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        CHECK(std::abs(norm(idx.embeddings.row(i)) - 1.0) <= 1e-6);
    }
}

TEST_CASE("search: self-match ranks first, orthogonal scores vanish") {
    Matrix rows{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const RetrievalIndex idx = build_index(ids_of(3), rows);

    const auto hits = search(idx, Matrix::row_vector({0, 2, 0}), 3);
    CHECK(hits[0].id == "id1");
    CHECK(std::abs(hits[0].score - 1.0) <= 1e-6);
    CHECK(std::abs(hits[1].score) <= 1e-9);
    CHECK(std::abs(hits[2].score) <= 1e-9);
    // orthogonal ties broken by ascending id
    CHECK(hits[1].id == "id0");
    CHECK(hits[2].id == "id2");

    CHECK_THROWS_AS(search(idx, Matrix::row_vector({1, 0}), 1), SchemaError);
    CHECK_THROWS_AS(search(idx, Matrix::row_vector({1, 0, 0}), 4), SchemaError);
}

TEST_CASE("search matches a full-sort oracle on a random index") {
    Rng rng(2);
    const std::size_t n = 50;
    const Matrix rows = rng.gaussian_matrix(n, 8);
    const RetrievalIndex idx = build_index(ids_of(n), rows);
    const Matrix q = rng.gaussian_matrix(1, 8);

    const auto hits = search(idx, q, n);

    // oracle: normalize everything explicitly and sort with the same tie rule
    const Matrix qn = l2_normalize(q);
    std::vector<std::pair<double, std::string>> expected;
    for (std::size_t i = 0; i < n; ++i) {
        expected.push_back({dot(l2_normalize(rows.row(i)), qn), "id" + std::to_string(i)});
    }
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(hits[i].id == expected[i].second);
        CHECK(std::abs(hits[i].score - expected[i].first) <= 1e-12);
    }
}

TEST_CASE("search ranking is invariant to positive query rescaling") {
    Rng rng(3);
    const RetrievalIndex idx = build_index(ids_of(20), rng.gaussian_matrix(20, 6));
    const Matrix q = rng.gaussian_matrix(1, 6);
    const auto base = search(idx, q, 20);
    for (double c : {0.25, 4.0, 1000.0}) {
        const auto scaled = search(idx, q * c, 20);
        for (std::size_t i = 0; i < base.size(); ++i) CHECK(scaled[i].id == base[i].id);
    }
}

TEST_CASE("average_precision: hand cases") {
    CHECK(*average_precision({"p1", "p2", "n1"}, {"p1", "p2"}) == 1.0);
    CHECK(*average_precision({"p1", "n1", "p2"}, {"p1", "p2"}) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    // single positive at rank r in a list of n
    const std::vector<std::string> ranked = {"a", "b", "c", "d", "e"};
    CHECK(*average_precision(ranked, {"d"}) == doctest::Approx(0.25).epsilon(1e-12));
    // empty positive set is a skip
    CHECK(!average_precision(ranked, {}).has_value());
    CHECK(!average_precision(ranked, {"d"}, {"d"}).has_value());
}

TEST_CASE("average_precision: junk removal and truncation") {
    // junk entries do not consume ranks
    CHECK(*average_precision({"j", "p"}, {"p"}, {"j"}) == 1.0);
    CHECK(*average_precision({"n", "j", "p"}, {"p"}, {"j"}) == 0.5);
    // truncation: positive beyond the cut contributes nothing
    CHECK(*average_precision({"n1", "n2", "p"}, {"p"}, {}, 2) == 0.0);
    CHECK(*average_precision({"p", "n1", "n2"}, {"p"}, {}, 2) == 1.0);
}

TEST_CASE("average_precision equals direct enumeration on all rankings up to 8 items") {
    // every permutation, several positive sets per size; implementation and
    // definition-oracle must agree exactly
    for (std::size_t n = 1; n <= 8; ++n) {
        std::vector<std::string> items;
        for (std::size_t i = 0; i < n; ++i) items.push_back(std::string(1, char('a' + i)));

        std::vector<std::set<std::string>> positive_sets;
        if (n <= 5) {
            for (std::size_t mask = 1; mask < (1u << n); ++mask) {
                std::set<std::string> pos;
                for (std::size_t i = 0; i < n; ++i)
                    if (mask & (1u << i)) pos.insert(items[i]);
                positive_sets.push_back(pos);
            }
        } else {
            positive_sets.push_back({items[0]});
            positive_sets.push_back({items[0], items[n / 2], items[n - 1]});
            positive_sets.push_back(std::set<std::string>(items.begin(), items.end()));
        }

        std::vector<std::string> perm = items;
        std::sort(perm.begin(), perm.end());
        do {
            for (const auto& pos : positive_sets) {
                const double expected = oracle::ap_direct(perm, pos);
                CHECK(*average_precision(perm, pos) == expected);
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
    }
}

TEST_CASE("expected AP under random ranking: closed form matches enumeration") {
    for (auto [g, p] : std::vector<std::pair<std::size_t, std::size_t>>{
             {5, 1}, {6, 2}, {8, 3}, {10, 4}}) {
        CHECK(std::abs(oracle::expected_ap_random(g, p) -
                       oracle::expected_ap_enumerated(g, p)) <= 1e-12);
    }
}

TEST_CASE("ensemble embedding: width arithmetic and cosine structure") {
    Rng rng(4);
    FeatureBundle b;
    b.item_id = "x";
    for (std::size_t d : {24u, 32u, 40u}) {
        b.globals.push_back(l2_normalize(rng.gaussian_matrix(1, d)));
    }
    Matrix loc(4, 16);
    for (std::size_t r = 0; r < 4; ++r) loc.set_row(r, l2_normalize(rng.gaussian_matrix(1, 16)));
    b.locals.push_back(loc);

    const Matrix e = ensemble_embed(b);
    CHECK(e.cols() == 24u + 32 + 40 + 4 * 16);  // 160
    CHECK(std::abs(norm(e) - 1.0) <= 1e-9);
}

TEST_CASE("ensemble cosine equals the norm-weighted mean of per-family cosines") {
    // families share pre-normalization norms a_f on both sides; then
    // cos(U, V) = sum_f a_f^2 cos_f / sum_f a_f^2
    Rng rng(5);
    const std::vector<std::size_t> dims{3, 5, 4};
    const std::vector<double> norms{0.7, 2.0, 1.3};
    for (int t = 0; t < 10; ++t) {
        std::vector<Matrix> u, v;
        Matrix ucat(1, 12), vcat(1, 12);
        std::size_t col = 0;
        double num = 0.0, den = 0.0;
        for (std::size_t f = 0; f < dims.size(); ++f) {
            Matrix uf = l2_normalize(rng.gaussian_matrix(1, dims[f])) * norms[f];
            Matrix vf = l2_normalize(rng.gaussian_matrix(1, dims[f])) * norms[f];
            const double cos_f = dot(uf, vf) / (norms[f] * norms[f]);
            num += norms[f] * norms[f] * cos_f;
            den += norms[f] * norms[f];
            for (std::size_t j = 0; j < dims[f]; ++j) {
                ucat(0, col) = uf(0, j);
                vcat(0, col) = vf(0, j);
                ++col;
            }
        }
        const double lhs = dot(l2_normalize(ucat), l2_normalize(vcat));
        CHECK(std::abs(lhs - num / den) <= 1e-9);
    }
}

TEST_CASE("evaluate_protocol: symmetric self-retrieval ranks the own item first") {
    GenSpec g = GenSpec::defaults();
    g.classes = 5;
    g.items_per_class = 4;
    g.split_train = 2;
    g.split_gallery = 1;
    g.split_query = 1;
    SynthDataset ds = generate(g);
    // make the query split identical to the gallery split (queries subset of
    // gallery content, fresh ids)
    ds.query = ds.gallery;
    for (auto& item : ds.query) item.bundle.item_id += "_q";

    const EvalReport r = evaluate_protocol(Protocol::ensemble, ds, nullptr, nullptr);
    CHECK(r.map > 0.99);  // every query's duplicate is its nearest neighbor

    CHECK_THROWS_AS(evaluate_protocol(Protocol::symmetric, ds, nullptr, nullptr),
                    ConfigError);
    CHECK_THROWS_AS(evaluate_protocol(Protocol::asymmetric, ds, nullptr, nullptr),
                    ConfigError);
}

TEST_CASE("evaluate_protocol is deterministic") {
    GenSpec g = GenSpec::defaults();
    g.classes = 4;
    g.items_per_class = 4;
    g.split_train = 2;
    g.split_gallery = 1;
    g.split_query = 1;
    const SynthDataset ds = generate(g);
    const EvalReport a = evaluate_protocol(Protocol::ensemble, ds, nullptr, nullptr);
    const EvalReport b = evaluate_protocol(Protocol::ensemble, ds, nullptr, nullptr);
    CHECK(a.map == b.map);
    CHECK(a.per_query_ap == b.per_query_ap);
}

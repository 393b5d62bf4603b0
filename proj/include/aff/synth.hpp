#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aff/fusion.hpp"
#include "aff/matrix.hpp"

namespace aff {

enum class FamilyKind { global, local, noise };

std::string family_kind_name(FamilyKind k);
FamilyKind family_kind_from_name(const std::string& s);

// One synthetic feature family. `informative` is the dimension of the latent
// subspace this family observes; noise families observe nothing. `count` is
// the number of vectors per item (n_i) and must be 1 for global/noise kinds.
struct FamilySpec {
    FamilyKind kind = FamilyKind::global;
    std::size_t dim = 32;
    std::size_t count = 1;
    std::size_t informative = 20;
    double sigma = 0.3;
};

struct GenSpec {
    std::size_t classes = 20;
    std::size_t items_per_class = 15;
    std::size_t latent_dim = 48;
    std::size_t query_dim = 24;
    std::size_t query_informative = 36;  // latent coords visible to the query view
    double query_sigma = 0.9;
    std::size_t split_train = 8;
    std::size_t split_gallery = 4;
    std::size_t split_query = 3;
    std::vector<FamilySpec> families;
    std::uint64_t seed = 7;

    static GenSpec defaults();
    void validate() const;
};

struct SynthItem {
    FeatureBundle bundle;  // carries item_id and label
    Matrix query_view;     // 1 x query_dim, unit norm
};

struct SynthDataset {
    GenSpec spec;
    std::vector<SynthItem> train;
    std::vector<SynthItem> gallery;
    std::vector<SynthItem> query;
    std::vector<std::string> junk_ids;  // empty at desk scale

    BundleSchema schema() const;
    // CRC-32 over all feature payloads in split/item/family order; matches
    // the checksum of the corresponding feature files.
    std::uint32_t checksum() const;
};

// Draws per-class latents and emits per-family features as
// normalize(A_i P_i z_c + sigma_i eps); families observe overlapping lat
// windows so no single family carries the full signal. Query views are
// normalize(B z_c + sigma_q eps) with sigma_q above every family sigma.
// All emitted values are exact float32 values.
SynthDataset generate(const GenSpec& spec);

// Appends `count` pure-noise global families (dim, sigma ignored for pure
// gaussian directions) to every bundle in every split. Labels and existing
// features are untouched; count = 0 returns the input bit-identically.
SynthDataset inject_noise_families(const SynthDataset& ds, std::size_t count,
                                   std::size_t dim, double sigma);

// Three deliberately weak global families (small informative subspace, high
// noise), the synthetic analogue of low-accuracy extractors.
std::vector<FamilySpec> weak_family_bank();

}  // namespace aff

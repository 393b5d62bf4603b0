#include "aff/synth.hpp"

#include <cmath>

#include "aff/checksum.hpp"
#include "aff/rng.hpp"

namespace aff {

std::string family_kind_name(FamilyKind k) {
    switch (k) {
        case FamilyKind::global: return "global";
        case FamilyKind::local: return "local";
        case FamilyKind::noise: return "noise";
    }
    return "global";
}

FamilyKind family_kind_from_name(const std::string& s) {
    if (s == "global") return FamilyKind::global;
    if (s == "local") return FamilyKind::local;
    if (s == "noise") return FamilyKind::noise;
    throw ConfigError("unknown family kind '" + s + "'");
}

GenSpec GenSpec::defaults() {
    GenSpec s;
    s.families = {
        {FamilyKind::global, 24, 1, 18, 0.30},
        {FamilyKind::global, 32, 1, 18, 0.30},
        {FamilyKind::global, 40, 1, 18, 0.35},
        {FamilyKind::local, 16, 4, 18, 0.35},
    };
    return s;
}

void GenSpec::validate() const {
    if (classes < 2) throw ConfigError("gen: class count must be >= 2");
    if (latent_dim < 2 || query_dim < 2) throw ConfigError("gen: dims must be >= 2");
    if (split_train + split_gallery + split_query != items_per_class) {
        throw ConfigError("gen: splits must sum to items_per_class");
    }
    if (split_gallery == 0 || split_query == 0) {
        throw ConfigError("gen: every class needs gallery and query items");
    }
    if (families.empty()) throw ConfigError("gen: at least one family required");
    for (const auto& f : families) {
        if (f.dim < 2) throw ConfigError("gen: family dim must be >= 2");
        if (f.kind != FamilyKind::local && f.count != 1) {
            throw ConfigError("gen: count > 1 only for local families");
        }
        if (f.kind == FamilyKind::local && f.count == 0) {
            throw ConfigError("gen: local family needs count >= 1");
        }
        if (f.kind != FamilyKind::noise && f.informative == 0) {
            throw ConfigError("gen: informative subspace must be non-empty");
        }
        if (f.informative > latent_dim) {
            throw ConfigError("gen: informative subspace exceeds latent dim");
        }
        if (f.sigma < 0.0) throw ConfigError("gen: sigma must be >= 0");
    }
    if (!(query_sigma >= 0.0)) throw ConfigError("gen: query sigma must be >= 0");
    if (query_informative == 0 || query_informative > latent_dim) {
        throw ConfigError("gen: query window must be in [1, latent_dim]");
    }
}

BundleSchema SynthDataset::schema() const {
    if (!train.empty()) return BundleSchema::of(train.front().bundle);
    if (!gallery.empty()) return BundleSchema::of(gallery.front().bundle);
    throw SchemaError("dataset has no items");
}

std::uint32_t SynthDataset::checksum() const {
    // Mirrors the payload byte order of the files write_dataset emits:
    // train bundles, train views, gallery bundles, query bundles, query views,
    // with each bundle's payload laid out in spec family order.
    Crc32 crc;
    auto update_bundles = [&](const std::vector<SynthItem>& split) {
        for (const auto& item : split) {
            std::size_t gi = 0, li = 0;
            for (const auto& f : spec.families) {
                if (f.kind == FamilyKind::local) {
                    crc.update_float_payload(item.bundle.locals[li++]);
                } else {
                    crc.update_float_payload(item.bundle.globals[gi++]);
                }
            }
        }
    };
    auto update_views = [&](const std::vector<SynthItem>& split) {
        for (const auto& item : split) crc.update_float_payload(item.query_view);
    };
    update_bundles(train);
    update_views(train);
    update_bundles(gallery);
    update_bundles(query);
    update_views(query);
    return crc.value();
}

namespace {

// Overlapping latent windows: informative family f observes `len` contiguous
// latent coordinates starting at f * (latent / F), wrapping around.
std::vector<std::size_t> family_window(std::size_t family_index, std::size_t num_informative,
                                       std::size_t len, std::size_t latent) {
    std::vector<std::size_t> idx(len);
    const std::size_t stride = latent / std::max<std::size_t>(1, num_informative);
    const std::size_t start = family_index * stride;
    for (std::size_t t = 0; t < len; ++t) idx[t] = (start + t) % latent;
    return idx;
}

Matrix select(const Matrix& latent_row, const std::vector<std::size_t>& idx) {
    Matrix out(1, idx.size());
    for (std::size_t t = 0; t < idx.size(); ++t) out(0, t) = latent_row(0, idx[t]);
    return out;
}

Matrix emit_vector(const Matrix& base, double sigma, std::size_t dim, Rng& rng) {
    Matrix v = base;
    for (std::size_t j = 0; j < dim; ++j) v(0, j) += sigma * rng.gaussian();
    return quantize_to_float(l2_normalize(v));
}

std::string item_name(std::size_t cls, std::size_t item) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "c%03zu_i%03zu", cls, item);
    return buf;
}

}  // namespace

SynthDataset generate(const GenSpec& spec) {
    spec.validate();
    SynthDataset ds;
    ds.spec = spec;

    Rng latent_rng = Rng::derive(spec.seed, 1);
    Matrix latents(spec.classes, spec.latent_dim);
    for (std::size_t i = 0; i < latents.size(); ++i) latents.at(i) = latent_rng.gaussian();

    // Fixed per-family maps A_i (informative -> dim) and windows.
    std::size_t num_informative = 0;
    for (const auto& f : spec.families)
        if (f.kind != FamilyKind::noise) ++num_informative;

    Rng map_rng = Rng::derive(spec.seed, 2);
    std::vector<Matrix> maps(spec.families.size());
    std::vector<std::vector<std::size_t>> windows(spec.families.size());
    std::size_t informative_index = 0;
    for (std::size_t i = 0; i < spec.families.size(); ++i) {
        const FamilySpec& f = spec.families[i];
        if (f.kind == FamilyKind::noise) continue;
        windows[i] = family_window(informative_index++, num_informative, f.informative,
                                   spec.latent_dim);
        maps[i] = map_rng.gaussian_matrix(f.informative, f.dim,
                                          1.0 / std::sqrt(double(f.informative)));
    }

    // the query view observes only a prefix window of the latent; the
    // coordinates outside it are invisible to the query side by construction
    Rng query_map_rng = Rng::derive(spec.seed, 3);
    Matrix query_map = query_map_rng.gaussian_matrix(
        spec.latent_dim, spec.query_dim, 1.0 / std::sqrt(double(spec.query_informative)));
    for (std::size_t r = spec.query_informative; r < spec.latent_dim; ++r) {
        for (std::size_t c = 0; c < spec.query_dim; ++c) query_map(r, c) = 0.0;
    }

    for (std::size_t c = 0; c < spec.classes; ++c) {
        const Matrix z = latents.row(c);
        for (std::size_t t = 0; t < spec.items_per_class; ++t) {
            Rng item_rng = Rng::derive(spec.seed, 4'000'000 + c * spec.items_per_class + t);
            SynthItem item;
            item.bundle.item_id = item_name(c, t);
            item.bundle.label = static_cast<int>(c);

            for (std::size_t i = 0; i < spec.families.size(); ++i) {
                const FamilySpec& f = spec.families[i];
                if (f.kind == FamilyKind::noise) {
                    item.bundle.globals.push_back(
                        emit_vector(Matrix(1, f.dim), 1.0, f.dim, item_rng));
                    continue;
                }
                const Matrix base = matmul(select(z, windows[i]), maps[i]);
                if (f.kind == FamilyKind::global) {
                    item.bundle.globals.push_back(emit_vector(base, f.sigma, f.dim, item_rng));
                } else {
                    // shared per-item jitter plus independent per-vector jitter;
                    // the per-vector scale is bimodal, so which vectors are
                    // reliable varies item to item
                    Matrix shared = base;
                    for (std::size_t j = 0; j < f.dim; ++j)
                        shared(0, j) += f.sigma * item_rng.gaussian();
                    Matrix block(f.count, f.dim);
                    for (std::size_t v = 0; v < f.count; ++v) {
                        const double jitter =
                            item_rng.uniform() < 0.5 ? 0.25 * f.sigma : 2.5 * f.sigma;
                        block.set_row(v, emit_vector(shared, jitter, f.dim, item_rng));
                    }
                    item.bundle.locals.push_back(std::move(block));
                }
            }

            const Matrix qbase = matmul(z, query_map);
            item.query_view = emit_vector(qbase, spec.query_sigma, spec.query_dim, item_rng);

            if (t < spec.split_train) {
                ds.train.push_back(std::move(item));
            } else if (t < spec.split_train + spec.split_gallery) {
                ds.gallery.push_back(std::move(item));
            } else {
                ds.query.push_back(std::move(item));
            }
        }
    }
    return ds;
}

SynthDataset inject_noise_families(const SynthDataset& ds, std::size_t count,
                                   std::size_t dim, double sigma) {
    SynthDataset out = ds;
    if (count == 0) return out;
    if (dim < 2) throw ConfigError("inject: noise dim must be >= 2");

    for (std::size_t k = 0; k < count; ++k) {
        out.spec.families.push_back({FamilyKind::noise, dim, 1, 0, sigma});
    }
    std::size_t item_index = 0;
    for (auto* split : {&out.train, &out.gallery, &out.query}) {
        for (auto& item : *split) {
            Rng rng = Rng::derive(ds.spec.seed, 9'000'000 + item_index++);
            for (std::size_t k = 0; k < count; ++k) {
                item.bundle.globals.push_back(emit_vector(Matrix(1, dim), 1.0, dim, rng));
            }
        }
    }
    return out;
}

std::vector<FamilySpec> weak_family_bank() {
    return {
        {FamilyKind::global, 24, 1, 6, 0.85},
        {FamilyKind::global, 28, 1, 6, 0.90},
        {FamilyKind::global, 32, 1, 8, 0.85},
    };
}

}  // namespace aff

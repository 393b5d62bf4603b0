#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "aff/fusion.hpp"
#include "aff/synth.hpp"
#include "aff/train.hpp"

namespace aff {

// On-disk family layout entry of a feature file (see docs in README for the
// byte-level format). count is n_i for local families, 1 otherwise.
struct FamilyDescriptor {
    FamilyKind kind = FamilyKind::global;
    std::uint32_t dim = 0;
    std::uint32_t count = 1;

    bool operator==(const FamilyDescriptor&) const = default;
};

std::vector<FamilyDescriptor> descriptors_of(const std::vector<FamilySpec>& families);

// Writes bundles in the AFF1 container (float32 little-endian payload,
// CRC-32 footer). All bundles must match the descriptor schema. Returns the
// payload checksum.
std::uint32_t write_features(const std::vector<FeatureBundle>& bundles,
                             const std::vector<FamilyDescriptor>& families,
                             const std::string& path);

struct FeatureFileContents {
    std::vector<FamilyDescriptor> families;
    std::vector<FeatureBundle> bundles;
    std::uint32_t checksum = 0;
};

// Strict reader: bad magic, truncation, length mismatches and checksum
// failures raise FormatError with the offending byte offset.
FeatureFileContents read_features(const std::string& path);

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
    std::string kind;  // "mixer", "mlp", "encoder"
    std::vector<std::pair<std::string, Matrix>> tensors;  // ordered, named

    const Matrix& tensor(const std::string& name) const;
    bool has(const std::string& name) const;
};

std::uint32_t save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Model <-> checkpoint bridges. Gallery checkpoints carry the mixer head;
// encoder checkpoints carry the momentum head.
Checkpoint checkpoint_of_gallery(const GalleryEncoder& model, const ClassifierHead& head);
Checkpoint checkpoint_of_encoder(const QueryEncoder& model, const ClassifierHead& head);

std::unique_ptr<GalleryEncoder> gallery_from_checkpoint(const Checkpoint& ckpt,
                                                        ClassifierHead* head_out = nullptr);
QueryEncoder encoder_from_checkpoint(const Checkpoint& ckpt,
                                     ClassifierHead* head_out = nullptr);

// ------------------------------------------------------------------- dataset

// Writes the whole dataset as feature files under `dir`: train/gallery/query
// bundles plus train/query view files. Returns the combined dataset checksum
// (identical to SynthDataset::checksum()).
std::uint32_t write_dataset(const SynthDataset& ds, const std::string& dir);

// Loads a dataset directory written by write_dataset. The generator spec is
// restored from the manifest only where needed (labels and views live in the
// files themselves).
SynthDataset read_dataset(const std::string& dir);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace aff

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aff/arcface.hpp"
#include "aff/fusion.hpp"
#include "aff/synth.hpp"

namespace aff {

// Lightweight query-side model: FC + GeLU + a final whitening-style linear
// layer mapping the degraded query view to the shared embedding space. Kept
// deliberately smaller than the mixer.
class QueryEncoder {
public:
    QueryEncoder() = default;
    QueryEncoder(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                 std::uint64_t seed);

    Matrix forward(const Matrix& view);   // raw 1 x d, records tape
    void backward(const Matrix& upstream);
    Matrix embed(const Matrix& view) const;  // L2-normalized, tape-free

    std::vector<ParamRef> params();
    void zero_grads();
    std::size_t param_count() const;
    std::size_t in_dim() const { return fc1.in_dim(); }
    std::size_t out_dim() const { return fc2.out_dim(); }

    Linear fc1;
    Linear fc2;

private:
    Gelu gelu_;
};

std::size_t param_count(std::vector<ParamRef> params);

// Plain SGD with decoupled weight decay: w <- w * (1 - lr*decay) - lr*grad.
void sgd_step(std::vector<ParamRef> params, double lr, double weight_decay);

enum class TrainMode { joint, two_stage, coupled };

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& s);

struct TrainConfig {
    int epochs = 20;
    std::size_t batch_size = 16;
    double lr = 0.001;
    double weight_decay = 0.01;
    double momentum = 0.99;  // alpha in the classifier EMA
    double margin = 0.3;
    double scale = 32.0;
    std::uint64_t seed = 1;
    TrainMode mode = TrainMode::joint;
    std::size_t encoder_hidden = 48;

    void validate() const;
};

struct TrainReport {
    std::vector<double> disc_loss;  // per epoch means
    std::vector<double> comp_loss;
    std::uint64_t seed = 0;
    std::string mode;
    int epochs = 0;
    std::size_t steps = 0;
    double wall_seconds = 0.0;  // reported via the run manifest, not the canonical report
};

// Mixer + query encoder + the two classifier heads, with plain SGD and
// decoupled weight decay. The query head is written only by momentum_update.
class Trainer {
public:
    Trainer(std::unique_ptr<GalleryEncoder> gallery, const SynthDataset& dataset,
            const TrainConfig& config);

    TrainReport run();

    // One optimizer step over the given training items; exposed for tests.
    void step(const std::vector<const SynthItem*>& batch, double lr,
              bool train_gallery, bool train_encoder, double* disc_out, double* comp_out);

    GalleryEncoder& gallery() { return *gallery_; }
    const GalleryEncoder& gallery() const { return *gallery_; }
    QueryEncoder& encoder() { return encoder_; }
    const QueryEncoder& encoder() const { return encoder_; }
    ClassifierHead& mixer_head() { return mixer_head_; }
    ClassifierHead& query_head() { return query_head_; }
    const TrainConfig& config() const { return config_; }
    Matrix mixer_head_grad() const { return grad_mixer_head_; }

private:
    const SynthDataset& dataset_;
    TrainConfig config_;
    std::unique_ptr<GalleryEncoder> gallery_;
    QueryEncoder encoder_;
    ClassifierHead mixer_head_;
    ClassifierHead query_head_;
    Matrix grad_mixer_head_;
    std::size_t num_classes_ = 0;
};

// Convenience wrapper: builds the gallery aggregator named by `gallery_kind`
// ("transformer" or "mlp"), trains on ds.train, and returns the report.
struct TrainedModels {
    std::unique_ptr<GalleryEncoder> gallery;
    QueryEncoder encoder;
    ClassifierHead mixer_head;
    ClassifierHead query_head;
};

TrainReport train(const SynthDataset& ds, const MixerConfig& mixer_cfg,
                  const TrainConfig& train_cfg, const std::string& gallery_kind,
                  TrainedModels& out);

}  // namespace aff

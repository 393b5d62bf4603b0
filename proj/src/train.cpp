#include "aff/train.hpp"

#include <chrono>
#include <cmath>

#include "aff/rng.hpp"

namespace aff {

// ------------------------------------------------------------ QueryEncoder

QueryEncoder::QueryEncoder(std::size_t in_dim, std::size_t hidden, std::size_t out_dim,
                           std::uint64_t seed) {
    Rng rng = Rng::derive(seed, 2);
    fc1 = Linear(in_dim, hidden, true, rng, 1.0 / std::sqrt(double(in_dim)));
    fc2 = Linear(hidden, out_dim, true, rng, 1.0 / std::sqrt(double(hidden)));
}

Matrix QueryEncoder::forward(const Matrix& view) {
    return fc2.forward(gelu_.forward(fc1.forward(view)));
}

void QueryEncoder::backward(const Matrix& upstream) {
    fc1.backward(gelu_.backward(fc2.backward(upstream)));
}

Matrix QueryEncoder::embed(const Matrix& view) const {
    return l2_normalize(fc2.apply(gelu(fc1.apply(view))));
}

std::vector<ParamRef> QueryEncoder::params() {
    std::vector<ParamRef> out = fc1.params("enc.fc1");
    for (auto& p : fc2.params("enc.fc2")) out.push_back(p);
    return out;
}

void QueryEncoder::zero_grads() {
    fc1.zero_grads();
    fc2.zero_grads();
    gelu_.reset();
}

std::size_t QueryEncoder::param_count() const {
    return fc1.weight.size() + fc1.bias.size() + fc2.weight.size() + fc2.bias.size();
}

std::size_t param_count(std::vector<ParamRef> params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value->size();
    return n;
}

// -------------------------------------------------------------- TrainConfig

std::string train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::joint: return "joint";
        case TrainMode::two_stage: return "two-stage";
        case TrainMode::coupled: return "coupled";
    }
    return "joint";
}

TrainMode train_mode_from_name(const std::string& s) {
    if (s == "joint") return TrainMode::joint;
    if (s == "two-stage") return TrainMode::two_stage;
    if (s == "coupled") return TrainMode::coupled;
    throw ConfigError("unknown train mode '" + s + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("train: batch size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight decay must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("train: momentum alpha must be in [0, 1)");
    }
    if (!(scale > 0.0)) throw ConfigError("train: scale must be positive");
    if (!(margin >= 0.0 && margin < 1.5707963267948966)) {
        throw ConfigError("train: margin must be in [0, pi/2)");
    }
}

// ------------------------------------------------------------------ Trainer

Trainer::Trainer(std::unique_ptr<GalleryEncoder> gallery, const SynthDataset& dataset,
                 const TrainConfig& config)
    : dataset_(dataset), config_(config), gallery_(std::move(gallery)) {
    config_.validate();
    if (dataset_.train.empty()) throw SchemaError("train: dataset has no training split");

    int max_label = -1;
    for (const auto& item : dataset_.train) {
        if (item.bundle.label < 0) {
            throw SchemaError("train: item " + item.bundle.item_id + " has no label");
        }
        max_label = std::max(max_label, item.bundle.label);
    }
    num_classes_ = static_cast<std::size_t>(max_label) + 1;

    const std::size_t d = gallery_->out_dim();
    const std::size_t view_dim = dataset_.train.front().query_view.cols();
    encoder_ = QueryEncoder(view_dim, config_.encoder_hidden, d, config_.seed);

    Rng head_rng = Rng::derive(config_.seed, 3);
    mixer_head_.prototypes = head_rng.gaussian_matrix(num_classes_, d);
    mixer_head_.scale = config_.scale;
    mixer_head_.margin = config_.margin;
    // query head starts as a copy so the compatibility loss never chases a
    // transient at step 0
    query_head_ = mixer_head_;
    grad_mixer_head_ = Matrix(num_classes_, d);
}

void Trainer::step(const std::vector<const SynthItem*>& batch, double lr,
                   bool train_gallery, bool train_encoder, double* disc_out,
                   double* comp_out) {
    const double inv_b = 1.0 / double(batch.size());
    gallery_->zero_grads();
    encoder_.zero_grads();
    grad_mixer_head_ = Matrix(num_classes_, gallery_->out_dim());

    // alpha = 0 degenerates the momentum mechanism into a single live head
    // shared by both losses, the coupled configuration; alpha > 0 decouples
    // them through the EMA target
    const bool coupled = config_.mode == TrainMode::coupled || config_.momentum == 0.0;
    double disc_total = 0.0, comp_total = 0.0;

    for (const SynthItem* item : batch) {
        const auto label = static_cast<std::size_t>(item->bundle.label);

        if (train_gallery) {
            const Matrix g = gallery_->forward(item->bundle);
            const ArcFaceResult disc = arcface_loss(g, mixer_head_, label);
            disc_total += disc.loss;
            gallery_->backward(disc.d_feature * inv_b);
            grad_mixer_head_ += disc.d_prototypes * inv_b;
        } else {
            const Matrix g = gallery_->embed(item->bundle);
            disc_total += arcface_loss(g, mixer_head_, label).loss;
        }

        if (train_encoder) {
            const Matrix q = encoder_.forward(item->query_view);
            // the shared live head receives both losses' gradients; the
            // momentum head only ever feeds the encoder
            const ClassifierHead& target = coupled ? mixer_head_ : query_head_;
            const ArcFaceResult comp = arcface_loss(q, target, label);
            comp_total += comp.loss;
            encoder_.backward(comp.d_feature * inv_b);
            if (coupled && train_gallery) grad_mixer_head_ += comp.d_prototypes * inv_b;
        } else {
            const Matrix q = encoder_.embed(item->query_view);
            const ClassifierHead& target = coupled ? mixer_head_ : query_head_;
            comp_total += arcface_loss(q, target, label).loss;
        }
    }

    if (train_gallery) {
        sgd_step(gallery_->params(), lr, config_.weight_decay);
        ParamRef head{"mixer_head", &mixer_head_.prototypes, &grad_mixer_head_};
        sgd_step({head}, lr, config_.weight_decay);
    }
    if (train_encoder) {
        sgd_step(encoder_.params(), lr, config_.weight_decay);
    }
    if (config_.mode != TrainMode::coupled) {
        momentum_update(query_head_, mixer_head_, config_.momentum);
    }

    if (disc_out) *disc_out = disc_total * inv_b;
    if (comp_out) *comp_out = comp_total * inv_b;
}

void sgd_step(std::vector<ParamRef> params, double lr, double weight_decay) {
    const double keep = 1.0 - lr * weight_decay;
    for (auto& p : params) {
        Matrix& w = *p.value;
        const Matrix& g = *p.grad;
        for (std::size_t i = 0; i < w.size(); ++i) {
            w.at(i) = w.at(i) * keep - lr * g.at(i);
        }
    }
}

TrainReport Trainer::run() {
    const auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    report.seed = config_.seed;
    report.mode = train_mode_name(config_.mode);

    const bool two_stage = config_.mode == TrainMode::two_stage;
    const int phases = two_stage ? 2 : 1;
    const std::size_t items = dataset_.train.size();
    const std::size_t steps_per_epoch = (items + config_.batch_size - 1) / config_.batch_size;

    for (int phase = 0; phase < phases; ++phase) {
        const bool train_gallery = !two_stage || phase == 0;
        const bool train_encoder = !two_stage || phase == 1;
        const std::size_t total_steps = steps_per_epoch * std::size_t(config_.epochs);
        std::size_t step_index = 0;

        for (int epoch = 0; epoch < config_.epochs; ++epoch) {
            Rng shuffle_rng =
                Rng::derive(config_.seed, 100'000 + std::uint64_t(phase) * 50'000 +
                                              std::uint64_t(epoch));
            std::vector<const SynthItem*> order;
            order.reserve(items);
            for (const auto& item : dataset_.train) order.push_back(&item);
            shuffle_rng.shuffle(order);

            double disc_sum = 0.0, comp_sum = 0.0;
            std::size_t batches = 0;
            for (std::size_t off = 0; off < items; off += config_.batch_size) {
                const std::size_t end = std::min(items, off + config_.batch_size);
                std::vector<const SynthItem*> batch(order.begin() + off, order.begin() + end);
                // linear decay to zero over this phase's steps
                const double lr =
                    config_.lr * (1.0 - double(step_index) / double(total_steps));
                double disc = 0.0, comp = 0.0;
                step(batch, lr, train_gallery, train_encoder, &disc, &comp);
                disc_sum += disc;
                comp_sum += comp;
                ++step_index;
                ++batches;
            }
            const double disc_mean = disc_sum / double(batches);
            const double comp_mean = comp_sum / double(batches);
            if (!std::isfinite(disc_mean) || !std::isfinite(comp_mean)) {
                throw TrainingError("training diverged (non-finite loss)",
                                    phase * config_.epochs + epoch);
            }
            report.disc_loss.push_back(disc_mean);
            report.comp_loss.push_back(comp_mean);
        }
        report.steps += step_index;
    }

    // Deliver models in single precision: checkpoints store float32, so the
    // in-memory parameters are snapped to the stored representation once
    // training ends. Round-trips through disk are then lossless.
    for (auto& p : gallery_->params()) *p.value = quantize_to_float(*p.value);
    for (auto& p : encoder_.params()) *p.value = quantize_to_float(*p.value);
    mixer_head_.prototypes = quantize_to_float(mixer_head_.prototypes);
    query_head_.prototypes = quantize_to_float(query_head_.prototypes);

    report.epochs = static_cast<int>(report.disc_loss.size());
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

TrainReport train(const SynthDataset& ds, const MixerConfig& mixer_cfg,
                  const TrainConfig& train_cfg, const std::string& gallery_kind,
                  TrainedModels& out) {
    std::unique_ptr<GalleryEncoder> gallery;
    const BundleSchema schema = ds.schema();
    if (gallery_kind == "transformer") {
        gallery = std::make_unique<DynamicMixer>(schema, mixer_cfg, train_cfg.seed);
    } else if (gallery_kind == "mlp") {
        gallery = std::make_unique<BaselineMixer>(schema, mixer_cfg.d, mixer_cfg.hidden(),
                                                  train_cfg.seed);
    } else {
        throw ConfigError("unknown gallery kind '" + gallery_kind + "'");
    }

    Trainer trainer(std::move(gallery), ds, train_cfg);
    TrainReport report = trainer.run();

    out.encoder = trainer.encoder();
    out.mixer_head = trainer.mixer_head();
    out.query_head = trainer.query_head();
    // Trainer owns its gallery model; clone the concrete type out.
    out.gallery = nullptr;
    if (auto* mixer = dynamic_cast<DynamicMixer*>(&trainer.gallery())) {
        out.gallery = std::make_unique<DynamicMixer>(*mixer);
    } else if (auto* mlp = dynamic_cast<BaselineMixer*>(&trainer.gallery())) {
        out.gallery = std::make_unique<BaselineMixer>(*mlp);
    }
    return report;
}

}  // namespace aff

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aff/config.hpp"
#include "aff/io.hpp"
#include "aff/retrieval.hpp"

namespace aff {

inline constexpr const char* kToolVersion = "aff 1.0.0";

// Canonical serializations. Reports are byte-stable across runs for fixed
// seeds; wall-clock timing is only ever written into manifests.
std::string eval_report_json(const EvalReport& report);
std::string eval_report_csv(const EvalReport& report);
std::string train_report_json(const TrainReport& report);

// --------------------------------------------------------------- commands

struct GenDataResult {
    std::uint32_t checksum = 0;
    std::string out_dir;
};
GenDataResult run_gen_data(const AppConfig& cfg, const std::string& out_dir);

struct TrainResult {
    TrainReport report;
    std::string gallery_ckpt;
    std::string encoder_ckpt;
    std::string report_path;
};
TrainResult run_train(const AppConfig& cfg, const std::string& data_dir,
                      const std::string& out_dir);

struct EvalResult {
    EvalReport report;
    std::string report_path;
    std::string csv_path;
};
EvalResult run_eval(Protocol protocol, const std::string& data_dir,
                    const std::string& models_dir, const std::string& out_path,
                    std::size_t truncate);

void run_embed(const std::string& model_path, const std::string& data_dir,
               const std::string& side, const std::string& out_path);

// --------------------------------------------------------------- ablations

// One seed-averaged measurement: study row x metric.
struct AblateCell {
    std::string row;
    std::string metric;
    double mean = 0.0;
    double stdev = 0.0;
    std::vector<double> values;  // one per seed
};

struct AblateResult {
    std::string study;
    std::vector<AblateCell> cells;

    const AblateCell& cell(const std::string& row, const std::string& metric) const;
    std::string csv() const;
};

// study in {mixer-variants, feature-combos, noise, momentum, train-mode,
// decoupling}. Runs `seeds` independent seeds (offsets of the configured
// seeds) and honors AFF_THREADS for parallel seed evaluation.
AblateResult run_ablate(const std::string& study, int seeds, const AppConfig& base);

std::vector<std::string> ablate_study_names();

// In-process end-to-end convenience used by tests: generate, train, and
// report mAP under one protocol.
double quick_map(const AppConfig& cfg, Protocol protocol, std::uint64_t seed_offset = 0);

}  // namespace aff

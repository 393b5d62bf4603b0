#include "aff/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace aff {

namespace fs = std::filesystem;
using nlohmann::json;

// ----------------------------------------------------------------- reports

std::string eval_report_json(const EvalReport& report) {
    json per_query = json::array();
    for (std::size_t i = 0; i < report.query_ids.size(); ++i) {
        json entry;
        entry["id"] = report.query_ids[i];
        if (report.per_query_ap[i] < 0.0) {
            entry["skipped"] = true;
        } else {
            entry["ap"] = report.per_query_ap[i];
        }
        per_query.push_back(entry);
    }
    json j;
    j["protocol"] = report.protocol;
    j["query_model"] = report.query_model;
    j["gallery_model"] = report.gallery_model;
    j["map"] = report.map;
    j["skipped_queries"] = report.skipped_queries;
    j["per_query"] = per_query;
    return j.dump(2) + "\n";
}

std::string eval_report_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "query_id,ap\n";
    out.precision(17);
    for (std::size_t i = 0; i < report.query_ids.size(); ++i) {
        out << report.query_ids[i] << ",";
        if (report.per_query_ap[i] < 0.0) {
            out << "skipped";
        } else {
            out << report.per_query_ap[i];
        }
        out << "\n";
    }
    return out.str();
}

std::string train_report_json(const TrainReport& report) {
    json j;
    j["mode"] = report.mode;
    j["seed"] = report.seed;
    j["epochs"] = report.epochs;
    j["steps"] = report.steps;
    j["disc_loss"] = report.disc_loss;
    j["comp_loss"] = report.comp_loss;
    return j.dump(2) + "\n";
}

namespace {

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_manifest(const std::string& path, json extra) {
    extra["tool_version"] = kToolVersion;
    extra["created_utc"] = timestamp_utc();
    write_text_file(path, extra.dump(2) + "\n");
}

std::size_t worker_threads(std::size_t tasks) {
    std::size_t n = 1;
    if (const char* env = std::getenv("AFF_THREADS")) {
        const long v = std::atol(env);
        if (v > 0) n = static_cast<std::size_t>(v);
    }
    return std::min(n, std::max<std::size_t>(1, tasks));
}

void run_tasks(std::vector<std::function<void()>> tasks) {
    const std::size_t threads = worker_threads(tasks.size());
    if (threads <= 1) {
        for (auto& t : tasks) t();
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= tasks.size()) return;
                try {
                    tasks[i]();
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

// ---------------------------------------------------------------- commands

GenDataResult run_gen_data(const AppConfig& cfg, const std::string& out_dir) {
    const SynthDataset ds = generate(cfg.gen);
    const std::uint32_t checksum = write_dataset(ds, out_dir);

    json m;
    m["command"] = "gen-data";
    m["dataset_checksum"] = checksum;
    m["seed"] = cfg.gen.seed;
    m["config"] = dump_config(cfg);
    m["artifacts"] = {"train.aff", "train_views.aff", "gallery.aff", "query.aff",
                      "query_views.aff"};
    write_manifest((fs::path(out_dir) / "manifest.json").string(), m);

    return {checksum, out_dir};
}

TrainResult run_train(const AppConfig& cfg, const std::string& data_dir,
                      const std::string& out_dir) {
    const SynthDataset ds = read_dataset(data_dir);
    fs::create_directories(out_dir);

    TrainedModels models;
    const TrainReport report = train(ds, cfg.mixer, cfg.train, cfg.gallery_kind, models);

    TrainResult result;
    result.report = report;
    result.gallery_ckpt = (fs::path(out_dir) / "mixer.ckpt").string();
    result.encoder_ckpt = (fs::path(out_dir) / "encoder.ckpt").string();
    result.report_path = (fs::path(out_dir) / "train_report.json").string();

    save_checkpoint(checkpoint_of_gallery(*models.gallery, models.mixer_head),
                    result.gallery_ckpt);
    save_checkpoint(checkpoint_of_encoder(models.encoder, models.query_head),
                    result.encoder_ckpt);
    write_text_file(result.report_path, train_report_json(report));

    json m;
    m["command"] = "train";
    m["seed"] = cfg.train.seed;
    m["mode"] = report.mode;
    m["wall_seconds"] = report.wall_seconds;
    m["dataset_checksum"] = ds.checksum();
    m["config"] = dump_config(cfg);
    m["artifacts"] = {"mixer.ckpt", "encoder.ckpt", "train_report.json"};
    write_manifest((fs::path(out_dir) / "manifest.json").string(), m);
    return result;
}

EvalResult run_eval(Protocol protocol, const std::string& data_dir,
                    const std::string& models_dir, const std::string& out_path,
                    std::size_t truncate) {
    const SynthDataset ds = read_dataset(data_dir);

    std::unique_ptr<GalleryEncoder> gallery;
    QueryEncoder encoder;
    bool have_encoder = false;

    if (protocol != Protocol::ensemble) {
        const fs::path gallery_path = fs::path(models_dir) / "mixer.ckpt";
        if (!fs::exists(gallery_path)) {
            throw ConfigError("missing gallery model " + gallery_path.string());
        }
        gallery = gallery_from_checkpoint(load_checkpoint(gallery_path.string()));
        if (protocol == Protocol::asymmetric) {
            const fs::path enc_path = fs::path(models_dir) / "encoder.ckpt";
            if (!fs::exists(enc_path)) {
                throw ConfigError("missing query encoder " + enc_path.string());
            }
            encoder = encoder_from_checkpoint(load_checkpoint(enc_path.string()));
            have_encoder = true;
        }
    }

    const EvalReport report = evaluate_protocol(protocol, ds, gallery.get(),
                                                have_encoder ? &encoder : nullptr, truncate);

    EvalResult result;
    result.report = report;
    result.report_path = out_path;
    std::string stem = out_path;
    const std::string suffix = ".json";
    if (stem.size() > suffix.size() &&
        stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0) {
        stem.resize(stem.size() - suffix.size());
    }
    result.csv_path = stem + ".per_query.csv";

    write_text_file(result.report_path, eval_report_json(report));
    write_text_file(result.csv_path, eval_report_csv(report));

    json m;
    m["command"] = "eval";
    m["protocol"] = report.protocol;
    m["timing"] = {{"index_build_seconds", report.index_build_seconds},
                   {"mean_query_seconds", report.mean_query_seconds}};
    m["dataset_checksum"] = ds.checksum();
    write_manifest(stem + ".manifest.json", m);
    return result;
}

void run_embed(const std::string& model_path, const std::string& data_dir,
               const std::string& side, const std::string& out_path) {
    if (side != "query" && side != "gallery") {
        throw ConfigError("embed: side must be 'query' or 'gallery'");
    }
    const SynthDataset ds = read_dataset(data_dir);
    const Checkpoint ckpt = load_checkpoint(model_path);

    const std::vector<SynthItem>& items = side == "query" ? ds.query : ds.gallery;
    std::vector<FeatureBundle> out_bundles;
    std::size_t dim = 0;

    if (ckpt.kind == "encoder") {
        if (side != "query") {
            throw ConfigError("embed: the query encoder cannot embed the gallery side");
        }
        const QueryEncoder enc = encoder_from_checkpoint(ckpt);
        dim = enc.out_dim();
        for (const auto& item : items) {
            FeatureBundle b;
            b.item_id = item.bundle.item_id;
            b.label = item.bundle.label;
            b.globals.push_back(enc.embed(item.query_view));
            out_bundles.push_back(std::move(b));
        }
    } else {
        const auto gallery = gallery_from_checkpoint(ckpt);
        dim = gallery->out_dim();
        for (const auto& item : items) {
            FeatureBundle b;
            b.item_id = item.bundle.item_id;
            b.label = item.bundle.label;
            b.globals.push_back(gallery->embed(item.bundle));
            out_bundles.push_back(std::move(b));
        }
    }

    const std::vector<FamilyDescriptor> fam{
        {FamilyKind::global, static_cast<std::uint32_t>(dim), 1}};
    write_features(out_bundles, fam, out_path);
}

// --------------------------------------------------------------- ablations

const AblateCell& AblateResult::cell(const std::string& row, const std::string& metric) const {
    for (const auto& c : cells) {
        if (c.row == row && c.metric == metric) return c;
    }
    throw SchemaError("ablation '" + study + "' has no cell " + row + "/" + metric);
}

std::string AblateResult::csv() const {
    std::ostringstream out;
    out << "study,row,metric,mean,stdev,seeds\n";
    out.precision(17);
    for (const auto& c : cells) {
        out << study << "," << c.row << "," << c.metric << "," << c.mean << "," << c.stdev
            << "," << c.values.size() << "\n";
    }
    return out.str();
}

std::vector<std::string> ablate_study_names() {
    return {"mixer-variants", "feature-combos", "noise", "momentum", "train-mode",
            "decoupling"};
}

namespace {

struct SeedRun {
    AppConfig cfg;
    std::uint64_t offset;
};

AppConfig offset_seeds(AppConfig cfg, std::uint64_t offset) {
    cfg.gen.seed += offset;
    cfg.train.seed += offset;
    return cfg;
}

// metric name -> per-seed values, assembled in fixed row order
class StudyTable {
public:
    explicit StudyTable(std::string study, int seeds) : seeds_(seeds) {
        result_.study = std::move(study);
    }

    // Registers a cell and returns its storage index.
    std::size_t add(const std::string& row, const std::string& metric) {
        AblateCell c;
        c.row = row;
        c.metric = metric;
        c.values.assign(std::size_t(seeds_), 0.0);
        result_.cells.push_back(std::move(c));
        return result_.cells.size() - 1;
    }

    void set(std::size_t cell, int seed, double value) {
        result_.cells[cell].values[std::size_t(seed)] = value;
    }

    AblateResult finish() {
        for (auto& c : result_.cells) {
            double mean = 0.0;
            for (double v : c.values) mean += v;
            mean /= double(c.values.size());
            double var = 0.0;
            for (double v : c.values) var += (v - mean) * (v - mean);
            c.mean = mean;
            c.stdev = c.values.size() > 1 ? std::sqrt(var / double(c.values.size() - 1)) : 0.0;
        }
        return std::move(result_);
    }

private:
    AblateResult result_;
    int seeds_;
};

struct TrainedEval {
    double symmetric = 0.0;
    double asymmetric = 0.0;
};

TrainedEval train_and_eval(const SynthDataset& ds, const AppConfig& cfg,
                           const std::string& gallery_kind) {
    TrainedModels models;
    train(ds, cfg.mixer, cfg.train, gallery_kind, models);
    TrainedEval out;
    out.symmetric =
        evaluate_protocol(Protocol::symmetric, ds, models.gallery.get(), nullptr).map;
    out.asymmetric =
        evaluate_protocol(Protocol::asymmetric, ds, models.gallery.get(), &models.encoder)
            .map;
    return out;
}

double ensemble_map(const SynthDataset& ds) {
    return evaluate_protocol(Protocol::ensemble, ds, nullptr, nullptr).map;
}

}  // namespace

AblateResult run_ablate(const std::string& study, int seeds, const AppConfig& base) {
    if (seeds < 1) throw ConfigError("ablate: seeds must be >= 1");
    StudyTable table(study, seeds);
    std::vector<std::function<void(int, const AppConfig&)>> per_seed;

    if (study == "momentum") {
        const std::vector<double> alphas{0.0, 0.5, 0.9, 0.99, 0.999};
        std::vector<std::size_t> cells;
        for (double a : alphas) {
            std::ostringstream name;
            name << "alpha=" << a;
            cells.push_back(table.add(name.str(), "asymmetric_map"));
        }
        per_seed.push_back([&, cells, alphas](int seed, const AppConfig& cfg) {
            const SynthDataset ds = generate(cfg.gen);
            for (std::size_t i = 0; i < alphas.size(); ++i) {
                AppConfig c = cfg;
                c.train.momentum = alphas[i];
                table.set(cells[i], seed, train_and_eval(ds, c, c.gallery_kind).asymmetric);
            }
        });
    } else if (study == "mixer-variants") {
        const std::size_t mlp_sym = table.add("mlp", "symmetric_map");
        const std::size_t mlp_asym = table.add("mlp", "asymmetric_map");
        const std::size_t tr_sym = table.add("transformer", "symmetric_map");
        const std::size_t tr_asym = table.add("transformer", "asymmetric_map");
        const std::size_t un_sym = table.add("transformer-unshared", "symmetric_map");
        const std::size_t un_asym = table.add("transformer-unshared", "asymmetric_map");
        per_seed.push_back([&, mlp_sym, mlp_asym, tr_sym, tr_asym, un_sym,
                            un_asym](int seed, const AppConfig& cfg) {
            const SynthDataset ds = generate(cfg.gen);
            const TrainedEval mlp = train_and_eval(ds, cfg, "mlp");
            table.set(mlp_sym, seed, mlp.symmetric);
            table.set(mlp_asym, seed, mlp.asymmetric);
            const TrainedEval tr = train_and_eval(ds, cfg, "transformer");
            table.set(tr_sym, seed, tr.symmetric);
            table.set(tr_asym, seed, tr.asymmetric);
            AppConfig unshared = cfg;
            unshared.mixer.shared_weights = false;
            const TrainedEval un = train_and_eval(ds, unshared, "transformer");
            table.set(un_sym, seed, un.symmetric);
            table.set(un_asym, seed, un.asymmetric);
        });
    } else if (study == "feature-combos") {
        // single raw families, leave-one-out mixers, and the full mixer
        const std::size_t n_fam = base.gen.families.size();
        std::vector<std::size_t> single_cells, drop_cells;
        for (std::size_t i = 0; i < n_fam; ++i) {
            const auto& f = base.gen.families[i];
            single_cells.push_back(table.add(
                "single:" + family_kind_name(f.kind) + std::to_string(i), "symmetric_map"));
        }
        for (std::size_t i = 0; i < n_fam; ++i) {
            drop_cells.push_back(table.add("mixer:drop" + std::to_string(i), "symmetric_map"));
        }
        const std::size_t all_cell = table.add("mixer:all", "symmetric_map");
        per_seed.push_back([&, single_cells, drop_cells, all_cell, n_fam](
                               int seed, const AppConfig& cfg) {
            const SynthDataset ds = generate(cfg.gen);
            std::size_t gslot = 0, lslot = 0;
            for (std::size_t i = 0; i < n_fam; ++i) {
                const auto& f = cfg.gen.families[i];
                const std::size_t slot = f.kind == FamilyKind::local ? lslot++ : gslot++;
                table.set(single_cells[i], seed, single_family_map(ds, f.kind, slot));
            }
            for (std::size_t i = 0; i < n_fam; ++i) {
                AppConfig dropped = cfg;
                dropped.gen.families.erase(dropped.gen.families.begin() + long(i));
                const SynthDataset ds_drop = generate(dropped.gen);
                table.set(drop_cells[i], seed,
                          train_and_eval(ds_drop, dropped, dropped.gallery_kind).symmetric);
            }
            table.set(all_cell, seed, train_and_eval(ds, cfg, cfg.gallery_kind).symmetric);
        });
    } else if (study == "noise") {
        struct Row {
            const char* name;
            bool weak;
            bool noisy;
        };
        const std::vector<Row> rows{{"default", false, false},
                                    {"weak", true, false},
                                    {"noisy", false, true},
                                    {"weak+noisy", true, true}};
        std::vector<std::size_t> ens_cells, mix_cells;
        for (const auto& r : rows) {
            ens_cells.push_back(table.add(std::string(r.name) + ":ensemble", "symmetric_map"));
            mix_cells.push_back(table.add(std::string(r.name) + ":mixer", "symmetric_map"));
        }
        per_seed.push_back([&, rows, ens_cells, mix_cells](int seed, const AppConfig& cfg) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                AppConfig c = cfg;
                if (rows[i].weak) {
                    for (const auto& f : weak_family_bank()) c.gen.families.push_back(f);
                }
                SynthDataset ds = generate(c.gen);
                if (rows[i].noisy) {
                    ds = inject_noise_families(ds, 2, 32, 1.0);
                }
                table.set(ens_cells[i], seed, ensemble_map(ds));
                table.set(mix_cells[i], seed,
                          train_and_eval(ds, c, c.gallery_kind).symmetric);
            }
        });
    } else if (study == "train-mode") {
        const std::size_t joint_asym = table.add("joint", "asymmetric_map");
        const std::size_t joint_sym = table.add("joint", "symmetric_map");
        const std::size_t two_asym = table.add("two-stage", "asymmetric_map");
        const std::size_t two_sym = table.add("two-stage", "symmetric_map");
        per_seed.push_back([&, joint_asym, joint_sym, two_asym,
                            two_sym](int seed, const AppConfig& cfg) {
            const SynthDataset ds = generate(cfg.gen);
            AppConfig joint = cfg;
            joint.train.mode = TrainMode::joint;
            const TrainedEval j = train_and_eval(ds, joint, joint.gallery_kind);
            table.set(joint_asym, seed, j.asymmetric);
            table.set(joint_sym, seed, j.symmetric);
            AppConfig two = cfg;
            two.train.mode = TrainMode::two_stage;
            const TrainedEval t = train_and_eval(ds, two, two.gallery_kind);
            table.set(two_asym, seed, t.asymmetric);
            table.set(two_sym, seed, t.symmetric);
        });
    } else if (study == "decoupling") {
        const std::size_t dec = table.add("decoupled", "asymmetric_map");
        const std::size_t cpl = table.add("coupled", "asymmetric_map");
        per_seed.push_back([&, dec, cpl](int seed, const AppConfig& cfg) {
            const SynthDataset ds = generate(cfg.gen);
            AppConfig decoupled = cfg;
            decoupled.train.mode = TrainMode::joint;
            table.set(dec, seed, train_and_eval(ds, decoupled, decoupled.gallery_kind).asymmetric);
            AppConfig coupled = cfg;
            coupled.train.mode = TrainMode::coupled;
            table.set(cpl, seed, train_and_eval(ds, coupled, coupled.gallery_kind).asymmetric);
        });
    } else {
        throw ConfigError("unknown ablation study '" + study + "'");
    }

    std::vector<std::function<void()>> tasks;
    for (int seed = 0; seed < seeds; ++seed) {
        const AppConfig cfg = offset_seeds(base, std::uint64_t(seed));
        tasks.push_back([&, seed, cfg] {
            for (const auto& fn : per_seed) fn(seed, cfg);
        });
    }
    run_tasks(std::move(tasks));
    return table.finish();
}

double quick_map(const AppConfig& cfg, Protocol protocol, std::uint64_t seed_offset) {
    const AppConfig c = offset_seeds(cfg, seed_offset);
    const SynthDataset ds = generate(c.gen);
    if (protocol == Protocol::ensemble) return ensemble_map(ds);
    const TrainedEval r = train_and_eval(ds, c, c.gallery_kind);
    return protocol == Protocol::symmetric ? r.symmetric : r.asymmetric;
}

}  // namespace aff

// Command-line front end: dataset generation, training, embedding
// extraction, evaluation and scripted ablation studies. Exit codes: 0 on
// success, 1 on runtime/training failures, 2 on usage or config errors.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "aff/pipeline.hpp"

namespace {

aff::AppConfig load_or_default(const std::string& config_path) {
    if (config_path.empty()) return aff::AppConfig{};
    return aff::load_config_file(config_path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"asymmetric feature fusion toolkit"};
    app.require_subcommand(1);

    // config
    auto* config_cmd = app.add_subcommand("config", "configuration helpers");
    config_cmd->require_subcommand(1);
    auto* dump_cmd = config_cmd->add_subcommand("dump-defaults", "print the default config");

    // gen-data
    std::string gen_config, gen_out;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen_cmd->add_option("--config", gen_config, "config file (TOML)");
    gen_cmd->add_option("--out", gen_out, "output directory")->required();

    // train
    std::string train_config, train_data, train_out, train_mode;
    auto* train_cmd = app.add_subcommand("train", "train mixer and query encoder");
    train_cmd->add_option("--config", train_config, "config file (TOML)");
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--mode", train_mode, "joint|two-stage|coupled")
        ->check(CLI::IsMember({"joint", "two-stage", "coupled"}));

    // embed
    std::string embed_model, embed_data, embed_side, embed_out;
    auto* embed_cmd = app.add_subcommand("embed", "extract embeddings to a feature file");
    embed_cmd->add_option("--model", embed_model, "checkpoint path")->required();
    embed_cmd->add_option("--data", embed_data, "dataset directory")->required();
    embed_cmd->add_option("--side", embed_side, "query|gallery")
        ->required()
        ->check(CLI::IsMember({"query", "gallery"}));
    embed_cmd->add_option("--out", embed_out, "output feature file")->required();

    // eval
    std::string eval_protocol, eval_data, eval_models, eval_out;
    std::size_t eval_truncate = 0;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a retrieval protocol");
    eval_cmd->add_option("--protocol", eval_protocol, "symmetric|asymmetric|ensemble")
        ->required()
        ->check(CLI::IsMember({"symmetric", "asymmetric", "ensemble"}));
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--models", eval_models, "models directory");
    eval_cmd->add_option("--out", eval_out, "report JSON path")->required();
    eval_cmd->add_option("--truncate", eval_truncate, "score only the top-k ranks (0 = full)");

    // ablate
    std::string ablate_study, ablate_config, ablate_out;
    int ablate_seeds = 5;
    auto* ablate_cmd = app.add_subcommand("ablate", "run a scripted ablation study");
    ablate_cmd->add_option("study", ablate_study, "study name")
        ->required()
        ->check(CLI::IsMember(aff::ablate_study_names()));
    ablate_cmd->add_option("--seeds", ablate_seeds, "number of seeds");
    ablate_cmd->add_option("--config", ablate_config, "config file (TOML)");
    ablate_cmd->add_option("--out", ablate_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (dump_cmd->parsed()) {
            std::cout << aff::dump_config(aff::AppConfig{});
            return 0;
        }
        if (gen_cmd->parsed()) {
            const auto cfg = load_or_default(gen_config);
            const auto result = aff::run_gen_data(cfg, gen_out);
            std::cout << "dataset checksum: " << result.checksum << "\n";
            return 0;
        }
        if (train_cmd->parsed()) {
            auto cfg = load_or_default(train_config);
            if (!train_mode.empty()) cfg.train.mode = aff::train_mode_from_name(train_mode);
            const auto result = aff::run_train(cfg, train_data, train_out);
            std::cout << "trained " << result.report.epochs << " epochs, final losses "
                      << result.report.disc_loss.back() << " / "
                      << result.report.comp_loss.back() << "\n";
            return 0;
        }
        if (embed_cmd->parsed()) {
            aff::run_embed(embed_model, embed_data, embed_side, embed_out);
            std::cout << "wrote " << embed_out << "\n";
            return 0;
        }
        if (eval_cmd->parsed()) {
            const auto result = aff::run_eval(aff::protocol_from_name(eval_protocol),
                                              eval_data, eval_models, eval_out, eval_truncate);
            std::cout << result.report.protocol << " mAP: " << result.report.map << "\n";
            return 0;
        }
        if (ablate_cmd->parsed()) {
            const auto cfg = load_or_default(ablate_config);
            const auto result = aff::run_ablate(ablate_study, ablate_seeds, cfg);
            std::filesystem::create_directories(ablate_out);
            const auto csv_path =
                (std::filesystem::path(ablate_out) / (ablate_study + ".csv")).string();
            aff::write_text_file(csv_path, result.csv());
            std::cout << result.csv();
            std::cout << "wrote " << csv_path << "\n";
            return 0;
        }
    } catch (const aff::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const aff::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

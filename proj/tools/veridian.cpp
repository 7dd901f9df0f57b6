// veridian: train, evaluate and apply the fake-review ensemble.
//
// Exit codes: 0 success, 1 configuration/usage error, 2 data or artifact
// error, 3 training failure (diverged loss, no usable member).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "veridian/data_ingest.hpp"
#include "veridian/error.hpp"
#include "veridian/log.hpp"
#include "veridian/pipeline.hpp"

namespace {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kTrainingError = 3 };

int exit_code_for(veridian::ErrorCode code) {
    using veridian::ErrorCode;
    switch (code) {
    case ErrorCode::BadConfig: return kConfigError;
    case ErrorCode::DivergedLoss:
    case ErrorCode::AllZeroAccuracies: return kTrainingError;
    default: return kDataError;
    }
}

int fail(std::string_view command, int code, std::string_view message) {
    std::cerr << "veridian " << command << ": " << message << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
    veridian::log::set_level(veridian::log::level_from_env());

    CLI::App app{"Fake review detection with a weighted transformer ensemble"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "Override the run seed");

    std::filesystem::path config_path;
    auto* train_cmd = app.add_subcommand("train", "Train all members and fit ensemble weights");
    train_cmd->add_option("--config", config_path, "Run configuration file")->required();

    std::filesystem::path model_dir;
    std::filesystem::path data_path;
    std::string format = "csv";
    std::string split = "all";
    std::filesystem::path metrics_out;
    auto* eval_cmd = app.add_subcommand("eval", "Score members and the ensemble on labeled data");
    eval_cmd->add_option("--model-dir", model_dir, "Directory written by train")->required();
    eval_cmd->add_option("--data", data_path, "Labeled dataset")->required();
    eval_cmd->add_option("--format", format, "csv or tsv")->check(CLI::IsMember({"csv", "tsv"}));
    eval_cmd->add_option("--split", split, "all rows, or the held-out test split of the run")
        ->check(CLI::IsMember({"all", "test"}));
    eval_cmd->add_option("--metrics-out", metrics_out, "Also write model,acc,p,r,f1,n lines here");

    std::string text;
    auto* predict_cmd = app.add_subcommand("predict", "Classify one review");
    predict_cmd->add_option("--model-dir", model_dir, "Directory written by train")->required();
    predict_cmd->add_option("--text", text, "Review text")->required();

    auto* stats_cmd = app.add_subcommand("stats", "Per-domain corpus statistics");
    stats_cmd->add_option("--data", data_path, "Dataset")->required();
    stats_cmd->add_option("--format", format, "csv or tsv")->check(CLI::IsMember({"csv", "tsv"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        if (train_cmd->parsed()) {
            veridian::RunConfig cfg;
            try {
                cfg = veridian::load_run_config(config_path);
                if (seed) {
                    cfg.reseed(*seed);
                }
            } catch (const veridian::Error& e) {
                return fail(command, kConfigError, fmt::format("config: {}", e.what()));
            }
            const auto outcome = veridian::run_train(cfg);
            for (std::size_t i = 0; i < outcome.members.size(); ++i) {
                const auto& m = outcome.members[i];
                std::cout << fmt::format("{}: best_epoch={} epochs={} val_acc={:.4f} weight={:.6f}\n",
                                         m.name, m.history.best_epoch, m.history.epochs.size(),
                                         m.validation.accuracy, outcome.weights.weights[i]);
            }
            std::cout << "artifacts written to " << cfg.output_dir.string() << '\n';
        } else if (eval_cmd->parsed()) {
            const auto outcome = veridian::run_eval(
                model_dir, data_path, veridian::parse_format(format),
                split == "test" ? veridian::EvalSplit::test : veridian::EvalSplit::all);
            std::cout << veridian::render_report_table(outcome.rows);
            std::string lines = "model,acc,p,r,f1,n\n";
            for (const auto& row : outcome.rows) {
                lines += row.name + "," + veridian::render_report_line(row.report) + "\n";
            }
            std::cout << '\n' << lines;
            if (!metrics_out.empty()) {
                std::ofstream out(metrics_out, std::ios::binary);
                if (!out) {
                    return fail(command, kDataError, "cannot write " + metrics_out.string());
                }
                out << lines;
            }
        } else if (predict_cmd->parsed()) {
            std::cout << veridian::format_prediction(veridian::run_predict(model_dir, text)) << '\n';
        } else if (stats_cmd->parsed()) {
            const auto ds = veridian::load_dataset(data_path, veridian::parse_format(format));
            std::cout << veridian::render_stats_table(veridian::dataset_stats(ds));
        }
    } catch (const veridian::Error& e) {
        return fail(command, exit_code_for(e.code()), e.what());
    } catch (const std::exception& e) {
        return fail(command, kDataError, e.what());
    }
    return kOk;
}

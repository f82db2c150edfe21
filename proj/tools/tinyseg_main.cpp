#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tinyseg/errors.hpp"
#include "tinyseg/plot.hpp"
#include "tinyseg/synth.hpp"
#include "tinyseg/trainer.hpp"

namespace {

// Exit codes: 0 success, 2 config error, 3 data error, 4 diverged loss.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

int run_train(const std::string& config_path, const std::string& resume) {
    const tinyseg::TrainConfig cfg = tinyseg::load_train_config(config_path);
    const tinyseg::TrainResult result = tinyseg::train(cfg, resume);
    std::cout << "trained " << result.epochs_run << " epoch(s)\n"
              << "final checkpoint: " << result.final_checkpoint << "\n";
    if (!result.best_checkpoint.empty()) {
        std::printf("best checkpoint:  %s (val dice %.4f)\n", result.best_checkpoint.c_str(),
                    result.best_val_dice);
    }
    std::cout << "metrics: " << result.metrics_csv << "\n";
    return 0;
}

int run_evaluate(const std::string& checkpoint, const std::string& manifest,
                 const std::string& dice_mode, const std::string& report) {
    const tinyseg::DiceMode mode = dice_mode == "paper-literal"
                                       ? tinyseg::DiceMode::paper_literal
                                       : tinyseg::DiceMode::standard;
    const tinyseg::EvalReport rep = tinyseg::evaluate(checkpoint, manifest, mode, report);
    for (const auto& row : rep.rows) std::printf("%s,%.6f\n", row.image.c_str(), row.dice);
    std::printf("mean_dice=%.6f count=%zu\n", rep.mean_dice, rep.rows.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"From-scratch UNet binary segmentation: train, predict, evaluate"};
    app.require_subcommand(1);

    std::string config_path, resume;
    auto* train = app.add_subcommand("train", "Train a model from a JSON config");
    train->add_option("--config", config_path, "JSON config file")->required();
    train->add_option("--resume", resume, "Checkpoint to resume from");

    std::string ckpt, input, output;
    double threshold = 0.5;
    auto* predict = app.add_subcommand("predict", "Predict a binary mask for one image");
    predict->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    predict->add_option("--input", input, "Input image (PNG/TIFF)")->required();
    predict->add_option("--output", output, "Output mask PNG")->required();
    predict->add_option("--threshold", threshold, "Probability threshold (default 0.5)");

    std::string eval_ckpt, manifest, dice_mode = "standard", report;
    auto* evaluate = app.add_subcommand("evaluate", "Mean Dice over a manifest of pairs");
    evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    evaluate->add_option("--manifest", manifest, "Manifest of image<TAB>mask lines")->required();
    evaluate->add_option("--dice-mode", dice_mode, "standard or paper-literal")
        ->check(CLI::IsMember({"standard", "paper-literal"}));
    evaluate->add_option("--report", report, "Write per-image Dice CSV here");

    std::string metrics_csv, plot_out;
    auto* plot = app.add_subcommand("plot-loss", "Render train/val loss curves to an image");
    plot->add_option("--metrics", metrics_csv, "metrics.csv from a training run")->required();
    plot->add_option("--output", plot_out, "Output image (PNG or PGM)")->required();

    std::string synth_dir;
    int synth_count = 250, synth_size = 64;
    std::uint64_t synth_seed = 7;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic circles dataset");
    synth->add_option("--output", synth_dir, "Output dataset directory")->required();
    synth->add_option("--count", synth_count, "Number of image/mask pairs");
    synth->add_option("--size", synth_size, "Image size in pixels");
    synth->add_option("--seed", synth_seed, "Generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*train) return run_train(config_path, resume);
        if (*predict) {
            tinyseg::predict_mask(ckpt, input, output, threshold);
            std::cout << "wrote " << output << "\n";
            return 0;
        }
        if (*evaluate) return run_evaluate(eval_ckpt, manifest, dice_mode, report);
        if (*plot) {
            tinyseg::emit_loss_curve(metrics_csv, plot_out);
            std::cout << "wrote " << plot_out << "\n";
            return 0;
        }
        if (*synth) {
            tinyseg::write_shapes_dataset(synth_dir, synth_count, synth_size, synth_seed);
            std::cout << "wrote " << synth_count << " pairs under " << synth_dir << "\n";
            return 0;
        }
    } catch (const tinyseg::DivergedLoss& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const tinyseg::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const tinyseg::InvalidConfig& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const tinyseg::DepthTooDeep& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const tinyseg::NegativeGamma& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}

#include <CLI11.hpp>

#include "andt/cli.hpp"

// Flag parsing only; all behavior lives in andt/cli.hpp.

int main(int argc, char** argv) {
    CLI::App app{"tubelet-transformer video anomaly detection"};
    app.require_subcommand(1);

    andt::SynthOptions synth;
    CLI::App* synth_cmd =
        app.add_subcommand("synth", "generate a synthetic moving-dot dataset");
    synth_cmd->add_option("--out", synth.out, "dataset root to create")->required();
    synth_cmd->add_option("--frames", synth.frames, "frames per video")
        ->capture_default_str();
    synth_cmd
        ->add_option("--anomaly-spans", synth.anomaly_spans,
                     "reversed-motion spans in the test split, e.g. 30-60,80-90; "
                     "empty for none")
        ->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "base random seed")->capture_default_str();

    andt::TrainOptions train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model on the train split");
    train_cmd->add_option("--config", train.config_path, "run-config JSON file")->required();
    train_cmd->add_option("--data", train.data, "dataset root (overrides config)");
    train_cmd->add_option("--out", train.out, "output directory (overrides config)");

    andt::EvalOptions eval;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "score the test split and write the report");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval.data, "dataset root")->required();
    eval_cmd->add_option("--out", eval.out, "output directory")->required();
    eval_cmd->add_option("--mode", eval.mode,
                         "scoring mode (default: the checkpoint's training mode)");
    eval_cmd->add_flag("--per-video-auc", eval.per_video_auc,
                       "add a per-video breakdown to the report");

    andt::GradcheckOptions gradcheck;
    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of every gradient");
    gradcheck_cmd->add_flag("--tiny-config", gradcheck.tiny_config,
                            "probe the model at the tiny geometry (always on; full-size "
                            "probing is impractical)");
    gradcheck_cmd->add_option("--tolerance", gradcheck.tolerance,
                              "relative-error tolerance for operator checks")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help exits clean; every parse problem is a usage error
    }

    if (synth_cmd->parsed()) return andt::cmd_synth(synth);
    if (train_cmd->parsed()) return andt::cmd_train(train);
    if (eval_cmd->parsed()) return andt::cmd_eval(eval);
    return andt::cmd_gradcheck(gradcheck);
}

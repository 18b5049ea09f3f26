// radreport: reproducible radiology-report structuring experiments.
//
// Subcommands cover the full pipeline: synthetic corpus generation,
// WordPiece training, MLM pre-training, classifier fine-tuning, k-fold
// evaluation, statistical comparison, and the sequence-length sweep.

#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "radreport/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"radiology-report structuring experiments"};
    app.require_subcommand(1);

    radreport::CommandOptions opt;
    uint64_t seed = 0;
    double ablation = 1.0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "experiment config (JSON)")
            ->required();
        cmd->add_option("--seed", seed, "override every stage seed")
            ->each([&](const std::string&) { opt.seed_override = seed; });
        cmd->add_option("--jobs", opt.jobs, "parallel folds")->check(CLI::PositiveNumber);
        cmd->add_option("--ablation", ablation, "training-set fraction per fold")
            ->each([&](const std::string&) { opt.ablation_override = ablation; });
        cmd->add_option("--run-name", opt.run_name, "output subdirectory name");
        cmd->add_flag("--force", opt.force, "allow reusing an existing run directory");
    };

    auto* generate = app.add_subcommand("generate", "generate the synthetic corpus");
    add_common(generate);
    auto* tokenizer = app.add_subcommand("train-tokenizer", "train the WordPiece vocabulary");
    add_common(tokenizer);
    auto* pretrain_cmd = app.add_subcommand("pretrain", "masked-language-model pre-training");
    add_common(pretrain_cmd);

    auto* finetune_cmd = app.add_subcommand("finetune", "fine-tune one task model");
    add_common(finetune_cmd);
    finetune_cmd
        ->add_option("--task", opt.task,
                     "seg-aux | seg-noaux | modality | previous_cancer | menopausal | "
                     "purpose | density | bpe")
        ->required();

    auto* evaluate = app.add_subcommand("evaluate", "k-fold cross-validated experiment");
    add_common(evaluate);
    evaluate
        ->add_option("--variant", opt.variant, "seg-aux | seg-noaux | field-seg | field-noseg")
        ->required();

    auto* compare = app.add_subcommand("compare", "statistical comparison of two runs");
    add_common(compare);
    compare->add_option("--run-a", opt.run_a, "first run directory")->required();
    compare->add_option("--run-b", opt.run_b, "second run directory")->required();
    compare->add_option("--test", opt.test_kind, "utest | mcnemar");

    auto* sweep = app.add_subcommand("sweep", "task-by-sequence-length grid");
    add_common(sweep);

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return radreport::cmd_generate(opt);
        if (tokenizer->parsed()) return radreport::cmd_train_tokenizer(opt);
        if (pretrain_cmd->parsed()) return radreport::cmd_pretrain(opt);
        if (finetune_cmd->parsed()) return radreport::cmd_finetune(opt);
        if (evaluate->parsed()) return radreport::cmd_evaluate(opt);
        if (compare->parsed()) return radreport::cmd_compare(opt);
        if (sweep->parsed()) return radreport::cmd_sweep(opt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

#pragma once

#include <optional>
#include <string>

namespace radreport {

// Shared options for the CLI subcommands; each cmd_* is the testable
// implementation behind one subcommand and returns a process exit code.
struct CommandOptions {
    std::string config_path;
    std::optional<uint64_t> seed_override;      // --seed
    std::optional<double> ablation_override;    // --ablation
    int jobs = 1;                               // --jobs
    std::string variant;                        // --variant (evaluate)
    std::string task;                           // --task (finetune)
    std::string run_name;                       // output subdirectory override
    std::string run_a, run_b;                   // compare inputs
    std::string test_kind = "utest";            // compare statistic
    bool force = false;                         // allow reusing a run dir
};

int cmd_generate(const CommandOptions& opt);
int cmd_train_tokenizer(const CommandOptions& opt);
int cmd_pretrain(const CommandOptions& opt);
int cmd_finetune(const CommandOptions& opt);
int cmd_evaluate(const CommandOptions& opt);
int cmd_compare(const CommandOptions& opt);
int cmd_sweep(const CommandOptions& opt);

}  // namespace radreport

#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "steerlab/errors.hpp"
#include "steerlab/pipeline.hpp"

namespace {

// Exit codes: 0 success, 1 internal error, 2 missing upstream artifact,
// 3 invalid configuration or input, 4 judge authentication failure.
constexpr int kExitInternal = 1;
constexpr int kExitMissingArtifact = 2;
constexpr int kExitValidation = 3;
constexpr int kExitAuth = 4;

struct StageArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    long long seed = 0;
    bool seed_set = false;
};

void add_common_options(CLI::App* cmd, StageArgs& args) {
    cmd->add_option("--config", args.config_path, "Run configuration (flat dotted-key JSON)")
        ->required();
    cmd->add_option("--set", args.overrides,
                    "Override a config key, key=value; repeatable, wins over the file")
        ->take_all();
    cmd->add_option("--seed", args.seed, "Override the master seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

int run_stage(const StageArgs& args,
              const std::function<std::string(const steerlab::RunConfig&)>& stage) {
    try {
        std::vector<std::string> overrides = args.overrides;
        if (args.seed_set) overrides.push_back("seed=" + std::to_string(args.seed));
        const steerlab::RunConfig rc = steerlab::RunConfig::load(args.config_path, overrides);
        const std::string summary = stage(rc);
        std::printf("%s\n", summary.c_str());
        return 0;
    } catch (const steerlab::missing_artifact_error& e) {
        std::fprintf(stderr, "steerlab: %s\n", e.what());
        return kExitMissingArtifact;
    } catch (const steerlab::auth_error& e) {
        std::fprintf(stderr, "steerlab: %s\n", e.what());
        return kExitAuth;
    } catch (const steerlab::config_error& e) {
        std::fprintf(stderr, "steerlab: %s\n", e.what());
        return kExitValidation;
    } catch (const steerlab::validation_error& e) {
        std::fprintf(stderr, "steerlab: %s\n", e.what());
        return kExitValidation;
    } catch (const steerlab::parse_error& e) {
        std::fprintf(stderr, "steerlab: %s\n", e.what());
        return kExitValidation;
    } catch (const steerlab::argument_error& e) {
        std::fprintf(stderr, "steerlab: %s\n", e.what());
        return kExitValidation;
    } catch (const steerlab::not_implemented_error& e) {
        std::fprintf(stderr, "steerlab: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "steerlab: %s\n", e.what());
        return kExitInternal;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"steerlab: dynamic-weight-update steering laboratory"};
    app.require_subcommand(1);

    struct Stage {
        const char* name;
        const char* help;
        std::string (*fn)(const steerlab::RunConfig&);
    };
    const Stage stages[] = {
        {"gen-data", "Generate the pretraining corpus and polarity pair splits",
         steerlab::run_gen_data},
        {"train-base", "Pretrain and freeze the base model", steerlab::run_train_base},
        {"steer-train", "Train (or derive) the configured intervention",
         steerlab::run_steer_train},
        {"sweep", "Measure preference/utility odds over the steering-factor grid",
         steerlab::run_sweep},
        {"fit", "Fit validity-decay curves to the sweep", steerlab::run_fit},
        {"transfer", "Score the fitted curves on the held-out split",
         steerlab::run_transfer},
        {"report", "Cross-check artifacts and emit the summary tables",
         steerlab::run_report},
    };

    std::vector<StageArgs> args(std::size(stages));
    std::vector<std::pair<CLI::App*, size_t>> cmds;
    for (size_t i = 0; i < std::size(stages); ++i) {
        CLI::App* cmd = app.add_subcommand(stages[i].name, stages[i].help);
        add_common_options(cmd, args[i]);
        cmds.emplace_back(cmd, i);
    }

    CLI11_PARSE(app, argc, argv);

    for (const auto& [cmd, i] : cmds)
        if (cmd->parsed()) return run_stage(args[i], stages[i].fn);
    return kExitInternal;  // unreachable: require_subcommand(1)
}

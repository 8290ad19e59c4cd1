// bkdattr: command-line driver for the backdoor attribution pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/pipeline/commands.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config_path;
    std::string preset;
    std::vector<std::string> overrides;
    std::string run_dir;
    std::string model = "backdoor";
    int threads = 1;
};

// Explicit --config wins; otherwise an existing run directory supplies the
// config it was generated with, so later commands see the same settings.
bkd::CommandContext make_context(const Options& o, bool fresh) {
    std::vector<std::string> overrides;
    if (!o.preset.empty()) overrides.push_back("preset=" + o.preset);
    overrides.insert(overrides.end(), o.overrides.begin(), o.overrides.end());

    fs::path config_path = o.config_path;
    if (config_path.empty() && !fresh && !o.run_dir.empty() && fs::exists(fs::path(o.run_dir) / "config.json"))
        config_path = fs::path(o.run_dir) / "config.json";
    bkd::CommandContext ctx;
    ctx.config = bkd::load_config(config_path, overrides);
    if (config_path.empty() && !fresh && o.run_dir.empty()) {
        const fs::path dir = bkd::resolve_run_dir(ctx.config, {});
        if (fs::exists(dir / "config.json")) ctx.config = bkd::load_config(dir / "config.json", o.overrides);
    }
    ctx.run_dir = bkd::resolve_run_dir(ctx.config, o.run_dir);
    if (o.threads < 1) throw bkd::ConfigError("--threads must be at least 1");
    ctx.threads = o.threads;
    if (o.model != "backdoor" && o.model != "control" && o.model != "edited")
        throw bkd::ConfigError("--model must be backdoor, control or edited");
    ctx.model = o.model;
    return ctx;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inject, localise and steer backdoors in a small transformer."};
    app.require_subcommand(1);
    Options o;

    using Fn = bkd::Summary (*)(const bkd::CommandContext&);
    struct Entry {
        const char* name;
        const char* help;
        Fn fn;
    };
    const Entry entries[] = {
        {"gen-data", "write the training and analysis datasets", bkd::cmd_gen_data},
        {"train", "pretrain, inject the backdoor and train the clean control", bkd::cmd_train},
        {"inject-edit", "inject the backdoor into the control by a closed-form MLP edit", bkd::cmd_inject_edit},
        {"probe", "train per-layer trigger probes and cross-evaluate them", bkd::cmd_probe},
        {"attribute", "score every attention head by its causal effect", bkd::cmd_attribute},
        {"ablate", "ablate top-scoring and random heads", bkd::cmd_ablate},
        {"vector", "build the backdoor vector from the top heads", bkd::cmd_vector},
        {"sweep", "add / subtract the vector at every layer", bkd::cmd_sweep},
        {"report", "render report.md and evaluate the gates", bkd::cmd_report},
    };

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", o.config_path, "JSON config file");
        sub->add_option("--preset", o.preset, "instruct_refusal or classify_flip");
        sub->add_option("-s,--set", o.overrides, "override a field, e.g. train.epochs=3")->take_all();
        sub->add_option("-r,--run-dir", o.run_dir, "run directory (default: output_dir of the config)");
        sub->add_option("-j,--threads", o.threads, "worker threads; 1 gives the canonical artifacts");
        sub->add_option("-m,--model", o.model, "model analysed by probe/attribute/ablate/vector/sweep/report");
    };

    const Entry* chosen = nullptr;
    bool run_all = false;
    for (const auto& e : entries) {
        CLI::App* sub = app.add_subcommand(e.name, e.help);
        add_common(sub);
        sub->callback([&chosen, &e] { chosen = &e; });
    }
    CLI::App* run = app.add_subcommand("run", "every step from gen-data to report");
    add_common(run);
    run->callback([&run_all] { run_all = true; });

    CLI11_PARSE(app, argc, argv);

    try {
        const bool fresh = run_all || (chosen && std::string(chosen->name) == "gen-data");
        const bkd::CommandContext ctx = make_context(o, fresh);
        if (run_all) {
            for (const auto& s : bkd::cmd_run(ctx)) std::cout << s.line() << std::endl;
        } else {
            std::cout << chosen->fn(ctx).line() << std::endl;
        }
        return 0;
    } catch (const bkd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const bkd::MissingPrerequisite& e) {
        std::cerr << "missing prerequisite: " << e.what() << "\n";
        return 3;
    } catch (const bkd::CorruptionError& e) {
        std::cerr << "corrupted artifact: " << e.what() << "\n";
        return 4;
    } catch (const bkd::ContractError& e) {
        std::cerr << "invariant violated: " << e.what() << "\n";
        return 4;
    } catch (const bkd::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bkdattr/attribution/baha.hpp"
#include "bkdattr/pipeline/experiment.hpp"
#include "bkdattr/pipeline/manifest.hpp"
#include "bkdattr/probe/ilca.hpp"

namespace bkd {

struct CommandContext {
    ExperimentConfig config;
    std::filesystem::path run_dir;
    int threads = 1;
    // Which trained model the analysis commands read: backdoor, control or
    // edited. Artifacts of models other than "backdoor" go under <model>/.
    std::string model = "backdoor";
};

// Output of one command: printed as a single "command=<name> k=v ..." line.
struct Summary {
    std::string command;
    std::vector<std::pair<std::string, std::string>> fields;

    void add(const std::string& key, const std::string& value) { fields.emplace_back(key, value); }
    void add(const std::string& key, double value);
    void add(const std::string& key, std::size_t value) { add(key, std::to_string(value)); }
    void add(const std::string& key, int value) { add(key, std::to_string(value)); }
    std::string line() const;
    // Numeric field by key; ContractError when absent.
    double number(const std::string& key) const;
};

// The run directory the context would use: --run-dir if given, otherwise the
// config's output_dir resolved under $BKDATTR_OUTPUT_ROOT when set.
std::filesystem::path resolve_run_dir(const ExperimentConfig& config, const std::filesystem::path& explicit_dir);

Summary cmd_gen_data(const CommandContext& ctx);
Summary cmd_train(const CommandContext& ctx);
Summary cmd_inject_edit(const CommandContext& ctx);
Summary cmd_probe(const CommandContext& ctx);
Summary cmd_attribute(const CommandContext& ctx);
Summary cmd_ablate(const CommandContext& ctx);
Summary cmd_vector(const CommandContext& ctx);
Summary cmd_sweep(const CommandContext& ctx);
Summary cmd_report(const CommandContext& ctx);
// gen-data, train, inject-edit, probe, attribute, ablate, vector, sweep and
// report in order.
std::vector<Summary> cmd_run(const CommandContext& ctx);

// Pass/fail gates evaluated from the artifacts of a run directory.
struct Gate {
    std::string name;
    bool available = false;  // artifacts present
    bool pass = false;
    std::string detail;
};

std::vector<Gate> evaluate_gates(const std::filesystem::path& run_dir, const std::string& model = "backdoor");

// Reads a CSV artifact written by this tool: skips the version line and
// returns header -> column values.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
    double number(std::size_t row, const std::string& name) const;
    const std::string& text(std::size_t row, const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace bkd

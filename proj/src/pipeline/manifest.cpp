#include "bkdattr/pipeline/manifest.hpp"

#include <chrono>
#include <ctime>

#include <nlohmann/json.hpp>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFormat = "bkdattr-manifest";
constexpr int kManifestVersion = 1;
constexpr const char* kManifestFile = "manifest.json";

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

RunManifest::RunManifest(fs::path run_dir) : run_dir_(std::move(run_dir)), created_(utc_now()) {}

RunManifest RunManifest::load_or_create(const fs::path& run_dir) {
    RunManifest m(run_dir);
    const fs::path file = run_dir / kManifestFile;
    if (!fs::exists(file)) return m;
    try {
        const json j = json::parse(read_file(file));
        if (j.at("format") != kManifestFormat || j.at("version") != kManifestVersion)
            throw CorruptionError(file.string() + ": unsupported manifest format");
        m.created_ = j.at("created").get<std::string>();
        for (const auto& [rel, e] : j.at("artifacts").items())
            m.artifacts_[rel] = {e.at("sha256"), e.at("bytes"), e.at("command"), e.at("config_sha256")};
    } catch (const json::exception& e) {
        throw CorruptionError(file.string() + ": " + e.what());
    }
    return m;
}

void RunManifest::record(const std::string& rel, const std::string& command, const std::string& config_hash) {
    const fs::path p = run_dir_ / rel;
    artifacts_[rel] = {sha256_file(p), fs::file_size(p), command, config_hash};
}

void RunManifest::save() const {
    json arts = json::object();
    for (const auto& [rel, e] : artifacts_)
        arts[rel] = {{"sha256", e.sha256}, {"bytes", e.bytes}, {"command", e.command}, {"config_sha256", e.config_hash}};
    const json j = {{"format", kManifestFormat}, {"version", kManifestVersion}, {"tool_version", kToolVersion},
                    {"created", created_},       {"updated", utc_now()},        {"artifacts", arts}};
    write_file(run_dir_ / kManifestFile, j.dump(2) + "\n");
}

void RunManifest::verify(const std::string& rel) const {
    auto it = artifacts_.find(rel);
    if (it == artifacts_.end()) throw CorruptionError("manifest has no entry for " + rel);
    const fs::path p = run_dir_ / rel;
    if (!fs::exists(p)) throw CorruptionError("artifact " + rel + " is listed in the manifest but missing");
    if (sha256_file(p) != it->second.sha256) throw CorruptionError("artifact " + rel + " does not match its manifest hash");
}

void RunManifest::verify() const {
    for (const auto& [rel, e] : artifacts_) verify(rel);
}

}  // namespace bkd

#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace bkd {

inline constexpr const char* kToolVersion = "0.1.0";

struct ArtifactEntry {
    std::string sha256;
    std::uintmax_t bytes = 0;
    std::string command;  // the command that last wrote it
    std::string config_hash;
};

// Inventory of a run directory, persisted as manifest.json in it. Paths are
// relative to the run directory.
class RunManifest {
   public:
    explicit RunManifest(std::filesystem::path run_dir);

    // Reads manifest.json if present; CorruptionError on a malformed file.
    static RunManifest load_or_create(const std::filesystem::path& run_dir);

    const std::filesystem::path& run_dir() const { return run_dir_; }
    const std::map<std::string, ArtifactEntry>& artifacts() const { return artifacts_; }
    bool has(const std::string& rel) const { return artifacts_.count(rel) > 0; }

    // Hashes the file as it is on disk now.
    void record(const std::string& rel, const std::string& command, const std::string& config_hash);
    void save() const;

    // Every listed file exists and matches its hash; otherwise CorruptionError
    // naming the first offending artifact.
    void verify() const;
    // Like verify() for a single entry.
    void verify(const std::string& rel) const;

   private:
    std::filesystem::path run_dir_;
    std::string created_;
    std::map<std::string, ArtifactEntry> artifacts_;
};

}  // namespace bkd

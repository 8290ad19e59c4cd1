#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace bkd {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is split into
// contiguous blocks, so callers that write results by index stay deterministic
// regardless of the thread count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

// Independent per-task seed derived from a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace bkd

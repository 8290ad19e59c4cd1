#pragma once

#include <filesystem>

#include "bkdattr/poison/poison.hpp"

namespace bkd {

// JSON-lines dataset file. The first line is a header record naming the
// format, version and vocabulary hash; each following line is one sample
// {"input": [...], "output": [...], "poisoned": bool, "source": index} with
// tokens written as strings.
void write_dataset(const std::filesystem::path& path, const DatasetPair& data, const Tokenizer& tokenizer);
// Raises CorruptionError on a malformed file or a vocabulary hash mismatch.
DatasetPair read_dataset(const std::filesystem::path& path, const Tokenizer& tokenizer);

}  // namespace bkd

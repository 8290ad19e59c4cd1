#include "bkdattr/poison/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

namespace {
constexpr const char* kFormat = "bkdattr-dataset";
constexpr int kVersion = 1;

nlohmann::json words(std::span<const TokenId> ids, const Tokenizer& tok) {
    auto arr = nlohmann::json::array();
    for (TokenId t : ids) arr.push_back(tok.token(t));
    return arr;
}

std::vector<TokenId> ids(const nlohmann::json& arr, const Tokenizer& tok) {
    std::vector<TokenId> out;
    for (const auto& w : arr) out.push_back(tok.id(w.get<std::string>()));
    return out;
}
}  // namespace

void write_dataset(const std::filesystem::path& path, const DatasetPair& data, const Tokenizer& tok) {
    std::ostringstream os;
    os << nlohmann::json{{"format", kFormat}, {"version", kVersion}, {"vocab_sha256", tok.content_hash()},
                         {"clean", data.clean.size()}, {"poisoned", data.poisoned.size()}}
              .dump()
       << '\n';
    for (std::size_t i = 0; i < data.clean.size(); ++i) {
        const auto& s = data.clean[i];
        os << nlohmann::json{{"input", words(s.input, tok)}, {"output", words(s.output, tok)}, {"poisoned", false},
                             {"source", i}}
                  .dump()
           << '\n';
    }
    for (const auto& s : data.poisoned) {
        os << nlohmann::json{{"input", words(s.input, tok)}, {"output", words(s.output, tok)}, {"poisoned", true},
                             {"source", s.source}}
                  .dump()
           << '\n';
    }
    write_file(path, os.str());
}

DatasetPair read_dataset(const std::filesystem::path& path, const Tokenizer& tok) {
    std::istringstream is(read_file(path));
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw CorruptionError(path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    DatasetPair out;
    try {
        if (!std::getline(is, line)) fail("empty dataset file");
        ++lineno;
        auto header = nlohmann::json::parse(line);
        if (header.value("format", "") != kFormat || header.value("version", 0) != kVersion)
            fail("not a version " + std::to_string(kVersion) + " dataset file");
        if (header.value("vocab_sha256", "") != tok.content_hash()) fail("dataset was written with another vocabulary");
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto rec = nlohmann::json::parse(line);
            auto in = ids(rec.at("input"), tok);
            auto o = ids(rec.at("output"), tok);
            const auto source = rec.at("source").get<std::size_t>();
            if (rec.at("poisoned").get<bool>()) {
                if (source >= out.clean.size()) fail("poisoned record points at missing clean sample");
                out.poisoned.push_back({std::move(in), std::move(o), source});
                out.selected_indices.push_back(source);
            } else {
                if (!out.poisoned.empty() || source != out.clean.size()) fail("clean records out of order");
                out.clean.push_back({std::move(in), std::move(o)});
            }
        }
        if (out.clean.size() != header.at("clean").get<std::size_t>() ||
            out.poisoned.size() != header.at("poisoned").get<std::size_t>())
            fail("record count does not match header");
    } catch (const nlohmann::json::exception& e) {
        fail(std::string("malformed record: ") + e.what());
    } catch (const ContractError& e) {
        fail(e.what());
    }
    return out;
}

}  // namespace bkd

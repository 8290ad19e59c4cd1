#include "bkdattr/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bkdattr/core/errors.hpp"

namespace bkd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
   public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

   private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw CorruptionError("checkpoint truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NamedTensors& tensors) {
    std::string out(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, 0);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
        for (auto d : t.shape()) put<std::uint64_t>(out, d);
        auto data = t.data();
        out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    }
    return out;
}

NamedTensors decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.take(4) != std::string(kCheckpointMagic, 4)) throw CorruptionError("not a checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CorruptionError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>();
    NamedTensors out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.take(r.get<std::uint32_t>());
        if (r.get<std::uint8_t>() != 0) throw CorruptionError("unsupported dtype for tensor " + name);
        Shape shape(r.get<std::uint32_t>());
        for (auto& d : shape) d = r.get<std::uint64_t>();
        const std::string payload = r.take(shape_numel(shape) * sizeof(float));
        std::vector<float> values(shape_numel(shape));
        std::memcpy(values.data(), payload.data(), payload.size());
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!r.done()) throw CorruptionError("trailing bytes after checkpoint payload");
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    const std::string bytes = encode_checkpoint(tensors);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace bkd

#include "fsiad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace fsiad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "FSIAD1";
constexpr std::size_t kMagicLen = 6;

std::uint8_t dtype_code(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return 0;
        case torch::kFloat64: return 1;
        case torch::kInt64: return 2;
        case torch::kUInt8: return 3;
        default: throw CheckpointError(CheckpointError::Kind::Format, "unsupported array dtype");
    }
}

torch::ScalarType dtype_from_code(std::uint8_t c) {
    switch (c) {
        case 0: return torch::kFloat32;
        case 1: return torch::kFloat64;
        case 2: return torch::kInt64;
        case 3: return torch::kUInt8;
        default: throw CheckpointError(CheckpointError::Kind::Format, "unknown dtype code " + std::to_string(c));
    }
}

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    void bytes(void* dst, std::size_t n, const std::string& what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint truncated while reading " + what);
    }

    template <typename T>
    T get(const std::string& what) {
        T v;
        bytes(&v, sizeof(T), what);
        return v;
    }

private:
    std::istream& in_;
};

}  // namespace

bool Checkpoint::operator==(const Checkpoint& other) const {
    if (meta != other.meta || arrays.size() != other.arrays.size()) return false;
    for (const auto& [name, t] : arrays) {
        auto it = other.arrays.find(name);
        if (it == other.arrays.end()) return false;
        const auto& u = it->second;
        if (t.scalar_type() != u.scalar_type() || !t.sizes().equals(u.sizes())) return false;
        auto a = t.contiguous();
        auto b = u.contiguous();
        if (std::memcmp(a.data_ptr(), b.data_ptr(), a.nbytes()) != 0) return false;
    }
    return true;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write checkpoint '" + path.string() + "'");

    nlohmann::json meta = ckpt.meta;
    meta["format_version"] = kCheckpointVersion;
    meta["num_arrays"] = ckpt.arrays.size();
    const std::string meta_text = meta.dump();

    out.write(kMagic, kMagicLen);
    put<std::uint64_t>(out, meta_text.size());
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

    for (const auto& [name, tensor] : ckpt.arrays) {
        auto t = tensor.detach().cpu().contiguous();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint8_t>(out, dtype_code(t.scalar_type()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) put<std::int64_t>(out, d);
        out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint '" + path.string() + "'");
    Reader r(in);

    char magic[kMagicLen];
    r.bytes(magic, kMagicLen, "magic");
    if (std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw CheckpointError(CheckpointError::Kind::Format, "'" + path.string() + "' is not an FSIAD checkpoint");

    const auto meta_len = r.get<std::uint64_t>("metadata length");
    if (meta_len > (1ULL << 30)) throw CheckpointError(CheckpointError::Kind::Format, "implausible metadata length");
    std::string meta_text(meta_len, '\0');
    r.bytes(meta_text.data(), meta_len, "metadata");

    Checkpoint ckpt;
    try {
        ckpt.meta = nlohmann::json::parse(meta_text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::Format, std::string("bad checkpoint metadata: ") + e.what());
    }
    const int version = ckpt.meta.value("format_version", -1);
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::Version, "checkpoint format version " + std::to_string(version) +
                                                                  " != supported " +
                                                                  std::to_string(kCheckpointVersion));
    const auto count = ckpt.meta.value("num_arrays", std::size_t{0});
    ckpt.meta.erase("format_version");
    ckpt.meta.erase("num_arrays");

    for (std::size_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>("array name length");
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len, "array name");
        const auto dtype = dtype_from_code(r.get<std::uint8_t>("dtype of " + name));
        const auto rank = r.get<std::uint32_t>("rank of " + name);
        if (rank > 8) throw CheckpointError(CheckpointError::Kind::Format, "implausible rank for " + name);
        std::vector<std::int64_t> dims(rank);
        for (auto& d : dims) d = r.get<std::int64_t>("dims of " + name);
        auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
        r.bytes(t.data_ptr(), t.nbytes(), "payload of " + name);
        ckpt.arrays.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

void export_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters(true)) ckpt.arrays[prefix + p.key()] = p.value().detach().clone();
    for (const auto& b : module.named_buffers(true)) ckpt.arrays[prefix + b.key()] = b.value().detach().clone();
}

void import_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard guard;
    auto load = [&](const std::string& name, torch::Tensor& dst) {
        auto it = ckpt.arrays.find(prefix + name);
        if (it == ckpt.arrays.end())
            throw CheckpointError(CheckpointError::Kind::Missing, "checkpoint lacks array '" + prefix + name + "'");
        if (!it->second.sizes().equals(dst.sizes()))
            throw CheckpointError(CheckpointError::Kind::Shape,
                                  "shape mismatch for '" + prefix + name + "': checkpoint " +
                                      c10::str(it->second.sizes()) + " vs architecture " + c10::str(dst.sizes()));
        dst.copy_(it->second.to(dst.scalar_type()));
    };
    for (auto& p : module.named_parameters(true)) load(p.key(), p.value());
    for (auto& b : module.named_buffers(true)) load(b.key(), b.value());
}

std::uint64_t parameter_checksum(const torch::nn::Module& module) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : module.named_parameters(true)) {
        for (char c : p.key()) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
        auto t = p.value().detach().contiguous();
        const auto* bytes = static_cast<const unsigned char*>(t.data_ptr());
        for (std::size_t i = 0; i < t.nbytes(); ++i) h = (h ^ bytes[i]) * 1099511628211ULL;
    }
    return h;
}

}  // namespace fsiad

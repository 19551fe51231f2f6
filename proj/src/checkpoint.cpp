#include "retvi/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace retvi {

namespace {

constexpr char kMagic[4] = {'R', 'E', 'T', 'V'};

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ParseError("checkpoint truncated");
    return v;
}

std::string get_str(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw ParseError("checkpoint string field too large");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw ParseError("checkpoint truncated");
    return s;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw NotFoundError("cannot write checkpoint: " + path);
    os.write(kMagic, 4);
    put_u32(os, Checkpoint::kFormatVersion);
    put_u32(os, static_cast<std::uint32_t>(ckpt.header.size()));
    for (const auto& [k, v] : ckpt.header) {
        put_str(os, k);
        put_str(os, v);
    }
    put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_str(os, name);
        put_u32(os, static_cast<std::uint32_t>(t.ndim()));
        for (int d = 0; d < t.ndim(); ++d) put_u32(os, static_cast<std::uint32_t>(t.dim(d)));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw ParseError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not a checkpoint file: " + path);
    const std::uint32_t version = get_u32(is);
    if (version != Checkpoint::kFormatVersion)
        throw IncompatibleCheckpointError("checkpoint format version " + std::to_string(version) +
                                          ", expected " +
                                          std::to_string(Checkpoint::kFormatVersion));
    Checkpoint ckpt;
    const std::uint32_t nh = get_u32(is);
    for (std::uint32_t i = 0; i < nh; ++i) {
        std::string k = get_str(is);
        ckpt.header[k] = get_str(is);
    }
    const std::uint32_t nt = get_u32(is);
    for (std::uint32_t i = 0; i < nt; ++i) {
        std::string name = get_str(is);
        const std::uint32_t ndim = get_u32(is);
        if (ndim == 0 || ndim > 8) throw ParseError("checkpoint tensor rank invalid");
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(get_u32(is));
        Tensor t(shape);
        if (!is.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(t.size() * sizeof(double))))
            throw ParseError("checkpoint truncated in tensor " + name);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t tensors_checksum(const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& [name, t] : tensors) {
        h = fnv1a64(name.data(), name.size(), h);
        for (int d = 0; d < t.ndim(); ++d) {
            const int dim = t.dim(d);
            h = fnv1a64(&dim, sizeof dim, h);
        }
        h = fnv1a64(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double), h);
    }
    return h;
}

} // namespace retvi

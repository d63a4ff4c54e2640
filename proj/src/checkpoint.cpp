#include "skyramp/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <stdexcept>

namespace skyramp::io {

namespace {

constexpr char kMagic[4] = {'S', 'K', 'Y', 'R'};

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::runtime_error(path + ": " + what);
}

template <typename T>
void write_le(FILE* f, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = (std::uint64_t(v) >> (8 * i)) & 0xff;
    if (std::fwrite(buf, 1, sizeof(T), f) != sizeof(T))
        throw std::runtime_error("checkpoint: write failed");
}

template <typename T>
T read_le(FILE* f, const std::string& path) {
    unsigned char buf[sizeof(T)];
    if (std::fread(buf, 1, sizeof(T), f) != sizeof(T)) fail(path, "truncated checkpoint");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(buf[i]) << (8 * i);
    return T(v);
}

void write_f32(FILE* f, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_le(f, bits);
}

float read_f32(FILE* f, const std::string& path) {
    std::uint32_t bits = read_le<std::uint32_t>(f, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries,
                     std::uint32_t version) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(path, "cannot open for writing");
    FILE* f = fp.get();
    if (std::fwrite(kMagic, 1, 4, f) != 4) fail(path, "write failed");
    write_le(f, version);
    write_le(f, std::uint32_t(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xffff) fail(path, "tensor name too long: " + e.name);
        if (e.dims.size() > 0xff) fail(path, "tensor rank too large: " + e.name);
        std::size_t n = 1;
        for (auto d : e.dims) n *= d;
        if (n != e.data.size()) fail(path, "dims/data mismatch for " + e.name);
        write_le(f, std::uint16_t(e.name.size()));
        if (std::fwrite(e.name.data(), 1, e.name.size(), f) != e.name.size())
            fail(path, "write failed");
        write_le(f, std::uint8_t(e.dims.size()));
        for (auto d : e.dims) write_le(f, d);
        for (float v : e.data) write_f32(f, v);
    }
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(path, "cannot open for reading");
    FILE* f = fp.get();
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kMagic, 4) != 0)
        fail(path, "bad magic");
    read_le<std::uint32_t>(f, path); // version (forward compatible, single version so far)
    const auto count = read_le<std::uint32_t>(f, path);
    std::vector<NamedTensor> out(count);
    for (auto& e : out) {
        const auto len = read_le<std::uint16_t>(f, path);
        e.name.resize(len);
        if (len && std::fread(e.name.data(), 1, len, f) != len) fail(path, "truncated name");
        const auto ndim = read_le<std::uint8_t>(f, path);
        e.dims.resize(ndim);
        std::size_t n = 1;
        for (auto& d : e.dims) {
            d = read_le<std::uint32_t>(f, path);
            n *= d;
        }
        e.data.resize(n);
        for (auto& v : e.data) v = read_f32(f, path);
    }
    return out;
}

void save_params(const std::string& path, const num::ParamStore<float>& store) {
    std::vector<NamedTensor> entries;
    entries.reserve(store.count());
    for (const auto& p : store.params()) {
        NamedTensor e;
        e.name = p.name;
        for (auto d : p.value.shape()) e.dims.push_back(std::uint32_t(d));
        e.data = p.value.data();
        entries.push_back(std::move(e));
    }
    save_checkpoint(path, entries);
}

void load_params(const std::string& path, num::ParamStore<float>& store) {
    auto entries = load_checkpoint(path);
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& e : entries) {
        if (!by_name.emplace(e.name, &e).second) fail(path, "duplicate entry " + e.name);
    }
    if (by_name.size() != store.count())
        fail(path, "parameter count mismatch: checkpoint has " +
                       std::to_string(by_name.size()) + ", model expects " +
                       std::to_string(store.count()));
    for (auto& p : store.params()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) fail(path, "missing parameter " + p.name);
        const auto& e = *it->second;
        if (e.dims.size() != p.value.ndim()) fail(path, "shape mismatch for " + p.name);
        for (std::size_t i = 0; i < e.dims.size(); ++i)
            if (e.dims[i] != p.value.dim(i)) fail(path, "shape mismatch for " + p.name);
        p.value.data() = e.data;
    }
}

} // namespace skyramp::io

#include "trajlab/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace trajlab::io {

namespace {

constexpr char kMagic[4] = {'T', 'L', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                          static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& os, double x) {
    std::uint64_t u;
    std::memcpy(&u, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double x;
    std::memcpy(&x, &u, 8);
    return x;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    // Write to a temp file and rename so a failed write never leaves a
    // truncated checkpoint at the target path.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
        os.write(kMagic, 4);
        write_u32(os, kVersion);
        write_u32(os, static_cast<std::uint32_t>(ckpt.metadata_json.size()));
        os.write(ckpt.metadata_json.data(), static_cast<std::streamsize>(ckpt.metadata_json.size()));
        write_u32(os, static_cast<std::uint32_t>(ckpt.arrays.size()));
        for (const auto& [name, arr] : ckpt.arrays) {
            write_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(os, static_cast<std::uint32_t>(arr.rows));
            write_u32(os, static_cast<std::uint32_t>(arr.cols));
            for (double x : arr.values) write_f64(os, x);
        }
        if (!os) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    const std::uint32_t meta_len = read_u32(is);
    ckpt.metadata_json.resize(meta_len);
    is.read(ckpt.metadata_json.data(), meta_len);
    const std::uint32_t n_arrays = read_u32(is);
    for (std::uint32_t k = 0; k < n_arrays; ++k) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        Checkpoint::Array arr;
        arr.rows = static_cast<int>(read_u32(is));
        arr.cols = static_cast<int>(read_u32(is));
        arr.values.resize(static_cast<std::size_t>(arr.rows) * arr.cols);
        for (double& x : arr.values) x = read_f64(is);
        ckpt.arrays.emplace(std::move(name), std::move(arr));
    }
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
    return ckpt;
}

}  // namespace trajlab::io

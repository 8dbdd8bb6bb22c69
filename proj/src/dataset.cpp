#include "trajlab/dataset.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace trajlab::data {

namespace {

constexpr char kMagic[4] = {'T', 'U', 'L', 'D'};
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

void write_f32(std::ostream& os, float x) {
    std::uint32_t u;
    std::memcpy(&u, &x, 4);
    unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                          static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

float read_f32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                      (static_cast<std::uint32_t>(b[2]) << 16) |
                      (static_cast<std::uint32_t>(b[3]) << 24);
    float x;
    std::memcpy(&x, &u, 4);
    return x;
}

// Upper-triangle pairs (i < j) in row-major order; LSB-first bit packing.
std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
    std::vector<std::uint8_t> bytes((bits.size() + 7) / 8, 0);
    for (std::size_t k = 0; k < bits.size(); ++k)
        if (bits[k]) bytes[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
    return bytes;
}

std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& bytes, std::size_t count) {
    std::vector<std::uint8_t> bits(count, 0);
    for (std::size_t k = 0; k < count; ++k)
        bits[k] = (bytes[k / 8] >> (k % 8)) & 1u;
    return bits;
}

}  // namespace

bool Dataset::operator==(const Dataset& other) const {
    if (n_particles != other.n_particles || n_steps != other.n_steps ||
        effective_dt != other.effective_dt || norm_factors != other.norm_factors ||
        trajectories.size() != other.trajectories.size())
        return false;
    for (std::size_t t = 0; t < trajectories.size(); ++t) {
        if (trajectories[t].graph.springs != other.trajectories[t].graph.springs) return false;
        if (trajectories[t].graph.charges != other.trajectories[t].graph.charges) return false;
        if (std::memcmp(trajectories[t].states.data(), other.trajectories[t].states.data(),
                        trajectories[t].states.size() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

std::array<double, 4> compute_norm_factors(const std::vector<sim::Trajectory>& trajs) {
    std::array<double, 4> f{0.0, 0.0, 0.0, 0.0};
    for (const auto& tr : trajs) {
        for (const auto& s : tr.states) {
            for (int i = 0; i < s.n(); ++i) {
                f[0] = std::max(f[0], std::abs(s.x[i]));
                f[1] = std::max(f[1], std::abs(s.y[i]));
                f[2] = std::max(f[2], std::abs(s.vx[i]));
                f[3] = std::max(f[3], std::abs(s.vy[i]));
            }
        }
    }
    for (double& x : f)
        if (x <= 0.0) x = 1.0;
    return f;
}

Dataset normalize(const std::vector<sim::Trajectory>& trajs, const std::array<double, 4>& factors,
                  const std::string& split) {
    Dataset ds;
    ds.split = split;
    ds.norm_factors = factors;
    if (trajs.empty()) return ds;
    ds.n_particles = trajs[0].graph.n;
    ds.n_steps = static_cast<int>(trajs[0].states.size());
    ds.effective_dt = trajs[0].effective_dt;
    ds.trajectories.reserve(trajs.size());
    for (const auto& tr : trajs) {
        StoredTrajectory st;
        st.graph = tr.graph;
        st.states.reserve(ds.state_count());
        for (const auto& s : tr.states) {
            for (int i = 0; i < s.n(); ++i) {
                st.states.push_back(static_cast<float>(s.x[i] / factors[0]));
                st.states.push_back(static_cast<float>(s.y[i] / factors[1]));
                st.states.push_back(static_cast<float>(s.vx[i] / factors[2]));
                st.states.push_back(static_cast<float>(s.vy[i] / factors[3]));
            }
        }
        ds.trajectories.push_back(std::move(st));
    }
    return ds;
}

void write_dataset(const std::string& path, const Dataset& ds) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("write_dataset: cannot open " + tmp);
        os.write(kMagic, 4);
        write_u32(os, kVersion);
        write_u32(os, static_cast<std::uint32_t>(ds.trajectories.size()));
        write_u32(os, static_cast<std::uint32_t>(ds.n_particles));
        write_u32(os, static_cast<std::uint32_t>(ds.n_steps));
        write_f64(os, ds.effective_dt);
        for (double f : ds.norm_factors) write_f64(os, f);
        const int n = ds.n_particles;
        for (const auto& tr : ds.trajectories) {
            std::vector<std::uint8_t> tri;
            tri.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) tri.push_back(tr.graph.spring(i, j) ? 1 : 0);
            auto tri_bytes = pack_bits(tri);
            os.write(reinterpret_cast<const char*>(tri_bytes.data()),
                     static_cast<std::streamsize>(tri_bytes.size()));
            auto charge_bytes = pack_bits(tr.graph.charges);
            os.write(reinterpret_cast<const char*>(charge_bytes.data()),
                     static_cast<std::streamsize>(charge_bytes.size()));
            for (float x : tr.states) write_f32(os, x);
        }
        if (!os) throw std::runtime_error("write_dataset: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_dataset: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("read_dataset: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("read_dataset: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.split = std::filesystem::path(path).stem().string();
    const std::uint32_t n_traj = read_u32(is);
    ds.n_particles = static_cast<int>(read_u32(is));
    ds.n_steps = static_cast<int>(read_u32(is));
    ds.effective_dt = read_f64(is);
    for (double& f : ds.norm_factors) f = read_f64(is);
    const int n = ds.n_particles;
    const std::size_t n_pairs = static_cast<std::size_t>(n) * (n - 1) / 2;
    ds.trajectories.resize(n_traj);
    for (auto& tr : ds.trajectories) {
        std::vector<std::uint8_t> tri_bytes((n_pairs + 7) / 8);
        is.read(reinterpret_cast<char*>(tri_bytes.data()),
                static_cast<std::streamsize>(tri_bytes.size()));
        auto tri = unpack_bits(tri_bytes, n_pairs);
        tr.graph.n = n;
        tr.graph.springs.assign(static_cast<std::size_t>(n) * n, 0);
        std::size_t k = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) tr.graph.set_spring(i, j, tri[k++] != 0);
        std::vector<std::uint8_t> charge_bytes((static_cast<std::size_t>(n) + 7) / 8);
        is.read(reinterpret_cast<char*>(charge_bytes.data()),
                static_cast<std::streamsize>(charge_bytes.size()));
        tr.graph.charges = unpack_bits(charge_bytes, n);
        tr.states.resize(ds.state_count());
        for (float& x : tr.states) x = read_f32(is);
    }
    if (!is) throw std::runtime_error("read_dataset: truncated file " + path);
    return ds;
}

void generate_dataset(const sim::SimConfig& cfg, const SplitCounts& counts, std::uint64_t seed,
                      const std::string& out_dir, Exec exec) {
    if (counts.train < 1 || counts.val < 1 || counts.test < 1)
        throw std::invalid_argument("generate_dataset: all split counts must be >= 1");
    std::filesystem::create_directories(out_dir);
    const auto train = sim::generate_trajectories(cfg, counts.train, seed, 0, exec);
    const auto val = sim::generate_trajectories(cfg, counts.val, seed, counts.train, exec);
    const auto test = sim::generate_trajectories(cfg, counts.test, seed,
                                                 static_cast<std::uint64_t>(counts.train) + counts.val,
                                                 exec);
    const auto factors = compute_norm_factors(train);
    write_dataset(out_dir + "/train.tuld", normalize(train, factors, "train"));
    write_dataset(out_dir + "/val.tuld", normalize(val, factors, "val"));
    write_dataset(out_dir + "/test.tuld", normalize(test, factors, "test"));
}

}  // namespace trajlab::data

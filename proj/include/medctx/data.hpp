#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "medctx/io.hpp"
#include "medctx/rng.hpp"

namespace medctx {

// Synthetic phantom volumes: a handful of non-overlapping ellipsoid "organs"
// with class-specific intensities on a darker background, plus voxel noise.
// Partial masking of one organ still leaves the others as contextual cues,
// which is the structure the joint reconstruction objective exploits.

/// One intensity volume plus its integer label volume (0 = background).
struct VolumeSample {
    std::string id;
    std::array<int64_t, 3> extents{}; // (D, H, W)
    std::array<float, 3> spacing{1.f, 1.f, 1.f};
    std::vector<float> intensity;
    std::vector<uint8_t> labels;

    int64_t numel() const { return extents[0] * extents[1] * extents[2]; }
};

struct OrganIntensity {
    double lo = 0.0;
    double hi = 0.0;
};

struct Ellipsoid {
    std::array<double, 3> center{}; // (z, y, x) voxel coordinates
    std::array<double, 3> semi{};   // semi-axes in voxels
    int label = 0;

    bool contains(double z, double y, double x) const {
        const double a = (z - center[0]) / semi[0];
        const double b = (y - center[1]) / semi[1];
        const double c = (x - center[2]) / semi[2];
        return a * a + b * b + c * c <= 1.0;
    }
};

struct PhantomConfig {
    std::array<int64_t, 3> extents = {32, 32, 32};
    int64_t num_organs = 3;
    std::vector<OrganIntensity> organ_intensity = {{-250, -100}, {100, 250}, {450, 650}};
    double background_hu = -700.0;
    double noise_sigma = 40.0;
    double min_semiaxis = 3.0;
    double max_semiaxis = 6.0;
    double min_separation = 2.0; // gap between organ bounding spheres, voxels
    int64_t max_attempts = 1000;
    std::array<float, 3> spacing = {1.f, 1.f, 1.f};
    uint64_t seed = 0;
};

/// Place `num_organs` random non-overlapping ellipsoids and rasterize labels
/// and noisy intensities. Deterministic from (config, seed); organ k carries
/// label k+1.
inline VolumeSample generate_phantom(const PhantomConfig& cfg) {
    if (cfg.num_organs < 0) throw ConfigError("phantom: num_organs must be >= 0");
    if (cfg.num_organs > 0 && cfg.organ_intensity.empty())
        throw ConfigError("phantom: organ intensity ranges missing");
    if (!(cfg.min_semiaxis > 0.0) || cfg.max_semiaxis < cfg.min_semiaxis)
        throw ConfigError("phantom: invalid semi-axis range");
    const auto& e = cfg.extents;
    for (int64_t x : e)
        if (x < 4) throw ConfigError("phantom: extents too small");

    Rng rng(cfg.seed);
    std::vector<Ellipsoid> organs;
    for (int64_t k = 0; k < cfg.num_organs; ++k) {
        bool placed = false;
        for (int64_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
            Ellipsoid cand;
            cand.label = static_cast<int>(k + 1);
            double max_semi = 0.0;
            for (int a = 0; a < 3; ++a) {
                cand.semi[a] = rng.uniform(cfg.min_semiaxis, cfg.max_semiaxis);
                max_semi = std::max(max_semi, cand.semi[a]);
            }
            bool fits = true;
            for (int a = 0; a < 3; ++a) {
                const double lo = cand.semi[a] + 1.0;
                const double hi = static_cast<double>(e[static_cast<size_t>(a)]) - 1.0 - cand.semi[a];
                if (lo > hi) {
                    fits = false;
                    break;
                }
                cand.center[a] = rng.uniform(lo, hi);
            }
            if (!fits) continue;
            bool clear = true;
            for (const auto& other : organs) {
                double other_max = std::max({other.semi[0], other.semi[1], other.semi[2]});
                double d2 = 0.0;
                for (int a = 0; a < 3; ++a) {
                    const double d = cand.center[a] - other.center[a];
                    d2 += d * d;
                }
                const double need = max_semi + other_max + cfg.min_separation;
                if (d2 < need * need) {
                    clear = false;
                    break;
                }
            }
            if (clear) {
                organs.push_back(cand);
                placed = true;
            }
        }
        if (!placed)
            throw GenerationError("phantom: could not place organ " + std::to_string(k + 1) +
                                  " after " + std::to_string(cfg.max_attempts) + " attempts");
    }

    std::vector<double> organ_mean(organs.size());
    for (size_t k = 0; k < organs.size(); ++k) {
        const auto& range = cfg.organ_intensity[k % cfg.organ_intensity.size()];
        organ_mean[k] = rng.uniform(range.lo, range.hi);
    }

    VolumeSample s;
    s.extents = e;
    s.spacing = cfg.spacing;
    s.intensity.resize(static_cast<size_t>(s.numel()));
    s.labels.assign(static_cast<size_t>(s.numel()), 0);
    size_t i = 0;
    for (int64_t z = 0; z < e[0]; ++z)
        for (int64_t y = 0; y < e[1]; ++y)
            for (int64_t x = 0; x < e[2]; ++x, ++i) {
                double mean = cfg.background_hu;
                for (const auto& organ : organs) {
                    if (organ.contains(static_cast<double>(z), static_cast<double>(y),
                                       static_cast<double>(x))) {
                        mean = organ_mean[static_cast<size_t>(organ.label - 1)];
                        s.labels[i] = static_cast<uint8_t>(organ.label);
                        break;
                    }
                }
                s.intensity[i] = static_cast<float>(rng.normal(mean, cfg.noise_sigma));
            }
    return s;
}

/// Clamp to [lo, hi], then map affinely to [0, 1].
inline void normalize_hu(std::vector<float>& x, double lo, double hi) {
    if (!(lo < hi)) throw ContractError("normalize_hu: lo must be < hi");
    const double scale = 1.0 / (hi - lo);
    for (float& v : x) {
        double c = std::clamp(static_cast<double>(v), lo, hi);
        v = static_cast<float>((c - lo) * scale);
    }
}

struct AugmentConfig {
    std::array<bool, 3> flip_axes = {true, true, true}; // eligible (D, H, W) axes
    double intensity_sigma = 50.0;                      // HU-scale additive shift
};

/// Random axis flips applied identically to intensities and labels, plus a
/// global intensity shift on intensities only. Deterministic from `seed`.
inline VolumeSample augment(const VolumeSample& in, const AugmentConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    std::array<bool, 3> flip{};
    for (int a = 0; a < 3; ++a)
        flip[static_cast<size_t>(a)] = cfg.flip_axes[static_cast<size_t>(a)] && rng.uniform() < 0.5;
    const double shift = cfg.intensity_sigma > 0.0 ? rng.normal(0.0, cfg.intensity_sigma) : 0.0;

    VolumeSample out = in;
    const int64_t D = in.extents[0], H = in.extents[1], W = in.extents[2];
    for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t sz = flip[0] ? D - 1 - z : z;
                const int64_t sy = flip[1] ? H - 1 - y : y;
                const int64_t sx = flip[2] ? W - 1 - x : x;
                const size_t src = static_cast<size_t>((sz * H + sy) * W + sx);
                const size_t dst = static_cast<size_t>((z * H + y) * W + x);
                out.intensity[dst] = in.intensity[src] + static_cast<float>(shift);
                out.labels[dst] = in.labels[src];
            }
    return out;
}

// ---------------------------------------------------------------------------
// MCVX volume file format
//   magic "MCVX", u32 version=1, u8 dtype (0=f32, 1=u8), u8 rank,
//   u32 extents[rank], f32 spacing[3], little-endian row-major payload.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kMcvxVersion = 1;

inline void save_mcvx_f32(const std::string& path, std::array<int64_t, 3> extents,
                          std::array<float, 3> spacing, const std::vector<float>& data) {
    if (extents[0] * extents[1] * extents[2] != static_cast<int64_t>(data.size()))
        throw ShapeError("save_mcvx: payload does not match extents");
    auto os = open_out(path);
    write_bytes(os, "MCVX", 4);
    write_pod<uint32_t>(os, kMcvxVersion);
    write_pod<uint8_t>(os, 0);
    write_pod<uint8_t>(os, 3);
    for (int64_t e : extents) write_pod<uint32_t>(os, static_cast<uint32_t>(e));
    for (float s : spacing) write_pod<float>(os, s);
    write_bytes(os, data.data(), data.size() * sizeof(float));
}

inline void save_mcvx_u8(const std::string& path, std::array<int64_t, 3> extents,
                         std::array<float, 3> spacing, const std::vector<uint8_t>& data) {
    if (extents[0] * extents[1] * extents[2] != static_cast<int64_t>(data.size()))
        throw ShapeError("save_mcvx: payload does not match extents");
    auto os = open_out(path);
    write_bytes(os, "MCVX", 4);
    write_pod<uint32_t>(os, kMcvxVersion);
    write_pod<uint8_t>(os, 1);
    write_pod<uint8_t>(os, 3);
    for (int64_t e : extents) write_pod<uint32_t>(os, static_cast<uint32_t>(e));
    for (float s : spacing) write_pod<float>(os, s);
    write_bytes(os, data.data(), data.size());
}

struct McvxVolume {
    uint8_t dtype = 0; // 0 = f32, 1 = u8
    std::vector<int64_t> extents;
    std::array<float, 3> spacing{1.f, 1.f, 1.f};
    std::vector<float> f32;
    std::vector<uint8_t> u8;
};

inline McvxVolume load_mcvx(const std::string& path) {
    auto is = open_in(path);
    char magic[4];
    read_bytes(is, magic, 4);
    if (std::string(magic, 4) != "MCVX") throw FormatError("MCVX: bad magic in " + path);
    const uint32_t version = read_pod<uint32_t>(is);
    if (version != kMcvxVersion)
        throw FormatError("MCVX: unsupported version " + std::to_string(version));
    McvxVolume v;
    v.dtype = read_pod<uint8_t>(is);
    if (v.dtype > 1) throw FormatError("MCVX: unknown dtype code");
    const uint8_t rank = read_pod<uint8_t>(is);
    if (rank == 0 || rank > 8) throw FormatError("MCVX: rank out of range");
    int64_t n = 1;
    for (uint8_t r = 0; r < rank; ++r) {
        const uint32_t e = read_pod<uint32_t>(is);
        if (e == 0) throw FormatError("MCVX: zero extent");
        v.extents.push_back(static_cast<int64_t>(e));
        n *= e;
    }
    for (auto& s : v.spacing) s = read_pod<float>(is);
    if (v.dtype == 0) {
        v.f32.resize(static_cast<size_t>(n));
        read_bytes(is, v.f32.data(), static_cast<size_t>(n) * sizeof(float));
    } else {
        v.u8.resize(static_cast<size_t>(n));
        read_bytes(is, v.u8.data(), static_cast<size_t>(n));
    }
    // Trailing bytes mean the header lied about the payload.
    char extra;
    is.read(&extra, 1);
    if (is.gcount() != 0) throw FormatError("MCVX: payload longer than extents imply");
    return v;
}

inline void save_sample(const std::string& dir, const VolumeSample& s) {
    save_mcvx_f32(dir + "/" + s.id + "_img.mcvx", s.extents, s.spacing, s.intensity);
    save_mcvx_u8(dir + "/" + s.id + "_lbl.mcvx", s.extents, s.spacing, s.labels);
}

inline VolumeSample load_sample(const std::string& dir, const std::string& id) {
    McvxVolume img = load_mcvx(dir + "/" + id + "_img.mcvx");
    McvxVolume lbl = load_mcvx(dir + "/" + id + "_lbl.mcvx");
    if (img.dtype != 0 || lbl.dtype != 1)
        throw FormatError("sample " + id + ": unexpected dtypes");
    if (img.extents != lbl.extents || img.extents.size() != 3)
        throw FormatError("sample " + id + ": image/label extents differ");
    VolumeSample s;
    s.id = id;
    s.extents = {img.extents[0], img.extents[1], img.extents[2]};
    s.spacing = img.spacing;
    s.intensity = std::move(img.f32);
    s.labels = std::move(lbl.u8);
    return s;
}

// ---------------------------------------------------------------------------
// Splits and manifests
// ---------------------------------------------------------------------------

struct DatasetSplit {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

/// Disjoint seeded split; supports the 5-shot regime via n_train = 5.
inline DatasetSplit make_split(std::vector<std::string> ids, int64_t n_train, int64_t n_test,
                               uint64_t seed) {
    if (n_train < 0 || n_test < 0 || n_train + n_test > static_cast<int64_t>(ids.size()))
        throw ContractError("make_split: requested " + std::to_string(n_train) + "+" +
                            std::to_string(n_test) + " from " + std::to_string(ids.size()) +
                            " samples");
    Rng rng(seed);
    for (int64_t i = static_cast<int64_t>(ids.size()) - 1; i > 0; --i)
        std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(rng.uniform_int(0, i))]);
    DatasetSplit split;
    split.train_ids.assign(ids.begin(), ids.begin() + n_train);
    split.test_ids.assign(ids.begin() + n_train, ids.begin() + n_train + n_test);
    std::sort(split.train_ids.begin(), split.train_ids.end());
    std::sort(split.test_ids.begin(), split.test_ids.end());
    return split;
}

/// manifest.csv: one "id,image,label,split" row per sample.
inline void write_manifest(const std::string& dir, const DatasetSplit& split) {
    std::ofstream os(dir + "/manifest.csv", std::ios::trunc);
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << "id,image,label,split\n";
    for (const auto& id : split.train_ids)
        os << id << "," << id << "_img.mcvx," << id << "_lbl.mcvx,train\n";
    for (const auto& id : split.test_ids)
        os << id << "," << id << "_img.mcvx," << id << "_lbl.mcvx,test\n";
}

inline DatasetSplit read_manifest(const std::string& dir) {
    std::ifstream is(dir + "/manifest.csv");
    if (!is) throw IoError("cannot read manifest in " + dir);
    std::string line;
    if (!std::getline(is, line) || line != "id,image,label,split")
        throw FormatError("manifest: missing or malformed header");
    DatasetSplit split;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string part;
        while (std::getline(ss, part, ',')) parts.push_back(part);
        if (parts.size() != 4) throw FormatError("manifest: malformed row: " + line);
        if (parts[3] == "train") split.train_ids.push_back(parts[0]);
        else if (parts[3] == "test") split.test_ids.push_back(parts[0]);
        else throw FormatError("manifest: unknown split tag: " + parts[3]);
    }
    return split;
}

inline std::vector<VolumeSample> load_split_samples(const std::string& dir,
                                                    const std::vector<std::string>& ids) {
    std::vector<VolumeSample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(load_sample(dir, id));
    return out;
}

} // namespace medctx

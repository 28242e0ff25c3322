#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "medctx/errors.hpp"

namespace medctx {

// Segmentation metrics: Dice similarity coefficient and the 95th-percentile
// Hausdorff distance between mask boundaries, in millimetres. Distances are
// brute-force all-pairs minima; at desk scale boundaries hold a few thousand
// voxels and this is both exact and fast enough.

/// Binary voxel mask for one class. `extents` and `spacing` follow the
/// storage order (D, H, W); spacing components are millimetres per voxel.
struct LabelMask {
    std::array<int64_t, 3> extents{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<uint8_t> voxels;

    int64_t numel() const { return extents[0] * extents[1] * extents[2]; }
    void validate(const char* op) const {
        if (numel() != static_cast<int64_t>(voxels.size()))
            throw ShapeError(std::string(op) + ": voxel count does not match extents");
        for (double s : spacing)
            if (!(s > 0.0)) throw ContractError(std::string(op) + ": spacing must be positive");
    }
};

/// Dice overlap 2|Y∩F| / (|Y| + |F|). Two empty masks count as a perfect
/// match (returns 1).
inline double dsc(const LabelMask& y, const LabelMask& f) {
    y.validate("dsc");
    f.validate("dsc");
    if (y.extents != f.extents) throw ShapeError("dsc: mask extents differ");
    int64_t ny = 0, nf = 0, ni = 0;
    for (size_t i = 0; i < y.voxels.size(); ++i) {
        const bool a = y.voxels[i] != 0, b = f.voxels[i] != 0;
        ny += a;
        nf += b;
        ni += a && b;
    }
    if (ny + nf == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(ny + nf);
}

/// Mask voxels with at least one 6-connected neighbour outside the mask or
/// lying on the array border.
inline LabelMask boundary(const LabelMask& mask) {
    mask.validate("boundary");
    const int64_t D = mask.extents[0], H = mask.extents[1], W = mask.extents[2];
    LabelMask out = mask;
    std::fill(out.voxels.begin(), out.voxels.end(), 0);
    auto at = [&](int64_t z, int64_t y, int64_t x) { return mask.voxels[static_cast<size_t>((z * H + y) * W + x)]; };
    for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                if (!at(z, y, x)) continue;
                bool edge = z == 0 || z == D - 1 || y == 0 || y == H - 1 || x == 0 || x == W - 1;
                if (!edge) {
                    edge = !at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) ||
                           !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1);
                }
                if (edge) out.voxels[static_cast<size_t>((z * H + y) * W + x)] = 1;
            }
    return out;
}

namespace detail {

inline std::vector<std::array<double, 3>> boundary_points(const LabelMask& b) {
    std::vector<std::array<double, 3>> pts;
    const int64_t D = b.extents[0], H = b.extents[1], W = b.extents[2];
    for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                if (b.voxels[static_cast<size_t>((z * H + y) * W + x)])
                    pts.push_back({static_cast<double>(z) * b.spacing[0],
                                   static_cast<double>(y) * b.spacing[1],
                                   static_cast<double>(x) * b.spacing[2]});
    return pts;
}

/// Percentile by linear interpolation between closest ranks on the sorted
/// multiset (q in [0, 1]).
inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double r = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(r);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = r - static_cast<double>(lo);
    return v[lo] + (v[lo + 1] - v[lo]) * frac;
}

inline std::vector<double> directed_min_distances(const std::vector<std::array<double, 3>>& from,
                                                  const std::vector<std::array<double, 3>>& to) {
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            const double dz = p[0] - q[0], dy = p[1] - q[1], dx = p[2] - q[2];
            const double d2 = dz * dz + dy * dy + dx * dx;
            if (d2 < best) best = d2;
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

} // namespace detail

/// 95th-percentile symmetric boundary distance in millimetres:
/// max of the two directed 95th percentiles of boundary-to-boundary minimum
/// distances. Undefined (nullopt) when either boundary is empty.
inline std::optional<double> hd95(const LabelMask& y, const LabelMask& f) {
    y.validate("hd95");
    f.validate("hd95");
    if (y.extents != f.extents) throw ShapeError("hd95: mask extents differ");
    if (y.spacing != f.spacing) throw ContractError("hd95: mask spacings differ");
    const auto by = detail::boundary_points(boundary(y));
    const auto bf = detail::boundary_points(boundary(f));
    if (by.empty() || bf.empty()) return std::nullopt;
    const double d_yf = detail::percentile(detail::directed_min_distances(bf, by), 0.95);
    const double d_fy = detail::percentile(detail::directed_min_distances(by, bf), 0.95);
    return std::max(d_yf, d_fy);
}

struct ClassMetrics {
    int cls = 0;
    double dice = 0.0;
    std::optional<double> hausdorff95;
    bool in_reference = false;
    bool in_prediction = false;
    /// Absent classes (empty in both volumes) are excluded from means.
    bool absent() const { return !in_reference && !in_prediction; }
};

struct VolumeReport {
    std::vector<ClassMetrics> classes; // foreground classes 1..num_classes-1
    double mean_dice = 1.0;            // over non-absent classes; 1 when vacuous
    std::optional<double> mean_hausdorff95; // over classes where defined
};

/// Per-foreground-class DSC and HD95 for integer label volumes, plus
/// unweighted means. Labels must lie in [0, num_classes).
inline VolumeReport evaluate_volume(const std::vector<uint8_t>& reference,
                                    const std::vector<uint8_t>& prediction,
                                    std::array<int64_t, 3> extents,
                                    std::array<double, 3> spacing, int num_classes) {
    const int64_t n = extents[0] * extents[1] * extents[2];
    if (static_cast<int64_t>(reference.size()) != n || static_cast<int64_t>(prediction.size()) != n)
        throw ShapeError("evaluate_volume: label volumes do not match extents");
    for (uint8_t v : reference)
        if (v >= num_classes) throw ContractError("evaluate_volume: reference label out of range");
    for (uint8_t v : prediction)
        if (v >= num_classes) throw ContractError("evaluate_volume: prediction label out of range");

    VolumeReport report;
    double dice_sum = 0.0;
    int dice_count = 0;
    double hd_sum = 0.0;
    int hd_count = 0;
    for (int cls = 1; cls < num_classes; ++cls) {
        LabelMask y{extents, spacing, {}}, f{extents, spacing, {}};
        y.voxels.resize(static_cast<size_t>(n));
        f.voxels.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            y.voxels[static_cast<size_t>(i)] = reference[static_cast<size_t>(i)] == cls;
            f.voxels[static_cast<size_t>(i)] = prediction[static_cast<size_t>(i)] == cls;
        }
        ClassMetrics m;
        m.cls = cls;
        m.in_reference = std::find(y.voxels.begin(), y.voxels.end(), 1) != y.voxels.end();
        m.in_prediction = std::find(f.voxels.begin(), f.voxels.end(), 1) != f.voxels.end();
        m.dice = dsc(y, f);
        m.hausdorff95 = hd95(y, f);
        if (!m.absent()) {
            dice_sum += m.dice;
            ++dice_count;
            if (m.hausdorff95) {
                hd_sum += *m.hausdorff95;
                ++hd_count;
            }
        }
        report.classes.push_back(m);
    }
    if (dice_count > 0) report.mean_dice = dice_sum / dice_count;
    if (hd_count > 0) report.mean_hausdorff95 = hd_sum / hd_count;
    return report;
}

/// CSV rows "volume,class,dsc,hd95,hd95_defined" (header written separately).
/// Absent classes are skipped, so summary means equal the means of the rows.
inline void write_report_csv(std::ostream& os, const std::string& volume_id,
                             const VolumeReport& report) {
    for (const auto& m : report.classes) {
        if (m.absent()) continue;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%d,%.9g,%.9g,%d\n", volume_id.c_str(), m.cls, m.dice,
                      m.hausdorff95 ? *m.hausdorff95 : 0.0, m.hausdorff95 ? 1 : 0);
        os << buf;
    }
}

} // namespace medctx

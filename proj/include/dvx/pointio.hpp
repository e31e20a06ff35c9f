#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dvx/pointset.hpp"

namespace dvx {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts are unsupported");

enum class PointFormat { ascii, binary };

inline PointFormat parse_format(const std::string& s) {
    if (s == "ascii") return PointFormat::ascii;
    if (s == "binary") return PointFormat::binary;
    fail("unknown point format '" + s + "' (expected ascii or binary)");
}

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) fail("truncated file while reading " + what);
    return v;
}

}  // namespace detail

// ASCII: one `x y z [label]` line per point, '#' starts a comment,
// label 0 = real, 1 = noise, default 0.
inline void write_points_ascii(const PointSet& set, std::ostream& os) {
    os.precision(17);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Vec3& p = set.points[i];
        os << p.x << ' ' << p.y << ' ' << p.z;
        if (set.labeled()) os << ' ' << static_cast<int>(set.labels[i]);
        os << '\n';
    }
}

inline PointSet read_points_ascii(std::istream& is) {
    PointSet set;
    bool any_label = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        double x, y, z;
        if (!(ls >> x)) continue;  // blank or comment-only line
        if (!(ls >> y >> z))
            fail("line " + std::to_string(lineno) + ": expected three coordinates");
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
            fail("line " + std::to_string(lineno) + ": non-finite coordinate");
        int label = 0;
        if (ls >> label) {
            if (label != 0 && label != 1)
                fail("line " + std::to_string(lineno) + ": label must be 0 or 1");
            any_label = true;
        }
        std::string trailing;
        if (ls >> trailing)
            fail("line " + std::to_string(lineno) + ": trailing content '" + trailing + "'");
        set.points.push_back({x, y, z});
        set.labels.push_back(label == 0 ? PointLabel::real : PointLabel::noise);
    }
    if (set.points.empty()) fail("no points found in ASCII input");
    if (!any_label) set.labels.clear();
    return set;
}

// Binary: magic "VXPT", version u16, count u64, count x 3 float64, then a
// label flag byte followed by count x u8 labels when the flag is 1.
inline void write_points_binary(const PointSet& set, std::ostream& os) {
    os.write("VXPT", 4);
    detail::write_pod<std::uint16_t>(os, 1);
    detail::write_pod<std::uint64_t>(os, set.size());
    for (const auto& p : set.points) {
        detail::write_pod(os, p.x);
        detail::write_pod(os, p.y);
        detail::write_pod(os, p.z);
    }
    detail::write_pod<std::uint8_t>(os, set.labeled() ? 1 : 0);
    if (set.labeled())
        for (auto l : set.labels) detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(l));
}

inline PointSet read_points_binary(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VXPT", 4) != 0) fail("bad magic: not a VXPT point file");
    const auto version = detail::read_pod<std::uint16_t>(is, "version");
    if (version != 1) fail("unsupported VXPT version " + std::to_string(version));
    const auto count = detail::read_pod<std::uint64_t>(is, "point count");
    if (count == 0) fail("VXPT file contains no points");

    PointSet set;
    set.points.resize(count);
    for (auto& p : set.points) {
        p.x = detail::read_pod<double>(is, "coordinate");
        p.y = detail::read_pod<double>(is, "coordinate");
        p.z = detail::read_pod<double>(is, "coordinate");
        if (!p.finite()) fail("VXPT file contains a non-finite coordinate");
    }
    const auto flag = detail::read_pod<std::uint8_t>(is, "label flag");
    if (flag == 1) {
        set.labels.resize(count);
        for (auto& l : set.labels) {
            const auto v = detail::read_pod<std::uint8_t>(is, "label");
            if (v > 1) fail("VXPT label byte must be 0 or 1");
            l = v == 0 ? PointLabel::real : PointLabel::noise;
        }
    } else if (flag != 0) {
        fail("VXPT label flag byte must be 0 or 1");
    }
    return set;
}

inline void write_points(const PointSet& set, const std::filesystem::path& path,
                         PointFormat format) {
    std::ofstream os(path, format == PointFormat::binary ? std::ios::binary : std::ios::out);
    if (!os) fail("cannot open '" + path.string() + "' for writing");
    format == PointFormat::binary ? write_points_binary(set, os) : write_points_ascii(set, os);
    if (!os) fail("write failed for '" + path.string() + "'");
}

inline PointSet read_points(const std::filesystem::path& path, PointFormat format) {
    std::ifstream is(path, format == PointFormat::binary ? std::ios::binary : std::ios::in);
    if (!is) fail("cannot open '" + path.string() + "' for reading");
    try {
        return format == PointFormat::binary ? read_points_binary(is) : read_points_ascii(is);
    } catch (const std::exception& e) {
        fail(path.string() + ": " + e.what());
    }
}

// Correspondence file: one `i j` index pair per ASCII line, '#' comments.
inline void write_correspondences(
    const std::vector<std::pair<std::size_t, std::size_t>>& gt_map, std::ostream& os) {
    for (const auto& [i, j] : gt_map) os << i << ' ' << j << '\n';
}

inline std::vector<std::pair<std::size_t, std::size_t>> read_correspondences(std::istream& is) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        long long i, j;
        if (!(ls >> i)) continue;
        if (!(ls >> j) || i < 0 || j < 0)
            fail("line " + std::to_string(lineno) + ": expected two nonnegative indices");
        out.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
    return out;
}

inline std::vector<std::pair<std::size_t, std::size_t>>
read_correspondences(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail("cannot open '" + path.string() + "' for reading");
    try {
        return read_correspondences(is);
    } catch (const std::exception& e) {
        fail(path.string() + ": " + e.what());
    }
}

}  // namespace dvx

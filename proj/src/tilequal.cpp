#include "scanshift/tilequal.hpp"

#include "scanshift/error.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include <fmt/format.h>

namespace scanshift::tilequal {

namespace {

using i128 = __int128;
using boost::multiprecision::cpp_int;

void check_shape(const GrayTile& tile) {
    if (tile.pixels.size() != tile.width * tile.height) {
        throw Error(ErrorKind::BadImage,
                    fmt::format("tile is {}x{} but holds {} pixels", tile.width, tile.height,
                                tile.pixels.size()));
    }
}

}  // namespace

Histogram histogram(const GrayTile& tile) {
    check_shape(tile);
    Histogram h{};
    for (const auto v : tile.pixels) ++h[v];
    return h;
}

int otsu_threshold(const Histogram& counts) {
    int populated = 0;
    std::uint64_t total = 0;
    std::uint64_t total_sum = 0;
    for (int i = 0; i < 256; ++i) {
        populated += counts[i] > 0 ? 1 : 0;
        total += counts[i];
        total_sum += counts[i] * static_cast<std::uint64_t>(i);
    }
    if (populated < 2) {
        throw Error(ErrorKind::DegenerateHistogram, "Otsu needs at least two populated bins");
    }
    // Between-class variance times total^2 is (total*s0 - w0*sum)^2 / (w0*w1).
    // Candidates are compared as exact rationals so ties resolve to the smallest t.
    int best = -1;
    cpp_int best_num = 0;
    cpp_int best_den = 1;
    std::uint64_t w0 = 0;
    std::uint64_t s0 = 0;
    for (int t = 0; t < 255; ++t) {
        w0 += counts[t];
        s0 += counts[t] * static_cast<std::uint64_t>(t);
        const std::uint64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const cpp_int diff = cpp_int(total) * s0 - cpp_int(w0) * total_sum;
        const cpp_int num = diff * diff;
        const cpp_int den = cpp_int(w0) * w1;
        if (best < 0 || num * best_den > best_num * den) {
            best = t;
            best_num = num;
            best_den = den;
        }
    }
    return best;
}

double variance_of_laplacian(const GrayTile& tile) {
    check_shape(tile);
    if (tile.width < 3 || tile.height < 3) {
        throw Error(ErrorKind::TooSmall,
                    fmt::format("Laplacian needs a tile of at least 3x3, got {}x{}", tile.width,
                                tile.height));
    }
    // Responses are integers in [-1020, 1020]; sums fit comfortably in 64 bits
    // for any realistic tile, so the variance is exact up to the final division.
    std::int64_t sum = 0;
    i128 sum_sq = 0;
    for (std::size_t y = 1; y + 1 < tile.height; ++y) {
        for (std::size_t x = 1; x + 1 < tile.width; ++x) {
            const std::int64_t r = static_cast<std::int64_t>(tile.at(x, y - 1)) + tile.at(x - 1, y) +
                                   tile.at(x + 1, y) + tile.at(x, y + 1) -
                                   4 * static_cast<std::int64_t>(tile.at(x, y));
            sum += r;
            sum_sq += static_cast<i128>(r) * r;
        }
    }
    const auto n = static_cast<i128>((tile.width - 2) * (tile.height - 2));
    // var = (n * sum_sq - sum^2) / n^2
    const i128 num = n * sum_sq - static_cast<i128>(sum) * sum;
    return static_cast<double>(num) / (static_cast<double>(n) * static_cast<double>(n));
}

std::vector<std::size_t> filter_tiles(std::span<const double> scores, double cutoff) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] >= cutoff) kept.push_back(i);
    }
    return kept;
}

GrayTile read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, fmt::format("cannot open {}", path.string()));
    auto bad = [&](const std::string& why) {
        throw Error(ErrorKind::BadImage, fmt::format("{}: {}", path.string(), why));
    };
    auto token = [&]() {
        std::string tok;
        int c;
        while ((c = in.get()) != EOF) {
            if (c == '#') {
                while ((c = in.get()) != EOF && c != '\n') {
                }
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
        return tok;
    };
    if (token() != "P5") bad("not a binary PGM (P5)");
    std::size_t w = 0;
    std::size_t h = 0;
    int maxval = 0;
    try {
        w = std::stoul(token());
        h = std::stoul(token());
        maxval = std::stoi(token());
    } catch (const std::logic_error&) {
        bad("malformed header");
    }
    if (w == 0 || h == 0) bad("zero-sized image");
    if (maxval < 1 || maxval > 255) bad("only 8-bit PGM is supported");
    GrayTile tile{w, h, std::vector<std::uint8_t>(w * h)};
    in.read(reinterpret_cast<char*>(tile.pixels.data()), static_cast<std::streamsize>(tile.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(tile.pixels.size())) bad("truncated pixel data");
    return tile;
}

void write_pgm(const std::filesystem::path& path, const GrayTile& tile) {
    check_shape(tile);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path.string()));
    os << "P5\n" << tile.width << ' ' << tile.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(tile.pixels.data()),
             static_cast<std::streamsize>(tile.pixels.size()));
}

}  // namespace scanshift::tilequal

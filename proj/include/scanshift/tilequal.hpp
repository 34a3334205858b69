#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace scanshift::tilequal {

/// 8-bit grayscale tile, row-major.
struct GrayTile {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

using Histogram = std::array<std::uint64_t, 256>;

Histogram histogram(const GrayTile& tile);

/// Smallest t maximizing the between-class variance of [0..t] vs [t+1..255].
/// Throws DegenerateHistogram when fewer than two bins are populated.
int otsu_threshold(const Histogram& counts);

/// Population variance of the 4-neighbour Laplacian over interior pixels.
/// Throws TooSmall below 3x3 and BadImage on a size mismatch.
double variance_of_laplacian(const GrayTile& tile);

inline constexpr double kBlurCutoff = 500.0;

/// Indices i with scores[i] >= cutoff, ascending.
std::vector<std::size_t> filter_tiles(std::span<const double> scores, double cutoff = kBlurCutoff);

/// Binary PGM (P5, maxval <= 255). Throws BadImage / IoError.
GrayTile read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayTile& tile);

}  // namespace scanshift::tilequal

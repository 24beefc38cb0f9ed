#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace ssmtl {

// 8-bit RGB image, row-major, interleaved channels.
struct ImageU8 {
    static constexpr int kChannels = 3;

    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    ImageU8() = default;
    ImageU8(int h, int w, std::uint8_t fill = 0);

    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
    }
    std::uint8_t& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[index(y, x, c)]; }

    bool empty() const { return pixels.empty(); }
    bool operator==(const ImageU8&) const = default;
};

struct ImageIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ImageU8 read_ppm(const std::filesystem::path& path);
void write_ppm(const ImageU8& img, const std::filesystem::path& path);
ImageU8 read_png(const std::filesystem::path& path);

// Dispatches on file signature (P6 or PNG).
ImageU8 read_image(const std::filesystem::path& path);

}  // namespace ssmtl

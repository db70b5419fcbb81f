#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tensorf {

/// Interleaved 8-bit image, row-major from the top-left; 1, 3, or 4 channels.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> data;

    std::uint8_t at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// Linear RGB image in [0, 1], row-major, three channels.
struct ImageF {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;

    float& at(int x, int y, int c) {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float at(int x, int y, int c) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    static ImageF zeros(int w, int h) {
        return {w, h, std::vector<float>(static_cast<std::size_t>(w) * h * 3, 0.0f)};
    }
};

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& image);

/// Scales [0,1] floats to 8-bit with rounding; values are clamped first.
Image8 to_image8(const ImageF& image);

/// 8-bit image to floats in [0,1]; RGBA is composited onto the given
/// background (white for the synthetic datasets), grayscale is replicated.
ImageF to_imagef(const Image8& image, float background = 1.0f);

}  // namespace tensorf

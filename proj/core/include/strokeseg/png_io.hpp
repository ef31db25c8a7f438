#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "strokeseg/tensor.hpp"

namespace strokeseg::png_io {

namespace fs = std::filesystem;

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major
};

/// Minimal deterministic PNG encoder (8-bit RGB, zlib level fixed).
void write_png(const Image& img, const fs::path& path);

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kPenumbraColor{255, 215, 0};  // yellow
inline constexpr Rgb kCoreColor{255, 64, 64};      // red

/// Grayscale background (scaled by [lo,hi]) with 1-px contours of
/// labels==1 and labels==2 drawn on top.
Image render_overlay(const Tensor& gray2d, const IntTensor& labels2d, float lo, float hi,
                     Rgb penumbra_color = kPenumbraColor, Rgb core_color = kCoreColor);

}  // namespace strokeseg::png_io

#include "strokeseg/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>

#include "strokeseg/morphology.hpp"

namespace strokeseg::png_io {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> buf;
    put_u32(buf, static_cast<std::uint32_t>(data.size()));
    buf.insert(buf.end(), type, type + 4);
    buf.insert(buf.end(), data.begin(), data.end());
    const auto crc = crc32(0L, buf.data() + 4, static_cast<uInt>(buf.size() - 4));
    put_u32(buf, static_cast<std::uint32_t>(crc));
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void write_png(const Image& img, const fs::path& path) {
    if (img.width <= 0 || img.height <= 0 ||
        img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
        throw IOError("write_png: inconsistent image buffer");

    // filter byte 0 before every scanline
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height) * (1 + 3 * static_cast<size_t>(img.width)));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const auto* row = img.rgb.data() + static_cast<size_t>(y) * img.width * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(img.width) * 3);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IOError("write_png: deflate failed");
    compressed.resize(bound);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot write " + path.string());
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    f.write(reinterpret_cast<const char*>(sig), sizeof(sig));

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr);
    write_chunk(f, "IDAT", compressed);
    write_chunk(f, "IEND", {});
    if (!f) throw IOError("short write to " + path.string());
}

Image render_overlay(const Tensor& gray2d, const IntTensor& labels2d, float lo, float hi,
                     Rgb penumbra_color, Rgb core_color) {
    if (gray2d.rank() != 2 || labels2d.rank() != 2 || gray2d.shape() != labels2d.shape())
        throw ShapeError("render_overlay: gray/labels must be equal 2-d shapes");
    const int h = gray2d.dim(0), w = gray2d.dim(1);
    const float span = hi > lo ? hi - lo : 1.0f;

    Image img;
    img.width = w;
    img.height = h;
    img.rgb.assign(static_cast<size_t>(h) * w * 3, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float v = std::clamp((gray2d.at(y, x) - lo) / span, 0.0f, 1.0f);
            const auto g = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
            auto* px = &img.rgb[(static_cast<size_t>(y) * w + x) * 3];
            px[0] = px[1] = px[2] = g;
        }

    // 1-px inner contour: mask minus its erosion
    auto draw_contour = [&](int cls, Rgb color) {
        ByteTensor mask({h, w});
        for (std::int64_t i = 0; i < labels2d.numel(); ++i) mask[i] = labels2d[i] == cls ? 1 : 0;
        const ByteTensor eroded = morphology::erode(mask);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (mask.at(y, x) != 0 && eroded.at(y, x) == 0) {
                    auto* px = &img.rgb[(static_cast<size_t>(y) * w + x) * 3];
                    px[0] = color[0];
                    px[1] = color[1];
                    px[2] = color[2];
                }
    };
    draw_contour(1, penumbra_color);
    draw_contour(2, core_color);
    return img;
}

}  // namespace strokeseg::png_io

#include "fsiad/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace fsiad {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    (void)png;
    throw std::runtime_error(std::string("libpng: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

torch::Tensor read_png(const std::filesystem::path& path) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("cannot open image '" + path.string() + "'");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    struct Cleanup {
        png_structp* png;
        png_infop* info;
        ~Cleanup() { png_destroy_read_struct(png, info, nullptr); }
    } cleanup{&png, &info};

    try {
        png_init_io(png, f.get());
        png_read_info(png, info);
        const auto width = png_get_image_width(png, info);
        const auto height = png_get_image_height(png, info);
        const auto color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        png_read_update_info(png, info);
        if (png_get_rowbytes(png, info) != width * 3)
            throw std::runtime_error("unsupported PNG layout");

        std::vector<unsigned char> pixels(static_cast<std::size_t>(width) * height * 3);
        std::vector<png_bytep> rows(height);
        for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * width * 3;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);

        auto hwc = torch::from_blob(pixels.data(), {static_cast<long>(height), static_cast<long>(width), 3},
                                    torch::kUInt8);
        return hwc.permute({2, 0, 1}).contiguous().clone();
    } catch (const std::runtime_error& e) {
        throw std::runtime_error("cannot decode '" + path.string() + "': " + e.what());
    }
}

void write_png(const std::filesystem::path& path, const torch::Tensor& rgb8) {
    if (rgb8.dim() != 3 || rgb8.size(0) != 3 || rgb8.scalar_type() != torch::kUInt8)
        throw std::invalid_argument("write_png expects a 3 x H x W uint8 tensor");
    auto hwc = rgb8.permute({1, 2, 0}).contiguous();
    const auto height = static_cast<png_uint_32>(hwc.size(0));
    const auto width = static_cast<png_uint_32>(hwc.size(1));

    File f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("cannot write image '" + path.string() + "'");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    struct Cleanup {
        png_structp* png;
        png_infop* info;
        ~Cleanup() { png_destroy_write_struct(png, info); }
    } cleanup{&png, &info};

    png_init_io(png, f.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    auto* base = hwc.data_ptr<std::uint8_t>();
    for (png_uint_32 y = 0; y < height; ++y) png_write_row(png, base + static_cast<std::size_t>(y) * width * 3);
    png_write_end(png, nullptr);
}

torch::Tensor to_signed_unit(const torch::Tensor& rgb8) {
    return rgb8.to(torch::kFloat32) / 127.5f - 1.0f;
}

torch::Tensor quantize(const torch::Tensor& image) {
    auto scaled = (image.detach().to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0f) * 127.5f;
    return torch::round(scaled).clamp(0, 255).to(torch::kUInt8);
}

}  // namespace fsiad

#include "slideseg/png.hpp"

#include "slideseg/error.hpp"

#include <png.h>

#include <cstring>

namespace slideseg {

namespace {

void write_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), len);
}

void flush_cb(png_structp) {}

struct Reader {
    const std::string* src;
    std::size_t pos;
};

void read_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* r = static_cast<Reader*>(png_get_io_ptr(png));
    if (r->pos + len > r->src->size()) png_error(png, "truncated png");
    std::memcpy(data, r->src->data() + r->pos, len);
    r->pos += len;
}

void warning_cb(png_structp, png_const_charp) {}

}  // namespace

std::string encode_png(const PngImage& img) {
    if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3) ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw InvalidInput("bad image for png encoding");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warning_cb);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::string out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png encoding failed");
    }
    {
        png_set_write_fn(png, &out, write_cb, flush_cb);
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                     img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
        for (int r = 0; r < img.height; ++r)
            png_write_row(png, const_cast<png_bytep>(img.pixels.data() + r * stride));
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

PngImage decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
        throw CorruptData("not a png");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warning_cb);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    Reader reader{&bytes, 0};
    PngImage img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw CorruptData("malformed png");
    }
    png_set_read_fn(png, &reader, read_cb);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const bool supported = png_get_bit_depth(png, info) == 8 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_RGB);
    if (supported) {
        img.width = static_cast<int>(png_get_image_width(png, info));
        img.height = static_cast<int>(png_get_image_height(png, info));
        img.channels = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
        img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
        const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
        for (int r = 0; r < img.height; ++r) png_read_row(png, img.pixels.data() + r * stride, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    if (!supported) throw CorruptData("only 8-bit gray or RGB png is supported");
    return img;
}

}  // namespace slideseg

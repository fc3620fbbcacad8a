#include "crisp/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "crisp/error.hpp"

namespace crisp {
namespace {

struct ReadCursor {
    const std::string* bytes;
    std::size_t offset;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
    auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
    if (cursor->offset + length > cursor->bytes->size()) png_error(png, "unexpected end of PNG data");
    std::memcpy(out, cursor->bytes->data() + cursor->offset, length);
    cursor->offset += length;
}

void write_to_string(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), length);
}

void flush_noop(png_structp) {}

void error_handler(png_structp png, png_const_charp message) {
    auto* buffer = static_cast<std::string*>(png_get_error_ptr(png));
    if (buffer) *buffer = message;
    png_longjmp(png, 1);
}

void warning_handler(png_structp, png_const_charp) {}

}  // namespace

Image decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
        fail(ErrorCode::ImageIo, "not a PNG stream");

    std::string message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, error_handler, warning_handler);
    if (!png) fail(ErrorCode::ImageIo, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(ErrorCode::ImageIo, "png_create_info_struct failed");
    }

    ReadCursor cursor{&bytes, 0};
    std::vector<png_byte> raw;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int bit_depth = 0;
    int channels = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::ImageIo, "PNG decode error: " + message);
    }

    png_set_read_fn(png, &cursor, read_from_memory);
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
        bit_depth = 8;
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        bit_depth = 8;
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color_type == PNG_COLOR_TYPE_RGB || color_type == PNG_COLOR_TYPE_RGB_ALPHA ||
        color_type == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (bit_depth == 16) png_set_swap(png);  // host little-endian u16
    png_read_update_info(png, info);

    channels = png_get_channels(png, info);
    const png_size_t row_bytes = png_get_rowbytes(png, info);
    raw.resize(row_bytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = raw.data() + y * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(static_cast<int>(height), static_cast<int>(width));
    const double max_code = bit_depth == 16 ? 65535.0 : 255.0;
    for (png_uint_32 y = 0; y < height; ++y) {
        for (png_uint_32 x = 0; x < width; ++x) {
            double code;
            if (bit_depth == 16) {
                std::uint16_t v;
                std::memcpy(&v, rows[y] + (x * channels) * 2, 2);
                code = v;
            } else {
                code = rows[y][x * channels];
            }
            img.at(static_cast<int>(y), static_cast<int>(x)) = static_cast<float>(code / max_code);
        }
    }
    return img;
}

Image read_png(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingImageFile, "cannot open image " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    try {
        return decode_png(buffer.str());
    } catch (const Error& e) {
        fail(e.code(), path.string() + ": " + e.what());
    }
}

std::string encode_png(const Image& img, PngDepth depth) {
    if (img.empty()) fail(ErrorCode::ImageIo, "cannot encode an empty image");
    std::string message;
    std::string out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, error_handler, warning_handler);
    if (!png) fail(ErrorCode::ImageIo, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail(ErrorCode::ImageIo, "png_create_info_struct failed");
    }

    const int bits = static_cast<int>(depth);
    const int bytes_per_px = bits / 8;
    const double max_code = bits == 16 ? 65535.0 : 255.0;
    std::vector<png_byte> raw(static_cast<std::size_t>(img.height()) * img.width() * bytes_per_px);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const double v = std::clamp(static_cast<double>(img.at(y, x)), 0.0, 1.0);
            const auto code = static_cast<std::uint32_t>(std::lround(v * max_code));
            const std::size_t at = (static_cast<std::size_t>(y) * img.width() + x) * bytes_per_px;
            if (bits == 16) {
                raw[at] = static_cast<png_byte>(code >> 8);  // PNG is big-endian
                raw[at + 1] = static_cast<png_byte>(code & 0xff);
            } else {
                raw[at] = static_cast<png_byte>(code);
            }
        }
    }
    std::vector<png_bytep> rows(img.height());
    for (int y = 0; y < img.height(); ++y)
        rows[y] = raw.data() + static_cast<std::size_t>(y) * img.width() * bytes_per_px;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCode::ImageIo, "PNG encode error: " + message);
    }
    png_set_write_fn(png, &out, write_to_string, flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), bits,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img, PngDepth depth) {
    const std::string bytes = encode_png(img, depth);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::ImageIo, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace crisp

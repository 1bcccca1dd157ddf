#include "flowtok/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <cstdio>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "flowtok/errors.hpp"

namespace flowtok {

bool is_supported_image(const std::string& path) {
    auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return false;
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == "png" || ext == "jpg" || ext == "jpeg";
}

namespace {

Tensor from_rgb8(const std::vector<unsigned char>& rgb, int h, int w) {
    Tensor t = Tensor::zeros({h, w, 3});
    for (size_t i = 0; i < t.v.size(); ++i) t.v[i] = static_cast<float>(rgb[i]) / 255.0f;
    return t;
}

Tensor read_png_file(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw IoError("cannot read PNG: " + path);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode PNG: " + path);
    }
    return from_rgb8(buf, static_cast<int>(image.height), static_cast<int>(image.width));
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    longjmp(mgr->jump, 1);
}

Tensor read_jpeg_file(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open JPEG: " + path);
    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(fp);
        throw IoError("cannot decode JPEG: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    std::vector<unsigned char> rgb(static_cast<size_t>(h) * w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = rgb.data() + static_cast<size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    return from_rgb8(rgb, h, w);
}

}  // namespace

Tensor read_image(const std::string& path) {
    if (!is_supported_image(path)) throw IoError("unsupported image format: " + path);
    auto dot = path.find_last_of('.');
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(path[dot + 1])));
    return c == 'p' ? read_png_file(path) : read_jpeg_file(path);
}

void write_png(const std::string& path, const Tensor& img) {
    const Tensor* p = &img;
    Tensor squeezed;
    if (img.shape.size() == 4) {
        if (img.shape[0] != 1) throw ShapeError("write_png: batch size must be 1, got " + img.shape_str());
        squeezed = Tensor::from({img.shape[1], img.shape[2], img.shape[3]}, img.v);
        p = &squeezed;
    }
    if (p->shape.size() != 3 || p->shape[2] != 3)
        throw ShapeError("write_png: image must be (H,W,3), got " + p->shape_str());
    const int h = p->shape[0], w = p->shape[1];
    std::vector<unsigned char> rgb(static_cast<size_t>(h) * w * 3);
    for (size_t i = 0; i < rgb.size(); ++i) {
        float v = std::clamp(p->v[i], 0.0f, 1.0f);
        rgb[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
        throw IoError("cannot write PNG: " + path);
}

Tensor resize_shorter_edge_center_crop(const Tensor& img, int size) {
    if (img.shape.size() != 3 || img.shape[2] != 3)
        throw ShapeError("resize: image must be (H,W,3), got " + img.shape_str());
    if (size < 1) throw ConfigError("resize: size must be positive");
    const int h = img.shape[0], w = img.shape[1];
    const double scale = static_cast<double>(size) / std::min(h, w);
    const int nh = std::max(size, static_cast<int>(std::lround(h * scale)));
    const int nw = std::max(size, static_cast<int>(std::lround(w * scale)));

    Tensor resized = Tensor::zeros({nh, nw, 3});
    const double sy = static_cast<double>(h) / nh, sx = static_cast<double>(w) / nw;
    for (int oy = 0; oy < nh; ++oy)
        for (int ox = 0; ox < nw; ++ox) {
            double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
            double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            double wy = fy - y0, wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                auto at = [&](int yy, int xx) {
                    return static_cast<double>(img.v[(static_cast<size_t>(yy) * w + xx) * 3 + c]);
                };
                double val = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                             wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                resized.v[(static_cast<size_t>(oy) * nw + ox) * 3 + c] = static_cast<float>(val);
            }
        }

    const int top = (nh - size) / 2, left = (nw - size) / 2;
    Tensor out = Tensor::zeros({size, size, 3});
    for (int y = 0; y < size; ++y)
        std::memcpy(out.v.data() + static_cast<size_t>(y) * size * 3,
                    resized.v.data() + (static_cast<size_t>(y + top) * nw + left) * 3,
                    static_cast<size_t>(size) * 3 * sizeof(float));
    return out;
}

}  // namespace flowtok

#include "poec/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "poec/error.hpp"

namespace poec {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f.seekg(0, std::ios::end);
    const auto len = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<uint8_t> buf(static_cast<size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
    if (!f) throw IoError("cannot read " + path);
    return buf;
}

struct Cursor {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;
    const std::string& path;

    uint32_t u32_be() {
        if (pos + 4 > buf.size()) throw IoError(path + ": truncated header");
        uint32_t v = (uint32_t(buf[pos]) << 24) | (uint32_t(buf[pos + 1]) << 16) |
                     (uint32_t(buf[pos + 2]) << 8) | uint32_t(buf[pos + 3]);
        pos += 4;
        return v;
    }
};

constexpr uint32_t kIdxImageMagic = 0x00000803;
constexpr uint32_t kIdxLabelMagic = 0x00000801;

}  // namespace

IdxDataset load_idx_images(const std::string& path) {
    const auto buf = read_file(path);
    Cursor cur{buf, 0, path};
    const uint32_t magic = cur.u32_be();
    if (magic == kIdxLabelMagic)
        throw IoError(path + ": this is an IDX label file, expected an image file");
    if (magic != kIdxImageMagic)
        throw IoError(path + ": bad IDX magic");
    const uint32_t count = cur.u32_be();
    const uint32_t rows = cur.u32_be();
    const uint32_t cols = cur.u32_be();
    if (rows == 0 || cols == 0 || rows > 1u << 16 || cols > 1u << 16 ||
        count > 1u << 28)
        throw IoError(path + ": implausible IDX dimensions");
    const uint64_t need = uint64_t(count) * rows * cols;
    if (buf.size() - cur.pos < need)
        throw IoError(path + ": truncated pixel data");

    IdxDataset ds;
    ds.count = static_cast<int>(count);
    ds.rows = static_cast<int>(rows);
    ds.cols = static_cast<int>(cols);
    ds.images.reserve(count);
    const uint8_t* p = buf.data() + cur.pos;
    for (uint32_t i = 0; i < count; ++i) {
        Image img(ds.rows, ds.cols, 1);
        for (size_t n = 0; n < img.pix.size(); ++n)
            img.pix[n] = static_cast<double>(*p++) / 255.0;
        ds.images.push_back(std::move(img));
    }
    return ds;
}

std::vector<uint8_t> load_idx_labels(const std::string& path) {
    const auto buf = read_file(path);
    Cursor cur{buf, 0, path};
    const uint32_t magic = cur.u32_be();
    if (magic == kIdxImageMagic)
        throw IoError(path + ": this is an IDX image file, expected a label file");
    if (magic != kIdxLabelMagic)
        throw IoError(path + ": bad IDX magic");
    const uint32_t count = cur.u32_be();
    if (buf.size() - cur.pos < count) throw IoError(path + ": truncated label data");
    return {buf.begin() + static_cast<long>(cur.pos),
            buf.begin() + static_cast<long>(cur.pos + count)};
}

namespace {

uint8_t quantize(double p) {
    const long v = std::lround(255.0 * p);
    return static_cast<uint8_t>(std::clamp(v, 0l, 255l));
}

void write_pgm(const std::vector<uint8_t>& bytes, int w, int h, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "P5\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("cannot write " + path);
}

}  // namespace

void save_pgm(const Image& img, const std::string& path) {
    if (img.c != 1) throw ShapeError("save_pgm: only single-channel images");
    std::vector<uint8_t> bytes(img.pix.size());
    for (size_t n = 0; n < img.pix.size(); ++n) bytes[n] = quantize(img.pix[n]);
    write_pgm(bytes, img.w, img.h, path);
}

Image load_pgm(const std::string& path) {
    const auto buf = read_file(path);
    size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < buf.size()) {
            if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(buf[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> int {
        skip_ws();
        int v = 0;
        bool any = false;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
            v = v * 10 + (buf[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw IoError(path + ": malformed PGM header");
        return v;
    };
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
        throw IoError(path + ": not a binary PGM (P5) file");
    pos = 2;
    const int w = read_int();
    const int h = read_int();
    const int maxval = read_int();
    if (maxval != 255) throw IoError(path + ": only maxval 255 supported");
    ++pos;  // single whitespace after the header
    if (w < 1 || h < 1 || buf.size() - pos < static_cast<size_t>(w) * h)
        throw IoError(path + ": truncated PGM data");
    Image img(h, w, 1);
    for (size_t n = 0; n < img.pix.size(); ++n)
        img.pix[n] = static_cast<double>(buf[pos + n]) / 255.0;
    return img;
}

void save_image_grid(std::span<const Image> images, int cols, const std::string& path) {
    if (images.empty()) throw DomainError("save_image_grid: no images");
    if (cols < 1) throw DomainError("save_image_grid: cols must be >= 1");
    const int h = images[0].h, w = images[0].w;
    for (const Image& img : images)
        if (img.h != h || img.w != w || img.c != 1)
            throw ShapeError("save_image_grid: images must be uniform single-channel");
    const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
    std::vector<uint8_t> canvas(static_cast<size_t>(rows) * h * cols * w, 0);
    for (size_t n = 0; n < images.size(); ++n) {
        const int gy = static_cast<int>(n) / cols, gx = static_cast<int>(n) % cols;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                canvas[(static_cast<size_t>(gy * h + y) * cols * w) + gx * w + x] =
                    quantize(images[n].pix[static_cast<size_t>(y) * w + x]);
    }
    write_pgm(canvas, cols * w, rows * h, path);
}

}  // namespace poec

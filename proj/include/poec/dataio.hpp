#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "poec/conv.hpp"

namespace poec {

struct IdxDataset {
    int count = 0, rows = 0, cols = 0;
    std::vector<Image> images;  // single channel, pixels scaled to [0, 1]
};

// Parses a big-endian IDX image file (magic 0x00000803, unsigned bytes);
// pixels are scaled by 1/255.  A label-file magic (0x00000801) is rejected
// with a distinct message.  Never reads past the declared lengths.
IdxDataset load_idx_images(const std::string& path);

// Parses a big-endian IDX label file (magic 0x00000801).  Labels are not
// used by any trainer; the parser exists so label files are recognized.
std::vector<uint8_t> load_idx_labels(const std::string& path);

// Writes a single-channel image as binary PGM (P5), pixels quantized with
// round(255*p).
void save_pgm(const Image& img, const std::string& path);
Image load_pgm(const std::string& path);

// Tiles images row-major into a grid of `cols` columns (trailing cells
// black) and writes one PGM.
void save_image_grid(std::span<const Image> images, int cols, const std::string& path);

}  // namespace poec

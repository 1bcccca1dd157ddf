#pragma once

#include <string>

#include "flowtok/tensor.hpp"

namespace flowtok {

bool is_supported_image(const std::string& path);  // .png/.jpg/.jpeg, case-insensitive

// Decodes to (H,W,3) float32 in [0,1]. Throws IoError on unreadable files.
Tensor read_image(const std::string& path);

// img must be (H,W,3) or (B,H,W,3) with B=1, values clamped to [0,1] on write.
void write_png(const std::string& path, const Tensor& img);

// Bilinear resize so the shorter edge equals `size`, then center crop square.
Tensor resize_shorter_edge_center_crop(const Tensor& img, int size);

}  // namespace flowtok

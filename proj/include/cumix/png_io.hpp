#pragma once

#include <string>

#include "cumix/tensor.hpp"

namespace cumix::io {

// 8-bit RGB PNG. Values are scaled by 255 and rounded on write, divided by
// 255 on read; images whose pixels lie on the 8-bit grid round-trip exactly.
void write_png(const std::string& path, const Tensor<float>& img);
Tensor<float> read_png(const std::string& path);

}  // namespace cumix::io

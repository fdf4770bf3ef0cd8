#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cumix/tensor.hpp"

namespace cumix::io {

// Flat binary tensor format used for checkpoints, packed datasets and
// recorded activations: magic "CUMTEN1", u8 dtype code (1 = f32, 2 = f64,
// 3 = i32), u8 rank, little-endian u64 dims, then raw little-endian elements.
inline constexpr char kTensorMagic[7] = {'C', 'U', 'M', 'T', 'E', 'N', '1'};

template <typename T>
void save_tensor(std::ostream& os, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(std::istream& is);

template <typename T>
void save_tensor_file(const std::string& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor_file(const std::string& path);

void save_i32(std::ostream& os, const Shape& shape, const std::vector<int32_t>& values);
std::pair<Shape, std::vector<int32_t>> load_i32(std::istream& is);
void save_i32_file(const std::string& path, const Shape& shape, const std::vector<int32_t>& values);
std::pair<Shape, std::vector<int32_t>> load_i32_file(const std::string& path);

}  // namespace cumix::io

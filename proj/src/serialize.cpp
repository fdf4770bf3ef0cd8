#include "cumix/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

static_assert(std::endian::native == std::endian::little,
              "CUMTEN1 I/O assumes a little-endian host");

namespace cumix::io {

namespace {

template <typename T>
constexpr uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>) return 1;
    else if constexpr (std::is_same_v<T, double>) return 2;
    else return 3;
}

void write_header(std::ostream& os, uint8_t dtype, const Shape& shape) {
    os.write(kTensorMagic, sizeof(kTensorMagic));
    os.put(static_cast<char>(dtype));
    os.put(static_cast<char>(shape.size()));
    for (const int64_t d : shape) {
        const auto u = static_cast<uint64_t>(d);
        os.write(reinterpret_cast<const char*>(&u), sizeof(u));
    }
}

Shape read_header(std::istream& is, uint8_t expect_dtype) {
    char magic[sizeof(kTensorMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
        throw IoError("CUMTEN1: bad magic");
    const int dtype = is.get();
    const int rank = is.get();
    if (dtype != expect_dtype)
        throw IoError("CUMTEN1: dtype code " + std::to_string(dtype) + ", expected " +
                      std::to_string(expect_dtype));
    if (rank < 0 || rank > 8) throw IoError("CUMTEN1: bad rank " + std::to_string(rank));
    Shape shape(static_cast<size_t>(rank));
    for (auto& d : shape) {
        uint64_t u = 0;
        is.read(reinterpret_cast<char*>(&u), sizeof(u));
        d = static_cast<int64_t>(u);
        if (d < 0) throw IoError("CUMTEN1: negative dim");
    }
    if (!is) throw IoError("CUMTEN1: truncated header");
    return shape;
}

}  // namespace

template <typename T>
void save_tensor(std::ostream& os, const Tensor<T>& t) {
    write_header(os, dtype_code<T>(), t.shape());
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    if (!os) throw IoError("CUMTEN1: write failed");
}

template <typename T>
Tensor<T> load_tensor(std::istream& is) {
    const Shape shape = read_header(is, dtype_code<T>());
    std::vector<T> values(static_cast<size_t>(numel_of(shape)));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(T)));
    if (!is) throw IoError("CUMTEN1: truncated payload");
    return Tensor<T>(shape, std::move(values));
}

template <typename T>
void save_tensor_file(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    save_tensor(os, t);
}

template <typename T>
Tensor<T> load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return load_tensor<T>(is);
}

void save_i32(std::ostream& os, const Shape& shape, const std::vector<int32_t>& values) {
    if (numel_of(shape) != static_cast<int64_t>(values.size()))
        throw IoError("save_i32: shape/value mismatch");
    write_header(os, 3, shape);
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(int32_t)));
    if (!os) throw IoError("CUMTEN1: write failed");
}

std::pair<Shape, std::vector<int32_t>> load_i32(std::istream& is) {
    const Shape shape = read_header(is, 3);
    std::vector<int32_t> values(static_cast<size_t>(numel_of(shape)));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(int32_t)));
    if (!is) throw IoError("CUMTEN1: truncated payload");
    return {shape, std::move(values)};
}

void save_i32_file(const std::string& path, const Shape& shape,
                   const std::vector<int32_t>& values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    save_i32(os, shape, values);
}

std::pair<Shape, std::vector<int32_t>> load_i32_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return load_i32(is);
}

template void save_tensor<float>(std::ostream&, const Tensor<float>&);
template void save_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(std::istream&);
template Tensor<double> load_tensor<double>(std::istream&);
template void save_tensor_file<float>(const std::string&, const Tensor<float>&);
template void save_tensor_file<double>(const std::string&, const Tensor<double>&);
template Tensor<float> load_tensor_file<float>(const std::string&);
template Tensor<double> load_tensor_file<double>(const std::string&);

}  // namespace cumix::io

#include "vmp/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vmp/errors.hpp"

namespace vmp {

namespace {

constexpr char kMagic[8] = {'M', 'P', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr std::uint32_t kMaxRank = 8;

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64_le(std::string& out, double d) {
    std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

double get_f64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return std::bit_cast<double>(v);
}

}  // namespace

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

void write_tensor(const std::string& path, const Tensor& t) {
    if (t.dims.empty() || t.dims.size() > kMaxRank) {
        throw ArgumentError("write_tensor: rank " + std::to_string(t.dims.size()) +
                            " out of range");
    }
    if (t.element_count() != t.data.size()) {
        throw ShapeError("write_tensor: payload size " + std::to_string(t.data.size()) +
                         " does not match dims product " + std::to_string(t.element_count()));
    }
    std::string buf;
    buf.reserve(16 + 4 * t.dims.size() + 8 * t.data.size());
    buf.append(kMagic, sizeof(kMagic));
    put_u32_le(buf, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32_le(buf, d);
    for (double v : t.data) put_f64_le(buf, v);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ArgumentError("write_tensor: cannot open " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw ArgumentError("write_tensor: short write to " + path);
}

Tensor read_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("read_tensor: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ArgumentError("read_tensor: bad magic in " + path);
    }
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint32_t rank = get_u32_le(p + 8);
    if (rank == 0 || rank > kMaxRank) {
        throw ArgumentError("read_tensor: rank " + std::to_string(rank) + " out of range in " +
                            path);
    }
    if (buf.size() < 12 + 4ull * rank) throw ArgumentError("read_tensor: truncated header in " + path);

    Tensor t;
    t.dims.resize(rank);
    for (std::uint32_t i = 0; i < rank; ++i) t.dims[i] = get_u32_le(p + 12 + 4 * i);

    const std::size_t n = t.element_count();
    const std::size_t header = 12 + 4ull * rank;
    if (buf.size() != header + 8 * n) {
        throw ArgumentError("read_tensor: payload size mismatch in " + path);
    }
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = get_f64_le(p + header + 8 * i);
    return t;
}

void write_matrix(const std::string& path, const DenseMatrix& m) {
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data = m.values();
    write_tensor(path, t);
}

DenseMatrix read_matrix(const std::string& path) {
    Tensor t = read_tensor(path);
    if (t.dims.size() != 2) {
        throw ArgumentError("read_matrix: expected rank 2, got rank " +
                            std::to_string(t.dims.size()) + " in " + path);
    }
    return DenseMatrix(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                       std::move(t.data));
}

}  // namespace vmp

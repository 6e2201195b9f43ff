#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmp/dense_matrix.hpp"

namespace vmp {

/// Binary tensor container used for all on-disk fixtures and checkpoints.
///
/// Layout: 8-byte magic "MPTENSOR", u32 rank, u32 dims[rank], then the
/// payload as little-endian real64 in row-major order. Integers are
/// little-endian as well. The format is endian-explicit so dumps are
/// bit-comparable across platforms.
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> data;

    std::size_t element_count() const;
};

void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// rank-2 convenience wrappers
void write_matrix(const std::string& path, const DenseMatrix& m);
DenseMatrix read_matrix(const std::string& path);

}  // namespace vmp

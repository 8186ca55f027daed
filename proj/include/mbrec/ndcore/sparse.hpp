#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mbrec {

using index_t = std::uint32_t;

// Unweighted CSR pattern: row r links to columns indices[offsets[r] .. offsets[r+1]).
struct SparsePattern {
  std::size_t num_cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<index_t> indices;

  std::size_t num_rows() const { return offsets.size() - 1; }
  std::size_t nnz() const { return indices.size(); }

  std::span<const index_t> row(std::size_t r) const {
    return std::span<const index_t>(indices).subspan(offsets[r], offsets[r + 1] - offsets[r]);
  }
};

}  // namespace mbrec

#pragma once

// Similarity kernels used by reranking and few-shot selection. Each kernel has
// an OpenMP-parallel form and a serial reference kept for testing and
// benchmarking; both compute every row with the same operation order, so
// their outputs are bitwise identical.

#include <cstddef>
#include <span>
#include <vector>

namespace ods::kernels {

/// Row-major dense matrix view: `rows` vectors of length `dim`.
struct MatrixView {
    std::span<const double> data;
    std::size_t rows = 0;
    std::size_t dim = 0;

    std::span<const double> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

/// Cosine similarity; 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

/// Cosine of `query` against every row.
std::vector<double> cosine_scores(std::span<const double> query, const MatrixView& rows);
std::vector<double> cosine_scores_serial(std::span<const double> query, const MatrixView& rows);

/// Indices of the `k` largest scores, descending; ties keep the lower index first.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);
std::vector<std::size_t> top_k_serial(std::span<const double> scores, std::size_t k);

/// Flatten equal-length vectors into a contiguous row-major buffer.
std::vector<double> pack_rows(const std::vector<std::vector<double>>& rows, std::size_t& dim);

}  // namespace ods::kernels

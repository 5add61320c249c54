#include "ods/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ods::kernels {

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {
void check(std::span<const double> query, const MatrixView& rows) {
    if (rows.rows > 0 && query.size() != rows.dim)
        throw std::invalid_argument("cosine_scores: dimension mismatch");
    if (rows.data.size() < rows.rows * rows.dim)
        throw std::invalid_argument("cosine_scores: matrix buffer too small");
}
}  // namespace

std::vector<double> cosine_scores(std::span<const double> query, const MatrixView& rows) {
    check(query, rows);
    std::vector<double> out(rows.rows);
    const auto n = static_cast<long long>(rows.rows);
#pragma omp parallel for schedule(static) if (n > 256)
    for (long long i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = cosine(query, rows.row(static_cast<std::size_t>(i)));
    return out;
}

std::vector<double> cosine_scores_serial(std::span<const double> query, const MatrixView& rows) {
    check(query, rows);
    std::vector<double> out(rows.rows);
    for (std::size_t i = 0; i < rows.rows; ++i) out[i] = cosine(query, rows.row(i));
    return out;
}

namespace {
bool ranks_before(std::span<const double> s, std::size_t a, std::size_t b) {
    return s[a] > s[b] || (s[a] == s[b] && a < b);
}
}  // namespace

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
    k = std::min(k, scores.size());
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto cmp = [&](std::size_t a, std::size_t b) { return ranks_before(scores, a, b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
    idx.resize(k);
    return idx;
}

std::vector<std::size_t> top_k_serial(std::span<const double> scores, std::size_t k) {
    // Selection by repeated linear scan.
    std::vector<bool> taken(scores.size(), false);
    std::vector<std::size_t> out;
    for (std::size_t round = 0; round < std::min(k, scores.size()); ++round) {
        std::size_t best = scores.size();
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (taken[i]) continue;
            if (best == scores.size() || ranks_before(scores, i, best)) best = i;
        }
        taken[best] = true;
        out.push_back(best);
    }
    return out;
}

std::vector<double> pack_rows(const std::vector<std::vector<double>>& rows, std::size_t& dim) {
    dim = rows.empty() ? 0 : rows.front().size();
    std::vector<double> out;
    out.reserve(rows.size() * dim);
    for (const auto& r : rows) {
        if (r.size() != dim) throw std::invalid_argument("pack_rows: ragged rows");
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

}  // namespace ods::kernels

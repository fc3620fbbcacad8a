#include "crisp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crisp::kernels {
namespace {

constexpr int kMR = 4;    // rows per register tile
constexpr int kNR = 32;   // columns per register tile
constexpr int kMB = 64;   // rows per parallel block
constexpr int kNB = 512;  // columns per parallel block
constexpr int kKB = 256;  // depth of one pass over B

// Full register tile: C[i..i+4, j..j+32] += A[i..i+4, k0..k1] * B[k0..k1, j..j+32].
inline void micro_full(int N, int K, const float* A, const float* B, float* C, int i, int j, int k0, int k1) {
    float acc[kMR][kNR];
    for (int r = 0; r < kMR; ++r)
        for (int c = 0; c < kNR; ++c) acc[r][c] = C[static_cast<std::size_t>(i + r) * N + j + c];
    for (int k = k0; k < k1; ++k) {
        const float* b = B + static_cast<std::size_t>(k) * N + j;
        for (int r = 0; r < kMR; ++r) {
            const float a = A[static_cast<std::size_t>(i + r) * K + k];
#pragma omp simd
            for (int c = 0; c < kNR; ++c) acc[r][c] += a * b[c];
        }
    }
    for (int r = 0; r < kMR; ++r)
        for (int c = 0; c < kNR; ++c) C[static_cast<std::size_t>(i + r) * N + j + c] = acc[r][c];
}

// Ragged edge tile.
inline void micro_edge(int N, int K, const float* A, const float* B, float* C, int i, int rows, int j, int cols,
                       int k0, int k1) {
    for (int r = 0; r < rows; ++r) {
        float* c_row = C + static_cast<std::size_t>(i + r) * N + j;
        for (int k = k0; k < k1; ++k) {
            const float a = A[static_cast<std::size_t>(i + r) * K + k];
            const float* b = B + static_cast<std::size_t>(k) * N + j;
            for (int c = 0; c < cols; ++c) c_row[c] += a * b[c];
        }
    }
}

void gemm_block(int N, int K, const float* A, const float* B, float* C, int i0, int i1, int j0, int j1) {
    for (int k0 = 0; k0 < K; k0 += kKB) {
        const int k1 = std::min(K, k0 + kKB);
        for (int i = i0; i < i1; i += kMR) {
            const int rows = std::min(kMR, i1 - i);
            int j = j0;
            if (rows == kMR)
                for (; j + kNR <= j1; j += kNR) micro_full(N, K, A, B, C, i, j, k0, k1);
            if (j < j1) micro_edge(N, K, A, B, C, i, rows, j, j1 - j, k0, k1);
        }
    }
}

constexpr int kDot = 4;     // rows of A and of B per dot-product tile
constexpr int kKC = 1024;  // depth of one pass in gemm_nt
constexpr int kLanes = 16;

typedef float Lanes __attribute__((vector_size(kLanes * sizeof(float))));

inline Lanes load_lanes(const float* p) {
    Lanes v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

// C[i0..i0+4, j0..j0+4] += A[i0.., k0..k1] . B[j0.., k0..k1] with 16 vector
// accumulators, then a scalar tail.
inline void dot_tile(int K, const float* A, const float* B, float* C, int N, int i0, int j0, int k0, int k1) {
    const float* a[kDot];
    const float* b[kDot];
    for (int r = 0; r < kDot; ++r) {
        a[r] = A + static_cast<std::size_t>(i0 + r) * K;
        b[r] = B + static_cast<std::size_t>(j0 + r) * K;
    }
    Lanes acc[kDot][kDot] = {};
    int k = k0;
    for (; k + kLanes <= k1; k += kLanes) {
        Lanes bv[kDot];
        for (int c = 0; c < kDot; ++c) bv[c] = load_lanes(b[c] + k);
        for (int r = 0; r < kDot; ++r) {
            const Lanes av = load_lanes(a[r] + k);
            for (int c = 0; c < kDot; ++c) acc[r][c] += av * bv[c];
        }
    }
    for (int r = 0; r < kDot; ++r)
        for (int c = 0; c < kDot; ++c) {
            float s = 0.0f;
            for (int l = 0; l < kLanes; ++l) s += acc[r][c][l];
            for (int kk = k; kk < k1; ++kk) s += a[r][kk] * b[c][kk];
            C[static_cast<std::size_t>(i0 + r) * N + j0 + c] += s;
        }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void gemm(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
    if (M <= 0 || N <= 0) return;
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, 0.0f);
    if (K <= 0) return;
    const int row_blocks = (M + kMB - 1) / kMB;
    const int col_blocks = (N + kNB - 1) / kNB;
#pragma omp parallel for collapse(2) schedule(static)
    for (int rb = 0; rb < row_blocks; ++rb)
        for (int cb = 0; cb < col_blocks; ++cb)
            gemm_block(N, K, A, B, C, rb * kMB, std::min(M, (rb + 1) * kMB), cb * kNB, std::min(N, (cb + 1) * kNB));
}

void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
    if (M <= 0 || N <= 0) return;
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, 0.0f);
    if (K <= 0) return;
    const int row_tiles = (M + kDot - 1) / kDot;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < row_tiles; ++t) {
        const int i0 = t * kDot;
        const int rows = std::min(kDot, M - i0);
        for (int k0 = 0; k0 < K; k0 += kKC) {
            const int k1 = std::min(K, k0 + kKC);
            for (int j0 = 0; j0 < N; j0 += kDot) {
                const int cols = std::min(kDot, N - j0);
                if (rows == kDot && cols == kDot)
                    dot_tile(K, A, B, C, N, i0, j0, k0, k1);
                else
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c) {
                            const float* a = A + static_cast<std::size_t>(i0 + r) * K;
                            const float* b = B + static_cast<std::size_t>(j0 + c) * K;
                            float s = 0.0f;
                            for (int k = k0; k < k1; ++k) s += a[k] * b[k];
                            C[static_cast<std::size_t>(i0 + r) * N + j0 + c] += s;
                        }
            }
        }
    }
}

void transpose(int rows, int cols, const float* in, float* out) {
    constexpr int kTile = 32;
#pragma omp parallel for schedule(static)
    for (int r0 = 0; r0 < rows; r0 += kTile)
        for (int c0 = 0; c0 < cols; c0 += kTile) {
            const int r1 = std::min(rows, r0 + kTile);
            const int c1 = std::min(cols, c0 + kTile);
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c)
                    out[static_cast<std::size_t>(c) * rows + r] = in[static_cast<std::size_t>(r) * cols + c];
        }
}

void im2col(const ConvGeometry& g, const float* image, float* columns, std::size_t ld, std::size_t col_offset) {
    const int oh = g.out_height();
    const int ow = g.out_width();
    const int kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
    for (int row = 0; row < g.patch_size(); ++row) {
        const int c = row / kk;
        const int ky = (row % kk) / g.kernel;
        const int kx = row % g.kernel;
        const float* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
        float* dst = columns + static_cast<std::size_t>(row) * ld + col_offset;
        for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            float* out = dst + static_cast<std::size_t>(oy) * ow;
            if (iy < 0 || iy >= g.height) {
                std::fill(out, out + ow, 0.0f);
                continue;
            }
            const float* src = plane + static_cast<std::size_t>(iy) * g.width;
            for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * g.stride - g.pad + kx;
                out[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
            }
        }
    }
}

void col2im(const ConvGeometry& g, const float* columns, std::size_t ld, std::size_t col_offset, float* image) {
    const int oh = g.out_height();
    const int ow = g.out_width();
    const int kk = g.kernel * g.kernel;
    // Each channel plane is written by one thread; kernel offsets are summed in
    // a fixed order within it.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < g.channels; ++c) {
        float* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
        for (int k = 0; k < kk; ++k) {
            const int ky = k / g.kernel;
            const int kx = k % g.kernel;
            const float* src = columns + static_cast<std::size_t>(c * kk + k) * ld + col_offset;
            for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * g.stride - g.pad + ky;
                if (iy < 0 || iy >= g.height) continue;
                float* dst = plane + static_cast<std::size_t>(iy) * g.width;
                const float* s = src + static_cast<std::size_t>(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * g.stride - g.pad + kx;
                    if (ix >= 0 && ix < g.width) dst[ix] += s[ox];
                }
            }
        }
    }
}

namespace {

double masked_score_one(const float* e, int channels, int cells, std::span<const int> mask_cells,
                        std::span<const double> query) {
    double dot = 0.0;
    double norm2 = 0.0;
    for (int c = 0; c < channels; ++c) {
        const float* row = e + static_cast<std::size_t>(c) * cells;
        const double* q = query.data() + static_cast<std::size_t>(c) * cells;
        for (int cell : mask_cells) {
            const double v = row[cell];
            dot += q[cell] * v;
            norm2 += v * v;
        }
    }
    return norm2 > 0.0 ? dot / std::sqrt(norm2) : 0.0;
}

}  // namespace

void masked_cosine_scores(std::span<const float> entries, std::size_t count, int channels, int cells,
                          std::span<const int> mask_cells, std::span<const double> query, std::span<double> scores) {
    const std::size_t stride = static_cast<std::size_t>(channels) * cells;
    const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        scores[static_cast<std::size_t>(i)] =
            masked_score_one(entries.data() + static_cast<std::size_t>(i) * stride, channels, cells, mask_cells, query);
}

namespace reference {

void gemm(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            float acc = accumulate ? C[static_cast<std::size_t>(i) * N + j] : 0.0f;
            for (int k = 0; k < K; ++k)
                acc += A[static_cast<std::size_t>(i) * K + k] * B[static_cast<std::size_t>(k) * N + j];
            C[static_cast<std::size_t>(i) * N + j] = acc;
        }
}

void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            float acc = accumulate ? C[static_cast<std::size_t>(i) * N + j] : 0.0f;
            for (int k = 0; k < K; ++k)
                acc += A[static_cast<std::size_t>(i) * K + k] * B[static_cast<std::size_t>(j) * K + k];
            C[static_cast<std::size_t>(i) * N + j] = acc;
        }
}

void im2col(const ConvGeometry& g, const float* image, float* columns, std::size_t ld, std::size_t col_offset) {
    const int oh = g.out_height();
    const int ow = g.out_width();
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
                const int row = (c * g.kernel + ky) * g.kernel + kx;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const int iy = oy * g.stride - g.pad + ky;
                        const int ix = ox * g.stride - g.pad + kx;
                        const bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
                        columns[static_cast<std::size_t>(row) * ld + col_offset + static_cast<std::size_t>(oy) * ow + ox] =
                            inside ? image[(static_cast<std::size_t>(c) * g.height + iy) * g.width + ix] : 0.0f;
                    }
            }
}

void col2im(const ConvGeometry& g, const float* columns, std::size_t ld, std::size_t col_offset, float* image) {
    const int oh = g.out_height();
    const int ow = g.out_width();
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
                const int row = (c * g.kernel + ky) * g.kernel + kx;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const int iy = oy * g.stride - g.pad + ky;
                        const int ix = ox * g.stride - g.pad + kx;
                        if (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
                            image[(static_cast<std::size_t>(c) * g.height + iy) * g.width + ix] +=
                                columns[static_cast<std::size_t>(row) * ld + col_offset +
                                        static_cast<std::size_t>(oy) * ow + ox];
                    }
            }
}

void masked_cosine_scores(std::span<const float> entries, std::size_t count, int channels, int cells,
                          std::span<const int> mask_cells, std::span<const double> query, std::span<double> scores) {
    const std::size_t stride = static_cast<std::size_t>(channels) * cells;
    for (std::size_t i = 0; i < count; ++i)
        scores[i] = masked_score_one(entries.data() + i * stride, channels, cells, mask_cells, query);
}

}  // namespace reference
}  // namespace crisp::kernels

#pragma once

// Dense numeric kernels. Each kernel has an OpenMP implementation in
// crisp::kernels and a plain serial implementation in crisp::kernels::reference
// that the tests and the benchmark compare against. Parallel kernels partition
// their output, so every output element is accumulated by one thread in a
// fixed order and results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace crisp::kernels {

// C[M x N] (+)= A[M x K] * B[K x N]; all row-major and densely packed.
void gemm(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate);

// C[M x N] (+)= A[M x K] * B[N x K]^T. Used for weight gradients, where K is
// the (long) number of output positions.
void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate);

// out[cols x rows] = in[rows x cols]^T
void transpose(int rows, int cols, const float* in, float* out);

struct ConvGeometry {
    int channels = 0;
    int height = 0;
    int width = 0;
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    int patch_size() const { return channels * kernel * kernel; }
};

// Unfolds one CHW image into columns [patch_size x (out_h*out_w)] of a matrix
// with leading dimension ld, starting at column col_offset.
void im2col(const ConvGeometry& g, const float* image, float* columns, std::size_t ld, std::size_t col_offset);

// Adjoint of im2col: accumulates columns back into a CHW image (which the
// caller zero-initializes).
void col2im(const ConvGeometry& g, const float* columns, std::size_t ld, std::size_t col_offset, float* image);

// Masked cosine scores for retrieval. entries holds count rows of
// cell_stride floats each, laid out [C][cells]. For every entry the kernel
// computes sum_{c, cell in mask} q[c, cell] * e[c, cell] / ||e restricted to mask||
// with q already masked and unit-normalized. Entries with zero masked norm
// score 0.
void masked_cosine_scores(std::span<const float> entries, std::size_t count, int channels, int cells,
                          std::span<const int> mask_cells, std::span<const double> query, std::span<double> scores);

namespace reference {

void gemm(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate);
void gemm_nt(int M, int N, int K, const float* A, const float* B, float* C, bool accumulate);
void im2col(const ConvGeometry& g, const float* image, float* columns, std::size_t ld, std::size_t col_offset);
void col2im(const ConvGeometry& g, const float* columns, std::size_t ld, std::size_t col_offset, float* image);
void masked_cosine_scores(std::span<const float> entries, std::size_t count, int channels, int cells,
                          std::span<const int> mask_cells, std::span<const double> query, std::span<double> scores);

}  // namespace reference

// Number of threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace crisp::kernels

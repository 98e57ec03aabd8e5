#include "cav/kernels.hpp"

#include <algorithm>
#include <vector>

namespace cav::kernels {

namespace {
// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 14;

// Pivot rows are mostly zero; eliminating only their support gives the same
// values as the full sweep.
std::vector<std::size_t> nonzero_columns(const double* row, std::size_t cols) {
  std::vector<std::size_t> nz;
  for (std::size_t j = 0; j < cols; ++j)
    if (row[j] != 0.0) nz.push_back(j);
  return nz;
}
}  // namespace

namespace serial {

void dense_forward(std::span<const double> w, std::span<const double> b, std::size_t rows,
                   std::size_t cols, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* wr = w.data() + i * cols;
    double s = b[i];
    for (std::size_t j = 0; j < cols; ++j) s += wr[j] * x[j];
    y[i] = s;
  }
}

void dense_backward_input(std::span<const double> w, std::size_t rows, std::size_t cols,
                          std::span<const double> g, std::span<double> gx) {
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += w[i * cols + j] * g[i];
    gx[j] = s;
  }
}

void dense_backward_params(std::size_t rows, std::size_t cols, std::span<const double> g,
                           std::span<const double> x, std::span<double> gw,
                           std::span<double> gb) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double gi = g[i];
    double* wr = gw.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) wr[j] += gi * x[j];
    gb[i] += gi;
  }
}

void conv2d_forward(const ConvGeometry& geo, std::span<const double> k,
                    std::span<const double> b, std::span<const double> x, std::span<double> y) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w();
  for (std::size_t o = 0; o < geo.out_channels; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double s = b[o];
        for (std::size_t ic = 0; ic < geo.in_channels; ++ic)
          for (std::size_t kh = 0; kh < geo.kernel_h; ++kh) {
            const double* xr =
                x.data() + (ic * geo.in_h + r * geo.stride + kh) * geo.in_w + c * geo.stride;
            const double* kr =
                k.data() + ((o * geo.in_channels + ic) * geo.kernel_h + kh) * geo.kernel_w;
            for (std::size_t kw = 0; kw < geo.kernel_w; ++kw) s += kr[kw] * xr[kw];
          }
        y[(o * oh + r) * ow + c] = s;
      }
}

void conv2d_backward_input(const ConvGeometry& geo, std::span<const double> k,
                           std::span<const double> g, std::span<double> gx) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w();
  for (std::size_t ic = 0; ic < geo.in_channels; ++ic) {
    double* gxc = gx.data() + ic * geo.in_h * geo.in_w;
    std::fill(gxc, gxc + geo.in_h * geo.in_w, 0.0);
    for (std::size_t o = 0; o < geo.out_channels; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          const double gv = g[(o * oh + r) * ow + c];
          if (gv == 0.0) continue;
          for (std::size_t kh = 0; kh < geo.kernel_h; ++kh) {
            double* xr = gxc + (r * geo.stride + kh) * geo.in_w + c * geo.stride;
            const double* kr =
                k.data() + ((o * geo.in_channels + ic) * geo.kernel_h + kh) * geo.kernel_w;
            for (std::size_t kw = 0; kw < geo.kernel_w; ++kw) xr[kw] += kr[kw] * gv;
          }
        }
  }
}

void conv2d_backward_params(const ConvGeometry& geo, std::span<const double> g,
                            std::span<const double> x, std::span<double> gk,
                            std::span<double> gb) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w();
  for (std::size_t o = 0; o < geo.out_channels; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        const double gv = g[(o * oh + r) * ow + c];
        gb[o] += gv;
        if (gv == 0.0) continue;
        for (std::size_t ic = 0; ic < geo.in_channels; ++ic)
          for (std::size_t kh = 0; kh < geo.kernel_h; ++kh) {
            const double* xr =
                x.data() + (ic * geo.in_h + r * geo.stride + kh) * geo.in_w + c * geo.stride;
            double* kr =
                gk.data() + ((o * geo.in_channels + ic) * geo.kernel_h + kh) * geo.kernel_w;
            for (std::size_t kw = 0; kw < geo.kernel_w; ++kw) kr[kw] += gv * xr[kw];
          }
      }
}

void pivot_update(std::span<double> t, std::size_t rows, std::size_t cols, std::size_t pr,
                  std::size_t pc) {
  double* prow = t.data() + pr * cols;
  const double inv = 1.0 / prow[pc];
  for (std::size_t j = 0; j < cols; ++j) prow[j] *= inv;
  prow[pc] = 1.0;
  const std::vector<std::size_t> nz = nonzero_columns(prow, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (i == pr) continue;
    double* row = t.data() + i * cols;
    const double f = row[pc];
    if (f == 0.0) continue;
    for (std::size_t j : nz) row[j] -= f * prow[j];
    row[pc] = 0.0;
  }
}

}  // namespace serial

void dense_forward(std::span<const double> w, std::span<const double> b, std::size_t rows,
                   std::size_t cols, std::span<const double> x, std::span<double> y) {
  const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long i = 0; i < n; ++i) {
    const double* wr = w.data() + i * cols;
    double s = b[i];
    for (std::size_t j = 0; j < cols; ++j) s += wr[j] * x[j];
    y[i] = s;
  }
}

void dense_backward_input(std::span<const double> w, std::size_t rows, std::size_t cols,
                          std::span<const double> g, std::span<double> gx) {
  const long n = static_cast<long>(cols);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += w[i * cols + j] * g[i];
    gx[j] = s;
  }
}

void dense_backward_params(std::size_t rows, std::size_t cols, std::span<const double> g,
                           std::span<const double> x, std::span<double> gw,
                           std::span<double> gb) {
  const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long i = 0; i < n; ++i) {
    const double gi = g[i];
    double* wr = gw.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) wr[j] += gi * x[j];
    gb[i] += gi;
  }
}

void conv2d_forward(const ConvGeometry& geo, std::span<const double> k,
                    std::span<const double> b, std::span<const double> x, std::span<double> y) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w();
  const long planes = static_cast<long>(geo.out_channels * oh);
  const std::size_t work = geo.out_size() * geo.in_channels * geo.kernel_h * geo.kernel_w;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long p = 0; p < planes; ++p) {
    const std::size_t o = p / oh, r = p % oh;
    for (std::size_t c = 0; c < ow; ++c) {
      double s = b[o];
      for (std::size_t ic = 0; ic < geo.in_channels; ++ic)
        for (std::size_t kh = 0; kh < geo.kernel_h; ++kh) {
          const double* xr =
              x.data() + (ic * geo.in_h + r * geo.stride + kh) * geo.in_w + c * geo.stride;
          const double* kr =
              k.data() + ((o * geo.in_channels + ic) * geo.kernel_h + kh) * geo.kernel_w;
          for (std::size_t kw = 0; kw < geo.kernel_w; ++kw) s += kr[kw] * xr[kw];
        }
      y[(o * oh + r) * ow + c] = s;
    }
  }
}

void conv2d_backward_input(const ConvGeometry& geo, std::span<const double> k,
                           std::span<const double> g, std::span<double> gx) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w();
  const long channels = static_cast<long>(geo.in_channels);
  const std::size_t work = geo.out_size() * geo.in_channels * geo.kernel_h * geo.kernel_w;
#pragma omp parallel for schedule(static) if (work > kParallelWork && channels > 1)
  for (long ic = 0; ic < channels; ++ic) {
    double* gxc = gx.data() + ic * geo.in_h * geo.in_w;
    std::fill(gxc, gxc + geo.in_h * geo.in_w, 0.0);
    for (std::size_t o = 0; o < geo.out_channels; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          const double gv = g[(o * oh + r) * ow + c];
          if (gv == 0.0) continue;
          for (std::size_t kh = 0; kh < geo.kernel_h; ++kh) {
            double* xr = gxc + (r * geo.stride + kh) * geo.in_w + c * geo.stride;
            const double* kr =
                k.data() + ((o * geo.in_channels + ic) * geo.kernel_h + kh) * geo.kernel_w;
            for (std::size_t kw = 0; kw < geo.kernel_w; ++kw) xr[kw] += kr[kw] * gv;
          }
        }
  }
}

void conv2d_backward_params(const ConvGeometry& geo, std::span<const double> g,
                            std::span<const double> x, std::span<double> gk,
                            std::span<double> gb) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w();
  const long outs = static_cast<long>(geo.out_channels);
  const std::size_t work = geo.out_size() * geo.in_channels * geo.kernel_h * geo.kernel_w;
#pragma omp parallel for schedule(static) if (work > kParallelWork && outs > 1)
  for (long o = 0; o < outs; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        const double gv = g[(o * oh + r) * ow + c];
        gb[o] += gv;
        if (gv == 0.0) continue;
        for (std::size_t ic = 0; ic < geo.in_channels; ++ic)
          for (std::size_t kh = 0; kh < geo.kernel_h; ++kh) {
            const double* xr =
                x.data() + (ic * geo.in_h + r * geo.stride + kh) * geo.in_w + c * geo.stride;
            double* kr =
                gk.data() + ((o * geo.in_channels + ic) * geo.kernel_h + kh) * geo.kernel_w;
            for (std::size_t kw = 0; kw < geo.kernel_w; ++kw) kr[kw] += gv * xr[kw];
          }
      }
}

void pivot_update(std::span<double> t, std::size_t rows, std::size_t cols, std::size_t pr,
                  std::size_t pc) {
  double* prow = t.data() + pr * cols;
  const double inv = 1.0 / prow[pc];
  for (std::size_t j = 0; j < cols; ++j) prow[j] *= inv;
  prow[pc] = 1.0;
  const std::vector<std::size_t> nz = nonzero_columns(prow, cols);
  const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * nz.size() > kParallelWork)
  for (long i = 0; i < n; ++i) {
    if (static_cast<std::size_t>(i) == pr) continue;
    double* row = t.data() + i * cols;
    const double f = row[pc];
    if (f == 0.0) continue;
    for (std::size_t j : nz) row[j] -= f * prow[j];
    row[pc] = 0.0;
  }
}

}  // namespace cav::kernels

#pragma once

// Data-parallel inner loops used by the network engine and the simplex core.
//
// Each kernel has an OpenMP version in `cav::kernels` and a plain serial
// reference in `cav::kernels::serial`. Both visit every output element with the
// same summation order, so results agree bit for bit; tests/test_kernels.cpp
// checks this and bench/bench_kernels.cpp compares their speed.

#include <cstddef>
#include <span>

namespace cav::kernels {

struct ConvGeometry {
  std::size_t in_channels = 0, in_h = 0, in_w = 0;
  std::size_t out_channels = 0, kernel_h = 0, kernel_w = 0, stride = 1;

  std::size_t out_h() const { return (in_h - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w - kernel_w) / stride + 1; }
  std::size_t in_size() const { return in_channels * in_h * in_w; }
  std::size_t out_size() const { return out_channels * out_h() * out_w(); }
};

// y = W x + b, W is rows x cols row-major.
void dense_forward(std::span<const double> w, std::span<const double> b, std::size_t rows,
                   std::size_t cols, std::span<const double> x, std::span<double> y);
// gx = W^T g
void dense_backward_input(std::span<const double> w, std::size_t rows, std::size_t cols,
                          std::span<const double> g, std::span<double> gx);
// gw += g x^T, gb += g
void dense_backward_params(std::size_t rows, std::size_t cols, std::span<const double> g,
                           std::span<const double> x, std::span<double> gw,
                           std::span<double> gb);

void conv2d_forward(const ConvGeometry& geo, std::span<const double> k,
                    std::span<const double> b, std::span<const double> x, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& geo, std::span<const double> k,
                           std::span<const double> g, std::span<double> gx);
void conv2d_backward_params(const ConvGeometry& geo, std::span<const double> g,
                            std::span<const double> x, std::span<double> gk,
                            std::span<double> gb);

// Gauss-Jordan pivot on a dense row-major tableau with `cols` columns.
void pivot_update(std::span<double> tableau, std::size_t rows, std::size_t cols,
                  std::size_t pivot_row, std::size_t pivot_col);

namespace serial {

void dense_forward(std::span<const double> w, std::span<const double> b, std::size_t rows,
                   std::size_t cols, std::span<const double> x, std::span<double> y);
void dense_backward_input(std::span<const double> w, std::size_t rows, std::size_t cols,
                          std::span<const double> g, std::span<double> gx);
void dense_backward_params(std::size_t rows, std::size_t cols, std::span<const double> g,
                           std::span<const double> x, std::span<double> gw,
                           std::span<double> gb);
void conv2d_forward(const ConvGeometry& geo, std::span<const double> k,
                    std::span<const double> b, std::span<const double> x, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& geo, std::span<const double> k,
                           std::span<const double> g, std::span<double> gx);
void conv2d_backward_params(const ConvGeometry& geo, std::span<const double> g,
                            std::span<const double> x, std::span<double> gk,
                            std::span<double> gb);
void pivot_update(std::span<double> tableau, std::size_t rows, std::size_t cols,
                  std::size_t pivot_row, std::size_t pivot_col);

}  // namespace serial

}  // namespace cav::kernels

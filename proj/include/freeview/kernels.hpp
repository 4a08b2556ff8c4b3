#pragma once

// Compute kernels behind the network layers.
//
// freeview::kernels holds the OpenMP-parallel implementations (im2col + GEMM,
// parallel over samples or output rows). freeview::kernels::reference holds
// direct-loop serial versions used as test oracles and benchmark baselines.
// Both produce identical shapes and accumulate parameter gradients (+=);
// input gradients are overwritten.
//
// All parallel loops write disjoint outputs and reduce in a fixed order, so
// results do not depend on the thread count.

#include <span>
#include <vector>

#include "freeview/tensor.hpp"

namespace freeview::kernels {

struct ConvGeometry {
  int in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0;
  int kernel = 3, stride = 1, pad = 1;

  /// Output extent of a forward convolution.
  int conv_out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int conv_out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  /// Output extent of a transposed convolution.
  int deconv_out_h() const { return (in_h - 1) * stride - 2 * pad + kernel; }
  int deconv_out_w() const { return (in_w - 1) * stride - 2 * pad + kernel; }
};

/// Conv weights are [out_c, in_c * k * k]; transposed-conv weights are [in_c, out_c * k * k].
template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeometry& g, Tensor<T>& out, std::vector<T>* col_cache = nullptr);

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                     const ConvGeometry& g, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias, const std::vector<T>* col_cache = nullptr);

template <typename T>
void conv_transpose2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                              const ConvGeometry& g, Tensor<T>& out);

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                               const ConvGeometry& g, Tensor<T>* grad_in, std::span<T> grad_weight,
                               std::span<T> grad_bias);

/// in is [N, in_f] (any trailing layout flattened per sample); weight is [out_f, in_f].
template <typename T>
void linear_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, int out_f,
                    Tensor<T>& out);

template <typename T>
void linear_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_in, std::span<T> grad_weight, std::span<T> grad_bias);

template <typename T>
void im2col(const T* image, int channels, int height, int width, int kernel, int stride, int pad, int out_h,
            int out_w, T* col);

template <typename T>
void col2im(const T* col, int channels, int height, int width, int kernel, int stride, int pad, int out_h,
            int out_w, T* image);

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeometry& g, Tensor<T>& out);

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                     const ConvGeometry& g, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias);

template <typename T>
void conv_transpose2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                              const ConvGeometry& g, Tensor<T>& out);

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                               const ConvGeometry& g, Tensor<T>* grad_in, std::span<T> grad_weight,
                               std::span<T> grad_bias);

template <typename T>
void linear_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, int out_f,
                    Tensor<T>& out);

template <typename T>
void linear_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_in, std::span<T> grad_weight, std::span<T> grad_bias);

}  // namespace reference
}  // namespace freeview::kernels

#include "freeview/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>

namespace freeview::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Rows of a weight-gradient block handled per parallel task.
constexpr int kRowBlock = 8;

template <typename T>
void add_bias_planes(Tensor<T>& out, std::span<const T> bias) {
  if (bias.empty()) return;
  const std::size_t plane = out.plane();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < out.n; ++i) {
    T* s = out.sample(i);
    for (int ch = 0; ch < out.c; ++ch) {
      const T b = bias[ch];
      T* p = s + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] += b;
    }
  }
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& grad_out, std::span<T> grad_bias) {
  if (grad_bias.empty()) return;
  const std::size_t plane = grad_out.plane();
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < grad_out.c; ++ch) {
    T acc = 0;
    for (int i = 0; i < grad_out.n; ++i) {
      const T* p = grad_out.sample(i) + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
    }
    grad_bias[ch] += acc;
  }
}

}  // namespace

template <typename T>
void im2col(const T* image, int channels, int height, int width, int kernel, int stride, int pad, int out_h,
            int out_w, T* col) {
  const int positions = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* row = col + ((c * kernel + ky) * kernel + kx) * static_cast<std::size_t>(positions);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = image + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int kernel, int stride, int pad, int out_h,
            int out_w, T* image) {
  std::fill(image, image + static_cast<std::size_t>(channels) * height * width, T(0));
  const int positions = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* row = col + ((c * kernel + ky) * kernel + kx) * static_cast<std::size_t>(positions);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          T* dst = image + (static_cast<std::size_t>(c) * height + iy) * width;
          const T* src = row + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeometry& g, Tensor<T>& out, std::vector<T>* col_cache) {
  if (in.c != g.in_c || in.h != g.in_h || in.w != g.in_w)
    throw ShapeError("conv2d: input " + in.shape_string() + " does not match geometry");
  const int oh = g.conv_out_h(), ow = g.conv_out_w();
  const int K = g.in_c * g.kernel * g.kernel;
  const int P = oh * ow;
  out.resize(in.n, g.out_c, oh, ow);
  const std::size_t col_size = static_cast<std::size_t>(K) * P;
  std::vector<T> local;
  T* col_base;
  if (col_cache) {
    col_cache->resize(col_size * in.n);
    col_base = col_cache->data();
  } else {
    local.resize(col_size * in.n);
    col_base = local.data();
  }
  ConstMapMat<T> W(weight.data(), g.out_c, K);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.n; ++i) {
    T* col = col_base + col_size * i;
    im2col(in.sample(i), g.in_c, g.in_h, g.in_w, g.kernel, g.stride, g.pad, oh, ow, col);
    MapMat<T> O(out.sample(i), g.out_c, P);
    O.noalias() = W * ConstMapMat<T>(col, K, P);
  }
  add_bias_planes(out, bias);
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                     const ConvGeometry& g, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias, const std::vector<T>* col_cache) {
  const int oh = g.conv_out_h(), ow = g.conv_out_w();
  const int K = g.in_c * g.kernel * g.kernel;
  const int P = oh * ow;
  if (grad_out.n != in.n || grad_out.c != g.out_c || grad_out.h != oh || grad_out.w != ow)
    throw ShapeError("conv2d backward: grad " + grad_out.shape_string() + " does not match geometry");
  const std::size_t col_size = static_cast<std::size_t>(K) * P;
  std::vector<T> local;
  const T* col_base;
  if (col_cache && col_cache->size() == col_size * in.n) {
    col_base = col_cache->data();
  } else {
    local.resize(col_size * in.n);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < in.n; ++i)
      im2col(in.sample(i), g.in_c, g.in_h, g.in_w, g.kernel, g.stride, g.pad, oh, ow, local.data() + col_size * i);
    col_base = local.data();
  }

  if (!grad_weight.empty()) {
    MapMat<T> GW(grad_weight.data(), g.out_c, K);
    const int blocks = (g.out_c + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < blocks; ++b) {
      const int r0 = b * kRowBlock;
      const int rows = std::min(kRowBlock, g.out_c - r0);
      for (int i = 0; i < in.n; ++i) {
        ConstMapMat<T> G(grad_out.sample(i), g.out_c, P);
        ConstMapMat<T> C(col_base + col_size * i, K, P);
        GW.middleRows(r0, rows).noalias() += G.middleRows(r0, rows) * C.transpose();
      }
    }
  }
  accumulate_bias_grad(grad_out, grad_bias);

  if (grad_in) {
    grad_in->resize(in.n, in.c, in.h, in.w);
    ConstMapMat<T> W(weight.data(), g.out_c, K);
#pragma omp parallel
    {
      std::vector<T> col(col_size);
#pragma omp for schedule(static)
      for (int i = 0; i < in.n; ++i) {
        MapMat<T> C(col.data(), K, P);
        C.noalias() = W.transpose() * ConstMapMat<T>(grad_out.sample(i), g.out_c, P);
        col2im(col.data(), g.in_c, g.in_h, g.in_w, g.kernel, g.stride, g.pad, oh, ow, grad_in->sample(i));
      }
    }
  }
}

template <typename T>
void conv_transpose2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                              const ConvGeometry& g, Tensor<T>& out) {
  if (in.c != g.in_c || in.h != g.in_h || in.w != g.in_w)
    throw ShapeError("conv_transpose2d: input " + in.shape_string() + " does not match geometry");
  const int oh = g.deconv_out_h(), ow = g.deconv_out_w();
  const int K = g.out_c * g.kernel * g.kernel;
  const int P = g.in_h * g.in_w;
  out.resize(in.n, g.out_c, oh, ow);
  ConstMapMat<T> W(weight.data(), g.in_c, K);
#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(K) * P);
#pragma omp for schedule(static)
    for (int i = 0; i < in.n; ++i) {
      MapMat<T> C(col.data(), K, P);
      C.noalias() = W.transpose() * ConstMapMat<T>(in.sample(i), g.in_c, P);
      col2im(col.data(), g.out_c, oh, ow, g.kernel, g.stride, g.pad, g.in_h, g.in_w, out.sample(i));
    }
  }
  add_bias_planes(out, bias);
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                               const ConvGeometry& g, Tensor<T>* grad_in, std::span<T> grad_weight,
                               std::span<T> grad_bias) {
  const int oh = g.deconv_out_h(), ow = g.deconv_out_w();
  const int K = g.out_c * g.kernel * g.kernel;
  const int P = g.in_h * g.in_w;
  if (grad_out.n != in.n || grad_out.c != g.out_c || grad_out.h != oh || grad_out.w != ow)
    throw ShapeError("conv_transpose2d backward: grad " + grad_out.shape_string() + " does not match geometry");
  const std::size_t col_size = static_cast<std::size_t>(K) * P;
  std::vector<T> cols(col_size * in.n);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.n; ++i)
    im2col(grad_out.sample(i), g.out_c, oh, ow, g.kernel, g.stride, g.pad, g.in_h, g.in_w,
           cols.data() + col_size * i);

  if (!grad_weight.empty()) {
    MapMat<T> GW(grad_weight.data(), g.in_c, K);
    const int blocks = (g.in_c + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < blocks; ++b) {
      const int r0 = b * kRowBlock;
      const int rows = std::min(kRowBlock, g.in_c - r0);
      for (int i = 0; i < in.n; ++i) {
        ConstMapMat<T> X(in.sample(i), g.in_c, P);
        ConstMapMat<T> C(cols.data() + col_size * i, K, P);
        GW.middleRows(r0, rows).noalias() += X.middleRows(r0, rows) * C.transpose();
      }
    }
  }
  accumulate_bias_grad(grad_out, grad_bias);

  if (grad_in) {
    grad_in->resize(in.n, in.c, in.h, in.w);
    ConstMapMat<T> W(weight.data(), g.in_c, K);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < in.n; ++i) {
      MapMat<T> GI(grad_in->sample(i), g.in_c, P);
      GI.noalias() = W * ConstMapMat<T>(cols.data() + col_size * i, K, P);
    }
  }
}

template <typename T>
void linear_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, int out_f,
                    Tensor<T>& out) {
  const int in_f = static_cast<int>(in.sample_size());
  if (weight.size() != static_cast<std::size_t>(out_f) * in_f)
    throw ShapeError("linear: weight size does not match input " + in.shape_string());
  out.resize(in.n, out_f, 1, 1);
  ConstMapMat<T> X(in.data.data(), in.n, in_f);
  ConstMapMat<T> W(weight.data(), out_f, in_f);
  MapMat<T> Y(out.data.data(), in.n, out_f);
  Y.noalias() = X * W.transpose();
  if (!bias.empty()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), out_f);
    Y.rowwise() += b;
  }
}

template <typename T>
void linear_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_in, std::span<T> grad_weight, std::span<T> grad_bias) {
  const int in_f = static_cast<int>(in.sample_size());
  const int out_f = grad_out.c;
  ConstMapMat<T> X(in.data.data(), in.n, in_f);
  ConstMapMat<T> G(grad_out.data.data(), in.n, out_f);
  if (!grad_weight.empty()) {
    MapMat<T> GW(grad_weight.data(), out_f, in_f);
    GW.noalias() += G.transpose() * X;
  }
  if (!grad_bias.empty()) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(grad_bias.data(), out_f);
    gb += G.colwise().sum();
  }
  if (grad_in) {
    grad_in->resize(in.n, in.c, in.h, in.w);
    ConstMapMat<T> W(weight.data(), out_f, in_f);
    MapMat<T> GI(grad_in->data.data(), in.n, in_f);
    GI.noalias() = G * W;
  }
}

#define FREEVIEW_INSTANTIATE(T)                                                                              \
  template void im2col<T>(const T*, int, int, int, int, int, int, int, int, T*);                           \
  template void col2im<T>(const T*, int, int, int, int, int, int, int, int, T*);                           \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,                \
                                  const ConvGeometry&, Tensor<T>&, std::vector<T>*);                       \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, const Tensor<T>&,                 \
                                   const ConvGeometry&, Tensor<T>*, std::span<T>, std::span<T>,            \
                                   const std::vector<T>*);                                                 \
  template void conv_transpose2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,      \
                                            const ConvGeometry&, Tensor<T>&);                              \
  template void conv_transpose2d_backward<T>(const Tensor<T>&, std::span<const T>, const Tensor<T>&,       \
                                             const ConvGeometry&, Tensor<T>*, std::span<T>, std::span<T>); \
  template void linear_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, int,           \
                                  Tensor<T>&);                                                             \
  template void linear_backward<T>(const Tensor<T>&, std::span<const T>, const Tensor<T>&, Tensor<T>*,     \
                                   std::span<T>, std::span<T>);

FREEVIEW_INSTANTIATE(float)
FREEVIEW_INSTANTIATE(double)
#undef FREEVIEW_INSTANTIATE

}  // namespace freeview::kernels

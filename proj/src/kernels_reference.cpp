#include "freeview/kernels.hpp"

// Direct-loop serial kernels. Deliberately naive: every output element is
// computed straight from the convolution definition.

namespace freeview::kernels::reference {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeometry& g, Tensor<T>& out) {
  const int oh = g.conv_out_h(), ow = g.conv_out_w();
  const int k = g.kernel;
  out.resize(in.n, g.out_c, oh, ow);
  for (int i = 0; i < in.n; ++i)
    for (int co = 0; co < g.out_c; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = bias.empty() ? T(0) : bias[co];
          for (int ci = 0; ci < g.in_c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += weight[((co * g.in_c + ci) * k + ky) * k + kx] * in.at(i, ci, iy, ix);
              }
          out.at(i, co, oy, ox) = acc;
        }
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                     const ConvGeometry& g, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  const int oh = g.conv_out_h(), ow = g.conv_out_w();
  const int k = g.kernel;
  if (grad_in) grad_in->resize(in.n, in.c, in.h, in.w);
  for (int i = 0; i < in.n; ++i)
    for (int co = 0; co < g.out_c; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const T go = grad_out.at(i, co, oy, ox);
          if (!grad_bias.empty()) grad_bias[co] += go;
          for (int ci = 0; ci < g.in_c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const std::size_t widx = ((co * g.in_c + ci) * k + ky) * k + kx;
                if (!grad_weight.empty()) grad_weight[widx] += go * in.at(i, ci, iy, ix);
                if (grad_in) grad_in->at(i, ci, iy, ix) += go * weight[widx];
              }
        }
}

// Transposed convolution scatters each input pixel through the kernel:
// out[co, iy*s - p + ky, ix*s - p + kx] += w[ci, co, ky, kx] * in[ci, iy, ix].
template <typename T>
void conv_transpose2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                              const ConvGeometry& g, Tensor<T>& out) {
  const int oh = g.deconv_out_h(), ow = g.deconv_out_w();
  const int k = g.kernel;
  out.resize(in.n, g.out_c, oh, ow);
  for (int i = 0; i < in.n; ++i) {
    for (int co = 0; co < g.out_c; ++co)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) out.at(i, co, y, x) = bias.empty() ? T(0) : bias[co];
    for (int ci = 0; ci < g.in_c; ++ci)
      for (int iy = 0; iy < g.in_h; ++iy)
        for (int ix = 0; ix < g.in_w; ++ix)
          for (int co = 0; co < g.out_c; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * g.stride - g.pad + ky;
                const int ox = ix * g.stride - g.pad + kx;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                out.at(i, co, oy, ox) += weight[((ci * g.out_c + co) * k + ky) * k + kx] * in.at(i, ci, iy, ix);
              }
  }
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                               const ConvGeometry& g, Tensor<T>* grad_in, std::span<T> grad_weight,
                               std::span<T> grad_bias) {
  const int oh = g.deconv_out_h(), ow = g.deconv_out_w();
  const int k = g.kernel;
  if (grad_in) grad_in->resize(in.n, in.c, in.h, in.w);
  for (int i = 0; i < in.n; ++i) {
    if (!grad_bias.empty())
      for (int co = 0; co < g.out_c; ++co)
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) grad_bias[co] += grad_out.at(i, co, y, x);
    for (int ci = 0; ci < g.in_c; ++ci)
      for (int iy = 0; iy < g.in_h; ++iy)
        for (int ix = 0; ix < g.in_w; ++ix)
          for (int co = 0; co < g.out_c; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * g.stride - g.pad + ky;
                const int ox = ix * g.stride - g.pad + kx;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                const std::size_t widx = ((ci * g.out_c + co) * k + ky) * k + kx;
                const T go = grad_out.at(i, co, oy, ox);
                if (!grad_weight.empty()) grad_weight[widx] += go * in.at(i, ci, iy, ix);
                if (grad_in) grad_in->at(i, ci, iy, ix) += go * weight[widx];
              }
  }
}

template <typename T>
void linear_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, int out_f,
                    Tensor<T>& out) {
  const std::size_t in_f = in.sample_size();
  out.resize(in.n, out_f, 1, 1);
  for (int i = 0; i < in.n; ++i)
    for (int o = 0; o < out_f; ++o) {
      T acc = bias.empty() ? T(0) : bias[o];
      for (std::size_t j = 0; j < in_f; ++j) acc += weight[o * in_f + j] * in.sample(i)[j];
      out.sample(i)[o] = acc;
    }
}

template <typename T>
void linear_backward(const Tensor<T>& in, std::span<const T> weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_in, std::span<T> grad_weight, std::span<T> grad_bias) {
  const std::size_t in_f = in.sample_size();
  const int out_f = grad_out.c;
  if (grad_in) grad_in->resize(in.n, in.c, in.h, in.w);
  for (int i = 0; i < in.n; ++i)
    for (int o = 0; o < out_f; ++o) {
      const T go = grad_out.sample(i)[o];
      if (!grad_bias.empty()) grad_bias[o] += go;
      for (std::size_t j = 0; j < in_f; ++j) {
        if (!grad_weight.empty()) grad_weight[o * in_f + j] += go * in.sample(i)[j];
        if (grad_in) grad_in->sample(i)[j] += go * weight[o * in_f + j];
      }
    }
}

#define FREEVIEW_INSTANTIATE(T)                                                                              \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,                \
                                  const ConvGeometry&, Tensor<T>&);                                        \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, const Tensor<T>&,                 \
                                   const ConvGeometry&, Tensor<T>*, std::span<T>, std::span<T>);           \
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

}  // namespace freeview::kernels::reference

#include "freeview/layers.hpp"

#include <cmath>

namespace freeview {
namespace {

template <typename T>
void normal_init(std::vector<T>& v, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

}  // namespace

// ---- Conv2d ---------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(int in_c, int out_c, int kernel, int stride, int pad, std::mt19937_64& rng,
                  const std::string& name)
    : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_(pad),
      weight_(name + ".weight", static_cast<std::size_t>(out_c) * in_c * kernel * kernel),
      bias_(name + ".bias", out_c) {
  normal_init(weight_.value, std::sqrt(2.0 / (in_c * kernel * kernel)), rng);
}

template <typename T>
kernels::ConvGeometry Conv2d<T>::geometry(const Tensor<T>& in) const {
  return {in_c_, in.h, in.w, out_c_, kernel_, stride_, pad_};
}

template <typename T>
void Conv2d<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool training) {
  if (in.c != in_c_) throw ShapeError("conv2d expects " + std::to_string(in_c_) + " channels, got " + in.shape_string());
  kernels::conv2d_forward<T>(in, weight_.value, bias_.value, geometry(in), out, training ? &col_cache_ : nullptr);
}

template <typename T>
void Conv2d<T>::backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  kernels::conv2d_backward<T>(in, weight_.value, grad_out, geometry(in), grad_in, weight_.grad, bias_.grad,
                              &col_cache_);
}

// ---- ConvTranspose2d --------------------------------------------------------

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(int in_c, int out_c, int kernel, int stride, int pad, std::mt19937_64& rng,
                                    const std::string& name)
    : in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), pad_(pad),
      weight_(name + ".weight", static_cast<std::size_t>(in_c) * out_c * kernel * kernel),
      bias_(name + ".bias", out_c) {
  const double fan_in = static_cast<double>(in_c) * kernel * kernel / (stride * stride);
  normal_init(weight_.value, std::sqrt(2.0 / fan_in), rng);
}

template <typename T>
kernels::ConvGeometry ConvTranspose2d<T>::geometry(const Tensor<T>& in) const {
  return {in_c_, in.h, in.w, out_c_, kernel_, stride_, pad_};
}

template <typename T>
void ConvTranspose2d<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool) {
  if (in.c != in_c_)
    throw ShapeError("conv_transpose2d expects " + std::to_string(in_c_) + " channels, got " + in.shape_string());
  kernels::conv_transpose2d_forward<T>(in, weight_.value, bias_.value, geometry(in), out);
}

template <typename T>
void ConvTranspose2d<T>::backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out,
                                  Tensor<T>* grad_in) {
  kernels::conv_transpose2d_backward<T>(in, weight_.value, grad_out, geometry(in), grad_in, weight_.grad,
                                        bias_.grad);
}

// ---- Linear -------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(int in_f, int out_f, std::mt19937_64& rng, const std::string& name)
    : in_f_(in_f), out_f_(out_f),
      weight_(name + ".weight", static_cast<std::size_t>(in_f) * out_f),
      bias_(name + ".bias", out_f) {
  normal_init(weight_.value, std::sqrt(1.0 / in_f), rng);
}

template <typename T>
void Linear<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool) {
  if (static_cast<int>(in.sample_size()) != in_f_)
    throw ShapeError("linear expects " + std::to_string(in_f_) + " features, got " + in.shape_string());
  kernels::linear_forward<T>(in, weight_.value, bias_.value, out_f_, out);
}

template <typename T>
void Linear<T>::backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  kernels::linear_backward<T>(in, weight_.value, grad_out, grad_in, weight_.grad, bias_.grad);
}

// ---- Elementwise ------------------------------------------------------------

template <typename T>
void ReLU<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool) {
  out.resize(in.n, in.c, in.h, in.w);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
}

template <typename T>
void ReLU<T>::backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  if (!grad_in) return;
  grad_in->resize(in.n, in.c, in.h, in.w);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) grad_in->data[i] = in.data[i] > T(0) ? grad_out.data[i] : T(0);
}

template <typename T>
void Tanh<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool) {
  out.resize(in.n, in.c, in.h, in.w);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out.data[i] = std::tanh(in.data[i]);
}

template <typename T>
void Tanh<T>::backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  if (!grad_in) return;
  grad_in->resize(in.n, in.c, in.h, in.w);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) grad_in->data[i] = grad_out.data[i] * (T(1) - out.data[i] * out.data[i]);
}

template <typename T>
void AvgPool2<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool) {
  if (in.h % 2 || in.w % 2) throw ShapeError("avgpool2 needs even extents, got " + in.shape_string());
  out.resize(in.n, in.c, in.h / 2, in.w / 2);
  const int planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* src = in.data.data() + p * in.plane();
    T* dst = out.data.data() + p * out.plane();
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        const T* s = src + 2 * y * in.w + 2 * x;
        dst[y * out.w + x] = T(0.25) * (s[0] + s[1] + s[in.w] + s[in.w + 1]);
      }
  }
}

template <typename T>
void AvgPool2<T>::backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  if (!grad_in) return;
  grad_in->resize(in.n, in.c, in.h, in.w);
  const int planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* g = grad_out.data.data() + p * out.plane();
    T* dst = grad_in->data.data() + p * in.plane();
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        const T v = T(0.25) * g[y * out.w + x];
        T* d = dst + 2 * y * in.w + 2 * x;
        d[0] = v; d[1] = v; d[in.w] = v; d[in.w + 1] = v;
      }
  }
}

template <typename T>
void GlobalAvgPool<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool) {
  out.resize(in.n, in.c, 1, 1);
  const int planes = in.n * in.c;
  const std::size_t plane = in.plane();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* src = in.data.data() + p * plane;
    T acc = 0;
    for (std::size_t k = 0; k < plane; ++k) acc += src[k];
    out.data[p] = acc / static_cast<T>(plane);
  }
}

template <typename T>
void GlobalAvgPool<T>::backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out,
                                Tensor<T>* grad_in) {
  if (!grad_in) return;
  grad_in->resize(in.n, in.c, in.h, in.w);
  const int planes = in.n * in.c;
  const std::size_t plane = in.plane();
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T v = grad_out.data[p] / static_cast<T>(plane);
    std::fill(grad_in->data.begin() + p * plane, grad_in->data.begin() + (p + 1) * plane, v);
  }
}

template <typename T>
void Reshape<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool) {
  if (in.sample_size() != static_cast<std::size_t>(c_) * h_ * w_)
    throw ShapeError("reshape: cannot view " + in.shape_string());
  out.n = in.n; out.c = c_; out.h = h_; out.w = w_;
  out.data = in.data;
}

template <typename T>
void Reshape<T>::backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  if (!grad_in) return;
  grad_in->n = in.n; grad_in->c = in.c; grad_in->h = in.h; grad_in->w = in.w;
  grad_in->data = grad_out.data;
}

// ---- BatchNorm2d --------------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, const std::string& name, T momentum, T eps)
    : channels_(channels), momentum_(momentum), eps_(eps),
      gamma_(name + ".gamma", channels), beta_(name + ".beta", channels),
      running_mean_(name + ".running_mean", channels), running_var_(name + ".running_var", channels),
      mean_(channels), inv_std_(channels) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
  std::fill(running_var_.value.begin(), running_var_.value.end(), T(1));
}

template <typename T>
void BatchNorm2d<T>::forward(const Tensor<T>& in, Tensor<T>& out, bool training) {
  if (in.c != channels_) throw ShapeError("batchnorm expects " + std::to_string(channels_) + " channels");
  out.resize(in.n, in.c, in.h, in.w);
  last_training_ = training;
  const std::size_t plane = in.plane();
  const double count = static_cast<double>(in.n) * plane;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < channels_; ++ch) {
    T mean, inv_std;
    if (training) {
      double sum = 0.0;
      for (int i = 0; i < in.n; ++i) {
        const T* p = in.sample(i) + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) sum += p[k];
      }
      const double m = sum / count;
      double sq = 0.0;
      for (int i = 0; i < in.n; ++i) {
        const T* p = in.sample(i) + ch * plane;
        for (std::size_t k = 0; k < plane; ++k) sq += (p[k] - m) * (p[k] - m);
      }
      const double var = sq / count;
      mean = static_cast<T>(m);
      inv_std = static_cast<T>(1.0 / std::sqrt(var + eps_));
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean_.value[ch] = (T(1) - momentum_) * running_mean_.value[ch] + momentum_ * mean;
      running_var_.value[ch] = (T(1) - momentum_) * running_var_.value[ch] + momentum_ * static_cast<T>(unbiased);
    } else {
      mean = running_mean_.value[ch];
      inv_std = T(1) / std::sqrt(running_var_.value[ch] + eps_);
    }
    mean_[ch] = mean;
    inv_std_[ch] = inv_std;
    const T scale = gamma_.value[ch] * inv_std;
    const T shift = beta_.value[ch] - mean * scale;
    for (int i = 0; i < in.n; ++i) {
      const T* p = in.sample(i) + ch * plane;
      T* q = out.sample(i) + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) q[k] = p[k] * scale + shift;
    }
  }
}

template <typename T>
void BatchNorm2d<T>::backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  const std::size_t plane = in.plane();
  const T count = static_cast<T>(in.n * plane);
  if (grad_in) grad_in->resize(in.n, in.c, in.h, in.w);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < channels_; ++ch) {
    const T mean = mean_[ch];
    const T inv_std = inv_std_[ch];
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < in.n; ++i) {
      const T* g = grad_out.sample(i) + ch * plane;
      const T* x = in.sample(i) + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += g[k];
        sum_dy_xhat += g[k] * (x[k] - mean) * inv_std;
      }
    }
    gamma_.grad[ch] += sum_dy_xhat;
    beta_.grad[ch] += sum_dy;
    if (!grad_in) continue;
    const T k_scale = gamma_.value[ch] * inv_std;
    for (int i = 0; i < in.n; ++i) {
      const T* g = grad_out.sample(i) + ch * plane;
      const T* x = in.sample(i) + ch * plane;
      T* d = grad_in->sample(i) + ch * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        if (last_training_)
          d[k] = k_scale * (g[k] - sum_dy / count - (x[k] - mean) * inv_std * sum_dy_xhat / count);
        else
          d[k] = k_scale * g[k];
      }
    }
  }
}

// ---- Sequential -----------------------------------------------------------------

template <typename T>
const Tensor<T>& Sequential<T>::forward(const Tensor<T>& in, bool training) {
  acts_.resize(layers_.size() + 1);
  acts_[0] = in;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->forward(acts_[i], acts_[i + 1], training);
  return acts_.back();
}

template <typename T>
void Sequential<T>::backward(const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  if (acts_.size() != layers_.size() + 1) throw std::logic_error("backward called before forward");
  Tensor<T> grad = grad_out;
  Tensor<T> next;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool need = i > 0 || grad_in != nullptr;
    layers_[i]->backward(acts_[i], acts_[i + 1], grad, need ? &next : nullptr);
    if (need) std::swap(grad, next);
  }
  if (grad_in) *grad_in = std::move(grad);
}

template <typename T>
std::vector<Parameter<T>*> Sequential<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& l : layers_)
    for (auto* p : l->parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Sequential<T>::buffers() {
  std::vector<Parameter<T>*> out;
  for (auto& l : layers_)
    for (auto* p : l->buffers()) out.push_back(p);
  return out;
}

#define FREEVIEW_INSTANTIATE(T)      \
  template class Conv2d<T>;          \
  template class ConvTranspose2d<T>; \
  template class Linear<T>;          \
  template class ReLU<T>;            \
  template class Tanh<T>;            \
  template class AvgPool2<T>;        \
  template class GlobalAvgPool<T>;   \
  template class Reshape<T>;         \
  template class BatchNorm2d<T>;     \
  template class Sequential<T>;

FREEVIEW_INSTANTIATE(float)
FREEVIEW_INSTANTIATE(double)
#undef FREEVIEW_INSTANTIATE

}  // namespace freeview

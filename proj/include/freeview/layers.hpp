#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "freeview/kernels.hpp"
#include "freeview/tensor.hpp"

namespace freeview {

template <typename T>
struct Parameter {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;

  explicit Parameter(std::string n = {}, std::size_t size = 0) : name(std::move(n)), value(size), grad(size) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// A differentiable layer. backward() receives the forward input and output
/// and must be called after forward() on the same batch.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual void forward(const Tensor<T>& in, Tensor<T>& out, bool training) = 0;
  virtual void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                        Tensor<T>* grad_in) = 0;
  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  /// Non-trainable state that is still checkpointed (running statistics).
  virtual std::vector<Parameter<T>*> buffers() { return {}; }
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_c, int out_c, int kernel, int stride, int pad, std::mt19937_64& rng, const std::string& name);
  std::string kind() const override { return "conv2d"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;
  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }

 private:
  kernels::ConvGeometry geometry(const Tensor<T>& in) const;
  int in_c_, out_c_, kernel_, stride_, pad_;
  Parameter<T> weight_, bias_;
  std::vector<T> col_cache_;
};

/// Stride-s transposed convolution; with kernel 4, stride 2, pad 1 it doubles the spatial extent.
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(int in_c, int out_c, int kernel, int stride, int pad, std::mt19937_64& rng,
                  const std::string& name);
  std::string kind() const override { return "conv_transpose2d"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;
  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }

 private:
  kernels::ConvGeometry geometry(const Tensor<T>& in) const;
  int in_c_, out_c_, kernel_, stride_, pad_;
  Parameter<T> weight_, bias_;
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(int in_f, int out_f, std::mt19937_64& rng, const std::string& name);
  std::string kind() const override { return "linear"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;
  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
  int in_features() const { return in_f_; }
  int out_features() const { return out_f_; }

 private:
  int in_f_, out_f_;
  Parameter<T> weight_, bias_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;
};

template <typename T>
class Tanh final : public Layer<T> {
 public:
  std::string kind() const override { return "tanh"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;
};

/// 2x2 average pooling with stride 2; requires even spatial extents.
template <typename T>
class AvgPool2 final : public Layer<T> {
 public:
  std::string kind() const override { return "avgpool2"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  std::string kind() const override { return "global_avgpool"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;
};

/// Reinterprets [N, C*H*W, 1, 1] as [N, C, H, W].
template <typename T>
class Reshape final : public Layer<T> {
 public:
  Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
  std::string kind() const override { return "reshape"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;

 private:
  int c_, h_, w_;
};

/// Per-channel batch normalization over (N, H, W). Training uses batch
/// statistics and updates running estimates; evaluation uses the running ones.
template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  BatchNorm2d(int channels, const std::string& name, T momentum = T(0.1), T eps = T(1e-5));
  std::string kind() const override { return "batchnorm2d"; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) override;
  std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Parameter<T>*> buffers() override { return {&running_mean_, &running_var_}; }

 private:
  int channels_;
  T momentum_, eps_;
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
  std::vector<T> mean_, inv_std_;
  bool last_training_ = true;
};

/// Ordered chain of layers that keeps every intermediate activation for backward.
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }

  const Tensor<T>& forward(const Tensor<T>& in, bool training);
  /// Backpropagates through every layer; grad_in may be null when the input gradient is not needed.
  void backward(const Tensor<T>& grad_out, Tensor<T>* grad_in);
  const Tensor<T>& output() const { return acts_.back(); }

  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> buffers();

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Tensor<T>> acts_;
};

}  // namespace freeview

#pragma once

#include <atomic>
#include <filesystem>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "freeview/datamodel.hpp"
#include "freeview/layers.hpp"

namespace freeview {

enum class Backbone { small_conv, vgg16_scratch };

std::string_view to_string(Backbone b);
Backbone parse_backbone(std::string_view s);

struct EncoderConfig {
  int img_size = 64;
  int embed_dim = 128;
  Backbone backbone = Backbone::small_conv;
  /// One conv3x3 + ReLU + 2x2 average pool stage per width (small_conv only).
  std::vector<int> conv_widths{32, 64, 128, 128};
  /// Channel count of the decoder's 4x4 seed block; halves per upsampling stage.
  int decoder_width = 128;
  std::uint64_t init_seed = 0;

  int downsampling_stages() const;
  /// Throws std::invalid_argument when the configuration cannot be built.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Shared trunk followed by two independent affine heads (content, view).
/// The same parameters are applied to sketches and photos.
template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  /// images: [N, 3, S, S]. Writes content/view features as [N, d, 1, 1].
  void forward(const Tensor<T>& images, Tensor<T>& content, Tensor<T>& view, bool training);
  /// Accumulates parameter gradients from dL/d(content) and dL/d(view).
  void backward(const Tensor<T>& grad_content, const Tensor<T>& grad_view);

  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> buffers() { return trunk_.buffers(); }
  int trunk_width() const { return trunk_width_; }

 private:
  Sequential<T> trunk_;
  int trunk_width_;
  Linear<T> content_head_;
  Linear<T> view_head_;
};

/// Maps a d-vector to an S x S x 3 image in [-1, 1]: affine seed to 4x4,
/// stride-2 transposed convolutions with BatchNorm + ReLU, tanh output.
template <typename T>
class Decoder {
 public:
  Decoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  /// features: [N, d, 1, 1] -> images [N, 3, S, S].
  const Tensor<T>& forward(const Tensor<T>& features, bool training);
  void backward(const Tensor<T>& grad_images, Tensor<T>* grad_features);

  std::vector<Parameter<T>*> parameters() { return net_.parameters(); }
  std::vector<Parameter<T>*> buffers() { return net_.buffers(); }
  int embed_dim() const { return embed_dim_; }
  int img_size() const { return img_size_; }

 private:
  Sequential<T> net_;
  int embed_dim_;
  int img_size_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Encoder θ, decoder φ, configuration and optimizer step count.
struct ModelState {
  EncoderConfig config;
  Encoder<float> encoder;
  Decoder<float> decoder;
  std::int64_t step = 0;

  explicit ModelState(const EncoderConfig& cfg);

  std::vector<Parameter<float>*> encoder_parameters() { return encoder.parameters(); }
  std::vector<Parameter<float>*> decoder_parameters() { return decoder.parameters(); }
  /// Encoder parameters followed by decoder parameters.
  std::vector<Parameter<float>*> parameters();
  std::vector<Parameter<float>*> buffers();
  void zero_grad();

 private:
  ModelState(const EncoderConfig& cfg, std::mt19937_64 rng);
};

/// Packs images into an [N, 3, S, S] batch. Throws ShapeError when a size differs from img_size.
Tensor<float> pack_images(std::span<const ImageSample> images, int img_size);
/// Same, but maps pixels through x -> 2x - 1 (decoder target range).
Tensor<float> pack_targets(std::span<const ImageSample> images, int img_size);

std::vector<EmbeddingPair> unpack_embeddings(const Tensor<float>& content, const Tensor<float>& view);

/// Evaluation-mode encoding.
std::vector<EmbeddingPair> encode(ModelState& state, std::span<const ImageSample> images);
/// Evaluation-mode decoding of one feature vector; output [1, 3, S, S] in [-1, 1].
Tensor<float> decode(ModelState& state, std::span<const double> feature);

/// f_vs = f_c + f_v.
std::vector<double> view_specific_feature(const EmbeddingPair& e);

void save_checkpoint(ModelState& state, const std::filesystem::path& path);
std::unique_ptr<ModelState> load_checkpoint(const std::filesystem::path& path);
/// Also verifies the stored configuration equals `expected`.
std::unique_ptr<ModelState> load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected);

std::string config_to_json(const EncoderConfig& cfg);
EncoderConfig config_from_json(const std::string& text);

/// Anything that turns images into embedding pairs. Retrieval and the
/// service depend only on this, so tests can substitute stub encoders.
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual std::vector<EmbeddingPair> encode(std::span<const ImageSample> images) const = 0;
  virtual int img_size() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::int64_t model_step() const { return 0; }
};

/// ImageEncoder over a ModelState. Calls are serialized; the state is not modified.
class ModelEncoder final : public ImageEncoder {
 public:
  explicit ModelEncoder(ModelState& state) : state_(state) {}
  std::vector<EmbeddingPair> encode(std::span<const ImageSample> images) const override;
  int img_size() const override { return state_.config.img_size; }
  std::size_t dim() const override { return static_cast<std::size_t>(state_.config.embed_dim); }
  std::int64_t model_step() const override { return state_.step; }
  std::size_t images_encoded() const { return images_encoded_.load(); }

 private:
  ModelState& state_;
  mutable std::mutex mutex_;
  mutable std::atomic<std::size_t> images_encoded_{0};
};

}  // namespace freeview

#include "freeview/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace freeview {

static_assert(std::endian::native == std::endian::little, "checkpoint and index formats assume little-endian hosts");

namespace {

constexpr char kCheckpointMagic[] = "FREEVIEW-CKPT-1\n";
constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

// VGG-16 convolutional configuration; 0 marks a 2x2 pooling stage.
constexpr int kVgg16[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};

int log2_exact(int v) {
  int s = 0;
  while ((1 << s) < v) ++s;
  return (1 << s) == v ? s : -1;
}

template <typename T>
int build_trunk(Sequential<T>& trunk, const EncoderConfig& cfg, std::mt19937_64& rng) {
  int in_c = 3;
  int idx = 0;
  auto conv = [&](int out_c) {
    trunk.add(std::make_unique<Conv2d<T>>(in_c, out_c, 3, 1, 1, rng, "enc.conv" + std::to_string(idx++)));
    trunk.add(std::make_unique<ReLU<T>>());
    in_c = out_c;
  };
  if (cfg.backbone == Backbone::small_conv) {
    for (int w : cfg.conv_widths) {
      conv(w);
      trunk.add(std::make_unique<AvgPool2<T>>());
    }
  } else {
    for (int w : kVgg16) {
      if (w == 0)
        trunk.add(std::make_unique<AvgPool2<T>>());
      else
        conv(w);
    }
  }
  trunk.add(std::make_unique<GlobalAvgPool<T>>());
  return in_c;
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

template <typename U>
U read_pod(std::istream& is, const std::string& what) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace

std::string_view to_string(Backbone b) { return b == Backbone::small_conv ? "small_conv" : "vgg16_scratch"; }

Backbone parse_backbone(std::string_view s) {
  if (s == "small_conv") return Backbone::small_conv;
  if (s == "vgg16_scratch") return Backbone::vgg16_scratch;
  throw std::invalid_argument("unknown backbone: " + std::string(s));
}

int EncoderConfig::downsampling_stages() const {
  return backbone == Backbone::small_conv ? static_cast<int>(conv_widths.size()) : 5;
}

void EncoderConfig::validate() const {
  if (embed_dim < 2) throw std::invalid_argument("embed_dim must be >= 2");
  if (backbone == Backbone::small_conv && conv_widths.empty())
    throw std::invalid_argument("small_conv backbone needs at least one stage");
  for (int w : conv_widths)
    if (w < 1) throw std::invalid_argument("conv widths must be positive");
  const int stages = downsampling_stages();
  if (img_size < 1 || img_size % (1 << stages) != 0)
    throw std::invalid_argument("img_size " + std::to_string(img_size) + " not divisible by 2^" + std::to_string(stages));
  const int up = log2_exact(img_size / 4);
  if (img_size < 8 || img_size % 4 != 0 || up < 1)
    throw std::invalid_argument("decoder needs img_size = 4 * 2^k with k >= 1");
  if (decoder_width < 2) throw std::invalid_argument("decoder_width must be >= 2");
}

// ---- Encoder --------------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng)
    : trunk_width_(build_trunk(trunk_, cfg, rng)),
      content_head_(trunk_width_, cfg.embed_dim, rng, "enc.content_head"),
      view_head_(trunk_width_, cfg.embed_dim, rng, "enc.view_head") {}

template <typename T>
void Encoder<T>::forward(const Tensor<T>& images, Tensor<T>& content, Tensor<T>& view, bool training) {
  const Tensor<T>& pooled = trunk_.forward(images, training);
  content_head_.forward(pooled, content, training);
  view_head_.forward(pooled, view, training);
}

template <typename T>
void Encoder<T>::backward(const Tensor<T>& grad_content, const Tensor<T>& grad_view) {
  const Tensor<T>& pooled = trunk_.output();
  Tensor<T> grad_pooled, grad_from_view;
  content_head_.backward(pooled, pooled, grad_content, &grad_pooled);
  view_head_.backward(pooled, pooled, grad_view, &grad_from_view);
  for (std::size_t i = 0; i < grad_pooled.size(); ++i) grad_pooled.data[i] += grad_from_view.data[i];
  trunk_.backward(grad_pooled, nullptr);
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::parameters() {
  auto out = trunk_.parameters();
  for (auto* p : content_head_.parameters()) out.push_back(p);
  for (auto* p : view_head_.parameters()) out.push_back(p);
  return out;
}

// ---- Decoder --------------------------------------------------------------------

template <typename T>
Decoder<T>::Decoder(const EncoderConfig& cfg, std::mt19937_64& rng)
    : embed_dim_(cfg.embed_dim), img_size_(cfg.img_size) {
  const int stages = log2_exact(cfg.img_size / 4);
  int width = cfg.decoder_width;
  net_.add(std::make_unique<Linear<T>>(cfg.embed_dim, width * 16, rng, "dec.seed"));
  net_.add(std::make_unique<Reshape<T>>(width, 4, 4));
  net_.add(std::make_unique<BatchNorm2d<T>>(width, "dec.seed_bn"));
  net_.add(std::make_unique<ReLU<T>>());
  for (int s = 0; s < stages; ++s) {
    const bool last = s + 1 == stages;
    const int out_c = last ? 3 : std::max(width / 2, 8);
    const std::string name = "dec.up" + std::to_string(s);
    net_.add(std::make_unique<ConvTranspose2d<T>>(width, out_c, 4, 2, 1, rng, name));
    if (last) {
      net_.add(std::make_unique<Tanh<T>>());
    } else {
      net_.add(std::make_unique<BatchNorm2d<T>>(out_c, name + "_bn"));
      net_.add(std::make_unique<ReLU<T>>());
    }
    width = out_c;
  }
}

template <typename T>
const Tensor<T>& Decoder<T>::forward(const Tensor<T>& features, bool training) {
  if (features.c != embed_dim_ || features.h != 1 || features.w != 1)
    throw ShapeError("decoder expects [N," + std::to_string(embed_dim_) + ",1,1], got " + features.shape_string());
  return net_.forward(features, training);
}

template <typename T>
void Decoder<T>::backward(const Tensor<T>& grad_images, Tensor<T>* grad_features) {
  net_.backward(grad_images, grad_features);
}

template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;

// ---- ModelState -------------------------------------------------------------------

ModelState::ModelState(const EncoderConfig& cfg) : ModelState(cfg, std::mt19937_64(cfg.init_seed)) {}

ModelState::ModelState(const EncoderConfig& cfg, std::mt19937_64 rng)
    : config((cfg.validate(), cfg)), encoder(cfg, rng), decoder(cfg, rng) {}

std::vector<Parameter<float>*> ModelState::parameters() {
  auto out = encoder.parameters();
  for (auto* p : decoder.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter<float>*> ModelState::buffers() {
  auto out = encoder.buffers();
  for (auto* p : decoder.buffers()) out.push_back(p);
  return out;
}

void ModelState::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

// ---- Free functions ------------------------------------------------------------------

Tensor<float> pack_images(std::span<const ImageSample> images, int img_size) {
  Tensor<float> t(static_cast<int>(images.size()), 3, img_size, img_size);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (im.size != img_size || im.pixels.size() != t.sample_size())
      throw ShapeError("image " + describe(im.ref) + " has size " + std::to_string(im.size) + ", model expects " +
                       std::to_string(img_size));
    std::copy(im.pixels.begin(), im.pixels.end(), t.sample(static_cast<int>(i)));
  }
  return t;
}

Tensor<float> pack_targets(std::span<const ImageSample> images, int img_size) {
  Tensor<float> t = pack_images(images, img_size);
  for (auto& v : t.data) v = 2.0f * v - 1.0f;
  return t;
}

std::vector<EmbeddingPair> unpack_embeddings(const Tensor<float>& content, const Tensor<float>& view) {
  std::vector<EmbeddingPair> out(content.n);
  for (int i = 0; i < content.n; ++i) {
    out[i].content.assign(content.sample(i), content.sample(i) + content.c);
    out[i].view.assign(view.sample(i), view.sample(i) + view.c);
  }
  return out;
}

std::vector<EmbeddingPair> encode(ModelState& state, std::span<const ImageSample> images) {
  constexpr std::size_t kChunk = 64;
  std::vector<EmbeddingPair> out;
  out.reserve(images.size());
  Tensor<float> content, view;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const Tensor<float> batch = pack_images(chunk, state.config.img_size);
    state.encoder.forward(batch, content, view, false);
    for (auto& e : unpack_embeddings(content, view)) out.push_back(std::move(e));
  }
  return out;
}

Tensor<float> decode(ModelState& state, std::span<const double> feature) {
  if (static_cast<int>(feature.size()) != state.config.embed_dim)
    throw ShapeError("decode: feature length " + std::to_string(feature.size()) + " != " +
                     std::to_string(state.config.embed_dim));
  Tensor<float> f(1, state.config.embed_dim, 1, 1);
  for (std::size_t i = 0; i < feature.size(); ++i) f.data[i] = static_cast<float>(feature[i]);
  return state.decoder.forward(f, false);
}

std::vector<double> view_specific_feature(const EmbeddingPair& e) {
  if (e.content.size() != e.view.size()) throw DimensionError("content and view dims differ");
  std::vector<double> out(e.content.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = e.content[i] + e.view[i];
  return out;
}

std::vector<EmbeddingPair> ModelEncoder::encode(std::span<const ImageSample> images) const {
  std::lock_guard lock(mutex_);
  images_encoded_ += images.size();
  return freeview::encode(state_, images);
}

// ---- Checkpoints ---------------------------------------------------------------------

std::string config_to_json(const EncoderConfig& cfg) {
  nlohmann::json j;
  j["img_size"] = cfg.img_size;
  j["embed_dim"] = cfg.embed_dim;
  j["backbone"] = std::string(to_string(cfg.backbone));
  j["conv_widths"] = cfg.conv_widths;
  j["decoder_width"] = cfg.decoder_width;
  j["init_seed"] = cfg.init_seed;
  return j.dump(2);
}

EncoderConfig config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EncoderConfig cfg;
  cfg.img_size = j.at("img_size").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.backbone = parse_backbone(j.at("backbone").get<std::string>());
  cfg.conv_widths = j.at("conv_widths").get<std::vector<int>>();
  cfg.decoder_width = j.at("decoder_width").get<int>();
  cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
  return cfg;
}

void save_checkpoint(ModelState& state, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  const std::string cfg = config_to_json(state.config);
  os.write(kCheckpointMagic, kMagicLen);
  write_u64(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u64(os, static_cast<std::uint64_t>(state.step));
  auto tensors = state.parameters();
  for (auto* b : state.buffers()) tensors.push_back(b);
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto* p : tensors) {
    write_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u64(os, p->value.size());
    os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!os) throw CheckpointError("write failed for " + path.string());

  std::ofstream side(path.string() + ".json", std::ios::trunc);
  nlohmann::json j = nlohmann::json::parse(cfg);
  j["format"] = "FREEVIEW-CKPT-1";
  j["step"] = state.step;
  side << j.dump(2) << '\n';
}

namespace {

std::unique_ptr<ModelState> load_impl(const std::filesystem::path& path, const EncoderConfig* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0)
    throw CheckpointError(path.string() + ": bad magic, not a FREEVIEW-CKPT-1 file");
  const auto cfg_len = read_pod<std::uint64_t>(is, "config length");
  if (cfg_len > (1u << 20)) throw CheckpointError(path.string() + ": implausible config length");
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len))) throw CheckpointError("checkpoint truncated in config");
  EncoderConfig cfg;
  try {
    cfg = config_from_json(cfg_text);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": corrupt config: " + e.what());
  }
  if (expected && !(cfg == *expected))
    throw CheckpointError(path.string() + ": config mismatch; checkpoint has " + config_to_json(cfg) + " but expected " +
                          config_to_json(*expected));
  auto state = std::make_unique<ModelState>(cfg);
  state->step = static_cast<std::int64_t>(read_pod<std::uint64_t>(is, "step"));
  auto tensors = state->parameters();
  for (auto* b : state->buffers()) tensors.push_back(b);
  const auto count = read_pod<std::uint32_t>(is, "tensor count");
  if (count != tensors.size())
    throw CheckpointError(path.string() + ": expected " + std::to_string(tensors.size()) + " tensors, found " +
                          std::to_string(count));
  for (auto* p : tensors) {
    const auto name_len = read_pod<std::uint32_t>(is, "name length");
    if (name_len > 4096) throw CheckpointError(path.string() + ": implausible tensor name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointError("checkpoint truncated in tensor name");
    if (name != p->name) throw CheckpointError(path.string() + ": expected tensor " + p->name + ", found " + name);
    const auto n = read_pod<std::uint64_t>(is, p->name + " size");
    if (n != p->value.size()) throw CheckpointError(path.string() + ": tensor " + name + " has wrong size");
    if (!is.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(n * sizeof(float))))
      throw CheckpointError("checkpoint truncated in tensor " + name);
  }
  return state;
}

}  // namespace

std::unique_ptr<ModelState> load_checkpoint(const std::filesystem::path& path) { return load_impl(path, nullptr); }

std::unique_ptr<ModelState> load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected) {
  return load_impl(path, &expected);
}

}  // namespace freeview

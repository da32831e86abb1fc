#pragma once

#include <array>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stada/core/container.hpp"
#include "stada/core/rng.hpp"
#include "stada/core/tensor.hpp"
#include "stada/losses.hpp"
#include "stada/nn/layers.hpp"

namespace stada {

inline constexpr char kWeightsMagic[8] = {'S', 'T', 'A', 'D', 'A', 'W', 'G', 'T'};
inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr int kMinInputSize = 32;

struct PreprocessSpec {
  std::array<double, 3> channel_means{123.68, 116.779, 103.939};
  ColorSpace channel_order = ColorSpace::rgb;
  double scale = 1.0;
};

inline json to_json(const PreprocessSpec& p) {
  return json{{"channel_means", p.channel_means},
              {"channel_order", p.channel_order == ColorSpace::rgb ? "rgb" : "bgr"},
              {"scale", p.scale}};
}

inline PreprocessSpec preprocess_from_json(const json& j) {
  PreprocessSpec p;
  auto m = j.at("channel_means");
  for (int i = 0; i < 3; ++i) p.channel_means[i] = m.at(i).get<double>();
  p.channel_order = j.at("channel_order") == "bgr" ? ColorSpace::bgr : ColorSpace::rgb;
  p.scale = j.at("scale").get<double>();
  require(p.scale > 0, "preprocess scale must be > 0");
  return p;
}

/// Architecture of the fixed feature backbone: VGG-style stacks of 3x3
/// stride-1 zero-padded convs with 2x2 stride-2 max pools between blocks.
struct BackboneSpec {
  std::string backbone_id;
  std::vector<int> block_convs;   // convs per block, e.g. {2, 2, 3, 3, 3}
  std::vector<int> block_widths;  // output channels per block

  struct Layer {
    enum class Kind { conv, relu, pool };
    Kind kind;
    std::string id;
    int channels = 0;  // channels of this layer's output
    int stride = 1;    // cumulative downsampling factor at the output
  };

  std::vector<Layer> table() const {
    require(block_convs.size() == block_widths.size(), "backbone block spec mismatch");
    std::vector<Layer> t;
    int stride = 1;
    for (std::size_t b = 0; b < block_convs.size(); ++b) {
      for (int c = 0; c < block_convs[b]; ++c) {
        std::string suffix = std::to_string(b + 1) + "_" + std::to_string(c + 1);
        t.push_back({Layer::Kind::conv, "conv" + suffix, block_widths[b], stride});
        t.push_back({Layer::Kind::relu, "relu" + suffix, block_widths[b], stride});
      }
      stride *= 2;
      t.push_back({Layer::Kind::pool, "pool" + std::to_string(b + 1), block_widths[b], stride});
    }
    return t;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    int in_c = 3;
    for (std::size_t b = 0; b < block_convs.size(); ++b)
      for (int c = 0; c < block_convs[b]; ++c) {
        n += static_cast<std::size_t>(block_widths[b]) * in_c * 9 + block_widths[b];
        in_c = block_widths[b];
      }
    return n;
  }

  static BackboneSpec preset(const std::string& id) {
    if (id == "vgg16") return {"vgg16", {2, 2, 3, 3, 3}, {64, 128, 256, 512, 512}};
    if (id == "vgg16_half") return {"vgg16_half", {2, 2, 3, 3, 3}, {32, 64, 128, 256, 256}};
    if (id == "vgg19") return {"vgg19", {2, 2, 4, 4, 4}, {64, 128, 256, 512, 512}};
    throw UserError("unknown backbone preset: " + id);
  }
};

inline std::vector<std::string> default_content_layers() { return {"relu2_2"}; }
inline std::vector<std::string> default_style_layers() {
  return {"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
}

/// Deterministic He-uniform fill of a backbone's parameter blob. The same
/// (spec, seed) always produces the same bytes, which is what lets the weight
/// manifest pin a content hash without shipping the blob itself.
inline std::vector<float> generate_backbone_weights(const BackboneSpec& spec,
                                                    std::uint64_t seed) {
  std::vector<float> blob;
  blob.reserve(spec.param_count());
  Rng root(seed);
  int in_c = 3, layer_idx = 0;
  for (std::size_t b = 0; b < spec.block_convs.size(); ++b)
    for (int c = 0; c < spec.block_convs[b]; ++c, ++layer_idx) {
      Rng rng = root.split("conv" + std::to_string(layer_idx));
      int out_c = spec.block_widths[b];
      double limit = std::sqrt(6.0 / (static_cast<double>(in_c) * 9));
      for (int i = 0; i < out_c * in_c * 9; ++i)
        blob.push_back(static_cast<float>(rng.uniform(-limit, limit)));
      for (int i = 0; i < out_c; ++i) blob.push_back(0.0f);
      in_c = out_c;
    }
  return blob;
}

inline void write_backbone_weights(const std::filesystem::path& path, const BackboneSpec& spec,
                                   std::uint64_t seed, const std::vector<float>& blob) {
  json header{{"backbone_id", spec.backbone_id},
              {"block_convs", spec.block_convs},
              {"block_widths", spec.block_widths},
              {"seed", seed}};
  write_container(path, kWeightsMagic, kWeightsVersion, header, blob);
}

/// Manifest pinning a weight file: path (relative to the manifest), byte size
/// and content hash. Loading refuses any mismatch; a missing file is
/// resynthesized from the recorded generator seed and then still has to match
/// the pinned hash.
struct WeightsManifest {
  std::string file;
  std::uint64_t bytes = 0;
  std::string sha256;
  std::string backbone_id;
  std::uint64_t seed = 0;

  static WeightsManifest load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open weights manifest: " + path.string());
    json j;
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw CorruptFileError("weights manifest unreadable: " + path.string() + ": " + e.what());
    }
    WeightsManifest m;
    m.file = j.at("file").get<std::string>();
    m.bytes = j.at("bytes").get<std::uint64_t>();
    m.sha256 = j.at("sha256").get<std::string>();
    m.backbone_id = j.at("backbone_id").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    return m;
  }

  void save(const std::filesystem::path& path) const {
    json j{{"file", file},
           {"bytes", bytes},
           {"sha256", sha256},
           {"backbone_id", backbone_id},
           {"seed", seed}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest: " + path.string());
    os << j.dump(2) << "\n";
  }
};

/// Create the weight file described by a manifest and the manifest itself.
inline WeightsManifest create_weights_bundle(const std::filesystem::path& dir,
                                             const std::string& preset, std::uint64_t seed) {
  BackboneSpec spec = BackboneSpec::preset(preset);
  std::filesystem::create_directories(dir);
  std::string fname = preset + ".stw";
  auto wpath = dir / fname;
  write_backbone_weights(wpath, spec, seed, generate_backbone_weights(spec, seed));
  WeightsManifest m;
  m.file = fname;
  m.bytes = std::filesystem::file_size(wpath);
  m.sha256 = sha256_of_file(wpath);
  m.backbone_id = preset;
  m.seed = seed;
  m.save(dir / (preset + ".manifest.json"));
  return m;
}

struct FeatureMapSet {
  std::map<std::string, FeatureMap> maps;
  std::pair<int, int> source_shape{0, 0};  // (H, W)
};

/// The frozen loss network: a pretrained-style classification backbone whose
/// tapped activations define the perceptual losses. Immutable after
/// construction; concurrent feature extraction is safe.
class LossNetwork {
 public:
  LossNetwork(BackboneSpec spec, const std::vector<float>& params, PreprocessSpec pre,
              std::vector<std::string> content_layers = default_content_layers(),
              std::vector<std::string> style_layers = default_style_layers())
      : spec_(std::move(spec)), pre_(pre), content_layers_(std::move(content_layers)),
        style_layers_(std::move(style_layers)) {
    table_ = spec_.table();
    require(params.size() == spec_.param_count(),
            "backbone parameter blob has wrong size: expected " +
                std::to_string(spec_.param_count()) + ", got " + std::to_string(params.size()));
    std::size_t off = 0;
    int in_c = 3;
    for (const auto& l : table_) {
      if (l.kind != BackboneSpec::Layer::Kind::conv) continue;
      nn::Conv2d<float> conv(in_c, l.channels, 3, 1, nn::PadMode::zero);
      std::copy(params.begin() + off, params.begin() + off + conv.w.size(), conv.w.begin());
      off += conv.w.size();
      std::copy(params.begin() + off, params.begin() + off + conv.b.size(), conv.b.begin());
      off += conv.b.size();
      convs_.push_back(std::move(conv));
      in_c = l.channels;
    }
    for (const auto& id : content_layers_) layer_index(id);
    for (const auto& id : style_layers_) layer_index(id);
  }

  /// Load from a manifest, synthesizing the weight file if it is missing and
  /// refusing any byte-size or hash mismatch.
  static LossNetwork from_manifest(const std::filesystem::path& manifest_path,
                                   std::vector<std::string> content = default_content_layers(),
                                   std::vector<std::string> style = default_style_layers()) {
    WeightsManifest m = WeightsManifest::load(manifest_path);
    BackboneSpec spec = BackboneSpec::preset(m.backbone_id);
    auto wpath = manifest_path.parent_path() / m.file;
    if (!std::filesystem::exists(wpath))
      write_backbone_weights(wpath, spec, m.seed, generate_backbone_weights(spec, m.seed));
    auto size = std::filesystem::file_size(wpath);
    if (size != m.bytes)
      throw CorruptFileError("weight file " + wpath.string() + " has " + std::to_string(size) +
                             " bytes, manifest pins " + std::to_string(m.bytes));
    std::string hash = sha256_of_file(wpath);
    if (hash != m.sha256)
      throw CorruptFileError("weight file " + wpath.string() +
                             " does not match the manifest hash (" + hash + " vs " + m.sha256 +
                             "), refusing to load");
    Container c = read_container(wpath, kWeightsMagic, kWeightsVersion, "weights");
    return LossNetwork(spec, c.blob, PreprocessSpec{}, std::move(content), std::move(style));
  }

  const BackboneSpec& spec() const { return spec_; }
  const PreprocessSpec& preprocess_spec() const { return pre_; }
  const std::vector<std::string>& content_layers() const { return content_layers_; }
  const std::vector<std::string>& style_layers() const { return style_layers_; }

  const BackboneSpec::Layer& layer_info(const std::string& id) const {
    return table_[layer_index(id)];
  }

  /// Hash of the live backbone parameters; used to prove the weights stay
  /// frozen across arbitrary amounts of feature extraction and training.
  std::string weights_sha256() const {
    Sha256 h;
    for (const auto& c : convs_) {
      h.update(c.w.data(), c.w.size() * sizeof(float));
      h.update(c.b.data(), c.b.size() * sizeof(float));
    }
    Sha256 copy = h;
    return copy.hex_digest();
  }

  /// Per-call tape for backpropagating from tapped layers to the input image.
  struct Tape {
    struct Step {
      int layer = -1;  // index into the table
      nn::Conv2dCtx<float> conv;
      nn::ReluCtx<float> relu;
      nn::MaxPoolCtx<float> pool;
    };
    std::vector<Step> steps;
    int in_h = 0, in_w = 0, batch = 0;
  };

  /// Run the backbone over a byte-range RGB batch, returning raw activations
  /// at the requested layers. Records a tape when given one.
  std::map<std::string, Tensor4<float>> forward_taps(const Tensor4<float>& x,
                                                     const std::vector<std::string>& layers,
                                                     Tape* tape = nullptr) const {
    require(x.c == 3, "loss network expects 3-channel input");
    require(x.h >= kMinInputSize && x.w >= kMinInputSize,
            "image too small for the loss network: " + std::to_string(x.h) + "x" +
                std::to_string(x.w) + ", minimum is " + std::to_string(kMinInputSize) + "x" +
                std::to_string(kMinInputSize));
    int deepest = -1;
    std::set<int> wanted;
    for (const auto& id : layers) {
      int idx = layer_index(id);
      wanted.insert(idx);
      deepest = std::max(deepest, idx);
    }
    if (tape) {
      tape->in_h = x.h;
      tape->in_w = x.w;
      tape->batch = x.n;
      tape->steps.clear();
    }
    Tensor4<float> h = preprocess(x);
    std::map<std::string, Tensor4<float>> taps;
    int conv_idx = 0;
    for (int i = 0; i <= deepest; ++i) {
      const auto& l = table_[i];
      Tape::Step step;
      step.layer = i;
      switch (l.kind) {
        case BackboneSpec::Layer::Kind::conv:
          h = convs_[conv_idx].forward(h, tape ? &step.conv : nullptr);
          ++conv_idx;
          break;
        case BackboneSpec::Layer::Kind::relu:
          h = nn::relu_forward(h, tape ? &step.relu : nullptr);
          break;
        case BackboneSpec::Layer::Kind::pool:
          h = nn::maxpool2_forward(h, tape ? &step.pool : nullptr);
          break;
      }
      if (tape) tape->steps.push_back(std::move(step));
      if (wanted.count(i)) taps.emplace(l.id, h);
    }
    return taps;
  }

  /// Backpropagate gradients injected at tapped layers down to the original
  /// byte-range image. Backbone weights are never touched.
  Tensor4<float> backward_from_taps(const Tape& tape,
                                    const std::map<std::string, Tensor4<float>>& tap_grads) const {
    require(!tape.steps.empty(), "backward_from_taps: empty tape");
    Tensor4<float> grad;
    int conv_idx = 0;
    for (const auto& s : tape.steps)
      if (table_[s.layer].kind == BackboneSpec::Layer::Kind::conv) ++conv_idx;
    for (int i = static_cast<int>(tape.steps.size()) - 1; i >= 0; --i) {
      const auto& step = tape.steps[i];
      const auto& l = table_[step.layer];
      if (l.kind == BackboneSpec::Layer::Kind::conv) --conv_idx;
      auto it = tap_grads.find(l.id);
      if (it != tap_grads.end()) {
        if (grad.size() == 0) {
          grad = it->second;
        } else {
          require(grad.same_shape(it->second), "tap gradient shape mismatch at " + l.id);
          for (std::size_t k = 0; k < grad.size(); ++k) grad.v[k] += it->second.v[k];
        }
      }
      require(grad.size() != 0, "no tap gradient reaches layer " + l.id);
      switch (l.kind) {
        case BackboneSpec::Layer::Kind::conv:
          grad = convs_[conv_idx].backward(grad, step.conv, nullptr, nullptr);
          break;
        case BackboneSpec::Layer::Kind::relu:
          grad = nn::relu_backward(grad, step.relu);
          break;
        case BackboneSpec::Layer::Kind::pool:
          grad = nn::maxpool2_backward(grad, step.pool);
          break;
      }
    }
    return preprocess_backward(grad);
  }

  /// One feature map per requested layer for a single image.
  FeatureMapSet extract_features(const ImageTensor& image,
                                 const std::vector<std::string>& layers) const {
    require(image.data.n == 1, "extract_features takes a single image");
    auto taps = forward_taps(image.data, layers);
    FeatureMapSet out;
    out.source_shape = {image.data.h, image.data.w};
    for (auto& [id, t] : taps) out.maps.emplace(id, tap_to_feature_map(t, 0, id));
    return out;
  }

  static FeatureMap tap_to_feature_map(const Tensor4<float>& tap, int item,
                                       const std::string& id) {
    FeatureMap f;
    f.layer_id = id;
    f.data.resize(tap.c, static_cast<Eigen::Index>(tap.h) * tap.w);
    for (int c = 0; c < tap.c; ++c) {
      const float* p = tap.plane(item, c);
      for (Eigen::Index s = 0; s < f.data.cols(); ++s) f.data(c, s) = p[s];
    }
    return f;
  }

  /// Gram targets of a style image over the configured style layers.
  /// Memoized per (image bytes, layer set); the backbone is fixed per
  /// instance so it does not enter the key.
  StyleTarget compute_style_target(const ImageTensor& style_image,
                                   const std::vector<double>& layer_weights) const {
    require(layer_weights.size() == style_layers_.size(),
            "style layer weight count mismatch");
    std::string key = style_key(style_image);
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      auto it = style_cache_.find(key);
      if (it != style_cache_.end()) {
        StyleTarget t = it->second;
        t.layer_weights = layer_weights;
        validate(t);
        return t;
      }
    }
    FeatureMapSet feats = extract_features(style_image, style_layers_);
    StyleTarget t;
    for (const auto& id : style_layers_) {
      const FeatureMap& f = feats.maps.at(id);
      t.grams.push_back(gram_matrix(f));
      t.dims.push_back({f.channels(), f.positions()});
    }
    t.layer_weights = layer_weights;
    validate(t);
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      style_cache_.emplace(key, t);
    }
    return t;
  }

 private:
  int layer_index(const std::string& id) const {
    for (std::size_t i = 0; i < table_.size(); ++i)
      if (table_[i].id == id) return static_cast<int>(i);
    throw ContractViolation("unknown loss-network layer id: '" + id + "' (backbone " +
                            spec_.backbone_id + ")");
  }

  Tensor4<float> preprocess(const Tensor4<float>& x) const {
    Tensor4<float> out(x.n, 3, x.h, x.w);
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < 3; ++c) {
        int src = pre_.channel_order == ColorSpace::bgr ? 2 - c : c;
        const float* p = x.plane(i, src);
        float* q = out.plane(i, c);
        float mean = static_cast<float>(pre_.channel_means[c]);
        float scale = static_cast<float>(pre_.scale);
        for (int s = 0; s < x.h * x.w; ++s) q[s] = (p[s] - mean) * scale;
      }
    return out;
  }

  Tensor4<float> preprocess_backward(const Tensor4<float>& g) const {
    Tensor4<float> out(g.n, 3, g.h, g.w);
    for (int i = 0; i < g.n; ++i)
      for (int c = 0; c < 3; ++c) {
        int src = pre_.channel_order == ColorSpace::bgr ? 2 - c : c;
        const float* p = g.plane(i, c);
        float* q = out.plane(i, src);
        float scale = static_cast<float>(pre_.scale);
        for (int s = 0; s < g.h * g.w; ++s) q[s] += p[s] * scale;
      }
    return out;
  }

  std::string style_key(const ImageTensor& img) const {
    Sha256 h;
    int dims[4] = {img.data.n, img.data.c, img.data.h, img.data.w};
    h.update(dims, sizeof(dims));
    h.update(img.data.v.data(), img.data.v.size() * sizeof(float));
    for (const auto& id : style_layers_) h.update(id);
    return h.hex_digest();
  }

  BackboneSpec spec_;
  std::vector<BackboneSpec::Layer> table_;
  std::vector<nn::Conv2d<float>> convs_;
  PreprocessSpec pre_;
  std::vector<std::string> content_layers_, style_layers_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::string, StyleTarget> style_cache_;
};

}  // namespace stada

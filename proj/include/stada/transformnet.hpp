#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "stada/core/container.hpp"
#include "stada/core/rng.hpp"
#include "stada/core/tensor.hpp"
#include "stada/nn/layers.hpp"
#include "stada/nn/optim.hpp"

namespace stada {

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'A', 'D', 'A', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TransformNetConfig {
  int num_residual_blocks = 5;
  int base_channels = 32;
  int downsample_factor = 4;  // via log2(factor) stride-2 stages
  std::string norm = "instance";
  std::string output_activation = "scaled_tanh";
};

inline void validate(const TransformNetConfig& c) {
  require(c.num_residual_blocks >= 1, "invalid num_residual_blocks: must be >= 1");
  require(c.base_channels >= 1, "invalid base_channels: must be >= 1");
  bool pow2 = c.downsample_factor >= 1 &&
              (c.downsample_factor & (c.downsample_factor - 1)) == 0;
  require(pow2, "invalid downsample_factor: must be a power of 2");
  require(c.norm == "instance", "invalid norm: only 'instance' is supported");
  require(c.output_activation == "scaled_tanh",
          "invalid output_activation: only 'scaled_tanh' is supported");
}

inline json to_json(const TransformNetConfig& c) {
  return json{{"num_residual_blocks", c.num_residual_blocks},
              {"base_channels", c.base_channels},
              {"downsample_factor", c.downsample_factor},
              {"norm", c.norm},
              {"output_activation", c.output_activation}};
}

inline TransformNetConfig transform_config_from_json(const json& j) {
  TransformNetConfig c;
  c.num_residual_blocks = j.at("num_residual_blocks").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.downsample_factor = j.at("downsample_factor").get<int>();
  c.norm = j.at("norm").get<std::string>();
  c.output_activation = j.at("output_activation").get<std::string>();
  validate(c);
  return c;
}

/// The per-style feed-forward stylizer: stride-1 9x9 conv, log2(factor)
/// stride-2 downsampling convs, residual blocks at the bottleneck, mirrored
/// nearest-neighbor upsampling stages, and a 9x9 output conv under a scaled
/// tanh. Every conv uses reflection padding; every non-residual conv is
/// followed by instance norm (ReLU everywhere except the output conv).
template <typename T>
class TransformNetworkT {
 public:
  struct ConvBlock {
    nn::Conv2d<T> conv;
    nn::InstanceNorm<T> norm;
    bool relu = true;
  };
  struct ResBlock {
    ConvBlock a;  // with ReLU
    ConvBlock b;  // no ReLU, no activation after the skip addition
  };

  TransformNetworkT() = default;

  static TransformNetworkT build(const TransformNetConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    TransformNetworkT net;
    net.cfg_ = cfg;
    Rng root(seed);
    int n_down = 0;
    for (int f = cfg.downsample_factor; f > 1; f /= 2) ++n_down;
    int ch = cfg.base_channels;
    int li = 0;
    auto mk = [&](int in_c, int out_c, int k, int stride, bool relu) {
      ConvBlock b{nn::Conv2d<T>(in_c, out_c, k, stride, nn::PadMode::reflect),
                  nn::InstanceNorm<T>(out_c), relu};
      Rng r = root.split("conv" + std::to_string(li++));
      b.conv.init_he_uniform(r);
      return b;
    };
    net.first_ = mk(3, ch, 9, 1, true);
    for (int d = 0; d < n_down; ++d) {
      net.down_.push_back(mk(ch, ch * 2, 3, 2, true));
      ch *= 2;
    }
    for (int r = 0; r < cfg.num_residual_blocks; ++r)
      net.res_.push_back({mk(ch, ch, 3, 1, true), mk(ch, ch, 3, 1, false)});
    for (int d = 0; d < n_down; ++d) {
      net.up_.push_back(mk(ch, ch / 2, 3, 1, true));
      ch /= 2;
    }
    net.out_ = mk(ch, 3, 9, 1, false);
    return net;
  }

  const TransformNetConfig& config() const { return cfg_; }

  int conv_layer_count() const {
    return 2 + static_cast<int>(down_.size() + up_.size()) +
           2 * static_cast<int>(res_.size());
  }

  struct Tape {
    struct BlockCtx {
      nn::Conv2dCtx<T> conv;
      nn::InstanceNormCtx<T> norm;
      nn::ReluCtx<T> relu;
    };
    BlockCtx first;
    std::vector<BlockCtx> down;
    std::vector<std::pair<BlockCtx, BlockCtx>> res;
    std::vector<BlockCtx> up;
    BlockCtx out;
    nn::ScaledTanhCtx<T> tanh;
  };

  /// Input must be (n, 3, h, w) with h, w divisible by the downsample factor.
  Tensor4<T> forward(const Tensor4<T>& x, Tape* tape = nullptr) const {
    require(x.c == 3, "transform net expects 3-channel input");
    require(x.h % cfg_.downsample_factor == 0 && x.w % cfg_.downsample_factor == 0,
            "transform net input size must be divisible by " +
                std::to_string(cfg_.downsample_factor));
    if (tape) {
      tape->down.resize(down_.size());
      tape->res.resize(res_.size());
      tape->up.resize(up_.size());
    }
    auto run_block = [&](const ConvBlock& b, const Tensor4<T>& in,
                         typename Tape::BlockCtx* ctx) {
      auto h = b.conv.forward(in, ctx ? &ctx->conv : nullptr);
      h = b.norm.forward(h, ctx ? &ctx->norm : nullptr);
      if (b.relu) h = nn::relu_forward(h, ctx ? &ctx->relu : nullptr);
      return h;
    };
    auto h = run_block(first_, x, tape ? &tape->first : nullptr);
    for (std::size_t d = 0; d < down_.size(); ++d)
      h = run_block(down_[d], h, tape ? &tape->down[d] : nullptr);
    for (std::size_t r = 0; r < res_.size(); ++r) {
      auto f = run_block(res_[r].a, h, tape ? &tape->res[r].first : nullptr);
      f = run_block(res_[r].b, f, tape ? &tape->res[r].second : nullptr);
      for (std::size_t k = 0; k < h.size(); ++k) f.v[k] += h.v[k];  // identity skip
      h = std::move(f);
    }
    for (std::size_t u = 0; u < up_.size(); ++u) {
      h = nn::upsample_nearest2_forward(h);
      h = run_block(up_[u], h, tape ? &tape->up[u] : nullptr);
    }
    h = run_block(out_, h, tape ? &tape->out : nullptr);
    return nn::scaled_tanh_forward(h, tape ? &tape->tanh : nullptr);
  }

  /// Backward through the whole network; accumulates parameter gradients into
  /// grads (aligned with params()) and returns dL/dx.
  Tensor4<T> backward(const Tensor4<T>& dy, const Tape& tape, nn::GradSet<T>& grads) const {
    std::size_t gi = grads.tensors.size();
    auto block_back = [&](const ConvBlock& b, const typename Tape::BlockCtx& ctx,
                          Tensor4<T> g) {
      // params() appends (w, b, gamma, beta) per block; consume in reverse
      gi -= 4;
      if (b.relu) g = nn::relu_backward(g, ctx.relu);
      g = b.norm.backward(g, ctx.norm, &grads.tensors[gi + 2], &grads.tensors[gi + 3]);
      return b.conv.backward(g, ctx.conv, &grads.tensors[gi], &grads.tensors[gi + 1]);
    };
    auto g = nn::scaled_tanh_backward(dy, tape.tanh);
    g = block_back(out_, tape.out, std::move(g));
    for (int u = static_cast<int>(up_.size()) - 1; u >= 0; --u) {
      g = block_back(up_[u], tape.up[u], std::move(g));
      g = nn::upsample_nearest2_backward(g);
    }
    for (int r = static_cast<int>(res_.size()) - 1; r >= 0; --r) {
      Tensor4<T> skip = g;
      g = block_back(res_[r].b, tape.res[r].second, std::move(g));
      g = block_back(res_[r].a, tape.res[r].first, std::move(g));
      for (std::size_t k = 0; k < g.size(); ++k) g.v[k] += skip.v[k];
    }
    for (int d = static_cast<int>(down_.size()) - 1; d >= 0; --d)
      g = block_back(down_[d], tape.down[d], std::move(g));
    g = block_back(first_, tape.first, std::move(g));
    return g;
  }

  /// Learnable tensors in serialization order: (w, b, gamma, beta) per conv
  /// block, blocks in forward order.
  nn::ParamSet<T> params() {
    nn::ParamSet<T> p;
    auto add = [&](ConvBlock& b) {
      p.tensors.push_back(&b.conv.w);
      p.tensors.push_back(&b.conv.b);
      p.tensors.push_back(&b.norm.gamma);
      p.tensors.push_back(&b.norm.beta);
    };
    add(first_);
    for (auto& b : down_) add(b);
    for (auto& r : res_) {
      add(r.a);
      add(r.b);
    }
    for (auto& b : up_) add(b);
    add(out_);
    return p;
  }

  nn::ParamSet<T> params() const {
    return const_cast<TransformNetworkT*>(this)->params();
  }

 private:
  TransformNetConfig cfg_;
  ConvBlock first_;
  std::vector<ConvBlock> down_;
  std::vector<ResBlock> res_;
  std::vector<ConvBlock> up_;
  ConvBlock out_;
};

using TransformNetwork = TransformNetworkT<float>;

namespace detail {
/// Reflection-pad an image batch up to the next multiple of `factor` (and at
/// least `min_size`), returning the top-left offset of the original content.
inline std::pair<Tensor4<float>, std::pair<int, int>> pad_for_stylize(const Tensor4<float>& x,
                                                                      int factor, int min_size) {
  int th = std::max((x.h + factor - 1) / factor * factor, min_size);
  int tw = std::max((x.w + factor - 1) / factor * factor, min_size);
  if (th == x.h && tw == x.w) return {x, {0, 0}};
  int top = (th - x.h) / 2, left = (tw - x.w) / 2;
  Tensor4<float> out(x.n, x.c, th, tw);
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      const float* src = x.plane(i, c);
      float* dst = out.plane(i, c);
      for (int y = 0; y < th; ++y)
        for (int xx = 0; xx < tw; ++xx)
          dst[y * tw + xx] =
              src[nn::reflect_index(y - top, x.h) * x.w + nn::reflect_index(xx - left, x.w)];
    }
  return {std::move(out), {top, left}};
}
}  // namespace detail

/// Single forward pass; preserves shape for any input size via reflection
/// pad + center crop when the size is not divisible by the downsample factor.
inline ImageTensor stylize(const TransformNetwork& net, const ImageTensor& image) {
  require(image.data.h >= 1 && image.data.w >= 1, "stylize: empty image");
  auto [padded, off] = detail::pad_for_stylize(image.data, net.config().downsample_factor, 8);
  Tensor4<float> y = net.forward(padded);
  ImageTensor out;
  out.range = ValueRange::byte_0_255;
  out.color = image.color;
  if (y.h == image.data.h && y.w == image.data.w) {
    out.data = std::move(y);
    return out;
  }
  Tensor4<float> crop(y.n, y.c, image.data.h, image.data.w);
  for (int i = 0; i < y.n; ++i)
    for (int c = 0; c < y.c; ++c) {
      const float* src = y.plane(i, c);
      float* dst = crop.plane(i, c);
      for (int yy = 0; yy < crop.h; ++yy)
        for (int xx = 0; xx < crop.w; ++xx)
          dst[yy * crop.w + xx] = src[(yy + off.first) * y.w + (xx + off.second)];
    }
  out.data = std::move(crop);
  return out;
}

struct LoadedCheckpoint {
  TransformNetwork net;
  TransformNetConfig config;
  std::string style_name;
  json training_meta;
};

/// Checkpoint container: header JSON {format_version, config, style_name,
/// training_meta, blob hash} followed by the raw parameter blob.
inline void save_checkpoint(const TransformNetwork& net, const std::string& style_name,
                            const json& training_meta, const std::filesystem::path& path) {
  json header{{"kind", "style_model"},
              {"config", to_json(net.config())},
              {"style_name", style_name},
              {"training_meta", training_meta}};
  write_container(path, kCheckpointMagic, kCheckpointVersion, header, net.params().flatten());
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  LoadedCheckpoint out;
  try {
    out.config = transform_config_from_json(c.header.at("config"));
    out.style_name = c.header.at("style_name").get<std::string>();
    out.training_meta = c.header.value("training_meta", json::object());
  } catch (const json::exception& e) {
    throw CorruptFileError("checkpoint header malformed in " + path.string() + ": " + e.what());
  }
  out.net = TransformNetwork::build(out.config, 0);
  out.net.params().unflatten(c.blob);
  return out;
}

}  // namespace stada

#include "sdmim/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace sdmim {

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m;
  m.patch_dim = cfg.patch_size * cfg.patch_size;
  m.grid = grid_for(cfg.image_height, cfg.image_width, cfg.patch_size);
  m.dim = cfg.embed_dim;
  m.encoder_depth = cfg.encoder_depth;
  m.decoder_depth = cfg.decoder_depth;
  m.heads = cfg.num_heads;
  m.window = cfg.window_size;
  m.shifted_windows = cfg.shifted_windows;
  m.mlp_hidden = cfg.embed_dim * cfg.mlp_ratio;
  m.head_hidden = cfg.head_hidden_dim;
  m.bottleneck = cfg.bottleneck_dim;
  m.distill_dim = cfg.distill_dim;
  m.init_std = cfg.init_std;
  return m;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.dim;
  const std::size_t block = 2 * d            // norm1
                            + 4 * (d * d + d)  // q, k, v, proj
                            + 2 * d            // norm2
                            + (d * c.mlp_hidden + c.mlp_hidden) + (c.mlp_hidden * d + d);
  const std::size_t head = (d * c.head_hidden + c.head_hidden) + (c.head_hidden * c.head_hidden + c.head_hidden) +
                           (c.head_hidden * c.bottleneck + c.bottleneck) + c.bottleneck * c.distill_dim;
  return (c.patch_dim * d + d) + c.tokens() * d + d + (c.encoder_depth + c.decoder_depth) * block +
         (d * c.patch_dim + c.patch_dim) + head;
}

template <typename T>
void ModelParams<T>::visit(const std::function<void(const std::string&, Tensor<T>&, bool)>& f) {
  auto lin = [&](const std::string& name, LinearParams<T>& l) {
    f(name + ".weight", l.weight, true);
    f(name + ".bias", l.bias, false);
  };
  auto blocks = [&](const std::string& prefix, std::vector<BlockParams<T>>& bs) {
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const std::string p = prefix + "." + std::to_string(i);
      auto& b = bs[i];
      f(p + ".norm1.gain", b.norm1_gain, false);
      f(p + ".norm1.bias", b.norm1_bias, false);
      lin(p + ".attn.query", b.query);
      lin(p + ".attn.key", b.key);
      lin(p + ".attn.value", b.value);
      lin(p + ".attn.proj", b.proj);
      f(p + ".norm2.gain", b.norm2_gain, false);
      f(p + ".norm2.bias", b.norm2_bias, false);
      lin(p + ".mlp.fc1", b.fc1);
      lin(p + ".mlp.fc2", b.fc2);
    }
  };
  lin("patch_embed", patch_embed);
  f("pos_embed", pos_embed, false);
  f("mask_token", mask_token, false);
  blocks("encoder", encoder);
  blocks("decoder", decoder);
  lin("pred_head", pred_head);
  lin("distill_head.fc1", distill_head.fc1);
  lin("distill_head.fc2", distill_head.fc2);
  lin("distill_head.fc3", distill_head.fc3);
  f("distill_head.prototypes", distill_head.prototypes, true);
}

template <typename T>
std::vector<NamedParam<T>> ModelParams<T>::named() {
  std::vector<NamedParam<T>> out;
  visit([&](const std::string& name, Tensor<T>& t, bool decay) { out.push_back({name, t, decay}); });
  return out;
}

template <typename T>
std::size_t ModelParams<T>::count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor<T>& t, bool) { n += t.size(); });
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  visit([](const std::string&, Tensor<T>& t, bool) { t.zero_grad(); });
}

namespace {

template <typename T>
LinearParams<T> zero_linear(std::size_t in, std::size_t out) {
  return {Tensor<T>::zeros({in, out}, true), Tensor<T>::zeros({out}, true)};
}

template <typename T>
BlockParams<T> zero_block(const ModelConfig& c) {
  BlockParams<T> b;
  b.norm1_gain = Tensor<T>::full({c.dim}, T(1), true);
  b.norm1_bias = Tensor<T>::zeros({c.dim}, true);
  b.query = zero_linear<T>(c.dim, c.dim);
  b.key = zero_linear<T>(c.dim, c.dim);
  b.value = zero_linear<T>(c.dim, c.dim);
  b.proj = zero_linear<T>(c.dim, c.dim);
  b.norm2_gain = Tensor<T>::full({c.dim}, T(1), true);
  b.norm2_bias = Tensor<T>::zeros({c.dim}, true);
  b.fc1 = zero_linear<T>(c.dim, c.mlp_hidden);
  b.fc2 = zero_linear<T>(c.mlp_hidden, c.dim);
  return b;
}

}  // namespace

template <typename T>
ModelParams<T> zero_model(const ModelConfig& c) {
  ModelParams<T> p;
  p.config = c;
  p.patch_embed = zero_linear<T>(c.patch_dim, c.dim);
  p.pos_embed = Tensor<T>::zeros({c.tokens(), c.dim}, true);
  p.mask_token = Tensor<T>::zeros({c.dim}, true);
  for (std::size_t i = 0; i < c.encoder_depth; ++i) p.encoder.push_back(zero_block<T>(c));
  for (std::size_t i = 0; i < c.decoder_depth; ++i) p.decoder.push_back(zero_block<T>(c));
  p.pred_head = zero_linear<T>(c.dim, c.patch_dim);
  p.distill_head.fc1 = zero_linear<T>(c.dim, c.head_hidden);
  p.distill_head.fc2 = zero_linear<T>(c.head_hidden, c.head_hidden);
  p.distill_head.fc3 = zero_linear<T>(c.head_hidden, c.bottleneck);
  p.distill_head.prototypes = Tensor<T>::zeros({c.bottleneck, c.distill_dim}, true);
  return p;
}

ModelParams<float> init_model(const ModelConfig& cfg, Rng& rng) {
  auto p = zero_model<float>(cfg);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc_normal = [&](Tensor<float>& t) {
    for (auto& v : t.data()) {
      double x = normal(rng);
      while (std::abs(x) > 2.0) x = normal(rng);
      v = static_cast<float>(x * cfg.init_std);
    }
  };
  p.visit([&](const std::string& name, Tensor<float>& t, bool decay) {
    const bool is_weight = decay || name == "pos_embed" || name == "mask_token";
    if (is_weight) trunc_normal(t);
  });
  renormalize_prototypes(p.distill_head);
  return p;
}

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& params) {
  auto out = zero_model<U>(params.config);
  auto src = params.named();
  std::size_t i = 0;
  out.visit([&](const std::string&, Tensor<U>& t, bool) {
    auto s = src[i++].tensor.data();
    auto d = t.data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<U>(s[k]);
  });
  return out;
}

template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& params) {
  return cast_params<T, T>(params);
}

template <typename T>
void renormalize_prototypes(DistillHeadParams<T>& head) {
  auto& w = head.prototypes;
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  auto d = w.data();
  for (std::size_t c = 0; c < cols; ++c) {
    T ss = T(0);
    for (std::size_t r = 0; r < rows; ++r) ss += d[r * cols + c] * d[r * cols + c];
    const T n = std::sqrt(ss);
    if (n > T(0))
      for (std::size_t r = 0; r < rows; ++r) d[r * cols + c] /= n;
  }
}

std::vector<std::vector<std::size_t>> window_groups(PatchGrid grid, std::size_t window, std::size_t shift,
                                                    std::size_t images) {
  if (window == 0 || grid.rows % window != 0 || grid.cols % window != 0) {
    throw ConfigError("window_size", "window " + std::to_string(window) + " does not tile the " +
                                         std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
  }
  const std::size_t wr = grid.rows / window, wc = grid.cols / window;
  const std::size_t n = grid.count();
  std::vector<std::vector<std::size_t>> groups(images * wr * wc);
  for (std::size_t b = 0; b < images; ++b) {
    for (std::size_t r = 0; r < grid.rows; ++r) {
      for (std::size_t c = 0; c < grid.cols; ++c) {
        // Cyclic shift: cell (r, c) lands at (r - shift, c - shift) mod grid.
        const std::size_t rr = (r + grid.rows - shift % grid.rows) % grid.rows;
        const std::size_t cc = (c + grid.cols - shift % grid.cols) % grid.cols;
        const std::size_t g = b * wr * wc + (rr / window) * wc + (cc / window);
        groups[g].push_back(b * n + r * grid.cols + c);
      }
    }
  }
  return groups;
}

template <typename T>
Tensor<T> embed(const Tensor<T>& tokens, std::span<const std::uint8_t> masked_flags, std::size_t images,
                const ModelParams<T>& params) {
  const auto& c = params.config;
  if (tokens.ndim() != 2 || tokens.dim(1) != c.patch_dim || tokens.dim(0) != images * c.tokens()) {
    throw ShapeError("embed: tokens " + shape_str(tokens.shape()) + " do not match " + std::to_string(images) +
                     " images of " + std::to_string(c.tokens()) + "x" + std::to_string(c.patch_dim));
  }
  auto x = linear(tokens, params.patch_embed.weight, params.patch_embed.bias);
  x = replace_rows(x, masked_flags, params.mask_token);
  std::vector<std::size_t> pos(images * c.tokens());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % c.tokens();
  return add(x, gather_rows(params.pos_embed, std::span<const std::size_t>(pos)));
}

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& b,
                        const std::vector<std::vector<std::size_t>>& groups, std::size_t heads) {
  const T eps = static_cast<T>(kLayerNormEps);
  auto h = layer_norm(x, b.norm1_gain, b.norm1_bias, eps);
  auto q = linear(h, b.query.weight, b.query.bias);
  auto k = linear(h, b.key.weight, b.key.bias);
  auto v = linear(h, b.value.weight, b.value.bias);
  auto attn = grouped_attention(q, k, v, groups, heads);
  auto x1 = add(x, linear(attn, b.proj.weight, b.proj.bias));
  auto h2 = layer_norm(x1, b.norm2_gain, b.norm2_bias, eps);
  auto m = linear(gelu(linear(h2, b.fc1.weight, b.fc1.bias)), b.fc2.weight, b.fc2.bias);
  return add(x1, m);
}

namespace {

template <typename T>
Tensor<T> run_blocks(const Tensor<T>& x, std::size_t images, const std::vector<BlockParams<T>>& blocks,
                     const ModelConfig& c) {
  if (blocks.empty()) return x;
  if (x.ndim() != 2 || x.dim(0) != images * c.tokens() || x.dim(1) != c.dim) {
    throw ShapeError("transformer input " + shape_str(x.shape()) + " does not match " + std::to_string(images) +
                     " images of " + std::to_string(c.tokens()) + "x" + std::to_string(c.dim));
  }
  const auto plain = window_groups(c.grid, c.window, 0, images);
  const bool can_shift = c.shifted_windows && (c.window < c.grid.rows || c.window < c.grid.cols);
  const auto shifted = can_shift ? window_groups(c.grid, c.window, c.window / 2, images) : plain;
  Tensor<T> h = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = block_forward(h, blocks[i], (i % 2 == 1) ? shifted : plain, c.heads);
  }
  return h;
}

}  // namespace

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& x, std::size_t images, const ModelParams<T>& params) {
  return run_blocks(x, images, params.encoder, params.config);
}

template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& z_all, std::size_t images, const ModelParams<T>& params) {
  return run_blocks(z_all, images, params.decoder, params.config);
}

template <typename T>
Tensor<T> predict_pixels(const Tensor<T>& y, const ModelParams<T>& params) {
  return linear(y, params.pred_head.weight, params.pred_head.bias);
}

template <typename T>
Tensor<T> distill_logits(const Tensor<T>& v, const DistillHeadParams<T>& head) {
  auto h = gelu(linear(v, head.fc1.weight, head.fc1.bias));
  h = gelu(linear(h, head.fc2.weight, head.fc2.bias));
  h = linear(h, head.fc3.weight, head.fc3.bias);
  h = l2_normalize_rows(h, static_cast<T>(kBottleneckEps));
  return matmul(h, head.prototypes);
}

template <typename T>
void zero_residual_branches(ModelParams<T>& params) {
  for (auto* blocks : {&params.encoder, &params.decoder}) {
    for (auto& b : *blocks) {
      for (auto* t : {&b.proj.weight, &b.proj.bias, &b.fc2.weight, &b.fc2.bias}) {
        for (auto& v : t->data()) v = T(0);
      }
    }
  }
}

#define SDMIM_INSTANTIATE_MODEL(T)                                                                       \
  template struct ModelParams<T>;                                                                        \
  template ModelParams<T> zero_model<T>(const ModelConfig&);                                             \
  template ModelParams<T> clone_params<T>(const ModelParams<T>&);                                        \
  template void renormalize_prototypes<T>(DistillHeadParams<T>&);                                        \
  template Tensor<T> embed<T>(const Tensor<T>&, std::span<const std::uint8_t>, std::size_t,              \
                              const ModelParams<T>&);                                                    \
  template Tensor<T> block_forward<T>(const Tensor<T>&, const BlockParams<T>&,                           \
                                      const std::vector<std::vector<std::size_t>>&, std::size_t);        \
  template Tensor<T> encoder_forward<T>(const Tensor<T>&, std::size_t, const ModelParams<T>&);           \
  template Tensor<T> decoder_forward<T>(const Tensor<T>&, std::size_t, const ModelParams<T>&);           \
  template Tensor<T> predict_pixels<T>(const Tensor<T>&, const ModelParams<T>&);                         \
  template Tensor<T> distill_logits<T>(const Tensor<T>&, const DistillHeadParams<T>&);                   \
  template void zero_residual_branches<T>(ModelParams<T>&);

SDMIM_INSTANTIATE_MODEL(float)
SDMIM_INSTANTIATE_MODEL(double)

#undef SDMIM_INSTANTIATE_MODEL

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);

}  // namespace sdmim

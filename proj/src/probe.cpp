#include "sdmim/probe.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "sdmim/error.hpp"
#include "sdmim/losses.hpp"
#include "sdmim/optim.hpp"

namespace sdmim {
namespace {

constexpr std::size_t kExtractChunk = 8;

struct LinearModel {
  std::size_t dim = 0;
  std::vector<double> weight;  // [dim x kNumClasses]
  std::vector<double> bias;    // [kNumClasses]

  std::size_t predict(const float* row) const {
    std::array<double, kNumClasses> logits{};
    for (std::size_t c = 0; c < kNumClasses; ++c) logits[c] = bias[c];
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t c = 0; c < kNumClasses; ++c) logits[c] += row[j] * weight[j * kNumClasses + c];
    }
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
};

void check_labels(const Tensor<float>& features, std::span<const std::uint8_t> labels) {
  if (features.ndim() != 2) throw ShapeError("probe features must be a matrix, got " + shape_str(features.shape()));
  if (labels.size() != features.rows()) {
    throw ShapeError("probe has " + std::to_string(features.rows()) + " feature rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  std::set<std::uint8_t> present;
  for (auto l : labels) {
    if (l >= kNumClasses) throw ContractError("probe label " + std::to_string(l) + " out of range");
    present.insert(l);
  }
  if (present.size() < 2) throw ContractError("linear probe needs at least two classes, found " + std::to_string(present.size()));
}

LinearModel fit_linear(const Tensor<float>& features, std::span<const std::uint8_t> labels,
                       std::span<const std::size_t> train, const ProbeOptions& options) {
  const std::size_t d = features.cols();
  const auto x = features.data();
  LinearModel m;
  m.dim = d;
  std::vector<double> xs(train.size() * d);
  for (std::size_t r = 0; r < train.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) xs[r * d + j] = x[train[r] * d + j];

  m.weight.assign(d * kNumClasses, 0.0);
  m.bias.assign(kNumClasses, 0.0);
  std::vector<double> gw(d * kNumClasses), gb(kNumClasses);
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (std::size_t it = 0; it < options.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t r = 0; r < train.size(); ++r) {
      const double* row = &xs[r * d];
      std::array<double, kNumClasses> z{};
      for (std::size_t c = 0; c < kNumClasses; ++c) z[c] = m.bias[c];
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t c = 0; c < kNumClasses; ++c) z[c] += row[j] * m.weight[j * kNumClasses + c];
      const double zmax = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      for (auto& v : z) total += (v = std::exp(v - zmax));
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        z[c] = z[c] / total - (labels[train[r]] == c ? 1.0 : 0.0);
        gb[c] += z[c];
      }
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t c = 0; c < kNumClasses; ++c) gw[j * kNumClasses + c] += row[j] * z[c];
    }
    for (std::size_t k = 0; k < gw.size(); ++k) m.weight[k] -= options.lr * gw[k] * inv_n;
    for (std::size_t c = 0; c < kNumClasses; ++c) m.bias[c] -= options.lr * gb[c] * inv_n;
  }
  return m;
}

template <typename Predict>
ProbeResult score(std::span<const std::uint8_t> labels, const ProbeSplit& split, std::uint64_t seed, Predict predict) {
  ProbeResult r;
  r.seed = seed;
  r.n_train = split.train.size();
  r.n_test = split.test.size();
  std::array<std::size_t, kNumClasses> hit{}, seen{};
  std::size_t correct = 0;
  for (auto i : split.test) {
    const bool ok = predict(i) == labels[i];
    correct += ok;
    ++seen[labels[i]];
    hit[labels[i]] += ok;
  }
  r.overall_acc = static_cast<double>(correct) / static_cast<double>(split.test.size());
  for (std::size_t c = 0; c < kNumClasses; ++c)
    if (seen[c]) r.class_acc[c] = static_cast<double>(hit[c]) / static_cast<double>(seen[c]);
  return r;
}

Tensor<float> stacked_tokens(std::span<const LabeledImage> images, const ModelConfig& cfg, std::size_t patch) {
  std::vector<float> data;
  data.reserve(images.size() * cfg.tokens() * cfg.patch_dim);
  for (const auto& img : images) {
    const auto grid = grid_for(img.pixels.height, img.pixels.width, patch);
    if (!(grid == cfg.grid) || patch * patch != cfg.patch_dim) {
      throw ShapeError("image " + std::to_string(img.pixels.height) + "x" + std::to_string(img.pixels.width) +
                       " with patch " + std::to_string(patch) + " does not match the model's " +
                       std::to_string(cfg.grid.rows) + "x" + std::to_string(cfg.grid.cols) + " grid");
    }
    const auto t = patchify(img.pixels, patch);
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor<float>({images.size() * cfg.tokens(), cfg.patch_dim}, std::move(data), false);
}

std::vector<std::uint8_t> stacked_labels(std::span<const LabeledImage> images) {
  std::vector<std::uint8_t> labels;
  for (const auto& img : images) {
    if (img.labels.empty()) return {};
    labels.insert(labels.end(), img.labels.labels.begin(), img.labels.labels.end());
  }
  return labels;
}

Tensor<float> encode_all(const Tensor<float>& tokens, std::size_t images, const ModelParams<float>& params) {
  const std::vector<std::uint8_t> none(tokens.rows(), 0);
  return encoder_forward(embed(tokens, none, images, params), images, params);
}

}  // namespace

ProbeFeatures extract_features(std::span<const LabeledImage> images, const ModelParams<float>& params,
                               std::size_t patch) {
  NoGradGuard no_grad;
  const auto& cfg = params.config;
  std::vector<float> out;
  out.reserve(images.size() * cfg.tokens() * cfg.dim);
  for (std::size_t begin = 0; begin < images.size(); begin += kExtractChunk) {
    const auto chunk = images.subspan(begin, std::min(kExtractChunk, images.size() - begin));
    const auto z = encode_all(stacked_tokens(chunk, cfg, patch), chunk.size(), params);
    out.insert(out.end(), z.data().begin(), z.data().end());
  }
  ProbeFeatures f;
  f.features = Tensor<float>({images.size() * cfg.tokens(), cfg.dim}, std::move(out), false);
  f.labels = stacked_labels(images);
  return f;
}

ProbeSplit probe_split(std::size_t n, std::uint64_t split_seed, double train_fraction) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  if (n_train == 0 || n_train >= n) throw ContractError("probe split leaves an empty train or test set");
  ProbeSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

ProbeResult linear_probe(const Tensor<float>& features, std::span<const std::uint8_t> labels,
                         std::uint64_t split_seed, const ProbeOptions& options) {
  check_labels(features, labels);
  const auto split = probe_split(features.rows(), split_seed, options.train_fraction);
  const auto model = fit_linear(features, labels, split.train, options);
  const auto x = features.data();
  const std::size_t d = features.cols();
  return score(labels, split, split_seed, [&](std::size_t i) { return model.predict(&x[i * d]); });
}

ProbeResult finetune_probe(std::span<const LabeledImage> images, const ModelParams<float>& params,
                           std::size_t patch, std::uint64_t split_seed, const RunConfig& cfg) {
  auto tuned = clone_params(params);
  const auto frozen = extract_features(images, tuned, patch);
  check_labels(frozen.features, frozen.labels);
  const ProbeOptions options{cfg.probe_iterations, cfg.probe_lr};
  const auto split = probe_split(frozen.features.rows(), split_seed, options.train_fraction);
  const auto fitted = fit_linear(frozen.features, frozen.labels, split.train, options);

  const std::size_t d = fitted.dim;
  std::vector<float> w(fitted.weight.begin(), fitted.weight.end());
  std::vector<float> b(fitted.bias.begin(), fitted.bias.end());
  Tensor<float> head_w({d, kNumClasses}, std::move(w), true);
  Tensor<float> head_b({kNumClasses}, std::move(b), true);

  std::vector<NamedParam<float>> trainable;
  for (auto& p : tuned.named()) {
    const auto& n = p.name;
    if (n.starts_with("patch_embed") || n == "pos_embed" || n == "mask_token" || n.starts_with("encoder."))
      trainable.push_back(p);
  }
  trainable.push_back({"probe.weight", head_w, true});
  trainable.push_back({"probe.bias", head_b, false});
  auto opt = make_optimizer(trainable, {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.finetune_weight_decay});

  const auto tokens = stacked_tokens(images, tuned.config, patch);
  std::vector<float> onehot(split.train.size() * kNumClasses, 0.0f);
  for (std::size_t r = 0; r < split.train.size(); ++r) onehot[r * kNumClasses + frozen.labels[split.train[r]]] = 1.0f;
  const Tensor<float> target({split.train.size(), kNumClasses}, std::move(onehot), false);
  const float inv_n = -1.0f / static_cast<float>(split.train.size());

  for (std::size_t step = 0; step < cfg.finetune_steps; ++step) {
    for (auto& p : trainable) p.tensor.zero_grad();
    const auto z = encode_all(tokens, images.size(), tuned);
    const auto logits = linear(gather_rows(z, std::span<const std::size_t>(split.train)), head_w, head_b);
    auto loss = scale(sum(mul(log_clamped(softmax_rows(logits), static_cast<float>(kLogFloor)), target)), inv_n);
    if (!std::isfinite(loss.item())) throw NumericalError("fine-tuning loss became non-finite at step " + std::to_string(step));
    backward(loss);
    for (auto& p : trainable) p.tensor.mutable_grad();
    adamw_step(trainable, opt, cfg.finetune_lr);
  }

  NoGradGuard no_grad;
  const auto logits = linear(encode_all(tokens, images.size(), tuned), head_w, head_b);
  return score(frozen.labels, split, split_seed, [&](std::size_t i) {
    const float* row = &logits.data()[i * kNumClasses];
    return static_cast<std::size_t>(std::max_element(row, row + kNumClasses) - row);
  });
}

void append_probe_csv(const std::filesystem::path& path, const ProbeResult& result) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  if (fresh) out << "variant,seed,overall_acc,acc_class0,acc_class1,acc_class2,acc_class3\n";
  out << result.variant << ',' << result.seed << ',' << result.overall_acc;
  for (const auto& a : result.class_acc) {
    out << ',';
    if (a) out << *a;
    else out << "NA";
  }
  out << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

std::uint64_t param_checksum(const ModelParams<float>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params.named()) {
    for (char c : p.name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
    for (float v : p.tensor.data()) h = (h ^ std::bit_cast<std::uint32_t>(v)) * 1099511628211ULL;
  }
  return h;
}

}  // namespace sdmim

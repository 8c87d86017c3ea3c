#include "sdmim/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sdmim/error.hpp"

namespace sdmim {
namespace {

template <typename Config, typename Visitor>
void for_each_field(Config& c, Visitor&& v) {
  v("image_height", c.image_height);
  v("image_width", c.image_width);
  v("patch_size", c.patch_size);
  v("embed_dim", c.embed_dim);
  v("encoder_depth", c.encoder_depth);
  v("decoder_depth", c.decoder_depth);
  v("num_heads", c.num_heads);
  v("window_size", c.window_size);
  v("shifted_windows", c.shifted_windows);
  v("mlp_ratio", c.mlp_ratio);
  v("head_hidden_dim", c.head_hidden_dim);
  v("bottleneck_dim", c.bottleneck_dim);
  v("distill_dim", c.distill_dim);
  v("init_std", c.init_std);
  v("mask_ratio", c.mask_ratio);
  v("alpha", c.alpha);
  v("loss_mode", c.loss_mode);
  v("distill", c.distill);
  v("stop_gradient", c.stop_gradient);
  v("target_eps", c.target_eps);
  v("base_lr", c.base_lr);
  v("min_lr", c.min_lr);
  v("weight_decay", c.weight_decay);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("adam_eps", c.adam_eps);
  v("epochs", c.epochs);
  v("warmup_epochs", c.warmup_epochs);
  v("batch_size", c.batch_size);
  v("grad_clip", c.grad_clip);
  v("fixed_mask", c.fixed_mask);
  v("num_images", c.num_images);
  v("data_dir", c.data_dir);
  v("data_seed", c.data_seed);
  v("noise_sigma", c.noise_sigma);
  v("flip_prob", c.flip_prob);
  v("augment", c.augment);
  v("seed", c.seed);
  v("out_dir", c.out_dir);
  v("checkpoint_every", c.checkpoint_every);
  v("probe_images", c.probe_images);
  v("probe_iterations", c.probe_iterations);
  v("probe_lr", c.probe_lr);
  v("probe_finetune", c.probe_finetune);
  v("finetune_lr", c.finetune_lr);
  v("finetune_weight_decay", c.finetune_weight_decay);
  v("finetune_steps", c.finetune_steps);
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <typename Int>
void parse_value(std::string_view key, std::string_view text, Int& out) {
  Int v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(key), "expected a non-negative integer, got '" + std::string(text) + "'");
  }
  out = v;
}

void parse_value(std::string_view key, std::string_view text, double& out) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(std::string(key), "expected a number, got '" + std::string(text) + "'");
  }
  out = v;
}

void parse_value(std::string_view key, std::string_view text, bool& out) {
  if (text == "true" || text == "1" || text == "on" || text == "yes") {
    out = true;
  } else if (text == "false" || text == "0" || text == "off" || text == "no") {
    out = false;
  } else {
    throw ConfigError(std::string(key), "expected a boolean, got '" + std::string(text) + "'");
  }
}

void parse_value(std::string_view, std::string_view text, std::string& out) { out = std::string(text); }

void parse_value(std::string_view key, std::string_view text, LossMode& out) {
  if (text == "masked" || text == "masked_only") {
    out = LossMode::masked_only;
  } else if (text == "whole" || text == "whole_image") {
    out = LossMode::whole_image;
  } else {
    throw ConfigError(std::string(key), "expected masked|whole, got '" + std::string(text) + "'");
  }
}

template <typename Int>
std::string format_value(const Int& v) {
  return std::to_string(v);
}
std::string format_value(const double& v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string format_value(const bool& v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(const LossMode& v) { return std::string(to_string(v)); }

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

}  // namespace

std::string_view to_string(LossMode mode) {
  return mode == LossMode::masked_only ? "masked" : "whole";
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  bool found = false;
  for_each_field(cfg, [&](std::string_view name, auto& field) {
    if (name == key) {
      parse_value(key, value, field);
      found = true;
    }
  });
  if (!found) throw ConfigError(std::string(key), "unknown configuration key");
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(std::string(trim(assignment)), "override must look like key=value");
  }
  apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no), "expected key=value, got '" + std::string(line) + "'");
    }
    apply_override(cfg, line);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_echo(const RunConfig& cfg) {
  std::string out;
  for_each_field(cfg, [&](std::string_view name, const auto& field) {
    out += name;
    out += '=';
    out += format_value(field);
    out += '\n';
  });
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  RunConfig cfg;
  for_each_field(cfg, [&](std::string_view name, auto&) { keys.emplace_back(name); });
  return keys;
}

void validate(const RunConfig& c) {
  require(c.patch_size > 0, "patch_size", "must be positive");
  require(c.image_height > 0 && c.image_height % c.patch_size == 0, "image_height",
          "must be a positive multiple of patch_size");
  require(c.image_width > 0 && c.image_width % c.patch_size == 0, "image_width",
          "must be a positive multiple of patch_size");
  const std::size_t grid_rows = c.image_height / c.patch_size;
  const std::size_t grid_cols = c.image_width / c.patch_size;
  require(grid_rows * grid_cols >= 2, "patch_size", "image must contain at least 2 patches");
  require(c.embed_dim > 0, "embed_dim", "must be positive");
  require(c.num_heads > 0 && c.embed_dim % c.num_heads == 0, "num_heads", "must divide embed_dim");
  require(c.window_size > 0, "window_size", "must be positive");
  require(grid_rows % c.window_size == 0 && grid_cols % c.window_size == 0, "window_size",
          "must divide the " + std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " patch grid");
  require(c.mlp_ratio > 0, "mlp_ratio", "must be positive");
  require(c.head_hidden_dim > 0, "head_hidden_dim", "must be positive");
  require(c.bottleneck_dim > 0, "bottleneck_dim", "must be positive");
  require(c.distill_dim > 0, "distill_dim", "must be positive");
  require(c.init_std > 0.0, "init_std", "must be positive");
  require(c.mask_ratio > 0.0 && c.mask_ratio < 1.0, "mask_ratio", "must lie strictly between 0 and 1");
  require(c.alpha >= 0.0 && c.alpha <= 1.0, "alpha", "must lie in [0, 1]");
  require(c.target_eps > 0.0, "target_eps", "must be positive");
  require(c.base_lr >= 0.0, "base_lr", "must be non-negative");
  require(c.min_lr >= 0.0 && c.min_lr <= c.base_lr, "min_lr", "must lie in [0, base_lr]");
  require(c.weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0, "beta1", "must lie in [0, 1)");
  require(c.beta2 >= 0.0 && c.beta2 < 1.0, "beta2", "must lie in [0, 1)");
  require(c.adam_eps > 0.0, "adam_eps", "must be positive");
  require(c.epochs > 0, "epochs", "must be positive");
  require(c.warmup_epochs < c.epochs, "warmup_epochs", "must be smaller than epochs");
  require(c.grad_clip >= 0.0, "grad_clip", "must be non-negative");
  require(c.data_dir.empty() ? c.num_images > 0 : true, "num_images", "must be positive");
  require(c.noise_sigma >= 0.0, "noise_sigma", "must be non-negative");
  require(c.flip_prob >= 0.0 && c.flip_prob <= 1.0, "flip_prob", "must lie in [0, 1]");
  require(c.probe_images > 0, "probe_images", "must be positive");
  require(c.probe_lr > 0.0, "probe_lr", "must be positive");
  require(c.finetune_lr > 0.0, "finetune_lr", "must be positive");
  require(!c.out_dir.empty(), "out_dir", "must not be empty");
}

}  // namespace sdmim

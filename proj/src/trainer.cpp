#include "sdmim/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sdmim/error.hpp"

namespace sdmim {
namespace {

enum Stream : std::uint64_t { kInitStream = 1, kShuffleStream = 2, kAugmentStream = 3, kMaskStream = 4 };

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string describe_first_nonfinite(const Tensor<float>& root) {
  const auto order = topological_order(root);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& t = order[i];
    if (!all_finite(t.data())) {
      const std::string what = t.node() ? "output of '" + t.node()->op + "'" : std::string("a parameter");
      return "first non-finite tensor: " + what + " with shape " + shape_str(t.shape()) + " (graph position " +
             std::to_string(i + 1) + " of " + std::to_string(order.size()) + ")";
    }
  }
  return "loss is non-finite";
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

ObjectiveSettings objective_settings(const RunConfig& cfg) {
  return {cfg.alpha, cfg.loss_mode, cfg.distill, cfg.stop_gradient};
}

template <typename T>
PretrainForward<T> pretrain_forward(const ModelParams<T>& params, const StackedBatch<T>& batch,
                                    const ObjectiveSettings& objective) {
  PretrainForward<T> f;
  f.embedded = embed(batch.tokens, batch.masked_flags, batch.images, params);
  f.z_all = encoder_forward(f.embedded, batch.images, params);
  f.y_all = decoder_forward(f.z_all, batch.images, params);
  f.pred_all = predict_pixels(f.y_all, params);

  if (objective.mode == LossMode::masked_only) {
    const std::span<const std::size_t> rows(batch.masked_rows);
    f.l1 = l1_masked(gather_tokens(f.pred_all, rows), gather_tokens(batch.targets_all, rows));
  } else {
    f.l1 = l1_whole_image(f.pred_all, batch.targets_all);
  }

  if (!objective.distill) {
    f.total = f.l1;
    return f;
  }
  const std::span<const std::size_t> visible(batch.visible_rows);
  auto distill_branch = [&] {
    f.student = distill_logits(gather_tokens(f.z_all, visible), params.distill_head);
    if (objective.stop_gradient) {
      NoGradGuard no_grad;
      f.teacher = distill_logits(gather_tokens(f.y_all, visible), params.distill_head);
    } else {
      f.teacher = distill_logits(gather_tokens(f.y_all, visible), params.distill_head);
    }
    f.distill = distill_loss(f.student, f.teacher, objective.stop_gradient);
  };
  if (objective.alpha == 1.0) {
    // Zero weight: evaluate for reporting only.
    NoGradGuard no_grad;
    distill_branch();
  } else {
    distill_branch();
  }
  f.total = total_loss(f.l1, f.distill, objective.alpha);
  return f;
}

LossReport make_report(const PretrainForward<float>& fwd, const StackedBatch<float>& batch,
                       const ObjectiveSettings& objective) {
  LossReport r;
  r.l1 = fwd.l1.item();
  r.distill = fwd.distill.defined() ? fwd.distill.item() : 0.0;
  r.total = fwd.total.item();
  r.alpha = objective.distill ? objective.alpha : 1.0;
  r.n_masked = batch.masked_rows.size();
  r.n_visible = batch.visible_rows.size();
  r.mode = objective.mode;
  return r;
}

LossReport train_step(std::span<const PatchBatch> batch, ModelParams<float>& params,
                      OptimizerState<float>& optimizer, const RunConfig& cfg, double lr) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const auto stacked = stack_batches<float>(batch);
  const auto objective = objective_settings(cfg);
  params.zero_grad();
  auto fwd = pretrain_forward(params, stacked, objective);
  auto report = make_report(fwd, stacked, objective);
  if (!std::isfinite(report.total) || !std::isfinite(report.l1) || !std::isfinite(report.distill)) {
    throw NumericalError("non-finite loss (l1=" + fmt(report.l1) + ", distill=" + fmt(report.distill) + "); " +
                         describe_first_nonfinite(fwd.total));
  }
  backward(fwd.total);
  auto named = params.named();
  for (auto& p : named) p.tensor.mutable_grad();  // tensors off the loss path get an explicit zero gradient
  if (cfg.grad_clip > 0.0) clip_grad_norm(named, cfg.grad_clip);
  adamw_step(named, optimizer, lr);
  renormalize_prototypes(params.distill_head);
  return report;
}

PatchBatch prepare_sample(const LabeledImage& image, std::size_t sample_index, std::size_t epoch,
                          const RunConfig& cfg) {
  const GrayImage* pixels = &image.pixels;
  LabeledImage augmented;
  if (cfg.augment) {
    Rng rng(derive_seed(cfg.seed, kAugmentStream, epoch, sample_index));
    augmented = augment(image, {cfg.flip_prob, cfg.noise_sigma}, rng);
    pixels = &augmented.pixels;
  }
  const auto grid = grid_for(pixels->height, pixels->width, cfg.patch_size);
  Rng mask_rng(derive_seed(cfg.seed, kMaskStream, cfg.fixed_mask ? 0 : epoch, sample_index));
  auto split = random_mask(grid.count(), cfg.mask_ratio, mask_rng);
  return make_patch_batch(*pixels, cfg.patch_size, std::move(split), static_cast<float>(cfg.target_eps));
}

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size) {
  const std::size_t bs = batch_size == 0 ? dataset_size : std::min(batch_size, dataset_size);
  return (dataset_size + bs - 1) / bs;
}

ModelParams<float> initial_model(const RunConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kInitStream));
  return init_model(model_config(cfg), rng);
}

FitResult fit(const std::vector<LabeledImage>& dataset, const RunConfig& cfg, FitOptions options) {
  validate(cfg);
  if (dataset.empty()) throw ContractError("fit: empty dataset");
  FitResult result;
  const AdamWHyper hyper{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  if (options.resume) {
    if (!(model_config(options.resume->config) == model_config(cfg))) {
      throw CheckpointError("resume checkpoint was trained with a different model configuration");
    }
    result.params = std::move(options.resume->params);
    result.optimizer = std::move(options.resume->optimizer);
    result.optimizer.hyper = hyper;
    result.epochs_completed = options.resume->epochs_completed;
  } else {
    result.params = initial_model(cfg);
    result.optimizer = make_optimizer(result.params.named(), hyper);
  }

  const std::size_t n = dataset.size();
  const std::size_t bs = cfg.batch_size == 0 ? n : std::min<std::size_t>(cfg.batch_size, n);
  const std::size_t spe = steps_per_epoch(n, bs);
  const Schedule schedule{cfg.base_lr, cfg.min_lr, static_cast<double>(cfg.warmup_epochs),
                          static_cast<double>(cfg.epochs)};

  auto save = [&](const std::string& file) {
    if (options.checkpoint_dir.empty()) return;
    const auto path = options.checkpoint_dir / file;
    try {
      save_checkpoint(path, result.params, result.optimizer, cfg, result.epochs_completed);
    } catch (const IoError& e) {
      throw IoError(std::string("checkpoint write failed for ") + path.string() + ": " + e.what());
    }
  };

  for (std::size_t epoch = result.epochs_completed; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStream, epoch));
    for (std::size_t i = n; i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(shuffle_rng)]);
    }
    EpochSummary summary;
    summary.epoch = epoch;
    for (std::size_t s = 0; s < spe; ++s) {
      const auto begin = s * bs, end = std::min(n, begin + bs);
      std::vector<PatchBatch> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) batch.push_back(prepare_sample(dataset[order[i]], order[i], epoch, cfg));
      const double lr = lr_at(schedule, static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(spe));
      const auto t0 = std::chrono::steady_clock::now();
      StepRecord rec;
      rec.report = train_step(batch, result.params, result.optimizer, cfg, lr);
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      rec.epoch = epoch;
      rec.step = result.optimizer.step;
      rec.lr = lr;
      summary.l1 += rec.report.l1;
      summary.distill += rec.report.distill;
      summary.total += rec.report.total;
      result.steps.push_back(rec);
      if (options.on_step) options.on_step(rec);
    }
    summary.l1 /= static_cast<double>(spe);
    summary.distill /= static_cast<double>(spe);
    summary.total /= static_cast<double>(spe);
    result.epochs.push_back(summary);
    result.epochs_completed = epoch + 1;
    if (cfg.checkpoint_every > 0 && result.epochs_completed % cfg.checkpoint_every == 0 &&
        result.epochs_completed < cfg.epochs) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_e%04zu.ckpt", result.epochs_completed);
      save(name);
    }
    if (options.stop_after_epoch != 0 && result.epochs_completed >= options.stop_after_epoch) break;
  }
  if (result.epochs_completed == cfg.epochs) save("final.ckpt");
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const StepRecord> steps) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,step,lr,l1,distill,total,mode,alpha,wall_ms\n";
  for (const auto& s : steps) {
    out << s.epoch << ',' << s.step << ',' << fmt(s.lr) << ',' << fmt(s.report.l1) << ',' << fmt(s.report.distill)
        << ',' << fmt(s.report.total) << ',' << to_string(s.report.mode) << ',' << fmt(s.report.alpha) << ','
        << fmt(std::round(s.wall_ms * 1000.0) / 1000.0) << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<LabeledImage> training_corpus(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) return load_folder(cfg.data_dir, cfg.image_height, cfg.image_width);
  return generate_synthetic(cfg.data_seed, cfg.image_height, cfg.image_width, cfg.num_images, cfg.patch_size);
}

template PretrainForward<float> pretrain_forward<float>(const ModelParams<float>&, const StackedBatch<float>&,
                                                        const ObjectiveSettings&);
template PretrainForward<double> pretrain_forward<double>(const ModelParams<double>&, const StackedBatch<double>&,
                                                          const ObjectiveSettings&);

}  // namespace sdmim

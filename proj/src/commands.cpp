#include "sdmim/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "sdmim/checkpoint.hpp"
#include "sdmim/config.hpp"
#include "sdmim/data.hpp"
#include "sdmim/error.hpp"
#include "sdmim/gradcheck.hpp"
#include "sdmim/probe.hpp"
#include "sdmim/reconstruct.hpp"
#include "sdmim/trainer.hpp"

namespace sdmim {
namespace {

namespace fs = std::filesystem;

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

RunConfig config_from(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path ? load_config(*path) : RunConfig{};
  for (const auto& o : overrides) apply_override(cfg, o);
  validate(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f || !(f << text)) throw IoError("cannot write " + path.string());
}

}  // namespace

int cmd_pretrain(const PretrainOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = config_from(options.config_path, options.overrides);
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    write_text(dir / "config.cfg", config_echo(cfg));

    const auto corpus = training_corpus(cfg);
    FitOptions fo;
    fo.checkpoint_dir = dir;
    if (options.resume) fo.resume = load_checkpoint(*options.resume);
    const std::size_t bs = cfg.batch_size == 0 ? corpus.size() : std::min<std::size_t>(cfg.batch_size, corpus.size());
    const std::size_t spe = steps_per_epoch(corpus.size(), bs);
    out << "pretraining on " << corpus.size() << " images, " << spe << " steps per epoch, "
        << parameter_count(model_config(cfg)) << " parameters\n";

    std::vector<StepRecord> steps;
    double l1 = 0.0, distill = 0.0, total = 0.0;
    fo.on_step = [&](const StepRecord& s) {
      steps.push_back(s);
      l1 += s.report.l1;
      distill += s.report.distill;
      total += s.report.total;
      if (s.step % spe == 0) {
        const double n = static_cast<double>(spe);
        out << "epoch " << std::setw(3) << s.epoch + 1 << "/" << cfg.epochs << "  lr " << std::scientific
            << std::setprecision(3) << s.lr << std::fixed << std::setprecision(5) << "  l1 " << l1 / n
            << "  distill " << distill / n << "  total " << total / n << std::defaultfloat << "\n";
        l1 = distill = total = 0.0;
      }
    };

    const auto t0 = std::chrono::steady_clock::now();
    try {
      fit(corpus, cfg, std::move(fo));
    } catch (const NumericalError&) {
      write_metrics_csv(dir / "metrics.csv", steps);
      throw;
    }
    write_metrics_csv(dir / "metrics.csv", steps);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "done in " << std::fixed << std::setprecision(1) << secs << " s; wrote " << (dir / "final.ckpt").string()
        << ", " << (dir / "metrics.csv").string() << ", " << (dir / "config.cfg").string() << std::defaultfloat
        << "\n";
    return kExitOk;
  });
}

int cmd_reconstruct(const ReconstructOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (options.images.empty()) throw ConfigError("image", "no input images given");
    const auto ckpt = load_checkpoint(options.checkpoint);
    const double ratio = options.mask_ratio.value_or(ckpt.config.mask_ratio);
    fs::create_directories(options.out_dir);
    for (std::size_t i = 0; i < options.images.size(); ++i) {
      const auto& path = options.images[i];
      const auto image = read_image(path);
      if (image.height != ckpt.config.image_height || image.width != ckpt.config.image_width) {
        throw ConfigError("image_height", path.string() + " is " + std::to_string(image.height) + "x" +
                                              std::to_string(image.width) + " but the checkpoint expects " +
                                              std::to_string(ckpt.config.image_height) + "x" +
                                              std::to_string(ckpt.config.image_width));
      }
      const auto grid = grid_for(image.height, image.width, ckpt.config.patch_size);
      Rng rng(derive_seed(options.mask_seed, i));
      auto split = random_mask(grid.count(), ratio, rng);
      const auto r = reconstruct(ckpt.params, image, ckpt.config.patch_size, std::move(split),
                                 static_cast<float>(ckpt.config.target_eps));
      const auto target = options.out_dir / (path.stem().string() + "_triptych.pgm");
      write_pgm(target, triptych(r));

      double abs_err = 0.0;
      std::size_t count = 0;
      const std::size_t p = ckpt.config.patch_size;
      for (auto m : r.split.masked) {
        const std::size_t r0 = m / grid.cols * p, c0 = m % grid.cols * p;
        for (std::size_t y = r0; y < r0 + p; ++y)
          for (std::size_t x = c0; x < c0 + p; ++x, ++count)
            abs_err += std::abs(r.reconstruction.at(y, x) - r.original.at(y, x));
      }
      out << target.string() << ": " << r.split.masked.size() << " masked patches, mean |error| "
          << abs_err / static_cast<double>(count) << "\n";
    }
    return kExitOk;
  });
}

int cmd_gradcheck(std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_gradcheck_suite();
    std::vector<std::string> failing;
    out << std::left << std::setw(30) << "op" << std::setw(14) << "worst_rel" << std::setw(10) << "tol"
        << std::setw(10) << "checked" << "status\n";
    for (const auto& r : results) {
      out << std::setw(30) << r.name << std::setw(14) << std::scientific << std::setprecision(3) << r.worst
          << std::setw(10) << std::setprecision(0) << r.tolerance << std::defaultfloat << std::setw(10) << r.checked
          << (r.passed() ? "ok" : "FAIL at " + r.worst_at) << "\n";
      if (!r.passed()) failing.push_back(r.name);
    }
    out << std::right;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << results.size() << " checks in " << std::fixed << std::setprecision(2) << secs << " s\n" << std::defaultfloat;
    if (failing.empty()) return kExitOk;
    err << "gradient check failed for:";
    for (const auto& f : failing) err << " " << f;
    err << "\n";
    return kExitGradcheckFailed;
  });
}

int cmd_probe(const ProbeCommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (options.checkpoints.empty()) throw ConfigError("checkpoint", "probe needs at least one checkpoint");
    std::vector<Checkpoint> ckpts;
    for (const auto& p : options.checkpoints) ckpts.push_back(load_checkpoint(p));
    const RunConfig& base = ckpts.front().config;
    for (std::size_t i = 1; i < ckpts.size(); ++i) {
      const auto& c = ckpts[i].config;
      if (c.image_height != base.image_height || c.image_width != base.image_width || c.patch_size != base.patch_size) {
        throw ConfigError("image_height", options.checkpoints[i].string() + " uses a different image geometry than " +
                                              options.checkpoints.front().string());
      }
    }
    const auto corpus = generate_synthetic(options.data_seed, base.image_height, base.image_width, base.probe_images,
                                           base.patch_size);

    struct Variant {
      std::string name;
      const RunConfig* cfg;
      ModelParams<float> params;
    };
    std::vector<Variant> variants;
    if (options.random_init) variants.push_back({"random-init", &base, initial_model(base)});
    for (std::size_t i = 0; i < ckpts.size(); ++i)
      variants.push_back({options.checkpoints[i].string(), &ckpts[i].config, ckpts[i].params});

    out << std::left << std::setw(40) << "variant" << std::right << std::setw(9) << "overall";
    for (std::size_t c = 0; c < kNumClasses; ++c) out << std::setw(9) << ("class" + std::to_string(c));
    out << std::setw(8) << "train" << std::setw(8) << "test" << "\n";
    for (auto& v : variants) {
      const auto before = param_checksum(v.params);
      ProbeResult r;
      if (options.finetune) {
        r = finetune_probe(corpus, v.params, v.cfg->patch_size, options.split_seed, *v.cfg);
      } else {
        const auto f = extract_features(corpus, v.params, v.cfg->patch_size);
        r = linear_probe(f.features, f.labels, options.split_seed, {v.cfg->probe_iterations, v.cfg->probe_lr});
      }
      if (param_checksum(v.params) != before) throw ContractError("probe modified the encoder of " + v.name);
      r.variant = v.name;
      out << std::left << std::setw(40) << r.variant << std::right << std::fixed << std::setprecision(4)
          << std::setw(9) << r.overall_acc;
      for (const auto& a : r.class_acc) {
        if (a) out << std::setw(9) << *a;
        else out << std::setw(9) << "NA";
      }
      out << std::setw(8) << r.n_train << std::setw(8) << r.n_test << std::defaultfloat << "\n";
      append_probe_csv(options.csv, r);
    }
    out << "appended " << variants.size() << " rows to " << options.csv.string() << "\n";
    return kExitOk;
  });
}

int cmd_generate_data(const GenerateDataOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = config_from(options.config_path, options.overrides);
    fs::create_directories(options.out_dir);
    const auto corpus =
        generate_synthetic(cfg.data_seed, cfg.image_height, cfg.image_width, cfg.num_images, cfg.patch_size);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "sample_%04zu", i);
      write_pgm(options.out_dir / (std::string(stem) + ".pgm"), corpus[i].pixels);
      write_label_csv(options.out_dir / (std::string(stem) + ".labels.csv"), corpus[i].labels);
    }
    out << "wrote " << corpus.size() << " images with label sidecars to " << options.out_dir.string() << "\n";
    return kExitOk;
  });
}

}  // namespace sdmim

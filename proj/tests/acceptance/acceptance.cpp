// Acceptance criteria, one PASS/FAIL line each. Usage:
//   sdmim_acceptance <work_dir> [--expect-fail N]...
// A criterion listed with --expect-fail still prints FAIL but does not set the
// exit status; if it passes instead, the line says so.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include "sdmim/checkpoint.hpp"
#include "sdmim/gradcheck.hpp"
#include "sdmim/losses.hpp"
#include "sdmim/optim.hpp"
#include "sdmim/probe.hpp"
#include "sdmim/trainer.hpp"

using namespace sdmim;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = SDMIM_SOURCE_DIR;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  std::string failures;

  void require(bool ok, const std::string& what) {
    if (!ok && failures.find(what) == std::string::npos) failures += " [failed: " + what + "]";
    pass = pass && ok;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<LossReport> reports(const std::vector<StepRecord>& steps) {
  std::vector<LossReport> out;
  for (const auto& s : steps) out.push_back(s.report);
  return out;
}

bool all_zero(std::span<const float> g) {
  return std::all_of(g.begin(), g.end(), [](float v) { return v == 0.0f; });
}

RunConfig desk_config() { return load_config(kSource / "configs/desk.cfg"); }
RunConfig smoke_config() { return load_config(kSource / "configs/smoke.cfg"); }

// 16x16 images of 4x4 patches, two images per batch.
struct Toy {
  ModelParams<float> params;
  StackedBatch<float> batch;
};

Toy toy(std::uint64_t seed) {
  RunConfig cfg;
  cfg.image_height = cfg.image_width = 16;
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.encoder_depth = 2;
  cfg.num_heads = 2;
  cfg.window_size = 2;
  cfg.head_hidden_dim = 16;
  cfg.bottleneck_dim = 8;
  cfg.distill_dim = 16;
  Rng rng(seed);
  Toy t{init_model(model_config(cfg), rng), {}};
  const auto images = generate_synthetic(seed, 16, 16, 2, 4);
  std::vector<PatchBatch> pbs;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng mrng(derive_seed(seed, 4, i));
    pbs.push_back(make_patch_batch(images[i].pixels, 4, random_mask(16, 0.25, mrng), 1e-6f));
  }
  t.batch = stack_batches<float>(pbs);
  return t;
}

Outcome gradient_checks() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_suite();
  const double secs = seconds_since(t0);
  double worst_primitive = 0, worst_e2e = 0;
  for (const auto& r : results) {
    (r.tolerance == kEndToEndTolerance ? worst_e2e : worst_primitive) =
        std::max(r.tolerance == kEndToEndTolerance ? worst_e2e : worst_primitive, r.worst);
    o.require(r.passed(), r.name + " worst " + std::to_string(r.worst));
  }
  o.require(secs < 60.0, "took longer than 60 s");
  o.detail << results.size() << " checks, worst primitive " << worst_primitive << " (tol 1e-4), worst end-to-end "
           << worst_e2e << " (tol 1e-3), " << secs << " s";
  return o;
}

Outcome loss_algebra() {
  Outcome o;
  {
    auto t = toy(1);
    auto f = pretrain_forward(t.params, t.batch, {1.0, LossMode::masked_only, true, true});
    o.require(f.total.item() == f.l1.item(), "alpha=1 total != l1");
    backward(f.total);
    for (auto& p : t.params.named())
      if (p.name.starts_with("distill_head")) o.require(!p.tensor.has_grad(), "alpha=1 reached " + p.name);
  }
  {
    auto t = toy(2);
    auto f = pretrain_forward(t.params, t.batch, {0.0, LossMode::masked_only, true, true});
    o.require(f.total.item() == f.distill.item(), "alpha=0 total != distill");
    backward(f.total);
    o.require(all_zero(t.params.pred_head.weight.grad()) && all_zero(t.params.pred_head.bias.grad()),
              "alpha=0 moved the prediction head");
  }
  std::size_t visible_checked = 0;
  {
    auto t = toy(3);
    auto f = pretrain_forward(t.params, t.batch, {1.0, LossMode::masked_only, false, true});
    backward(f.total);
    const auto g = f.pred_all.grad();
    const std::size_t d = f.pred_all.cols();
    for (auto r : t.batch.visible_rows)
      for (std::size_t c = 0; c < d; ++c, ++visible_checked) o.require(g[r * d + c] == 0.0f, "visible gradient");
  }
  {
    auto t = toy(4);
    auto f = pretrain_forward(t.params, t.batch, {0.0, LossMode::masked_only, true, true});
    backward(f.distill);
    for (auto& p : t.params.named())
      if (p.name.starts_with("decoder.") && p.tensor.has_grad())
        o.require(all_zero(p.tensor.grad()), "teacher gradient reached " + p.name);
    o.require(f.teacher.node() == nullptr, "teacher logits are on the graph");
  }
  o.detail << "alpha=1 and alpha=0 exact, " << visible_checked << " visible prediction gradients zero, teacher detached";
  return o;
}

Outcome masking() {
  Outcome o;
  std::size_t draws = 0, bad = 0;
  for (std::size_t n = 2; n <= 256; ++n)
    for (double m : {0.1, 0.2, 0.5, 0.9}) {
      const auto expected = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(n * m)), 1, n - 1);
      for (std::uint64_t seed = 0; seed < 1000; ++seed, ++draws) {
        Rng rng(derive_seed(seed, n, static_cast<std::uint64_t>(m * 10)));
        const auto s = random_mask(n, m, rng);
        std::vector<int> seen(n, 0);
        for (auto i : s.masked) ++seen[i];
        for (auto i : s.visible) ++seen[i];
        const bool ok = s.masked.size() == expected && s.masked.size() + s.visible.size() == n &&
                        std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
        bad += !ok;
      }
    }
  o.require(bad == 0, std::to_string(bad) + " bad masks");
  o.detail << draws << " masks over N in [2, 256] and M in {0.1, 0.2, 0.5, 0.9}";
  return o;
}

Outcome hand_values() {
  Outcome o;
  const auto wide = Tensor<double>::full({2, 4096}, 0.5);
  const double lnk = distill_loss(wide, wide, true).item();
  o.require(std::abs(lnk - std::log(4096.0)) < 1e-6, "uniform distill != ln 4096");

  const auto student = Tensor<double>({1, 2}, {std::log(0.9), std::log(0.1)});
  const double ce = distill_loss(student, Tensor<double>::zeros({1, 2}), true).item();
  o.require(std::abs(ce - 1.2040) < 1e-4, "cross entropy example");

  Tensor<double> w({1}, {1.0}, true);
  w.mutable_grad()[0] = 0.5;
  std::vector<NamedParam<double>> params{{"w", w, true}};
  auto state = make_optimizer(params, {0.9, 0.999, 1e-8, 0.05});
  adamw_step(params, state, 0.1);
  o.require(std::abs(w.data()[0] - 0.895) < 1e-6, "AdamW step");

  const Schedule s{8e-4, 0.0, 10.0, 100.0};
  const double a = lr_at(s, 5.0), b = lr_at(s, 55.0), c = lr_at(s, 100.0);
  o.require(std::abs(a - 4e-4) < 1e-9 && std::abs(b - 4e-4) < 1e-9 && std::abs(c) < 1e-9, "schedule");
  o.detail << "ln K " << lnk << ", CE " << ce << ", w' " << w.data()[0] << ", lr(5,55,100) " << a << " " << b << " "
           << c;
  return o;
}

struct DeskRun {
  FitResult result;
  double seconds = 0;
  fs::path final_ckpt;
};

DeskRun desk_run(const RunConfig& cfg, const fs::path& dir) {
  FitOptions fo;
  fo.checkpoint_dir = fresh(dir);
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun r{fit(training_corpus(cfg), cfg, fo), 0, dir / "final.ckpt"};
  r.seconds = seconds_since(t0);
  return r;
}

Outcome desk_convergence(const fs::path& work, DeskRun& first) {
  Outcome o;
  const auto cfg = desk_config();
  first = desk_run(cfg, work / "desk_a");
  const auto second = desk_run(cfg, work / "desk_b");
  const auto& ep = first.result.epochs;
  const double l1_first = ep.front().l1, l1_final = ep.back().l1, ratio = l1_final / l1_first;
  o.require(std::max(first.seconds, second.seconds) < 600.0, "slower than 10 min");
  o.require(ratio <= 0.5, "final/first masked L1 above 0.5");
  o.require(reports(first.result.steps) == reports(second.result.steps), "reruns differ in losses");
  o.require(file_bytes(first.final_ckpt) == file_bytes(second.final_ckpt), "reruns differ in checkpoint bytes");
  o.detail << "masked L1 epoch 1 " << l1_first << ", epoch " << ep.size() << " " << l1_final << ", ratio " << ratio
           << " (need <= 0.5), " << first.seconds << " s and " << second.seconds << " s per run, reruns "
           << (reports(first.result.steps) == reports(second.result.steps) ? "bit-identical" : "differ");
  return o;
}

Outcome probe_gain(const fs::path& work, const DeskRun& sd) {
  Outcome o;
  auto cfg = desk_config();
  const auto probe_images =
      generate_synthetic(1001, cfg.image_height, cfg.image_width, cfg.probe_images, cfg.patch_size);
  auto acc = [&](const ModelParams<float>& p) {
    const auto f = extract_features(probe_images, p, cfg.patch_size);
    return linear_probe(f.features, f.labels, 0, {cfg.probe_iterations, cfg.probe_lr}).overall_acc;
  };
  cfg.alpha = 1.0;
  const auto mim = desk_run(cfg, work / "desk_mim");
  const double random = acc(initial_model(cfg)), mim_acc = acc(mim.result.params), sd_acc = acc(sd.result.params);
  o.require(mim_acc > random, "MIM does not beat random init");
  o.require(sd_acc >= random + 0.05, "SD-SimMIM less than 5 points over random init");
  o.detail << "probe accuracy random-init " << random << ", MIM " << mim_acc << ", SD-SimMIM " << sd_acc
           << "; SD-SimMIM vs MIM " << (sd_acc > mim_acc ? "ahead" : "behind") << " by "
           << std::abs(sd_acc - mim_acc) << " (not gated)";
  return o;
}

Outcome loss_modes(const fs::path& work) {
  Outcome o;
  auto masked_cfg = smoke_config();
  auto whole_cfg = masked_cfg;
  whole_cfg.loss_mode = LossMode::whole_image;
  const auto data = training_corpus(masked_cfg);
  const auto a = fit(data, masked_cfg), b = fit(data, whole_cfg);
  o.require(a.epochs_completed == 1 && b.epochs_completed == 1, "smoke runs did not complete");
  o.require(a.steps.back().report.mode == LossMode::masked_only && b.steps.back().report.mode == LossMode::whole_image,
            "reported modes");

  std::vector<PatchBatch> batch;
  for (std::size_t i = 0; i < data.size(); ++i) batch.push_back(prepare_sample(data[i], i, 0, masked_cfg));
  const auto st = stack_batches<float>(batch);
  double visible[2] = {0, 0};
  for (int k = 0; k < 2; ++k) {
    auto params = initial_model(masked_cfg);
    auto f = pretrain_forward(params, st, {1.0, k == 0 ? LossMode::masked_only : LossMode::whole_image, false, true});
    backward(f.total);
    const std::size_t d = f.pred_all.cols();
    for (auto r : st.visible_rows)
      for (std::size_t c = 0; c < d; ++c) visible[k] += std::abs(f.pred_all.grad()[r * d + c]);
  }
  o.require(visible[0] == 0.0 && visible[1] > 0.0, "gradient footprints");
  o.require(a.steps.back().report.l1 != b.steps.back().report.l1, "identical losses");
  o.detail << "masked L1 " << a.steps.back().report.l1 << " vs whole-image L1 " << b.steps.back().report.l1
           << "; visible-row gradient mass " << visible[0] << " vs " << visible[1];
  (void)work;
  return o;
}

Outcome checkpoint_resume(const fs::path& work) {
  Outcome o;
  auto cfg = smoke_config();
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.checkpoint_every = 1;
  const auto data = training_corpus(cfg);
  const auto full = fit(data, cfg);

  FitOptions head_opts;
  head_opts.checkpoint_dir = fresh(work / "resume");
  head_opts.stop_after_epoch = 1;
  const auto head = fit(data, cfg, head_opts);
  const auto ckpt_path = work / "resume/checkpoint_e0001.ckpt";

  auto loaded = load_checkpoint(ckpt_path);
  save_checkpoint(work / "resume/resaved.ckpt", loaded.params, loaded.optimizer, loaded.config,
                  loaded.epochs_completed);
  const bool same_bytes = file_bytes(ckpt_path) == file_bytes(work / "resume/resaved.ckpt");
  o.require(same_bytes, "save/load/save changed bytes");

  FitOptions tail_opts;
  tail_opts.resume = load_checkpoint(ckpt_path);
  const auto tail = fit(data, cfg, tail_opts);
  auto stitched = reports(head.steps);
  for (const auto& r : reports(tail.steps)) stitched.push_back(r);
  o.require(stitched == reports(full.steps), "resumed losses differ");
  o.detail << "checkpoint of " << fs::file_size(ckpt_path) << " bytes round-trips "
           << (same_bytes ? "byte-identical" : "with differences") << "; " << stitched.size()
           << " resumed step losses match the uninterrupted run";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: sdmim_acceptance <work_dir> [--expect-fail N]...\n";
    return 2;
  }
  const fs::path work = argv[1];
  std::set<int> expected_failures;
  for (int i = 2; i + 1 < argc; i += 2)
    if (std::string(argv[i]) == "--expect-fail") expected_failures.insert(std::atoi(argv[i + 1]));
  fs::create_directories(work);

  DeskRun sd;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient checks", gradient_checks},
      {"loss algebra", loss_algebra},
      {"masking", masking},
      {"hand-computed values", hand_values},
      {"desk convergence and determinism", [&] { return desk_convergence(work, sd); }},
      {"linear probe over random init", [&] { return probe_gain(work, sd); }},
      {"masked-only vs whole-image", [&] { return loss_modes(work); }},
      {"checkpoint round trip and resume", [&] { return checkpoint_resume(work); }},
  };

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "threw: " << e.what();
    }
    const bool expected = expected_failures.count(id) > 0;
    std::string note;
    if (!o.pass && expected) note = " (known failure)";
    if (o.pass && expected) note = " (passed although listed as a known failure)";
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << ": "
              << o.detail.str() << o.failures << note << std::endl;
    if (!o.pass && !expected) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}

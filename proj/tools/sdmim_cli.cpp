// sdmim: pretraining, reconstruction dumps, gradient checks and linear probing.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdmim/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Masked image modeling with self-distillation"};
  app.require_subcommand(1);

  sdmim::PretrainOptions pretrain;
  std::string resume;
  auto* pre = app.add_subcommand("pretrain", "Pretrain an encoder; writes metrics.csv, checkpoints and config.cfg");
  pre->add_option("config", pretrain.config_path, "Config file (key=value lines)")->required();
  pre->add_option("--set", pretrain.overrides, "Override a config value, key=value")->take_all();
  pre->add_option("--resume", resume, "Continue from a checkpoint");

  sdmim::ReconstructOptions recon;
  double mask_ratio = -1.0;
  auto* rec = app.add_subcommand("reconstruct", "Write original | masked | reconstruction triptychs");
  rec->add_option("checkpoint", recon.checkpoint, "Checkpoint file")->required();
  rec->add_option("images", recon.images, "PGM or PNG images")->required();
  rec->add_option("-o,--out", recon.out_dir, "Output directory")->default_val("reconstructions");
  rec->add_option("--mask-ratio", mask_ratio, "Mask ratio (default: the checkpoint's)");
  rec->add_option("--mask-seed", recon.mask_seed, "Seed for the random mask");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and the full loss");

  sdmim::ProbeCommandOptions probe;
  auto* prb = app.add_subcommand("probe", "Linear probe of per-patch labels on frozen encoder features");
  prb->add_option("checkpoints", probe.checkpoints, "Checkpoint files")->required();
  prb->add_option("--data-seed", probe.data_seed, "Seed of the synthetic probe corpus");
  prb->add_option("--split-seed", probe.split_seed, "Seed of the train/test patch split");
  prb->add_flag("--random-init", probe.random_init, "Also probe a randomly initialised encoder");
  prb->add_flag("--finetune", probe.finetune, "Fine-tune the encoder together with the probe");
  prb->add_option("--csv", probe.csv, "Results CSV (appended)");

  sdmim::GenerateDataOptions gen;
  std::string gen_config;
  auto* gd = app.add_subcommand("generate-data", "Write the synthetic corpus as PGM files with label CSVs");
  gd->add_option("out_dir", gen.out_dir, "Output directory")->required();
  gd->add_option("--config", gen_config, "Config file");
  gd->add_option("--set", gen.overrides, "Override a config value, key=value")->take_all();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sdmim::kExitUsage;
  }

  if (*pre) {
    if (!resume.empty()) pretrain.resume = resume;
    return sdmim::cmd_pretrain(pretrain, std::cout, std::cerr);
  }
  if (*rec) {
    if (mask_ratio >= 0.0) recon.mask_ratio = mask_ratio;
    return sdmim::cmd_reconstruct(recon, std::cout, std::cerr);
  }
  if (*grad) return sdmim::cmd_gradcheck(std::cout, std::cerr);
  if (*prb) return sdmim::cmd_probe(probe, std::cout, std::cerr);
  if (!gen_config.empty()) gen.config_path = gen_config;
  return sdmim::cmd_generate_data(gen, std::cout, std::cerr);
}

#pragma once

// Subcommand implementations behind the sdmim executable. Each returns a
// process exit code, writes progress to `out` and diagnostics to `err`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sdmim {

enum ExitCode : int {
  kExitOk = 0,
  kExitGradcheckFailed = 1,
  kExitUsage = 2,  // bad config, bad arguments, unreadable inputs, checkpoint mismatch
  kExitNumerical = 3,
};

struct PretrainOptions {
  std::filesystem::path config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::filesystem::path> resume;
};
int cmd_pretrain(const PretrainOptions& options, std::ostream& out, std::ostream& err);

struct ReconstructOptions {
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> images;
  std::filesystem::path out_dir;
  std::optional<double> mask_ratio;  // default: the checkpoint's
  std::uint64_t mask_seed = 0;
};
int cmd_reconstruct(const ReconstructOptions& options, std::ostream& out, std::ostream& err);

int cmd_gradcheck(std::ostream& out, std::ostream& err);

struct ProbeCommandOptions {
  std::vector<std::filesystem::path> checkpoints;
  std::uint64_t data_seed = 1001;  // probe corpus, distinct from the default training corpus
  std::uint64_t split_seed = 0;
  bool random_init = false;        // add a randomly initialised encoder as a baseline row
  bool finetune = false;
  std::filesystem::path csv = "probe_results.csv";
};
int cmd_probe(const ProbeCommandOptions& options, std::ostream& out, std::ostream& err);

struct GenerateDataOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> config_path;
  std::vector<std::string> overrides;
};
/// Writes the synthetic corpus as PGM files with label CSV sidecars.
int cmd_generate_data(const GenerateDataOptions& options, std::ostream& out, std::ostream& err);

}  // namespace sdmim

#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "helpers.hpp"
#include "sdmim/checkpoint.hpp"
#include "sdmim/commands.hpp"
#include "sdmim/data.hpp"

using namespace sdmim;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = SDMIM_SOURCE_DIR;

struct Run {
  int code;
  std::string out;
};

// Runs the installed binary with stdout and stderr captured together.
Run run_cli(const std::string& args, const fs::path& dir) {
  const auto log = dir / "cli.log";
  const std::string cmd = std::string("\"") + SDMIM_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1,
          std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}};
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::stringstream ss(line);
    rows.emplace_back();
    for (std::string c; std::getline(ss, c, ',');) rows.back().push_back(c);
  }
  return rows;
}

std::string smoke(const fs::path& out_dir) {
  return "pretrain \"" + (kSource / "configs/smoke.cfg").string() + "\" --set out_dir=" + out_dir.string();
}

// A trained tiny checkpoint for the reconstruct and probe commands.
fs::path tiny_checkpoint(const fs::path& dir, const std::string& extra = "") {
  std::ostringstream out, err;
  PretrainOptions o;
  o.config_path = kSource / "configs/smoke.cfg";
  o.overrides = {"image_height=32", "image_width=32", "patch_size=8", "embed_dim=8", "num_heads=2", "window_size=2",
                 "head_hidden_dim=16", "bottleneck_dim=8", "distill_dim=16", "probe_images=16",
                 "out_dir=" + dir.string()};
  if (!extra.empty()) o.overrides.push_back(extra);
  REQUIRE(cmd_pretrain(o, out, err) == kExitOk);
  return dir / "final.ckpt";
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("missing config is a usage error naming the file") {
  const auto dir = test::scratch_dir("cli_missing");
  const auto r = run_cli("pretrain " + (dir / "nope.cfg").string(), dir);
  CHECK(r.code == kExitUsage);
  CHECK(r.out.find("nope.cfg") != std::string::npos);
}

TEST_CASE("smoke pretraining finishes quickly and writes its outputs") {
  const auto dir = test::scratch_dir("cli_smoke");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_cli(smoke(dir / "run"), dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  INFO(r.out);
  CHECK(r.code == kExitOk);
  CHECK(secs < 30.0);
  for (auto f : {"final.ckpt", "metrics.csv", "config.cfg"}) CHECK(fs::exists(dir / "run" / f));
  CHECK(load_config(dir / "run/config.cfg").out_dir == (dir / "run").string());
}

TEST_CASE("alpha override makes total equal l1") {
  const auto dir = test::scratch_dir("cli_alpha");
  const auto r = run_cli(smoke(dir / "run") + " --set alpha=1.0", dir);
  REQUIRE(r.code == kExitOk);
  const auto rows = csv_rows(dir / "run/metrics.csv");
  REQUIRE(rows.size() > 1);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][3] == rows[i][5]);
}

TEST_CASE("bad arguments are usage errors") {
  const auto dir = test::scratch_dir("cli_bad");
  CHECK(run_cli(smoke(dir / "run") + " --set mask_ratio=1.5", dir).code == kExitUsage);
  CHECK(run_cli(smoke(dir / "run") + " --set nonsense=1", dir).code == kExitUsage);
  CHECK(run_cli("frobnicate", dir).code == kExitUsage);
  CHECK(run_cli("", dir).code == kExitUsage);
}

TEST_CASE("exploding training exits with the numerical code") {
  const auto dir = test::scratch_dir("cli_nan");
  const auto r = run_cli(smoke(dir / "run") + " --set base_lr=1e37 --set epochs=3", dir);
  INFO(r.out);
  CHECK(r.code == kExitNumerical);
  CHECK(r.out.find("non-finite") != std::string::npos);
}

TEST_CASE("gradcheck command passes") {
  std::ostringstream out, err;
  CHECK(cmd_gradcheck(out, err) == kExitOk);
  CHECK(out.str().find("FAIL") == std::string::npos);
}

TEST_CASE("reconstruct writes triptychs and rejects other sizes") {
  const auto dir = test::scratch_dir("cli_recon");
  const auto ckpt = tiny_checkpoint(dir / "run");
  const auto images = generate_synthetic(5, 32, 32, 2, 8);
  write_pgm(dir / "a.pgm", images[0].pixels);
  write_pgm(dir / "b.pgm", images[1].pixels);
  write_pgm(dir / "big.pgm", test::random_image(64, 64, 1));

  std::ostringstream out, err;
  ReconstructOptions o{ckpt, {dir / "a.pgm", dir / "b.pgm"}, dir / "out", std::nullopt, 0};
  REQUIRE(cmd_reconstruct(o, out, err) == kExitOk);
  const auto t = read_pgm(dir / "out/a_triptych.pgm");
  CHECK(t.width == 96);
  CHECK(t.height == 32);
  CHECK(fs::exists(dir / "out/b_triptych.pgm"));

  o.images = {dir / "big.pgm"};
  CHECK(cmd_reconstruct(o, out, err) == kExitUsage);
  CHECK(err.str().find("big.pgm") != std::string::npos);
}

TEST_CASE("probe rows depend only on checkpoint contents") {
  const auto dir = test::scratch_dir("cli_probe");
  const auto a = tiny_checkpoint(dir / "a");
  fs::create_directories(dir / "copy");
  fs::copy_file(a, dir / "copy/final.ckpt");
  const auto b = tiny_checkpoint(dir / "b", "seed=5");

  auto probe = [&](std::vector<fs::path> ckpts, const std::string& csv) {
    std::ostringstream out, err;
    ProbeCommandOptions o;
    o.checkpoints = std::move(ckpts);
    o.csv = dir / csv;
    o.random_init = true;
    REQUIRE(cmd_probe(o, out, err) == kExitOk);
    return csv_rows(dir / csv);
  };
  const auto ab = probe({a, dir / "copy/final.ckpt", b}, "ab.csv");
  const auto ba = probe({b, a}, "ba.csv");
  REQUIRE(ab.size() == 5);  // header, random-init, three checkpoints
  CHECK(ab[0][0] == "variant");
  CHECK(ab[1][0] == "random-init");
  auto tail = [](std::vector<std::string> row) { return std::vector<std::string>(row.begin() + 1, row.end()); };
  CHECK(tail(ab[2]) == tail(ab[3]));
  CHECK(tail(ab[2]) == tail(ba[3]));
  CHECK(tail(ab[4]) == tail(ba[2]));
  CHECK(tail(ab[1]) == tail(ba[1]));

  std::ostringstream out, err;
  ProbeCommandOptions missing;
  missing.checkpoints = {dir / "absent.ckpt"};
  missing.csv = dir / "m.csv";
  CHECK(cmd_probe(missing, out, err) == kExitUsage);
  CHECK(err.str().find("absent.ckpt") != std::string::npos);
}

TEST_CASE("generate-data writes images and label sidecars") {
  const auto dir = test::scratch_dir("cli_gen");
  const auto r = run_cli("generate-data " + (dir / "data").string() +
                             " --set num_images=3 --set image_height=64 --set image_width=64",
                         dir);
  REQUIRE(r.code == kExitOk);
  const auto img = read_pgm(dir / "data/sample_0002.pgm");
  CHECK(img.height == 64);
  const auto labels = read_label_csv(dir / "data/sample_0002.labels.csv");
  CHECK(labels.labels.size() == 16);
  CHECK(load_folder(dir / "data", 64, 64).size() == 3);
}

}

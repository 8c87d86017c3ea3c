#include "sdmim/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include "sdmim/error.hpp"

namespace sdmim {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

constexpr double kLabelCoverage = 0.15;

LabeledImage generate_one(std::uint64_t image_seed, std::size_t height, std::size_t width, std::size_t patch) {
  Rng rng(image_seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };

  const double H = static_cast<double>(height), W = static_cast<double>(width);
  GrayImage img(height, width);
  std::vector<std::uint8_t> cls(height * width, kBackground);

  // Occlusal curve: a shallow smile across the image.
  const double occlusal = H * u(0.46, 0.54);
  const double curvature = H * u(0.06, 0.12);
  const double gap = H * u(0.02, 0.04);
  auto arc_y = [&](double x) {
    const double t = (x - W / 2.0) / (W / 2.0);
    return occlusal - curvature * (1.0 - t * t);
  };

  // Shaded jaw band with a slow horizontal modulation.
  const double base = u(0.2, 0.25);
  const double band = u(0.1, 0.15);
  const double band_sigma = H * u(0.18, 0.24);
  const double wave_amp = u(0.03, 0.06);
  const double wave_phase = u(0.0, 2.0 * std::numbers::pi);

  // Anatomy shared by every panoramic view, with per-image jitter: a bright
  // cortical mandible border, the two rami and two darker sinus cavities.
  const double mandible = H * u(0.80, 0.86);
  const double mandible_rise = H * u(0.16, 0.22);
  const double cortex_sigma = H * u(0.025, 0.035);
  const double cortex = u(0.25, 0.35);
  const double ramus_x = W * u(0.05, 0.09);
  const double ramus_sigma = W * u(0.035, 0.05);
  const double ramus = u(0.15, 0.22);
  const double sinus_y = H * u(0.18, 0.24);
  const double sinus_dx = W * u(0.2, 0.24);
  const double sinus_rx = W * u(0.1, 0.13), sinus_ry = H * u(0.07, 0.09);
  const double sinus = u(0.12, 0.18);
  const double falloff = u(0.12, 0.18);
  const double skull = u(0.15, 0.2);
  auto bump = [](double d) { return std::exp(-0.5 * d * d); };

  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
      const double t = (x - W / 2.0) / (W / 2.0);
      double v = base + band * bump((y - arc_y(x)) / band_sigma);
      v += wave_amp * std::sin(2.0 * std::numbers::pi * x / W * 1.5 + wave_phase);
      const double border = mandible - mandible_rise * t * t;
      v += cortex * bump((y - border) / cortex_sigma);
      v -= falloff * smoothstep(border - cortex_sigma, H, y);  // soft tissue below the jaw
      v += skull * (smoothstep(0.0, 0.3 * H, y) - 1.0);           // darker towards the skull base
      const double edge = std::min(x, W - x);
      v += ramus * bump((edge - ramus_x) / ramus_sigma) * smoothstep(0.1 * H, 0.3 * H, y);
      for (double side : {-1.0, 1.0}) {
        const double sx = (x - (W / 2.0 + side * sinus_dx)) / sinus_rx, sy = (y - sinus_y) / sinus_ry;
        v -= sinus * (1.0 - smoothstep(0.6, 1.0, std::sqrt(sx * sx + sy * sy)));
      }
      img.at(r, c) = static_cast<float>(v);
    }
  }

  struct Tooth {
    double cx, cy, ax, ay;
    bool upper;
  };
  std::vector<Tooth> teeth;
  for (int arch = 0; arch < 2; ++arch) {
    const bool upper = arch == 0;
    const int n = 10;
    const double x0 = W * 0.08, x1 = W * 0.92;
    const double spacing = (x1 - x0) / n;
    const double ay = H * u(0.07, 0.09);
    for (int i = 0; i < n; ++i) {
      if (unif(rng) < 0.08) continue;  // missing tooth
      const double cx = x0 + spacing * (i + 0.5);
      const double ax = spacing * u(0.36, 0.46);
      const double root_side = upper ? -1.0 : 1.0;
      const double cy = arc_y(cx) + root_side * (gap / 2.0 + ay);
      teeth.push_back({cx, cy, ax, ay, upper});
    }
  }

  for (const auto& t : teeth) {
    const double peak = u(0.62, 0.8);
    const auto r0 = static_cast<std::size_t>(std::max(0.0, std::floor(t.cy - t.ay - 1)));
    const auto r1 = static_cast<std::size_t>(std::min(H, std::ceil(t.cy + t.ay + 1)));
    const auto c0 = static_cast<std::size_t>(std::max(0.0, std::floor(t.cx - t.ax - 1)));
    const auto c1 = static_cast<std::size_t>(std::min(W, std::ceil(t.cx + t.ax + 1)));
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) {
        const double dx = (static_cast<double>(c) + 0.5 - t.cx) / t.ax;
        const double dy = (static_cast<double>(r) + 0.5 - t.cy) / t.ay;
        const double rho = std::sqrt(dx * dx + dy * dy);
        if (rho >= 1.0) continue;
        const double alpha = 1.0 - smoothstep(0.5, 1.0, rho);
        const double val = peak - 0.15 * rho * rho;
        float& px = img.at(r, c);
        px = static_cast<float>(px * (1.0 - alpha) + val * alpha);
        if (rho < 0.9) cls[r * width + c] = kTooth;
      }
    }
  }

  // Restorations: bright crown caps on the occlusal side of some teeth.
  for (const auto& t : teeth) {
    if (unif(rng) >= 0.25) continue;
    const double value = u(0.9, 0.98);
    const double crown = t.upper ? t.cy + 0.35 * t.ay : t.cy - 0.35 * t.ay;
    const double hw = t.ax * u(0.6, 0.85), hh = t.ay * u(0.35, 0.5);
    const auto r0 = static_cast<std::size_t>(std::clamp(std::round(crown - hh), 0.0, H));
    const auto r1 = static_cast<std::size_t>(std::clamp(std::round(crown + hh), 0.0, H));
    const auto c0 = static_cast<std::size_t>(std::clamp(std::round(t.cx - hw), 0.0, W));
    const auto c1 = static_cast<std::size_t>(std::clamp(std::round(t.cx + hw), 0.0, W));
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) {
        img.at(r, c) = static_cast<float>(value);
        cls[r * width + c] = kRestoration;
      }
    }
  }

  // Appliance: a thin straight wire along one arch's crowns.
  if (unif(rng) < 0.35) {
    const bool upper = unif(rng) < 0.5;
    const double y = occlusal + (upper ? -1.0 : 1.0) * (gap / 2.0 + H * u(0.03, 0.05)) - curvature * 0.5;
    const double x0 = W * u(0.15, 0.35), x1 = W * u(0.65, 0.85);
    const std::size_t thickness = std::max<std::size_t>(2, height / 40);
    const auto r0 = static_cast<std::size_t>(std::clamp(std::round(y), 0.0, H - static_cast<double>(thickness)));
    for (std::size_t r = r0; r < r0 + thickness; ++r) {
      for (auto c = static_cast<std::size_t>(x0); c < static_cast<std::size_t>(x1); ++c) {
        img.at(r, c) = 1.0f;
        cls[r * width + c] = kAppliance;
      }
    }
  }

  for (auto& px : img.pixels) {
    px = static_cast<float>(std::clamp(static_cast<double>(px) + 0.01 * normal(rng), 0.0, 1.0));
  }

  LabeledImage out;
  out.pixels = std::move(img);
  out.seed = image_seed;
  const auto grid = grid_for(height, width, patch);
  out.labels.rows = grid.rows;
  out.labels.cols = grid.cols;
  out.labels.labels.assign(grid.count(), kBackground);
  const double area = static_cast<double>(patch * patch);
  for (std::size_t gr = 0; gr < grid.rows; ++gr) {
    for (std::size_t gc = 0; gc < grid.cols; ++gc) {
      std::array<std::size_t, kNumClasses> counts{};
      for (std::size_t r = 0; r < patch; ++r)
        for (std::size_t c = 0; c < patch; ++c) ++counts[cls[(gr * patch + r) * width + gc * patch + c]];
      std::uint8_t label = kBackground;
      for (std::uint8_t k = kAppliance; k >= kTooth; --k) {
        if (static_cast<double>(counts[k]) / area >= kLabelCoverage) {
          label = k;
          break;
        }
      }
      out.labels.labels[gr * grid.cols + gc] = label;
    }
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632BE59BD9B4E019ull));
  h = splitmix64(h ^ (c + 0x85157AF5ull));
  return h;
}

std::vector<LabeledImage> generate_synthetic(std::uint64_t seed, std::size_t height, std::size_t width,
                                             std::size_t count, std::size_t patch) {
  grid_for(height, width, patch);
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_one(derive_seed(seed, i), height, width, patch));
  return out;
}

std::vector<LabeledImage> load_folder(const std::filesystem::path& dir, std::size_t height, std::size_t width) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto ext = files[i].extension().string();
    if (ext == ".csv" || ext == ".txt" || ext == ".cfg") continue;
    try {
      LabeledImage li;
      li.pixels = resize_bilinear(read_image(files[i]), height, width);
      li.seed = i;
      out.push_back(std::move(li));
    } catch (const IoError& e) {
      std::cerr << "warning: skipping " << files[i].string() << ": " << e.what() << "\n";
    }
  }
  if (out.empty()) throw IoError("no decodable PGM/PNG images in " + dir.string());
  return out;
}

LabeledImage flip_horizontal(const LabeledImage& image) {
  LabeledImage out = image;
  const auto& src = image.pixels;
  for (std::size_t r = 0; r < src.height; ++r)
    for (std::size_t c = 0; c < src.width; ++c) out.pixels.at(r, c) = src.at(r, src.width - 1 - c);
  const auto& lg = image.labels;
  for (std::size_t r = 0; r < lg.rows; ++r)
    for (std::size_t c = 0; c < lg.cols; ++c) out.labels.labels[r * lg.cols + c] = lg.at(r, lg.cols - 1 - c);
  return out;
}

LabeledImage augment(const LabeledImage& image, const AugmentOptions& options, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const bool flip = unif(rng) < options.flip_prob;
  LabeledImage out = flip ? flip_horizontal(image) : image;
  if (options.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, options.noise_sigma);
    for (auto& px : out.pixels.pixels) {
      px = static_cast<float>(std::clamp(static_cast<double>(px) + noise(rng), 0.0, 1.0));
    }
  }
  return out;
}

void write_label_csv(const std::filesystem::path& path, const LabelGrid& grid) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      if (c) out << ',';
      out << static_cast<int>(grid.at(r, c));
    }
    out << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

LabelGrid read_label_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  LabelGrid grid;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(ss, cell, ',')) {
      const int v = std::stoi(cell);
      if (v < 0 || v >= static_cast<int>(kNumClasses)) throw IoError(path.string() + ": label out of range");
      grid.labels.push_back(static_cast<std::uint8_t>(v));
      ++cols;
    }
    if (grid.rows == 0) grid.cols = cols;
    if (cols != grid.cols) throw IoError(path.string() + ": ragged label grid");
    ++grid.rows;
  }
  return grid;
}

}  // namespace sdmim

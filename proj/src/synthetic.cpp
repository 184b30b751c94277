#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mvp/error.hpp"
#include "mvp/ingest.hpp"
#include "mvp/rng.hpp"

namespace mvp {

namespace {

constexpr std::size_t kTrajectorySamples = 64;
constexpr int kHarmonics = 3;

// Dense samples of a smooth class trajectory: an offset plus a few random
// sinusoidal harmonics per channel.
std::vector<std::vector<double>> class_trajectory(std::size_t channels, Rng& rng) {
  std::vector<double> offset(channels);
  for (double& v : offset) v = rng.normal();
  std::vector<std::array<double, 2 * kHarmonics>> coeffs(channels);
  for (auto& c : coeffs) {
    for (int h = 0; h < kHarmonics; ++h) {
      c[2 * h] = rng.normal() / (h + 1);
      c[2 * h + 1] = rng.uniform(0, 2 * std::numbers::pi);
    }
  }
  std::vector<std::vector<double>> samples(kTrajectorySamples,
                                           std::vector<double>(channels));
  for (std::size_t s = 0; s < kTrajectorySamples; ++s) {
    const double u = static_cast<double>(s) / (kTrajectorySamples - 1);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double v = offset[ch];
      for (int h = 0; h < kHarmonics; ++h) {
        v += coeffs[ch][2 * h] *
             std::sin(std::numbers::pi * (h + 1) * u + coeffs[ch][2 * h + 1]);
      }
      samples[s][ch] = v;
    }
  }
  return samples;
}

// Linear interpolation of the dense samples at phase u in [0, 1].
std::vector<double> sample_at(const std::vector<std::vector<double>>& traj,
                              double u) {
  const double pos = std::clamp(u, 0.0, 1.0) * (kTrajectorySamples - 1);
  const std::size_t lo = std::min(static_cast<std::size_t>(pos),
                                  kTrajectorySamples - 2);
  const double frac = pos - static_cast<double>(lo);
  std::vector<double> out(traj[lo].size());
  for (std::size_t ch = 0; ch < out.size(); ++ch)
    out[ch] = (1 - frac) * traj[lo][ch] + frac * traj[lo + 1][ch];
  return out;
}

double phase(double speed, std::size_t t, std::size_t frames) {
  if (frames == 1) return 0;
  return std::min(1.0, speed * static_cast<double>(t) /
                           static_cast<double>(frames - 1));
}

// Values pass through f32 so that a bank survives a file round trip exactly.
Real storable(double v) { return static_cast<Real>(static_cast<float>(v)); }

}  // namespace

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 1 || spec.per_class < 1) {
    throw ConfigError("synthetic bank needs at least one class and one video "
                      "per class (got " + std::to_string(spec.classes) +
                      " classes, " + std::to_string(spec.per_class) +
                      " per class)");
  }
  if (spec.frames < 1 || spec.channels < 1) {
    throw ConfigError("synthetic bank needs T >= 1 and C >= 1");
  }
  if (spec.speeds.empty() ||
      std::any_of(spec.speeds.begin(), spec.speeds.end(),
                  [](double s) { return !(s > 0) || !std::isfinite(s); })) {
    throw ConfigError("synthetic speeds must be a nonempty list of positive numbers");
  }
  if (!(spec.noise_sigma >= 0)) {
    throw ConfigError("synthetic noise sigma must be nonnegative");
  }

  Rng rng(spec.seed);
  SyntheticData out;
  out.bank.frames = spec.frames;
  out.bank.channels = spec.channels;
  out.text.channels = spec.channels;
  std::uint32_t next_id = 0;
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%03u", c);
    out.bank.class_names.emplace(c, name);
    const auto traj = class_trajectory(spec.channels, rng);

    std::vector<Real> text(spec.channels, 0);
    {
      std::vector<double> mean(spec.channels, 0);
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const auto f = sample_at(traj, phase(1.0, t, spec.frames));
        for (std::size_t ch = 0; ch < spec.channels; ++ch) mean[ch] += f[ch];
      }
      for (std::size_t ch = 0; ch < spec.channels; ++ch)
        text[ch] = storable(mean[ch] / static_cast<double>(spec.frames));
    }
    out.text.embeddings.emplace(c, Tensor({1, spec.channels}, std::move(text)));

    for (std::size_t v = 0; v < spec.per_class; ++v) {
      const double speed = spec.speeds[rng.below(spec.speeds.size())];
      std::vector<Real> data;
      data.reserve(spec.frames * spec.channels);
      for (std::size_t t = 0; t < spec.frames; ++t) {
        const auto f = sample_at(traj, phase(speed, t, spec.frames));
        for (double x : f) {
          const double noise = spec.noise_sigma > 0 ? spec.noise_sigma * rng.normal() : 0;
          data.push_back(storable(x + noise));
        }
      }
      out.bank.videos.emplace(
          next_id++, Video{c, Tensor({spec.frames, spec.channels}, std::move(data))});
    }
  }

  if (spec.shuffle_labels) {
    std::vector<std::uint32_t> labels;
    for (const auto& [id, video] : out.bank.videos) labels.push_back(video.label);
    for (std::size_t i = labels.size(); i > 1; --i) {
      std::swap(labels[i - 1], labels[rng.below(i)]);
    }
    std::size_t k = 0;
    for (auto& [id, video] : out.bank.videos) video.label = labels[k++];
  }
  return out;
}

}  // namespace mvp

#pragma once

// N-way K-shot tasks: sampling, prototypes, nearest-prototype classification,
// cross-entropy training and multi-episode evaluation.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvp/alignment.hpp"
#include "mvp/ingest.hpp"

namespace mvp {

struct Episode {
  std::vector<std::uint32_t> way_classes;               // N bank class ids
  std::vector<std::vector<std::uint32_t>> support;      // N lists of K video ids
  std::vector<std::uint32_t> query;                     // video ids
  std::vector<int> query_labels;                        // indices into way_classes
};

/// Classes uniformly without replacement, then videos uniformly without
/// replacement inside each class; the first K of a class go to the support
/// set. Deterministic in `seed`. Throws DataError naming the deficit.
Episode sample_episode(const FeatureBank& bank, std::size_t n_way,
                       std::size_t k_shot, std::size_t q_per_class,
                       std::uint64_t seed);

/// Element-wise mean of K pyramids at every scale (tokens and text).
/// Throws ContractError on ragged shapes.
VelocityPyramid compute_prototype(std::span<const VelocityPyramid> support);
PyramidVars compute_prototype(std::span<const PyramidVars> support);

struct TaskConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_per_class = 1;
  Metric metric = Metric::kOtam;
  Real tau = Real(0.1);    // logit temperature
  Real gamma = Real(0.1);  // soft-min temperature during training
  AlphaMode alpha_mode = AlphaMode::kFixed;
  ScaleMask scales = ScaleMask::all(3);
};

/// logits[c] = -D(prototype_c, query) / tau.
std::vector<Real> class_logits(const VelocityPyramid& query,
                               std::span<const VelocityPyramid> prototypes,
                               std::span<const Real> alphas, Metric metric,
                               Real tau, const ScaleMask& scales);

struct Classification {
  std::vector<Real> distances;      // fused distance per class
  std::vector<Real> probabilities;  // softmax of -distance / tau
  int predicted = 0;                // nearest prototype, lowest index on ties
};

Classification classify(const VelocityPyramid& query,
                        std::span<const VelocityPyramid> prototypes,
                        std::span<const Real> alphas, Metric metric, Real tau,
                        const ScaleMask& scales);

/// Mean over queries of -log(max(p_true, 1e-12)); rows of `probabilities`
/// are queries.
Real episode_loss(const Tensor& probabilities, std::span<const int> labels);

struct TrainConfig {
  TaskConfig task;
  std::size_t steps = 500;
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real adam_eps = Real(1e-8);
  std::uint64_t seed = 0;
  /// Resample every step; when false the step-0 episode is reused.
  bool resample = true;
};

struct TrainResult {
  ModelParams params;
  std::vector<Real> loss_trace;  // loss of each step before its update
};

/// Learning rate at `step` under the x0.1 decays at 60% and 80% of `steps`.
Real scheduled_lr(Real base, std::size_t step, std::size_t steps);

/// Episode loss on a tape: PSTI for every support and query video,
/// prototypes, soft-min fused distances, softmax, cross-entropy.
Var episode_objective(Tape& tape, const FeatureBank& bank,
                      const TextTable& text, const ModelParams& model,
                      const Episode& episode, const TaskConfig& task);

TrainResult train(const FeatureBank& bank, const TextTable& text,
                  ModelParams init, const TrainConfig& config);

struct EvalConfig {
  TaskConfig task;
  std::size_t episodes = 200;
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

struct EvalReport {
  std::size_t episodes = 0;
  double mean_accuracy = 0;
  std::uint64_t seed = 0;
  TaskConfig task;
  std::vector<double> episode_accuracy;
};

/// Seed of evaluation episode `index`.
std::uint64_t episode_seed(std::uint64_t seed, std::size_t index);

/// Classifies one sampled episode with hard-min alignment.
double episode_accuracy(const FeatureBank& bank, const TextTable& text,
                        const ModelParams& model, const Episode& episode,
                        const TaskConfig& task);

EvalReport evaluate(const FeatureBank& bank, const TextTable& text,
                    const ModelParams& model, const EvalConfig& config);

}  // namespace mvp

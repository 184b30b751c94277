#include "mvp/episodic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "mvp/error.hpp"
#include "mvp/rng.hpp"

namespace mvp {

Episode sample_episode(const FeatureBank& bank, std::size_t n_way,
                       std::size_t k_shot, std::size_t q_per_class,
                       std::uint64_t seed) {
  if (n_way == 0 || k_shot == 0 || q_per_class == 0) {
    throw ConfigError("episode needs n_way, k_shot and q_per_class >= 1");
  }
  const std::size_t needed = k_shot + q_per_class;
  std::vector<std::uint32_t> eligible;
  for (std::uint32_t c : bank.class_ids()) {
    if (bank.videos_of(c).size() >= needed) eligible.push_back(c);
  }
  if (eligible.size() < n_way) {
    throw DataError("episode needs " + std::to_string(n_way) +
                    " classes with at least " + std::to_string(needed) +
                    " videos each, bank has " + std::to_string(eligible.size()) +
                    " (short by " + std::to_string(n_way - eligible.size()) + ")");
  }

  Rng rng(seed);
  // Partial Fisher-Yates: the first n entries become the sample.
  auto draw = [&rng](auto& pool, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    }
    pool.resize(n);
  };

  Episode ep;
  ep.way_classes = eligible;
  draw(ep.way_classes, n_way);
  for (std::size_t c = 0; c < n_way; ++c) {
    auto vids = bank.videos_of(ep.way_classes[c]);
    draw(vids, needed);
    ep.support.emplace_back(vids.begin(), vids.begin() + k_shot);
    for (std::size_t k = k_shot; k < needed; ++k) {
      ep.query.push_back(vids[k]);
      ep.query_labels.push_back(static_cast<int>(c));
    }
  }
  return ep;
}

VelocityPyramid compute_prototype(std::span<const VelocityPyramid> support) {
  if (support.empty()) throw ContractError("compute_prototype: no support pyramids");
  VelocityPyramid proto = support.front();
  for (const VelocityPyramid& p : support.subspan(1)) {
    if (p.scales() != proto.scales()) {
      throw ContractError("compute_prototype: pyramids have different depths");
    }
    for (std::size_t n = 0; n < p.scales(); ++n) {
      PyramidLevel& acc = proto.levels[n];
      if (!(p.levels[n].tokens.shape() == acc.tokens.shape()) ||
          !(p.levels[n].text.shape() == acc.text.shape())) {
        throw ContractError("compute_prototype: scale " + std::to_string(n + 1) +
                            " shapes differ");
      }
      acc.tokens.add_in_place(p.levels[n].tokens);
      acc.text.add_in_place(p.levels[n].text);
    }
  }
  const Real k = static_cast<Real>(support.size());
  for (PyramidLevel& level : proto.levels) {
    for (Real& v : level.tokens.data()) v /= k;
    for (Real& v : level.text.data()) v /= k;
  }
  return proto;
}

PyramidVars compute_prototype(std::span<const PyramidVars> support) {
  if (support.empty()) throw ContractError("compute_prototype: no support pyramids");
  if (support.size() == 1) return support.front();
  PyramidVars proto = support.front();
  for (const PyramidVars& p : support.subspan(1)) {
    if (p.levels.size() != proto.levels.size()) {
      throw ContractError("compute_prototype: pyramids have different depths");
    }
    for (std::size_t n = 0; n < p.levels.size(); ++n) {
      proto.levels[n].tokens = add(proto.levels[n].tokens, p.levels[n].tokens);
      proto.levels[n].text = add(proto.levels[n].text, p.levels[n].text);
    }
  }
  const Real inv_k = 1 / static_cast<Real>(support.size());
  for (StageTokens& level : proto.levels) {
    level.tokens = scale(level.tokens, inv_k);
    level.text = scale(level.text, inv_k);
  }
  return proto;
}

std::vector<Real> class_logits(const VelocityPyramid& query,
                               std::span<const VelocityPyramid> prototypes,
                               std::span<const Real> alphas, Metric metric,
                               Real tau, const ScaleMask& scales) {
  std::vector<Real> logits;
  for (const VelocityPyramid& proto : prototypes) {
    logits.push_back(
        -distance_profile(proto, query, alphas, metric, scales).fused / tau);
  }
  return logits;
}

Classification classify(const VelocityPyramid& query,
                        std::span<const VelocityPyramid> prototypes,
                        std::span<const Real> alphas, Metric metric, Real tau,
                        const ScaleMask& scales) {
  if (prototypes.empty()) throw ContractError("classify: no prototypes");
  if (!(tau > 0)) throw ConfigError("classify: temperature must be positive");
  Classification out;
  for (const VelocityPyramid& proto : prototypes) {
    out.distances.push_back(
        distance_profile(proto, query, alphas, metric, scales).fused);
  }
  out.predicted = static_cast<int>(
      std::min_element(out.distances.begin(), out.distances.end()) -
      out.distances.begin());
  const Real best = out.distances[out.predicted];
  Real total = 0;
  for (Real d : out.distances) {
    out.probabilities.push_back(std::exp(-(d - best) / tau));
    total += out.probabilities.back();
  }
  for (Real& p : out.probabilities) p /= total;
  return out;
}

Real episode_loss(const Tensor& probabilities, std::span<const int> labels) {
  Tape tape;
  return cross_entropy(tape.constant(probabilities), labels).value()[0];
}

Real scheduled_lr(Real base, std::size_t step, std::size_t steps) {
  // Milestones at 60% and 80% of the run.
  const std::size_t first = steps * 6 / 10, second = steps * 8 / 10;
  Real lr = base;
  if (step >= first) lr *= Real(0.1);
  if (step >= second) lr *= Real(0.1);
  return lr;
}

Var episode_objective(Tape& tape, const FeatureBank& bank,
                      const TextTable& text, const ModelParams& model,
                      const Episode& episode, const TaskConfig& task) {
  Var alphas = fusion_weights(tape, model, task.alpha_mode, task.scales);
  std::vector<PyramidVars> prototypes;
  for (std::size_t c = 0; c < episode.way_classes.size(); ++c) {
    Var class_text = tape.constant(text.at(episode.way_classes[c]));
    std::vector<PyramidVars> shots;
    for (std::uint32_t vid : episode.support[c]) {
      shots.push_back(run_psti(tape.constant(bank.videos.at(vid).frames),
                               class_text, model));
    }
    prototypes.push_back(compute_prototype(shots));
  }
  Var placeholder = query_text(tape, model);
  std::vector<Var> logits;
  for (std::uint32_t vid : episode.query) {
    PyramidVars q =
        run_psti(tape.constant(bank.videos.at(vid).frames), placeholder, model);
    for (const PyramidVars& proto : prototypes) {
      logits.push_back(scale(
          fused_distance(proto, q, alphas, task.metric, task.gamma, task.scales),
          -1 / task.tau));
    }
  }
  Var probs = softmax_rows(
      assemble(logits, episode.query.size(), episode.way_classes.size()));
  return cross_entropy(probs, episode.query_labels);
}

namespace {

void validate_task(const TaskConfig& task, const ModelParams& model) {
  if (task.scales.levels() != model.config.levels) {
    throw ConfigError("scale mask " + task.scales.str() + " has " +
                      std::to_string(task.scales.levels()) +
                      " entries but the model has N=" +
                      std::to_string(model.config.levels));
  }
  if (!(task.tau > 0)) throw ConfigError("tau must be positive");
  if (!(task.gamma >= 0)) throw ConfigError("gamma must be nonnegative");
}

void validate_bank(const FeatureBank& bank, const TextTable& text,
                   const ModelParams& model) {
  check_pairing(bank, text);
  if (bank.frames != model.config.frames || bank.channels != model.config.channels) {
    throw ConfigError("bank holds " + std::to_string(bank.frames) + "x" +
                      std::to_string(bank.channels) +
                      " videos but the model expects " +
                      std::to_string(model.config.frames) + "x" +
                      std::to_string(model.config.channels));
  }
}

struct AdamState {
  std::vector<Tensor> m, v;
};

}  // namespace

TrainResult train(const FeatureBank& bank, const TextTable& text,
                  ModelParams init, const TrainConfig& config) {
  validate_bank(bank, text, init);
  validate_task(config.task, init);
  if (!(config.lr >= 0)) throw ConfigError("learning rate must be nonnegative");

  TrainResult result{std::move(init), {}};
  ModelParams& model = result.params;
  const auto params = model.params();
  AdamState adam;
  for (const Param* p : params) {
    adam.m.push_back(Tensor::zeros(p->value.shape()));
    adam.v.push_back(Tensor::zeros(p->value.shape()));
  }

  const std::uint64_t base = mix_seed(config.seed);
  const TaskConfig& task = config.task;
  Episode episode;
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (step == 0 || config.resample) {
      episode = sample_episode(bank, task.n_way, task.k_shot, task.q_per_class,
                               base ^ step);
    }
    model.zero_grads();
    Tape tape;
    Var loss = episode_objective(tape, bank, text, model, episode, task);
    backward(loss, params);
    result.loss_trace.push_back(loss.value()[0]);

    const Real lr = scheduled_lr(config.lr, step, config.steps);
    const Real t = static_cast<Real>(step + 1);
    const Real bias1 = 1 - std::pow(config.beta1, t);
    const Real bias2 = 1 - std::pow(config.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Param& p = *params[k];
      Tensor& m = adam.m[k];
      Tensor& v = adam.v[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const Real g = p.grad[i];
        m[i] = config.beta1 * m[i] + (1 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1 - config.beta2) * g * g;
        const Real step_size =
            lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + config.adam_eps);
        p.value[i] -= step_size;
      }
    }
  }
  model.zero_grads();
  return result;
}

std::uint64_t episode_seed(std::uint64_t seed, std::size_t index) {
  return mix_seed(~seed) ^ static_cast<std::uint64_t>(index);
}

double episode_accuracy(const FeatureBank& bank, const TextTable& text,
                        const ModelParams& model, const Episode& episode,
                        const TaskConfig& task) {
  const auto alphas = fusion_weights(model, task.alpha_mode, task.scales);
  std::vector<VelocityPyramid> prototypes;
  for (std::size_t c = 0; c < episode.way_classes.size(); ++c) {
    const Tensor& class_text = text.at(episode.way_classes[c]);
    std::vector<VelocityPyramid> shots;
    for (std::uint32_t vid : episode.support[c]) {
      shots.push_back(run_psti(bank.videos.at(vid).frames, class_text, model));
    }
    prototypes.push_back(compute_prototype(shots));
  }
  std::size_t correct = 0;
  for (std::size_t k = 0; k < episode.query.size(); ++k) {
    const VelocityPyramid q =
        run_psti_query(bank.videos.at(episode.query[k]).frames, model);
    const Classification cls =
        classify(q, prototypes, alphas, task.metric, task.tau, task.scales);
    if (cls.predicted == episode.query_labels[k]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(episode.query.size());
}

EvalReport evaluate(const FeatureBank& bank, const TextTable& text,
                    const ModelParams& model, const EvalConfig& config) {
  validate_bank(bank, text, model);
  validate_task(config.task, model);
  const TaskConfig& task = config.task;

  // Sampling up front surfaces data errors on the calling thread.
  std::vector<Episode> episodes;
  for (std::size_t i = 0; i < config.episodes; ++i) {
    episodes.push_back(sample_episode(bank, task.n_way, task.k_shot,
                                      task.q_per_class,
                                      episode_seed(config.seed, i)));
  }

  EvalReport report;
  report.episodes = config.episodes;
  report.seed = config.seed;
  report.task = task;
  report.episode_accuracy.assign(config.episodes, 0);

  std::size_t workers = config.threads != 0
                            ? config.threads
                            : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(1, config.episodes));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < episodes.size() && !failed; i = next++) {
      try {
        report.episode_accuracy[i] =
            episode_accuracy(bank, text, model, episodes[i], task);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  double total = 0;
  for (double a : report.episode_accuracy) total += a;
  report.mean_accuracy =
      config.episodes == 0 ? 0 : total / static_cast<double>(config.episodes);
  return report;
}

}  // namespace mvp

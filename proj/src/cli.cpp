#include "mvp/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mvp/episodic.hpp"
#include "mvp/error.hpp"
#include "mvp/gradcheck.hpp"
#include "mvp/ingest.hpp"
#include "mvp/oracles.hpp"
#include "mvp/rng.hpp"

namespace mvp {

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

namespace fs = std::filesystem;

struct RunConfig {
  std::string command;
  // paths
  std::string bank, text, checkpoint, out, record, trace;
  // model
  std::size_t channels = 0, heads = 2, levels = 3, ffn_dim = 0, mlp_dim = 0;
  std::size_t frames = 8;
  // task
  std::size_t n_way = 5, k_shot = 1, q_per_class = 1, episodes = 200;
  std::size_t steps = 500, threads = 0;
  double lr = 1e-3, tau = 0.1, gamma = 0.1;
  std::string alpha = "fixed", metric = "otam";
  std::vector<std::string> scales;
  std::uint64_t seed = 0;
  // synth
  std::size_t classes = 5, per_class = 10;
  std::vector<double> speeds = {1.0};
  double noise = 0;
  bool shuffle_labels = false;
  // verification
  double tol = 1e-5, step_h = 1e-5;
  std::size_t trials = 100, max_len = 6;
  std::string inject_fault;
};

using Record = std::vector<std::pair<std::string, std::string>>;

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

Record config_echo(const RunConfig& c) {
  auto n = [](std::size_t v) { return std::to_string(v); };
  return {
      {"version", std::string(kToolVersion)},
      {"command", c.command},
      {"bank", c.bank},
      {"text", c.text},
      {"checkpoint", c.checkpoint},
      {"out", c.out},
      {"dim", n(c.channels)},
      {"heads", n(c.heads)},
      {"levels", n(c.levels)},
      {"ffn_dim", n(c.ffn_dim)},
      {"mlp_dim", n(c.mlp_dim)},
      {"frames", n(c.frames)},
      {"n_way", n(c.n_way)},
      {"k_shot", n(c.k_shot)},
      {"q_per_class", n(c.q_per_class)},
      {"episodes", n(c.episodes)},
      {"steps", n(c.steps)},
      {"lr", format_real(c.lr)},
      {"tau", format_real(c.tau)},
      {"gamma", format_real(c.gamma)},
      {"alpha", c.alpha},
      {"metric", c.metric},
      {"scales", join(c.scales)},
      {"seed", std::to_string(c.seed)},
      {"classes", n(c.classes)},
      {"per_class", n(c.per_class)},
      {"speeds", join(c.speeds)},
      {"noise", format_real(c.noise)},
      {"shuffle_labels", c.shuffle_labels ? "1" : "0"},
  };
}

std::string render_record(const Record& r) {
  std::string s;
  for (const auto& [k, v] : r) s += k + "=" + v + "\n";
  return s;
}

std::string render_csv_preamble(const Record& r) {
  std::string s;
  for (const auto& [k, v] : r) s += "# " + k + "=" + v + "\n";
  return s;
}

void write_text(const fs::path& path, const std::string& content) {
  write_file(path, std::span<const std::uint8_t>(
                       reinterpret_cast<const std::uint8_t*>(content.data()),
                       content.size()));
}

void require_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw ConfigError("output directory '" + parent.string() + "' does not exist");
  }
}

TaskConfig task_from(const RunConfig& c, std::size_t levels,
                     const std::string& mask) {
  TaskConfig t;
  t.n_way = c.n_way;
  t.k_shot = c.k_shot;
  t.q_per_class = c.q_per_class;
  t.metric = parse_metric(c.metric);
  t.tau = static_cast<Real>(c.tau);
  t.gamma = static_cast<Real>(c.gamma);
  t.alpha_mode = parse_alpha_mode(c.alpha);
  t.scales = mask.empty() ? ScaleMask::all(levels) : ScaleMask::parse(mask);
  if (t.scales.levels() != levels) {
    throw ConfigError("scale mask '" + mask + "' has " +
                      std::to_string(t.scales.levels()) +
                      " entries, model has N=" + std::to_string(levels));
  }
  return t;
}

struct Inputs {
  FeatureBank bank;
  TextTable text;
};

Inputs load_inputs(const RunConfig& c) {
  if (c.bank.empty() || c.text.empty()) {
    throw ConfigError("--bank and --text are required");
  }
  Inputs in{read_bank(c.bank), read_text_table(c.text)};
  check_pairing(in.bank, in.text);
  return in;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c, std::ostream& out) {
  if (c.out.empty()) throw ConfigError("--out directory is required");
  if (!fs::is_directory(c.out)) {
    throw ConfigError("output directory '" + c.out + "' does not exist");
  }
  SyntheticSpec spec;
  spec.classes = c.classes;
  spec.per_class = c.per_class;
  spec.frames = c.frames;
  spec.channels = c.channels == 0 ? 32 : c.channels;
  spec.speeds = c.speeds;
  spec.noise_sigma = c.noise;
  spec.seed = c.seed;
  spec.shuffle_labels = c.shuffle_labels;
  const SyntheticData data = make_synthetic(spec);
  const fs::path dir(c.out);
  write_bank(data.bank, dir / "bank.mvpf");
  write_text_table(data.text, dir / "text.mvpt");
  out << "synth: " << spec.classes << " classes, " << data.bank.videos.size()
      << " videos, T=" << spec.frames << ", C=" << spec.channels
      << ", speeds " << join(spec.speeds) << ", noise " << format_real(spec.noise_sigma)
      << "\n"
      << "wrote " << (dir / "bank.mvpf").string() << " and "
      << (dir / "text.mvpt").string() << "\n";
  return kExitOk;
}

ModelConfig model_from(const RunConfig& c, const FeatureBank& bank) {
  if (c.channels != 0 && c.channels != bank.channels) {
    throw ConfigError("--dim " + std::to_string(c.channels) +
                      " disagrees with bank width C=" +
                      std::to_string(bank.channels));
  }
  ModelConfig m;
  m.frames = bank.frames;
  m.channels = bank.channels;
  m.heads = c.heads;
  m.levels = c.levels;
  m.ffn_dim = c.ffn_dim;
  m.mlp_dim = c.mlp_dim;
  m = m.resolved();
  m.validate();
  return m;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint output path is required");
  require_parent_dir(c.checkpoint);
  const std::string trace = c.trace.empty() ? c.checkpoint + ".loss.csv" : c.trace;
  require_parent_dir(trace);
  const Inputs in = load_inputs(c);
  const ModelConfig mc = model_from(c, in.bank);

  TrainConfig tc;
  tc.task = task_from(c, mc.levels, c.scales.empty() ? "" : c.scales.front());
  tc.steps = c.steps;
  tc.lr = static_cast<Real>(c.lr);
  tc.seed = c.seed;
  const TrainResult res = train(in.bank, in.text, init_model(mc, c.seed), tc);
  save_checkpoint(res.params, c.checkpoint);

  std::string csv = render_csv_preamble(config_echo(c)) + "step,loss\n";
  for (std::size_t s = 0; s < res.loss_trace.size(); ++s) {
    csv += std::to_string(s) + "," + format_real(res.loss_trace[s]) + "\n";
  }
  write_text(trace, csv);

  out << "train: " << c.steps << " steps, " << c.n_way << "-way " << c.k_shot
      << "-shot, scales " << tc.task.scales.str() << "\n";
  if (!res.loss_trace.empty()) {
    out << "loss first=" << format_real(res.loss_trace.front())
        << " last=" << format_real(res.loss_trace.back()) << "\n";
  }
  out << "wrote " << c.checkpoint << " and " << trace << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& c, std::ostream& out,
             const std::vector<const CLI::Option*>& model_flags) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const std::string record_path =
      c.record.empty() ? c.checkpoint + ".eval" : c.record;
  require_parent_dir(record_path);
  const Inputs in = load_inputs(c);
  ModelParams model = load_checkpoint(c.checkpoint);
  // Explicit model flags must agree with the checkpoint.
  bool explicit_model = false;
  for (const CLI::Option* o : model_flags) explicit_model |= o->count() > 0;
  if (explicit_model) {
    ModelConfig want = model.config;
    if (model_flags[0]->count()) want.channels = c.channels;
    if (model_flags[1]->count()) want.heads = c.heads;
    if (model_flags[2]->count()) want.levels = c.levels;
    if (model_flags[3]->count()) want.ffn_dim = c.ffn_dim;
    if (model_flags[4]->count()) want.mlp_dim = c.mlp_dim;
    model = load_checkpoint(c.checkpoint, want);
  }

  std::vector<std::string> masks = c.scales;
  if (masks.empty()) masks.push_back(ScaleMask::all(model.config.levels).str());

  Record rec = config_echo(c);
  out << "eval: " << c.episodes << " episodes, " << c.n_way << "-way "
      << c.k_shot << "-shot, metric " << c.metric << "\n";
  for (std::size_t k = 0; k < masks.size(); ++k) {
    EvalConfig ec;
    ec.task = task_from(c, model.config.levels, masks[k]);
    ec.episodes = c.episodes;
    ec.seed = c.seed;
    ec.threads = c.threads;
    const EvalReport rep = evaluate(in.bank, in.text, model, ec);
    const std::string mask = ec.task.scales.str();
    const auto alphas = fusion_weights(model, ec.task.alpha_mode, ec.task.scales);
    std::vector<double> alpha_d(alphas.begin(), alphas.end());
    if (k == 0) rec.emplace_back("accuracy", format_real(rep.mean_accuracy));
    rec.emplace_back("accuracy." + mask, format_real(rep.mean_accuracy));
    rec.emplace_back("alphas." + mask, join(alpha_d));
    out << "  scales " << mask << "  accuracy " << format_real(rep.mean_accuracy)
        << "\n";
  }
  write_text(record_path, render_record(rec));
  out << "wrote " << record_path << "\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out, std::ostream& err,
                  const std::vector<const CLI::Option*>& ignored) {
  for (const CLI::Option* o : ignored) {
    if (o->count() > 0) {
      err << "warning: " << o->get_name() << " is ignored by gradcheck\n";
    }
  }
  const std::size_t channels = c.channels == 0 ? 16 : c.channels;
  if (channels > 32) {
    throw ConfigError("gradcheck is limited to C <= 32 (got " +
                      std::to_string(channels) + ")");
  }
  ModelConfig mc;
  mc.frames = c.frames;
  mc.channels = channels;
  mc.heads = c.heads;
  mc.levels = c.levels;
  mc.ffn_dim = c.ffn_dim;
  mc.mlp_dim = c.mlp_dim;
  mc = mc.resolved();
  mc.validate();

  SyntheticSpec spec;
  spec.classes = c.n_way;
  spec.per_class = c.k_shot + c.q_per_class;
  spec.frames = mc.frames;
  spec.channels = mc.channels;
  spec.speeds = {1.0, 2.0};
  spec.noise_sigma = 0.1;
  spec.seed = c.seed;
  const SyntheticData data = make_synthetic(spec);
  ModelParams model = init_model(mc, mix_seed(c.seed));
  TaskConfig task = task_from(c, mc.levels, c.scales.empty() ? "" : c.scales.front());
  const Episode ep = sample_episode(data.bank, c.n_way, c.k_shot,
                                    c.q_per_class, c.seed);

  if (!c.inject_fault.empty()) {
#ifdef MVP_FAULT_INJECTION
    set_backward_fault(c.inject_fault);
    err << "fault injected into the backward pass of '" << c.inject_fault << "'\n";
#else
    throw ConfigError("this build has no fault injection support");
#endif
  }
  struct ResetFault {
    ~ResetFault() {
#ifdef MVP_FAULT_INJECTION
      set_backward_fault("");
#endif
    }
  } reset;

  const auto start = std::chrono::steady_clock::now();
  const GradReport report = grad_check(
      [&](Tape& t) {
        return episode_objective(t, data.bank, data.text, model, ep, task);
      },
      model.params(), static_cast<Real>(c.step_h), static_cast<Real>(c.tol));
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start).count();

  const GradEntry* worst = report.worst();
  out << "gradcheck: C=" << mc.channels << " H=" << mc.heads << " N=" << mc.levels
      << " T=" << mc.frames << ", " << report.entries.size() << " parameters, "
      << c.n_way << "-way " << c.k_shot << "-shot, metric " << c.metric
      << ", gamma " << format_real(c.gamma) << "\n";
  for (const GradEntry& e : report.entries) {
    if (!e.pass) {
      out << "  FAIL " << e.name << " rel_error " << format_real(e.max_rel_error)
          << "\n";
    }
  }
  out << "worst " << (worst ? worst->name : "-") << " rel_error "
      << format_real(worst ? worst->max_rel_error : 0.0) << " (tol "
      << format_real(c.tol) << ", " << format_real(secs) << " s)\n";
  if (!c.record.empty()) {
    Record rec = config_echo(c);
    rec.emplace_back("tol", format_real(c.tol));
    rec.emplace_back("h", format_real(c.step_h));
    for (const GradEntry& e : report.entries) {
      rec.emplace_back("rel_error." + e.name, format_real(e.max_rel_error));
    }
    rec.emplace_back("passed", report.passed() ? "1" : "0");
    write_text(c.record, render_record(rec));
  }
  if (!report.passed()) {
    out << "gradcheck FAILED";
    if (!c.inject_fault.empty()) out << " (fault in op '" << c.inject_fault << "')";
    out << ": first failing parameter ";
    for (const GradEntry& e : report.entries) {
      if (!e.pass) {
        out << e.name;
        break;
      }
    }
    out << "\n";
    return kExitVerificationFailed;
  }
  out << "gradcheck passed\n";
  return kExitOk;
}

std::string matrix_text(const CostMatrix& m) {
  std::string s;
  for (std::size_t i = 0; i < m.query_len(); ++i) {
    s += "  [";
    for (std::size_t j = 0; j < m.support_len(); ++j) {
      s += (j ? ", " : "") + format_real(m.entries(i, j));
    }
    s += "]\n";
  }
  return s;
}

int cmd_oracle_check(const RunConfig& c, std::ostream& out) {
  if (c.max_len < 1 || c.max_len > oracle::kMaxBruteForceLen) {
    throw ConfigError("--max-len must lie in [1, " +
                      std::to_string(oracle::kMaxBruteForceLen) + "]");
  }
  Rng rng(c.seed);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t trial = 0; trial < c.trials; ++trial) {
    std::size_t tq = 1, ts = 1;
    if (trial > 0) {
      tq = 1 + rng.below(c.max_len);
      ts = 1 + rng.below(c.max_len);
    }
    // Every third trial draws from a coarse grid so that ties occur.
    const bool coarse = trial % 3 == 2;
    std::vector<Real> data(tq * ts);
    for (Real& v : data) {
      v = coarse ? static_cast<Real>(rng.below(5)) * Real(0.5)
                 : static_cast<Real>(rng.uniform(0, 2));
    }
    const CostMatrix m{Tensor({tq, ts}, std::move(data))};
    const Real otam = otam_distance(m), otam_ref = oracle::otam_bruteforce(m);
    const Real bimhm = bimhm_distance(m), bimhm_ref = oracle::bimhm_two_loop(m);
    if (otam != otam_ref || bimhm != bimhm_ref) {
      out << "oracle-check FAILED at trial " << trial << " (" << tq << "x" << ts
          << ")\n"
          << "otam " << format_real(otam) << " vs oracle " << format_real(otam_ref)
          << "\nbimhm " << format_real(bimhm) << " vs oracle "
          << format_real(bimhm_ref) << "\ncost matrix:\n"
          << matrix_text(m);
      return kExitVerificationFailed;
    }
  }
  const double secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start).count();
  out << "oracle-check: " << c.trials << " trials up to " << c.max_len << "x"
      << c.max_len << ", otam and bimhm match their oracles exactly ("
      << format_real(secs) << " s)\n";
  return kExitOk;
}

int cmd_dump_similarity(const RunConfig& c, std::ostream& out) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (c.out.empty()) throw ConfigError("--out CSV path is required");
  require_parent_dir(c.out);
  const Inputs in = load_inputs(c);
  const ModelParams model = load_checkpoint(c.checkpoint);
  const TaskConfig task = task_from(c, model.config.levels,
                                    c.scales.empty() ? "" : c.scales.front());
  if (in.bank.frames != model.config.frames ||
      in.bank.channels != model.config.channels) {
    throw ConfigError("bank shape does not match the checkpoint");
  }
  const Episode ep = sample_episode(in.bank, task.n_way, task.k_shot,
                                    task.q_per_class, episode_seed(c.seed, 0));
  const auto alphas = fusion_weights(model, task.alpha_mode, task.scales);

  std::vector<VelocityPyramid> prototypes;
  for (std::size_t k = 0; k < ep.way_classes.size(); ++k) {
    std::vector<VelocityPyramid> shots;
    for (std::uint32_t vid : ep.support[k]) {
      shots.push_back(run_psti(in.bank.videos.at(vid).frames,
                               in.text.at(ep.way_classes[k]), model));
    }
    prototypes.push_back(compute_prototype(shots));
  }

  const auto active = task.scales.active();
  std::string csv = render_csv_preamble(config_echo(c));
  csv += "query,query_video,true_label,predicted_label,prototype,prototype_class,fused";
  for (std::size_t n : active) csv += ",d" + std::to_string(n + 1);
  csv += "\n";
  std::size_t correct = 0;
  for (std::size_t q = 0; q < ep.query.size(); ++q) {
    const VelocityPyramid qp =
        run_psti_query(in.bank.videos.at(ep.query[q]).frames, model);
    std::vector<DistanceProfile> profiles;
    for (const VelocityPyramid& proto : prototypes) {
      profiles.push_back(
          distance_profile(proto, qp, alphas, task.metric, task.scales));
    }
    const Classification cls =
        classify(qp, prototypes, alphas, task.metric, task.tau, task.scales);
    if (cls.predicted == ep.query_labels[q]) ++correct;
    for (std::size_t p = 0; p < profiles.size(); ++p) {
      csv += std::to_string(q) + "," + std::to_string(ep.query[q]) + "," +
             std::to_string(ep.query_labels[q]) + "," +
             std::to_string(cls.predicted) + "," + std::to_string(p) + "," +
             std::to_string(ep.way_classes[p]) + "," +
             format_real(profiles[p].fused);
      for (const ScaleDistance& sd : profiles[p].per_scale) {
        csv += "," + format_real(sd.distance);
      }
      csv += "\n";
    }
  }
  write_text(c.out, csv);
  out << "dump-similarity: " << ep.query.size() << " queries x "
      << prototypes.size() << " prototypes, " << correct << " correct\n"
      << "wrote " << c.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

void add_paths(CLI::App* sub, RunConfig& c, bool checkpoint) {
  sub->add_option("--bank", c.bank, "Feature bank (MVPF)");
  sub->add_option("--text", c.text, "Class text embeddings (MVPT)");
  if (checkpoint) sub->add_option("--checkpoint", c.checkpoint, "Model checkpoint (MVPC)");
}

std::vector<const CLI::Option*> add_model(CLI::App* sub, RunConfig& c) {
  return {
      sub->add_option("--dim", c.channels, "Channel width C (default: from bank)"),
      sub->add_option("--heads", c.heads, "Attention heads H")->capture_default_str(),
      sub->add_option("--levels", c.levels, "Velocity scales N")->capture_default_str(),
      sub->add_option("--ffn-dim", c.ffn_dim, "FFN hidden width (0 = 4C)"),
      sub->add_option("--mlp-dim", c.mlp_dim, "Channel MLP hidden width (0 = C/2)"),
  };
}

void add_task(CLI::App* sub, RunConfig& c) {
  sub->add_option("--n-way", c.n_way, "Classes per episode")->capture_default_str();
  sub->add_option("--k-shot", c.k_shot, "Support videos per class")->capture_default_str();
  sub->add_option("--q-per-class", c.q_per_class, "Queries per class")->capture_default_str();
  sub->add_option("--tau", c.tau, "Logit temperature")->capture_default_str();
  sub->add_option("--gamma", c.gamma, "Soft-min temperature")->capture_default_str();
  sub->add_option("--alpha", c.alpha, "Fusion weights: fixed | learned")
      ->check(CLI::IsMember({"fixed", "learned"}))
      ->capture_default_str();
  sub->add_option("--metric", c.metric, "Alignment metric: otam | bimhm")
      ->check(CLI::IsMember({"otam", "bimhm"}))
      ->capture_default_str();
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  RunConfig c;
  CLI::App app{"Few-shot sequence classification with multi-velocity "
               "progressive alignment",
               "mvpshot"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "Read options from a TOML/INI file (flags win)");
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic feature bank");
  synth->add_option("--classes", c.classes)->capture_default_str();
  synth->add_option("--per-class", c.per_class)->capture_default_str();
  synth->add_option("--frames", c.frames, "Frames per video T")->capture_default_str();
  synth->add_option("--dim", c.channels, "Channel width C (default 32)");
  synth->add_option("--speeds", c.speeds, "Comma-separated speeds")->delimiter(',');
  synth->add_option("--noise", c.noise, "Gaussian noise sigma")->capture_default_str();
  synth->add_option("--seed", c.seed)->capture_default_str();
  synth->add_flag("--shuffle-labels", c.shuffle_labels,
                  "Randomly permute labels across videos");
  synth->add_option("--out", c.out, "Existing output directory");

  auto* train_cmd = app.add_subcommand("train", "Train on a feature bank");
  add_paths(train_cmd, c, true);
  add_model(train_cmd, c);
  add_task(train_cmd, c);
  train_cmd->add_option("--steps", c.steps)->capture_default_str();
  train_cmd->add_option("--lr", c.lr)->capture_default_str();
  train_cmd->add_option("--scales", c.scales, "Enabled scales mask, e.g. 111");
  train_cmd->add_option("--trace", c.trace, "Loss trace CSV (default: <checkpoint>.loss.csv)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate over random episodes");
  add_paths(eval_cmd, c, true);
  const auto eval_model = add_model(eval_cmd, c);
  add_task(eval_cmd, c);
  eval_cmd->add_option("--episodes", c.episodes)->capture_default_str();
  eval_cmd->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
  eval_cmd->add_option("--scales", c.scales,
                       "Scale masks to evaluate, comma-separated (e.g. 100,111)")
      ->delimiter(',');
  eval_cmd->add_option("--record", c.record, "Record file (default: <checkpoint>.eval)");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_model(grad_cmd, c);
  add_task(grad_cmd, c);
  grad_cmd->add_option("--frames", c.frames)->capture_default_str();
  grad_cmd->add_option("--scales", c.scales, "Enabled scales mask");
  grad_cmd->add_option("--tol", c.tol)->capture_default_str();
  grad_cmd->add_option("--fd-step", c.step_h, "Central difference step")->capture_default_str();
  grad_cmd->add_option("--record", c.record, "Optional record file");
  grad_cmd->add_option("--inject-fault", c.inject_fault,
                       "Corrupt the backward pass of an op (verification builds)");
  const std::vector<const CLI::Option*> grad_ignored = {
      grad_cmd->add_option("--lr", c.lr), grad_cmd->add_option("--steps", c.steps),
      grad_cmd->add_option("--episodes", c.episodes),
      grad_cmd->add_option("--threads", c.threads)};

  auto* oracle_cmd = app.add_subcommand("oracle-check",
                                        "Compare alignment metrics to their oracles");
  oracle_cmd->add_option("--trials", c.trials)->capture_default_str();
  oracle_cmd->add_option("--max-len", c.max_len)->capture_default_str();
  oracle_cmd->add_option("--seed", c.seed)->capture_default_str();

  auto* dump_cmd = app.add_subcommand("dump-similarity",
                                      "Write per-scale query/prototype distances");
  add_paths(dump_cmd, c, true);
  add_task(dump_cmd, c);
  dump_cmd->add_option("--scales", c.scales, "Enabled scales mask");
  dump_cmd->add_option("--out", c.out, "CSV output path");

  if (c.speeds.empty()) c.speeds = {1.0};
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  c.command = app.get_subcommands().front()->get_name();

  if (synth->parsed()) return cmd_synth(c, out);
  if (train_cmd->parsed()) return cmd_train(c, out);
  if (eval_cmd->parsed()) return cmd_eval(c, out, eval_model);
  if (grad_cmd->parsed()) {
    if (grad_cmd->get_option("--n-way")->count() == 0) c.n_way = 3;
    return cmd_gradcheck(c, out, err, grad_ignored);
  }
  if (oracle_cmd->parsed()) return cmd_oracle_check(c, out);
  return cmd_dump_similarity(c, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace mvp

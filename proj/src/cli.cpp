#include "seqvcr/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "seqvcr/checkpoint.hpp"
#include "seqvcr/dataset_io.hpp"
#include "seqvcr/entropy.hpp"
#include "seqvcr/eval.hpp"
#include "seqvcr/train.hpp"

#ifndef SEQVCR_VERSION
#define SEQVCR_VERSION "dev"
#endif

namespace seqvcr {

namespace fs = std::filesystem;

namespace {

// Precondition failures that should map to the usage exit code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path resolve_out(const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) {
    if (const char* root = std::getenv("SEQVCR_OUT"); root && *root) return fs::path(root) / path;
  }
  return path;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Invocation {
  std::vector<std::string> argv;
};

void write_manifest(const fs::path& dir, const Invocation& inv, const std::string& command,
                    nlohmann::ordered_json config, nlohmann::ordered_json hashes, std::uint64_t seed) {
  nlohmann::ordered_json m;
  m["command"] = command;
  m["argv"] = inv.argv;
  m["version"] = version_string();
  m["seed"] = seed;
  m["started_utc"] = utc_now();
  m["config"] = std::move(config);
  m["inputs"] = std::move(hashes);
  fs::create_directories(dir);
  std::ofstream out(dir / "run_manifest.json");
  out << m.dump(2) << '\n';
}

void prepare_out_dir(const fs::path& dir, bool force, const std::vector<std::string>& owned) {
  if (!force) {
    for (const auto& f : owned) {
      if (fs::exists(dir / f)) throw UsageError((dir / f).string() + " already exists (use --force to overwrite)");
    }
  }
  fs::create_directories(dir);
}

// ---- gen ----

struct GenArgs {
  std::string task;
  std::size_t digits = 0, ops = 0, len = 0;
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  double train_fraction = 0.9;
  int prime = kDefaultPrime;
  bool reverse_digits = false;
  std::string out;
  bool force = false;
};

int cmd_gen(const GenArgs& a, const Invocation& inv) {
  DatasetSpec spec;
  spec.task = task_kind_from_string(a.task);
  switch (spec.task) {
    case TaskKind::Multiplication: spec.size = a.digits ? a.digits : 4; break;
    case TaskKind::Arithmetic: spec.size = a.ops ? a.ops : 4; break;
    case TaskKind::Lis: spec.size = a.len ? a.len : 50; break;
  }
  spec.count = a.count;
  spec.seed = a.seed;
  spec.train_fraction = a.train_fraction;
  spec.test_fraction = 1.0 - a.train_fraction;
  spec.prime = a.prime;
  spec.reverse_digits = a.reverse_digits;
  spec.validate();

  const fs::path out = resolve_out(a.out.empty() ? "data/" + to_string(spec.task) + std::to_string(spec.size) + "_s" +
                                                       std::to_string(spec.seed)
                                                 : a.out);
  if (fs::exists(out / "manifest.json") && !a.force) {
    throw UsageError(out.string() + " already holds a dataset (use --force to overwrite)");
  }
  write_manifest(out, inv, "gen", spec.to_json(), nlohmann::ordered_json::object(), spec.seed);
  Dataset ds = build_dataset(spec);
  write_dataset(out, ds, true);
  std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size() << " test samples to " << out.string()
            << " (manifest sha256 " << dataset_hash(out) << ")\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  std::string config_path;
  std::string data;
  std::string out;
  std::string resume;
  bool force = false;
  std::size_t dump_batch = 0;
  std::size_t stop_after = 0;
  std::map<std::string, std::string> overrides;
};

TrainConfig resolve_train_config(const TrainArgs& a, TaskKind data_task) {
  std::string file_text = a.config_path.empty() ? "" : read_text(a.config_path);
  TrainConfig probe;
  probe.task = data_task;
  probe.apply_text(file_text);
  if (auto it = a.overrides.find("variant"); it != a.overrides.end()) probe.set("variant", it->second);
  if (probe.task != data_task) {
    throw UsageError("config task " + to_string(probe.task) + " does not match dataset task " + to_string(data_task));
  }
  TrainConfig cfg = make_variant(probe.variant, data_task);
  cfg.apply_text(file_text);
  for (const auto& [k, v] : a.overrides) cfg.set(k, v);
  return cfg;
}

std::vector<MetricsRow> read_metrics(const fs::path& p) {
  if (!fs::exists(p)) return {};
  std::ifstream in(p);
  return MetricsLog::read_csv(in);
}

int cmd_train(const TrainArgs& a, const Invocation& inv) {
  if (a.data.empty()) throw UsageError("--data is required");
  const fs::path data_dir(a.data);
  const Dataset ds = read_dataset(data_dir);
  const fs::path out = resolve_out(a.out.empty() ? "runs/train" : a.out);

  std::optional<Checkpoint> resume;
  TrainConfig cfg;
  if (!a.resume.empty()) {
    if (!a.config_path.empty() || !a.overrides.empty()) {
      throw UsageError("--resume takes its configuration from the checkpoint; drop --config and config flags");
    }
    resume = load_checkpoint(a.resume);
    cfg.apply_text(resume->train_config);
    if (cfg.task != ds.spec.task) throw UsageError("checkpoint was trained on a different task");
  } else {
    cfg = resolve_train_config(a, ds.spec.task);
  }
  cfg.model.vocab_size = ds.vocab.size();
  cfg.validate();
  cfg.model.validate();

  if (a.dump_batch > 0) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < std::min(a.dump_batch, ds.train.size()); ++i) idx.push_back(i);
    const auto b = make_batch(ds.train, idx, cfg);
    for (std::size_t s = 0; s < b.inputs.n_seq; ++s) {
      std::vector<std::string> sym;
      std::string mask;
      for (std::size_t t = 0; t < b.inputs.seq_len; ++t) {
        sym.push_back(ds.vocab.symbol(b.inputs.tokens[s * b.inputs.seq_len + t]));
        mask += b.loss_mask[s * b.inputs.seq_len + t] ? '1' : '0';
      }
      std::string line;
      for (const auto& x : sym) line += (line.empty() ? "" : " ") + x;
      std::cout << line << "\n  supervised-next: " << mask << '\n';
    }
    return kExitOk;
  }

  const fs::path metrics_path = out / "metrics.csv";
  const fs::path timing_path = out / "timing.csv";
  if (resume) {
    fs::create_directories(out);
  } else {
    prepare_out_dir(out, a.force, {"metrics.csv", "config.txt"});
  }
  nlohmann::ordered_json cfg_json;
  std::istringstream cfg_lines(cfg.to_text());
  for (std::string line; std::getline(cfg_lines, line);) {
    const auto eq = line.find('=');
    cfg_json[line.substr(0, eq)] = line.substr(eq + 1);
  }
  nlohmann::ordered_json inputs = {{"dataset", data_dir.string()}, {"dataset_sha256", dataset_hash(data_dir)}};
  if (resume) inputs["resume"] = {{"path", a.resume}, {"sha256", sha256_file(a.resume)}};
  write_manifest(out, inv, "train", cfg_json, inputs, cfg.seed);
  {
    std::ofstream c(out / "config.txt");
    c << cfg.to_text();
  }

  // Keep logged rows up to the resume point, then append.
  std::vector<MetricsRow> kept;
  if (resume) {
    for (const auto& r : read_metrics(metrics_path)) {
      if (r.step <= resume->trainer.step) kept.push_back(r);
    }
  }
  std::ofstream metrics(metrics_path, std::ios::trunc);
  MetricsLog::write_header(metrics);
  for (const auto& r : kept) MetricsLog::write_row(metrics, r);
  metrics.flush();
  std::ofstream timing(timing_path, resume ? std::ios::app : std::ios::trunc);
  if (!resume) timing << "step,wall_seconds\n";

  TrainOptions opt;
  opt.checkpoint_dir = out / "checkpoints";
  opt.resume = resume;
  opt.stop_after = a.stop_after;
  opt.hooks.on_row = [&](const MetricsRow& r, double secs) {
    MetricsLog::write_row(metrics, r);
    metrics.flush();
    timing << r.step << ',' << secs << '\n';
    timing.flush();
    std::cerr << "step " << r.step << " epoch " << r.epoch << " loss " << r.loss_total << " (next " << r.loss_next
              << ", reg " << r.loss_seqvcr << ") exact " << r.eval_exact_match << '\n';
  };
  const auto res = train(cfg, ds.train, ds.test, ds.vocab.size(), opt);
  std::cout << (res.completed ? "finished" : "stopped") << " at step " << res.trainer.step << "; checkpoints in "
            << opt.checkpoint_dir.string() << '\n';
  return kExitOk;
}

// ---- probe / eval shared ----

struct Loaded {
  Checkpoint ck;
  Transformer model;
  TrainConfig cfg;
  Dataset ds;
};

Loaded load_run(const std::string& checkpoint, const std::string& data) {
  if (checkpoint.empty() || data.empty()) throw UsageError("--checkpoint and --data are required");
  Loaded l{load_checkpoint(checkpoint), {}, {}, read_dataset(data)};
  l.cfg.apply_text(l.ck.train_config);
  if (l.ck.model_config.vocab_size != l.ds.vocab.size()) {
    throw UsageError("checkpoint vocabulary (" + std::to_string(l.ck.model_config.vocab_size) +
                     ") does not match dataset vocabulary (" + std::to_string(l.ds.vocab.size()) + ")");
  }
  if (l.cfg.task != l.ds.spec.task) throw UsageError("checkpoint task differs from dataset task");
  l.model = restore_model(l.ck);
  return l;
}

std::vector<Sample> take(const std::vector<Sample>& v, std::size_t count) {
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(count == 0 ? v.size() : std::min(count, v.size()))};
}

const std::vector<Sample>& pick_split(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "test") return ds.test;
  throw UsageError("unknown split '" + split + "' (expected train or test)");
}

// ---- probe ----

struct ProbeArgs {
  std::string checkpoint, data, out, run_id, split = "test";
  double alpha = 1.0;
  std::size_t count = 256;
  std::size_t bins = 20;
  bool drop_pause = false;
  bool force = false;
};

int cmd_probe(const ProbeArgs& a, const Invocation& inv) {
  if (!(a.alpha > 0.0)) throw UsageError("--alpha must be positive");
  const auto l = load_run(a.checkpoint, a.data);
  const auto samples = take(pick_split(l.ds, a.split), a.count);
  if (samples.empty()) throw UsageError("probe split is empty");
  std::vector<std::vector<TokenId>> seqs;
  for (const auto& s : samples) seqs.push_back(assemble_sequence(s, l.cfg.variant, l.cfg.pauses).tokens);
  ProbeOptions po;
  po.alpha = a.alpha;
  if (a.drop_pause) po.drop_tokens = {Vocab::kPause, Vocab::kPauseStart, Vocab::kPauseEnd};

  const fs::path out = resolve_out(a.out.empty() ? "runs/probe" : a.out);
  prepare_out_dir(out, a.force, {"entropy_profile.csv", "entropy_histogram.csv"});
  write_manifest(out, inv, "probe", {{"alpha", a.alpha}, {"split", a.split}, {"count", samples.size()}, {"bins", a.bins},
                                     {"drop_pause", a.drop_pause}},
                 {{"checkpoint", a.checkpoint}, {"checkpoint_sha256", sha256_file(a.checkpoint)},
                  {"dataset_sha256", dataset_hash(a.data)}},
                 l.cfg.seed);
  const auto prof = layer_entropy_profile(l.model, seqs, po);
  const auto hist = entropy_histogram(prof.split(), std::min(prof.max_tokens, l.model.config().d_model), a.bins);
  const std::string run_id = a.run_id.empty() ? to_string(l.cfg.variant) : a.run_id;
  {
    std::ofstream f(out / "entropy_profile.csv");
    write_profile_csv(f, run_id, prof);
  }
  {
    std::ofstream f(out / "entropy_histogram.csv");
    write_histogram_csv(f, hist);
  }
  std::cout << "entropy (nats, alpha " << a.alpha << ") by layer:";
  for (double v : prof.mean_by_layer) std::cout << ' ' << v;
  std::cout << '\n';
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, data, out, run_id, baseline, split = "test";
  std::size_t count = 0;
  std::size_t generations = 1000, warmup = 50, trials = 3;
  bool force = false;
};

int cmd_eval(const EvalArgs& a, const Invocation& inv) {
  const auto l = load_run(a.checkpoint, a.data);
  const auto samples = take(pick_split(l.ds, a.split), a.count);
  if (samples.empty()) throw UsageError("evaluation split is empty");
  const DecodeOptions dec{l.cfg.variant, l.cfg.pauses, 64};
  const fs::path out = resolve_out(a.out.empty() ? "runs/eval" : a.out);
  prepare_out_dir(out, a.force, {"report.csv", "positions.csv", "summary.json"});
  const std::string data_hash = dataset_hash(a.data);
  write_manifest(out, inv, "eval",
                 {{"split", a.split}, {"count", samples.size()}, {"generations", a.generations}, {"warmup", a.warmup},
                  {"trials", a.trials}, {"baseline_run", a.baseline}},
                 {{"checkpoint", a.checkpoint}, {"checkpoint_sha256", sha256_file(a.checkpoint)}, {"dataset_sha256", data_hash}},
                 l.cfg.seed);

  EvalReport rep;
  rep.run_id = a.run_id.empty() ? to_string(l.cfg.variant) : a.run_id;
  rep.variant = to_string(l.cfg.variant);
  rep.n_examples = samples.size();
  rep.dataset_hash = data_hash;
  rep.accuracy = position_accuracy(l.model, samples, dec);
  if (a.generations > 0) rep.throughput = measure_throughput(l.model, samples, dec, a.generations, a.warmup, a.trials);

  if (a.baseline == "self") {
    rep.t_norm = normalized_throughput(rep.throughput.examples_per_sec, rep.throughput.examples_per_sec);
  } else if (!a.baseline.empty()) {
    const fs::path summary = fs::path(a.baseline) / "summary.json";
    if (!fs::exists(summary)) {
      std::cerr << "warning: no summary.json in baseline run " << a.baseline << "; T_norm omitted\n";
    } else {
      const auto base = nlohmann::json::parse(read_text(summary));
      if (base.at("dataset_sha256").get<std::string>() != data_hash) {
        throw UsageError("baseline run was evaluated on a different dataset");
      }
      rep.t_norm = normalized_throughput(rep.throughput.examples_per_sec,
                                         base.at("throughput_examples_per_sec").get<double>());
    }
  }

  const bool mult = l.ds.spec.task == TaskKind::Multiplication;
  {
    std::ofstream f(out / "report.csv");
    write_report_csv(f, rep);
  }
  {
    std::ofstream f(out / "positions.csv");
    write_positions_csv(f, rep, mult ? operation_count_annotation(l.ds.spec.size) : std::vector<ColumnOps>{},
                        l.ds.spec.reverse_digits);
  }
  nlohmann::ordered_json s;
  s["run_id"] = rep.run_id;
  s["variant"] = rep.variant;
  s["task"] = to_string(l.ds.spec.task);
  s["n_examples"] = rep.n_examples;
  s["exact_match"] = rep.accuracy.exact_match;
  s["tokens_decoded_per_example"] = rep.throughput.tokens_decoded_per_example;
  s["throughput_examples_per_sec"] = rep.throughput.examples_per_sec;
  if (rep.t_norm) s["t_norm"] = *rep.t_norm;
  s["dataset_sha256"] = data_hash;
  {
    std::ofstream f(out / "summary.json");
    f << s.dump(2) << '\n';
  }
  std::cout << "exact match " << rep.accuracy.exact_match << " on " << rep.n_examples << " examples";
  if (a.generations > 0) std::cout << "; " << rep.throughput.examples_per_sec << " examples/s";
  if (rep.t_norm) std::cout << "; T_norm " << *rep.t_norm;
  std::cout << '\n';
  return kExitOk;
}

}  // namespace

std::string version_string() { return SEQVCR_VERSION; }

int run_cli(int argc, char** argv) {
  Invocation inv{std::vector<std::string>(argv, argv + argc)};
  CLI::App app{"Seq-VCR training laboratory"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "generate a task dataset");
  gen->add_option("--task", ga.task, "mult, arith or lis")->required();
  gen->add_option("--digits", ga.digits, "digits per factor (mult)");
  gen->add_option("--ops", ga.ops, "operator count (arith)");
  gen->add_option("--len", ga.len, "sequence length (lis)");
  gen->add_option("--count", ga.count, "total samples")->capture_default_str();
  gen->add_option("--seed", ga.seed)->capture_default_str();
  gen->add_option("--train-fraction", ga.train_fraction)->capture_default_str();
  gen->add_option("--prime", ga.prime, "modulus for arith")->capture_default_str();
  gen->add_flag("--reverse-digits", ga.reverse_digits, "write numbers least-significant digit first");
  gen->add_option("--out", ga.out, "output directory");
  gen->add_flag("--force", ga.force);

  TrainArgs ta;
  std::map<std::string, std::string> train_flags;
  auto* tr = app.add_subcommand("train", "train one configuration");
  tr->add_option("--config", ta.config_path, "key=value config file");
  tr->add_option("--data", ta.data, "dataset directory");
  tr->add_option("--out", ta.out, "run directory");
  tr->add_option("--resume", ta.resume, "checkpoint to continue from");
  tr->add_flag("--force", ta.force);
  tr->add_option("--dump-batch", ta.dump_batch, "print the first N assembled training sequences and exit");
  tr->add_option("--stop-after", ta.stop_after, "stop and checkpoint after this step");
  for (const auto& key : TrainConfig::keys()) tr->add_option("--" + key, train_flags[key]);
  bool print_defaults = false;
  tr->add_flag("--print-config", print_defaults, "print the resolved configuration and exit");

  ProbeArgs pa;
  auto* pr = app.add_subcommand("probe", "layer-wise matrix entropy of a checkpoint");
  pr->add_option("--checkpoint", pa.checkpoint)->required();
  pr->add_option("--data", pa.data)->required();
  pr->add_option("--out", pa.out);
  pr->add_option("--alpha", pa.alpha)->capture_default_str();
  pr->add_option("--count", pa.count, "sequences to probe")->capture_default_str();
  pr->add_option("--bins", pa.bins)->capture_default_str();
  pr->add_option("--split", pa.split)->capture_default_str();
  pr->add_option("--run-id", pa.run_id);
  pr->add_flag("--drop-pause", pa.drop_pause, "exclude pause-frame positions");
  pr->add_flag("--force", pa.force);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "accuracy and throughput of a checkpoint");
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--data", ea.data)->required();
  ev->add_option("--out", ea.out);
  ev->add_option("--baseline-run", ea.baseline, "eval directory of the baseline run, or 'self'");
  ev->add_option("--count", ea.count, "examples (0 = whole split)")->capture_default_str();
  ev->add_option("--generations", ea.generations, "timed generations per trial (0 skips timing)")->capture_default_str();
  ev->add_option("--warmup", ea.warmup)->capture_default_str();
  ev->add_option("--trials", ea.trials)->capture_default_str();
  ev->add_option("--split", ea.split)->capture_default_str();
  ev->add_option("--run-id", ea.run_id);
  ev->add_flag("--force", ea.force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(ga, inv);
    if (*tr) {
      for (const auto& key : TrainConfig::keys()) {
        if (tr->count("--" + key) > 0) ta.overrides[key] = train_flags[key];
      }
      if (print_defaults) {
        TrainConfig c = ta.data.empty() ? TrainConfig{} : resolve_train_config(ta, read_dataset(ta.data).spec.task);
        std::cout << c.to_text();
        return kExitOk;
      }
      return cmd_train(ta, inv);
    }
    if (*pr) return cmd_probe(pa, inv);
    if (*ev) return cmd_eval(ea, inv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingAborted& e) {
    std::cerr << "training aborted at step " << e.step() << ": " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace seqvcr

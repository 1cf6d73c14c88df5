// ldt: generate instance bundles, train, solve, evaluate and run the property
// suites. Settings resolve as defaults < --config JSON < flags, and every run
// writes a manifest with the resolved values.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ldt/ldt.hpp"

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "ldt 0.1.0";

/// FNV-1a over a file's bytes, as a short content version for manifests.
std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "missing";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

int default_threads() {
  if (const char* v = std::getenv("LDT_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) return n;
  }
  return 1;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ldt::ContractViolation("cannot open config '" + path + "'");
  json j = json::parse(in);
  // A manifest can be fed back as a config file.
  if (j.contains("config") && j.contains("subcommand")) return j.at("config");
  return j;
}

std::vector<ldt::ProblemInstance> read_bundle_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ldt::ContractViolation("cannot open bundle '" + path + "'");
  return ldt::read_bundle(in);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ldt::ContractViolation("cannot write '" + path + "'");
  return out;
}

template <class T>
void apply(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

struct Manifest {
  std::string subcommand;
  json config = json::object();
  std::uint64_t seed = 0;
  json inputs = json::object();
  json outputs = json::object();
  json results = json::object();
  std::string path;

  void input(const std::string& key, const std::string& file) {
    inputs[key] = {{"path", file}, {"version", file_digest(file)}};
  }

  void write() {
    for (auto& [key, entry] : outputs.items()) entry["version"] = file_digest(entry.at("path").get<std::string>());
    json j{{"subcommand", subcommand}, {"tool_version", kToolVersion}, {"seed", seed},
           {"threads", default_threads()}, {"config", config}, {"inputs", inputs},
           {"outputs", outputs}, {"results", results}};
    auto out = open_out(path);
    out << j.dump(2) << '\n';
  }
};

std::string manifest_path(const std::string& flag, const std::string& out, const std::string& sub) {
  if (!flag.empty()) return flag;
  if (!out.empty()) return out + ".manifest.json";
  return "ldt-" + sub + ".manifest.json";
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string domain = "sudoku";
  int count = 100;
  std::uint64_t seed = 0;
  int box_rows = 2;
  int box_cols = 2;
  bool require_search = false;
  int rows = 9;
  int cols = 9;
  int min_len = 10;
  double wall_density = 0.3;
  int K = 1;
  std::string out;
  std::string manifest;
};

int cmd_generate(const GenerateArgs& a) {
  const ldt::Domain domain = ldt::parse_domain(a.domain);
  if (a.count < 0) throw ldt::ContractViolation("count must be >= 0");
  std::vector<ldt::ProblemInstance> bundle;
  Manifest m;
  m.subcommand = "generate";
  m.seed = a.seed;
  if (domain == ldt::Domain::Sudoku) {
    const ldt::SudokuSpec spec{a.box_rows, a.box_cols};
    spec.validate();
    bundle = ldt::generate_sudoku_instances(spec, a.count, a.seed, a.require_search);
    m.config = {{"domain", "sudoku"}, {"count", a.count}, {"box_rows", a.box_rows},
                {"box_cols", a.box_cols}, {"require_search", a.require_search}, {"seed", a.seed}};
  } else {
    const ldt::MazeSpec spec{a.rows, a.cols, a.min_len, a.wall_density};
    spec.validate();
    if (a.K < 1) throw ldt::ContractViolation("K must be >= 1");
    bundle = ldt::generate_maze_instances(spec, a.count, a.K, a.seed);
    m.config = {{"domain", "maze"}, {"count", a.count}, {"rows", a.rows}, {"cols", a.cols},
                {"min_len", a.min_len}, {"wall_density", a.wall_density}, {"K", a.K}, {"seed", a.seed}};
  }
  for (const auto& p : bundle)
    for (const auto& y : p.solutions)
      if (!ldt::verify_solution(p, y)) throw ldt::StructuralError("generated solution fails its oracle: " + p.id);
  {
    auto out = open_out(a.out);
    ldt::write_bundle(out, bundle);
  }
  m.outputs["bundle"] = {{"path", a.out}};
  m.results = {{"instances", bundle.size()}};
  m.path = manifest_path(a.manifest, a.out, "generate");
  m.write();
  std::cout << "wrote " << bundle.size() << " instances to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct ModelFlags {
  std::optional<int> embed_dim, layers, heads, iterations;
  std::optional<double> ffn_multiplier, dropout;
  std::optional<bool> rope2d;

  void add(CLI::App* app) {
    app->add_option("--embed-dim", embed_dim, "Embedding width d");
    app->add_option("--layers", layers, "Transformer layers");
    app->add_option("--heads", heads, "Attention heads");
    app->add_option("--iterations", iterations, "Internal iterations L");
    app->add_option("--ffn-multiplier", ffn_multiplier, "Feed-forward width multiplier");
    app->add_option("--dropout", dropout, "Training dropout rate");
    app->add_option("--rope2d", rope2d, "Use 2D rotary position embeddings");
  }

  void apply_to(ldt::ModelConfig& c) const {
    apply(embed_dim, c.embed_dim);
    apply(layers, c.layers);
    apply(heads, c.heads);
    apply(iterations, c.internal_iterations);
    apply(ffn_multiplier, c.ffn_multiplier);
    apply(dropout, c.dropout_rate);
    apply(rope2d, c.use_rope2d);
  }
};

struct TrainFlags {
  std::optional<int> batch_size, steps, pool_age, K;
  std::optional<double> pool_multiplier, lr, weight_decay, grad_clip, warmup, tau_decide, theta_elim;
  std::optional<bool> augment;

  void add(CLI::App* app) {
    app->add_option("--batch-size", batch_size, "Batch size");
    app->add_option("--steps", steps, "Training steps");
    app->add_option("--pool-multiplier", pool_multiplier, "Pool size as a multiple of the batch");
    app->add_option("--pool-age", pool_age, "Maximum pool age in steps");
    app->add_option("--lr", lr, "Peak learning rate");
    app->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    app->add_option("--grad-clip", grad_clip, "Global gradient norm clip");
    app->add_option("--warmup", warmup, "Warmup fraction");
    app->add_option("--K", K, "Solutions per instance used for supervision");
    app->add_option("--tau-decide", tau_decide, "Branch sampling temperature");
    app->add_option("--theta-elim", theta_elim, "Elimination threshold");
    app->add_option("--augment", augment, "Random symmetry on pool insertion");
  }

  void apply_to(ldt::TrainConfig& c) const {
    apply(batch_size, c.batch_size);
    apply(steps, c.total_steps);
    apply(pool_multiplier, c.pool_multiplier);
    apply(pool_age, c.max_pool_age);
    apply(lr, c.lr);
    apply(weight_decay, c.weight_decay);
    apply(grad_clip, c.grad_clip);
    apply(warmup, c.warmup_fraction);
    apply(K, c.K);
    apply(tau_decide, c.loss.tau_decide);
    apply(theta_elim, c.loss.theta_elim);
    apply(augment, c.dataset_augment);
  }
};

struct InferFlags {
  std::optional<int> slots, chains, budget;
  std::optional<double> theta_elim, theta_cls_eval, tau_decide, eval_dropout;
  std::optional<bool> augment;
  bool paper_protocol = false;
  bool traces = false;

  void add(CLI::App* app) {
    app->add_option("--slots", slots, "Puzzle slots M");
    app->add_option("--chains", chains, "Chains per slot K");
    app->add_option("--budget", budget, "Round budget R per puzzle");
    app->add_option("--theta-elim", theta_elim, "Elimination threshold");
    app->add_option("--theta-cls-eval", theta_cls_eval, "Conflict threshold");
    app->add_option("--tau-decide", tau_decide, "Branch sampling temperature");
    app->add_option("--eval-dropout", eval_dropout, "Dropout rate during inference");
    app->add_option("--augment", augment, "Random symmetry around every step");
    app->add_flag("--paper-protocol", paper_protocol, "Return solutions without the oracle gate");
    app->add_flag("--traces", traces, "Include per-chain traces in the verdict records");
  }

  void apply_to(ldt::InferConfig& c) const {
    apply(slots, c.slots);
    apply(chains, c.chains);
    apply(budget, c.round_budget);
    apply(theta_elim, c.theta_elim);
    apply(theta_cls_eval, c.theta_cls_eval);
    apply(tau_decide, c.tau_decide);
    apply(eval_dropout, c.eval_dropout);
    apply(augment, c.per_step_augment);
    if (paper_protocol) c.verify = false;
    if (traces) c.record_traces = true;
  }
};

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string metrics;
  std::string manifest;
  std::optional<std::uint64_t> seed;
  int checkpoint_every = 0;
  bool quiet = false;
  ModelFlags model;
  TrainFlags train;
};

int cmd_train(const TrainArgs& a) {
  ldt::ModelConfig mc;
  ldt::TrainConfig tc;
  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    if (j.contains("model")) mc = j.at("model").get<ldt::ModelConfig>();
    if (j.contains("train")) tc = j.at("train").get<ldt::TrainConfig>();
  }
  a.model.apply_to(mc);
  a.train.apply_to(tc);
  if (a.seed) {
    mc.seed = *a.seed;
    tc.seed = *a.seed;
  }
  const auto data = read_bundle_file(a.data);
  if (data.empty()) throw ldt::ContractViolation("training bundle is empty");
  mc.shape = data.front().shape();
  mc.validate();
  tc.validate();

  Manifest m;
  m.subcommand = "train";
  m.seed = tc.seed;
  m.config = {{"model", mc}, {"train", tc}};
  m.input("data", a.data);
  if (!a.config.empty()) m.input("config", a.config);

  auto model = ldt::Transformer<float>::init(mc);
  std::ofstream metrics;
  ldt::TrainHooks hooks;
  if (!a.metrics.empty()) {
    metrics = open_out(a.metrics);
    hooks.metrics = &metrics;
  }
  hooks.checkpoint_path = a.out;
  hooks.checkpoint_every = a.checkpoint_every;
  const int report_every = std::max(1, tc.total_steps / 20);
  if (!a.quiet)
    hooks.on_step = [&](const ldt::TrainMetrics& s) {
      if (s.step % report_every == 0 || s.step + 1 == tc.total_steps)
        std::cerr << "step " << s.step << " loss " << s.loss << " solved " << s.solved << " conflicts "
                  << s.conflicts << " depth " << s.depth_mean << '\n';
    };
  const auto summary = ldt::train(model, data, tc, hooks);
  m.outputs["checkpoint"] = {{"path", a.out}};
  if (!a.metrics.empty()) m.outputs["metrics"] = {{"path", a.metrics}};
  m.results = {{"steps", summary.steps.size()},
               {"final_loss", summary.steps.empty() ? 0.0 : summary.steps.back().loss},
               {"audited_steps", summary.audited_steps},
               {"audit_failures", summary.audit_failures},
               {"solved", summary.solved},
               {"conflicts", summary.conflicts}};
  m.path = manifest_path(a.manifest, a.out, "train");
  m.write();
  if (summary.audit_failures != 0) {
    std::cerr << "descent or target audit failed on " << summary.audit_failures << " steps\n";
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SolveArgs {
  std::string config;
  std::string checkpoint;
  std::string puzzles;
  std::string out;
  std::string report;
  std::string costs;
  std::string manifest;
  std::optional<std::uint64_t> seed;
  InferFlags infer;
};

ldt::InferConfig resolve_infer(const SolveArgs& a) {
  ldt::InferConfig ic;
  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    if (j.contains("infer")) ic = j.at("infer").get<ldt::InferConfig>();
  }
  a.infer.apply_to(ic);
  if (a.seed) ic.seed = *a.seed;
  ic.validate();
  return ic;
}

int run_solve(const SolveArgs& a, bool with_report) {
  const ldt::InferConfig ic = resolve_infer(a);
  const auto model = ldt::load_checkpoint(a.checkpoint);
  const auto puzzles = read_bundle_file(a.puzzles);
  if (puzzles.empty()) throw ldt::ContractViolation("puzzle bundle is empty");

  Manifest m;
  m.subcommand = with_report ? "eval" : "solve";
  m.seed = ic.seed;
  m.config = {{"infer", ic}};
  m.input("checkpoint", a.checkpoint);
  m.input("puzzles", a.puzzles);
  if (!a.config.empty()) m.input("config", a.config);

  std::vector<ldt::SolveVerdict> verdicts;
  const auto report = ldt::evaluate(model, std::span<const ldt::ProblemInstance>(puzzles), ic, &verdicts);
  if (!a.out.empty()) {
    auto out = open_out(a.out);
    for (std::size_t i = 0; i < verdicts.size(); ++i) out << ldt::verdict_to_json(puzzles[i], verdicts[i]).dump() << '\n';
    m.outputs["verdicts"] = {{"path", a.out}};
  }
  const json rj = ldt::report_to_json(report);
  if (with_report) {
    if (!a.report.empty()) {
      auto out = open_out(a.report);
      out << rj.dump(2) << '\n';
      m.outputs["report"] = {{"path", a.report}};
    }
    if (!a.costs.empty()) {
      auto out = open_out(a.costs);
      ldt::write_costs_csv(out, puzzles, verdicts);
      m.outputs["costs"] = {{"path", a.costs}};
    }
  }
  m.results = {{"total", report.total},         {"correct", report.correct},
               {"wrong", report.wrong},         {"abstained", report.abstained},
               {"accuracy", report.accuracy()}, {"soundness", report.soundness()},
               {"descent_violations", report.descent_violations}};
  m.path = manifest_path(a.manifest, with_report ? a.report : a.out, m.subcommand);
  m.write();
  std::cout << "solved " << report.correct << "/" << report.total << " correct, " << report.wrong << " wrong, "
            << report.abstained << " abstained; accuracy " << 100 * report.accuracy() << "% soundness "
            << 100 * report.soundness() << "%\n";
  return report.descent_violations == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct CheckArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string manifest;
};

int cmd_check(const CheckArgs& a) {
  std::vector<std::string> suites;
  if (a.suite == "all") suites = ldt::check_suites();
  else suites.push_back(a.suite);
  Manifest m;
  m.subcommand = "check";
  m.seed = a.seed;
  m.config = {{"suite", a.suite}, {"seed", a.seed}};
  bool ok = true;
  for (const auto& s : suites) {
    const auto r = ldt::run_check(s, a.seed);
    ok = ok && r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " (" << std::fixed
              << std::setprecision(2) << r.seconds << " s)\n";
    m.results[r.name] = {{"passed", r.passed}, {"cases", r.cases}, {"failures", r.failures}, {"metric", r.metric},
                         {"detail", r.detail}};
  }
  m.path = manifest_path(a.manifest, "", "check");
  m.write();
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lattice deduction transformer: generate, train, solve, eval, check"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write an instance bundle");
  g->add_option("--domain", gen.domain, "sudoku or maze")->check(CLI::IsMember({"sudoku", "maze"}));
  g->add_option("--count", gen.count, "Number of instances");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--box-rows", gen.box_rows, "Sudoku box rows");
  g->add_option("--box-cols", gen.box_cols, "Sudoku box columns");
  g->add_flag("--require-search", gen.require_search, "Keep only puzzles that singles cannot finish");
  g->add_option("--rows", gen.rows, "Maze rows");
  g->add_option("--cols", gen.cols, "Maze columns");
  g->add_option("--min-len", gen.min_len, "Minimum shortest-path length");
  g->add_option("--wall-density", gen.wall_density, "Wall probability per cell");
  g->add_option("--K", gen.K, "Shortest paths sampled per maze");
  g->add_option("--out", gen.out, "Output bundle (JSON lines)")->required();
  g->add_option("--manifest", gen.manifest, "Manifest path");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a bundle");
  t->add_option("--config", tr.config, "JSON config with model and train sections");
  t->add_option("--data", tr.data, "Training bundle")->required();
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--metrics", tr.metrics, "Per-step metrics (JSON lines)");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Also checkpoint every N steps");
  t->add_option("--seed", tr.seed, "Seed for initialization and training");
  t->add_option("--manifest", tr.manifest, "Manifest path");
  t->add_flag("--quiet", tr.quiet, "No progress lines");
  tr.model.add(t);
  tr.train.add(t);

  SolveArgs so;
  auto* s = app.add_subcommand("solve", "Solve puzzles with a trained model");
  SolveArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a trained model on a test bundle");
  for (auto [cmd, args] : {std::pair{s, &so}, std::pair{e, &ev}}) {
    cmd->add_option("--config", args->config, "JSON config with an infer section");
    cmd->add_option("--checkpoint", args->checkpoint, "Model checkpoint")->required();
    cmd->add_option("--puzzles", args->puzzles, "Puzzle bundle")->required();
    cmd->add_option("--out", args->out, "Verdicts (JSON lines)");
    cmd->add_option("--seed", args->seed, "Inference seed");
    cmd->add_option("--manifest", args->manifest, "Manifest path");
    args->infer.add(cmd);
  }
  e->add_option("--report", ev.report, "Report (JSON)")->required();
  e->add_option("--costs", ev.costs, "Per-puzzle costs (CSV)");

  CheckArgs ck;
  auto* c = app.add_subcommand("check", "Run property and oracle suites");
  c->add_option("--suite", ck.suite, "galois, gradients, oracle, dag or all")
      ->check(CLI::IsMember({"all", "galois", "gradients", "oracle", "dag"}));
  c->add_option("--seed", ck.seed, "Suite seed");
  c->add_option("--manifest", ck.manifest, "Manifest path");

  CLI11_PARSE(app, argc, argv);
  try {
    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) return cmd_train(tr);
    if (s->parsed()) return run_solve(so, false);
    if (e->parsed()) return run_solve(ev, true);
    if (c->parsed()) return cmd_check(ck);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }
  return 0;
}

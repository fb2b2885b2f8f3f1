#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "hcbfill/errors.hpp"
#include "hcbfill/harness.hpp"
#include "hcbfill/oracle.hpp"
#include "hcbfill/remote.hpp"

using namespace hcbfill;

namespace {

constexpr int kExitAborted = 2;
constexpr int kExitFailed = 3;

struct CommonOptions {
  std::string backend = "exact";
  std::optional<std::string> dataset;
  std::string endpoint;
  long timeout_ms = 30000;
  std::size_t batch_size = 64;
  std::size_t alphabet = 3;
  std::size_t length = 6;
  std::uint64_t joint_seed = 1;
  double concentration = 1.0;
  double lambda = 1e-4;
  double delta = 1.0;
  double mask_rate = 0.15;
  std::size_t samples = 100000;
  std::string gap = "2";
  std::size_t num_examples = 100;
  std::size_t beam = 5;
  std::vector<std::string> modes{"hcb"};
  std::vector<std::string> orders{"ltr"};
  std::vector<std::string> pivots;
  std::vector<std::string> ablations{"none"};
  std::vector<double> temperatures;
  std::vector<double> nuclei;
  bool pure = false;
  std::vector<std::size_t> top_k{1, 5};
  std::uint64_t seed = 0;
  std::optional<std::string> out;
  std::string format = "jsonl";
  std::size_t workers = 1;
};

Sequence parse_tokens(const std::string& text) {
  Sequence seq;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 0) {
      throw ConfigError("bad token id '" + item + "' in '" + text + "'");
    }
    seq.push_back(static_cast<TokenId>(v));
  }
  if (seq.empty()) throw ConfigError("empty token list");
  return seq;
}

std::pair<std::size_t, std::size_t> parse_gap(const std::string& text) {
  const auto dash = text.find('-');
  try {
    if (dash == std::string::npos) {
      const auto k = std::stoul(text);
      return {k, k};
    }
    return {std::stoul(text.substr(0, dash)), std::stoul(text.substr(dash + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--gap expects N or N-M, got '" + text + "'");
  }
}

BackendKind parse_backend(const std::string& s) {
  if (s == "exact") return BackendKind::Exact;
  if (s == "empirical") return BackendKind::Empirical;
  if (s == "perturbed") return BackendKind::Perturbed;
  return BackendKind::Remote;
}

ScoringKind parse_mode(const std::string& s) {
  if (s == "standard") return ScoringKind::Standard;
  if (s == "hcb") return ScoringKind::HcbMask;
  return ScoringKind::HcbPivot;
}

Ablation parse_ablation(const std::string& s) {
  if (s == "context") return Ablation::ContextScramble;
  if (s == "token") return Ablation::TokenSwap;
  return Ablation::None;
}

void add_backend_options(CLI::App* app, CommonOptions& o) {
  app->add_option("--backend", o.backend, "Conditional backend")
      ->check(CLI::IsMember({"exact", "empirical", "perturbed", "remote"}));
  app->add_option("--endpoint", o.endpoint,
                  std::string("Model server URL (default: $") + kRemoteUrlEnv + ")");
  app->add_option("--timeout-ms", o.timeout_ms, "Remote request timeout");
  app->add_option("--batch-size", o.batch_size, "Remote queries per request");
  app->add_option("--alphabet", o.alphabet, "Synthetic content alphabet size");
  app->add_option("--length", o.length, "Synthetic sequence length");
  app->add_option("--joint-seed", o.joint_seed, "Seed of the synthetic joint");
  app->add_option("--concentration", o.concentration, "Dirichlet concentration of the joint");
  app->add_option("--lambda", o.lambda, "Mask probability of synthetic backends");
  app->add_option("--delta", o.delta, "Perturbation strength");
  app->add_option("--mask-rate", o.mask_rate, "Empirical estimator masking rate");
  app->add_option("--samples", o.samples, "Empirical estimator training samples");
}

void add_run_options(CLI::App* app, CommonOptions& o) {
  add_backend_options(app, o);
  app->add_option("--dataset", o.dataset, "Dataset file (synthetic: token ids; remote: text)");
  app->add_option("--gap", o.gap, "Gap length N or range N-M");
  app->add_option("--num-examples", o.num_examples, "Number of infilling tasks");
  app->add_option("--beam", o.beam, "Beam size (also the sampler candidate count)");
  app->add_option("--mode", o.modes, "Scoring modes")
      ->check(CLI::IsMember({"standard", "hcb", "hcb-pivot"}));
  app->add_option("--order", o.orders, "Position orders")->check(CLI::IsMember({"ltr", "b2w"}));
  app->add_option("--pivot", o.pivots, "Pivot: one token id or a comma-separated span");
  app->add_option("--ablation", o.ablations, "Ablations applied to hcb methods")
      ->check(CLI::IsMember({"none", "context", "token"}));
  app->add_option("--temperature", o.temperatures, "Add a temperature sampler");
  app->add_option("--nucleus", o.nuclei, "Add a nucleus sampler");
  app->add_flag("--pure", o.pure, "Add a pure sampler");
  app->add_option("--topk", o.top_k, "Top-k accuracies to report");
  app->add_option("--seed", o.seed, "Run seed");
  app->add_option("--out", o.out, "Per-row output file");
  app->add_option("--format", o.format, "Per-row output format")
      ->check(CLI::IsMember({"jsonl", "csv"}));
  app->add_option("--workers", o.workers, "Parallel tasks");
}

ExperimentConfig to_config(const CommonOptions& o) {
  ExperimentConfig cfg;
  cfg.backend.kind = parse_backend(o.backend);
  cfg.backend.alphabet = o.alphabet;
  cfg.backend.length = o.length;
  cfg.backend.joint_seed = o.joint_seed;
  cfg.backend.concentration = o.concentration;
  cfg.backend.mask_mass = o.lambda;
  cfg.backend.strength = o.delta;
  cfg.backend.mask_rate = o.mask_rate;
  cfg.backend.num_samples = o.samples;
  cfg.backend.endpoint = o.endpoint;
  cfg.backend.timeout = std::chrono::milliseconds(o.timeout_ms);
  cfg.backend.batch_size = o.batch_size;
  cfg.dataset_path = o.dataset;
  std::tie(cfg.gap_min, cfg.gap_max) = parse_gap(o.gap);
  cfg.num_examples = o.num_examples;
  cfg.seed = o.seed;
  cfg.top_k = o.top_k;
  cfg.workers = o.workers;
  for (const auto& p : o.pivots) cfg.pivots.push_back(parse_tokens(p));

  for (const auto& mode : o.modes) {
    for (const auto& order : o.orders) {
      for (const auto& abl : o.ablations) {
        const auto kind = parse_mode(mode);
        if (abl != "none" && kind != ScoringKind::HcbMask) continue;
        MethodSpec m;
        m.beam.beam_size = o.beam;
        m.beam.mode.kind = kind;
        m.beam.order = order == "b2w" ? OrderPolicy::best_to_worst() : OrderPolicy::left_to_right();
        m.ablation = parse_ablation(abl);
        if (kind == ScoringKind::HcbPivot) {
          if (cfg.pivots.empty()) throw ConfigError("--mode hcb-pivot needs --pivot");
          m.pivot_pattern = cfg.pivots.front();
        }
        cfg.methods.push_back(std::move(m));
      }
    }
  }
  auto add_sampler = [&](SamplerConfig sc) {
    MethodSpec m;
    m.type = MethodSpec::Type::Sampler;
    m.sampler = sc;
    cfg.methods.push_back(std::move(m));
  };
  if (o.pure) add_sampler(SamplerConfig::pure(o.beam));
  for (double t : o.temperatures) add_sampler(SamplerConfig::with_temperature(t, o.beam));
  for (double p : o.nuclei) add_sampler(SamplerConfig::nucleus(p, o.beam));
  if (cfg.methods.empty()) throw ConfigError("no methods selected");
  return cfg;
}

void write_rows(const CommonOptions& o, const std::vector<ResultRow>& rows) {
  if (!o.out) return;
  std::ofstream out(*o.out);
  if (!out) throw ConfigError("cannot write '" + *o.out + "'");
  if (o.format == "csv") {
    write_rows_csv(out, rows);
  } else {
    write_rows_jsonl(out, rows);
  }
}

void write_summary(const CommonOptions& o, const std::vector<MethodSummary>& summary) {
  write_summary_csv(std::cout, summary);
  if (o.out) {
    std::ofstream out(*o.out + ".summary.csv");
    write_summary_csv(out, summary);
  }
}

int cmd_run(const CommonOptions& o) {
  const auto cfg = to_config(o);
  const auto result = run_experiment(cfg);
  write_rows(o, result.rows);
  write_summary(o, result.summary);
  if (result.skipped_examples) {
    std::cerr << "skipped " << result.skipped_examples << " examples shorter than the gap\n";
  }
  if (result.aborted) {
    std::cerr << "run aborted: more than 10% of rows failed\n";
    return kExitAborted;
  }
  return 0;
}

int cmd_sweep(CommonOptions o) {
  o.modes = {"hcb-pivot"};
  o.ablations = {"none"};
  o.pure = false;
  o.temperatures.clear();
  o.nuclei.clear();
  if (o.pivots.empty()) {
    // Every single-token pivot, mask included.
    if (parse_backend(o.backend) == BackendKind::Remote) {
      throw ConfigError("sweep-pivots on a remote backend needs --pivot");
    }
    for (std::size_t t = 0; t <= o.alphabet; ++t) o.pivots.push_back(std::to_string(t));
  }
  auto cfg = to_config(o);
  const auto rows = pivot_sweep(cfg);
  std::vector<MethodSummary> summary;
  std::cout << "pivot";
  for (std::size_t k : cfg.top_k) std::cout << ",top" << k;
  std::cout << ",mean_bleu,errors\n";
  for (const auto& r : rows) {
    std::string pivot;
    for (std::size_t i = 0; i < r.pivot.size(); ++i) {
      pivot += (i ? "," : "") + std::to_string(r.pivot[i]);
    }
    std::cout << '"' << pivot << '"';
    for (const auto& [k, acc] : r.summary.top_k_accuracy) std::cout << ',' << acc;
    std::cout << ',' << r.summary.mean_bleu << ',' << r.summary.errors << '\n';
    summary.push_back(r.summary);
  }
  if (o.out) {
    std::ofstream out(*o.out);
    write_summary_csv(out, summary);
  }
  return 0;
}

int cmd_check(const CommonOptions& o, std::size_t trials) {
  Rng rng(derive_seed({o.seed, 0xC4}));
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t A = 2 + uniform_index(rng, 4);
    const std::size_t n = 3 + uniform_index(rng, 5);
    const auto joint = JointTable::random(A, n, derive_seed({o.seed, t}));
    Sequence x(n), y(n);
    for (auto& v : x) v = static_cast<TokenId>(uniform_index(rng, A));
    for (auto& v : y) v = static_cast<TokenId>(uniform_index(rng, A));
    worst = std::max(worst, hcb_identity_check(joint, x, y));
  }
  std::cout << "identity_trials," << trials << "\nidentity_max_residual," << worst << '\n';

  auto spec = to_config(o).backend;
  if (spec.kind != BackendKind::Remote) {
    const auto built = make_backend(spec);
    const auto [gmin, gmax] = parse_gap(o.gap);
    const auto data = built.exact->joint().sample(o.num_examples, derive_seed({o.seed, 0xDA7A}));
    const auto tasks = generate_tasks(data, built.exact->vocab(), gmin, gmax, o.num_examples, o.seed);
    const auto ci = ci_residual(*built.backend, *built.exact, tasks);
    std::cout << "ci_residual_mean," << ci.mean << "\nci_residual_max," << ci.max
              << "\nci_residual_kl," << ci.mean_kl << "\nci_queries," << ci.num_queries << '\n';
    std::vector<Sequence> pivots;
    double spread = 0.0;
    for (const auto& lt : tasks) {
      const std::size_t k = lt.task.gap_length();
      pivots.clear();
      for (std::size_t t = 0; t < o.alphabet; ++t) pivots.emplace_back(k, static_cast<TokenId>(t));
      spread = std::max(spread, pivot_spread(*built.backend, lt.task, pivots,
                                             all_completions(built.backend->vocab(), k)));
    }
    std::cout << "pivot_spread_max," << spread << '\n';
  }
  return worst < 1e-9 ? 0 : kExitFailed;
}

int cmd_fit(const CommonOptions& o, const std::vector<std::size_t>& grid) {
  const ExactMarginalModel ref(JointTable::random(o.alphabet, o.length, o.joint_seed, o.concentration),
                               o.lambda);
  const auto [gmin, gmax] = parse_gap(o.gap);
  const auto data = ref.joint().sample(o.num_examples, derive_seed({o.seed, 0xDA7A}));
  const auto tasks = generate_tasks(data, ref.vocab(), gmin, gmax, o.num_examples, o.seed);
  std::cout << "num_samples,contexts,ci_residual_mean,ci_residual_max,ci_residual_kl\n";
  for (std::size_t n : grid) {
    EmpiricalFitOptions opt;
    opt.mask_rate = o.mask_rate;
    opt.num_samples = n;
    opt.mask_mass = o.lambda;
    opt.seed = derive_seed({o.seed, 0xE1});
    const auto corpus = ref.joint().sample(std::max<std::size_t>(n, 1), derive_seed({o.seed, 0xE2}));
    const auto est = EmpiricalMaskedEstimator::fit(corpus, o.alphabet, opt);
    const auto r = ci_residual(est, ref, tasks);
    std::cout << n << ',' << est.num_contexts() << ',' << r.mean << ',' << r.max << ','
              << r.mean_kl << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infilling beam search over masked-language-model conditionals"};
  app.require_subcommand(1);

  CommonOptions run_o, sweep_o, check_o, fit_o;
  std::size_t trials = 1000;
  std::vector<std::size_t> grid{1000, 10000, 100000};

  auto* run = app.add_subcommand("run", "Run infilling methods over a task set");
  add_run_options(run, run_o);

  auto* sweep = app.add_subcommand("sweep-pivots", "HCB-pivot accuracy for each pivot");
  add_run_options(sweep, sweep_o);

  auto* check = app.add_subcommand("check-identities",
                                   "Check the HCB identity and a backend's residuals");
  add_backend_options(check, check_o);
  check->add_option("--trials", trials, "Random joints for the identity check");
  check->add_option("--gap", check_o.gap, "Gap length N or range N-M");
  check->add_option("--num-examples", check_o.num_examples, "Tasks for the residuals");
  check->add_option("--seed", check_o.seed, "Seed");

  auto* fit = app.add_subcommand("fit-empirical",
                                 "Fit the empirical estimator over a sample-size grid");
  fit->add_option("--alphabet", fit_o.alphabet, "Content alphabet size");
  fit->add_option("--length", fit_o.length, "Sequence length");
  fit->add_option("--joint-seed", fit_o.joint_seed, "Seed of the joint");
  fit->add_option("--concentration", fit_o.concentration, "Dirichlet concentration");
  fit->add_option("--lambda", fit_o.lambda, "Mask probability");
  fit->add_option("--mask-rate", fit_o.mask_rate, "Masking rate");
  fit->add_option("--samples", grid, "Training sample counts");
  fit->add_option("--gap", fit_o.gap, "Gap length N or range N-M");
  fit->add_option("--num-examples", fit_o.num_examples, "Tasks for the residual");
  fit->add_option("--seed", fit_o.seed, "Seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_o);
    if (*sweep) return cmd_sweep(sweep_o);
    if (*check) return cmd_check(check_o, trials);
    if (*fit) return cmd_fit(fit_o, grid);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

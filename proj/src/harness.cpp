#include "hcbfill/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "hcbfill/errors.hpp"
#include "hcbfill/oracle.hpp"
#include "hcbfill/remote.hpp"

namespace hcbfill {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Ablations

void MaskProbBuffer::push(double value) {
  values_[cursor_] = value;
  cursor_ = (cursor_ + 1) % kCapacity;
  size_ = std::min(size_ + 1, kCapacity);
}

double MaskProbBuffer::sample(Rng& rng) const {
  if (size_ == 0) throw InvalidInput("sampling from an empty buffer");
  return values_[uniform_index(rng, size_)];
}

ContextScrambleBackend::ContextScrambleBackend(BackendPtr inner,
                                               std::uint64_t seed)
    : BackendDecorator(std::move(inner)), rng_(derive_seed({seed, 0xAB1})) {}

double ContextScrambleBackend::correction_logp(
    std::span<const TokenId> context, std::size_t position,
    const CondDistribution& dist) const {
  const double truth = inner_->correction_logp(context, position, dist);
  std::lock_guard lock(mu_);
  buffer_.push(truth);
  return buffer_.sample(rng_);
}

std::size_t ContextScrambleBackend::buffered() const {
  std::lock_guard lock(mu_);
  return buffer_.size();
}

TokenSwapBackend::TokenSwapBackend(BackendPtr inner, std::uint64_t seed,
                                   std::optional<TokenId> forced_token)
    : BackendDecorator(std::move(inner)),
      forced_(forced_token),
      rng_(derive_seed({seed, 0xAB2})) {
  if (forced_ && (!vocab().contains(*forced_) || vocab().is_special(*forced_))) {
    throw ConfigError("forced swap token must be a content token");
  }
}

double TokenSwapBackend::correction_logp(std::span<const TokenId>,
                                         std::size_t,
                                         const CondDistribution& dist) const {
  const auto& content = vocab().content_ids();
  std::lock_guard lock(mu_);
  const TokenId y =
      forced_ ? *forced_ : content[uniform_index(rng_, content.size())];
  drawn_.push_back(y);
  return dist[y];
}

std::vector<TokenId> TokenSwapBackend::drawn() const {
  std::lock_guard lock(mu_);
  return drawn_;
}

BackendPtr ablation1_wrap(BackendPtr backend, std::uint64_t seed) {
  return std::make_shared<ContextScrambleBackend>(std::move(backend), seed);
}

BackendPtr ablation2_wrap(BackendPtr backend, std::uint64_t seed) {
  return std::make_shared<TokenSwapBackend>(std::move(backend), seed);
}

void MaskProbStats::add(double p) {
  ++count;
  const double delta = p - mean;
  mean += delta / double(count);
  m2 += delta * (p - mean);
}

void MaskProbStats::merge(const MaskProbStats& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  const double n = double(count + other.count);
  const double delta = other.mean - mean;
  mean += delta * double(other.count) / n;
  m2 += other.m2 + delta * delta * double(count) * double(other.count) / n;
  count += other.count;
}

CondDistribution MaskProbRecorder::conditionals(
    std::span<const TokenId> context, std::size_t position) const {
  CondDistribution d = inner_->conditionals(context, position);
  std::lock_guard lock(mu_);
  stats_.add(std::exp(d[vocab().mask_id()]));
  return d;
}

std::vector<CondDistribution> MaskProbRecorder::conditionals_batch(
    std::span<const Query> queries) const {
  auto out = inner_->conditionals_batch(queries);
  std::lock_guard lock(mu_);
  for (const auto& d : out) stats_.add(std::exp(d[vocab().mask_id()]));
  return out;
}

MaskProbStats MaskProbRecorder::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::Exact:
      return "exact";
    case BackendKind::Empirical:
      return "empirical";
    case BackendKind::Perturbed:
      return "perturbed";
    case BackendKind::Remote:
      return "remote";
  }
  return "?";
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::None:
      return "none";
    case Ablation::ContextScramble:
      return "context";
    case Ablation::TokenSwap:
      return "token";
  }
  return "?";
}

namespace {

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string join_tokens(const Sequence& seq, char sep = ' ') {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(seq[i]);
  }
  return out;
}

}  // namespace

std::string MethodSpec::label() const {
  std::string out;
  if (type == Type::Beam) {
    out = to_string(beam.mode.kind);
    if (beam.mode.kind == ScoringKind::HcbPivot) {
      out += "[" + join_tokens(pivot_pattern, ',') + "]";
    }
    out += beam.order.kind == OrderKind::LeftToRight ? "-ltr" : "-b2w";
    out += "-B" + std::to_string(beam.beam_size);
  } else {
    switch (sampler.kind) {
      case SamplerKind::Pure:
        out = "pure";
        break;
      case SamplerKind::Temperature:
        out = "temp" + format_number(sampler.temperature);
        break;
      case SamplerKind::Nucleus:
        out = "nucleus" + format_number(sampler.top_p);
        break;
    }
    out += "-B" + std::to_string(sampler.num_candidates);
  }
  if (ablation != Ablation::None) out += "+" + to_string(ablation);
  return out;
}

void ExperimentConfig::validate() const {
  if (num_examples == 0) throw ConfigError("num_examples must be >= 1");
  if (gap_min == 0 || gap_min > gap_max) throw ConfigError("invalid gap range");
  if (top_k.empty()) throw ConfigError("at least one top-k value required");
  for (auto k : top_k) {
    if (k == 0) throw ConfigError("top-k values must be >= 1");
  }
  for (const auto& m : methods) {
    if (m.type == MethodSpec::Type::Beam) {
      if (m.beam.beam_size == 0) throw ConfigError("beam size must be >= 1");
      if (m.beam.mode.kind == ScoringKind::HcbPivot) {
        if (m.pivot_pattern.empty()) throw ConfigError("hcb-pivot needs --pivot");
        if (m.pivot_pattern.size() != 1 && gap_min != gap_max) {
          throw ConfigError("multi-token pivots need a fixed gap length");
        }
        if (m.pivot_pattern.size() != 1 && m.pivot_pattern.size() != gap_min) {
          throw ConfigError("pivot length must equal the gap length");
        }
      }
      if (m.ablation != Ablation::None &&
          m.beam.mode.kind != ScoringKind::HcbMask) {
        throw ConfigError("ablations apply to hcb (mask) scoring only");
      }
    } else {
      m.sampler.validate();
      if (m.ablation != Ablation::None) {
        throw ConfigError("ablations apply to beam search only");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Backends and data

BuiltBackend make_backend(const BackendSpec& spec) {
  BuiltBackend built;
  if (spec.kind == BackendKind::Remote) {
    RemoteConfig rc = remote_config_from(
        spec.endpoint.empty() ? std::nullopt
                              : std::optional<std::string>(spec.endpoint));
    rc.timeout = spec.timeout;
    rc.batch_size = spec.batch_size;
    built.remote = std::make_shared<RemoteBackend>(rc);
    built.backend = built.remote;
    return built;
  }
  auto joint = JointTable::random(spec.alphabet, spec.length, spec.joint_seed,
                                  spec.concentration);
  built.exact = std::make_shared<ExactMarginalModel>(joint, spec.mask_mass);
  switch (spec.kind) {
    case BackendKind::Exact:
      built.backend = built.exact;
      break;
    case BackendKind::Perturbed:
      built.backend = std::make_shared<PerturbedModel>(
          built.exact, spec.strength, spec.perturb_seed);
      break;
    case BackendKind::Empirical: {
      EmpiricalFitOptions opts;
      opts.mask_rate = spec.mask_rate;
      opts.num_samples = spec.num_samples;
      opts.smoothing = spec.smoothing;
      opts.mask_mass = spec.mask_mass;
      opts.seed = derive_seed({spec.joint_seed, 0xE1});
      const auto corpus = built.exact->joint().sample(
          std::max<std::size_t>(spec.num_samples, 1),
          derive_seed({spec.joint_seed, 0xE2}));
      built.backend = std::make_shared<EmpiricalMaskedEstimator>(
          EmpiricalMaskedEstimator::fit(corpus, spec.alphabet, opts));
      break;
    }
    case BackendKind::Remote:
      break;
  }
  return built;
}

std::vector<Sequence> load_dataset(const std::string& path,
                                   const BuiltBackend& backend) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset '" + path + "'");
  const Vocab& vocab = backend.backend->vocab();
  std::vector<Sequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (backend.remote) {
      out.push_back(backend.remote->tokenize(line));
      continue;
    }
    std::istringstream is(line);
    Sequence seq;
    long long v;
    while (is >> v) {
      if (v < 0 || !vocab.contains(static_cast<TokenId>(v)) ||
          vocab.is_special(static_cast<TokenId>(v))) {
        throw InvalidInput("line " + std::to_string(lineno) +
                           ": token id outside the content vocabulary");
      }
      seq.push_back(static_cast<TokenId>(v));
    }
    if (!is.eof()) {
      throw InvalidInput("line " + std::to_string(lineno) +
                         ": expected space-separated integers");
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<LabeledTask> generate_tasks(const std::vector<Sequence>& dataset,
                                        const Vocab& vocab,
                                        std::size_t gap_min,
                                        std::size_t gap_max,
                                        std::size_t num_examples,
                                        std::uint64_t seed,
                                        std::size_t* skipped) {
  if (dataset.empty()) throw InvalidInput("empty dataset");
  if (gap_min == 0 || gap_min > gap_max) throw InvalidInput("invalid gap range");
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed({seed, 0x7A5}));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
  }

  std::vector<LabeledTask> tasks;
  std::size_t skip = 0;
  std::size_t consecutive_skips = 0;
  for (std::size_t draw = 0; tasks.size() < num_examples; ++draw) {
    const Sequence& ex = dataset[order[draw % order.size()]];
    Rng rng(derive_seed({seed, draw}));
    const std::size_t k = gap_min + uniform_index(rng, gap_max - gap_min + 1);
    std::vector<std::size_t> starts;
    if (ex.size() >= k + 1) {
      for (std::size_t s = 0; s + k <= ex.size(); ++s) {
        bool ok = true;
        for (std::size_t i = s; i < s + k && ok; ++i) {
          ok = vocab.contains(ex[i]) && !vocab.is_special(ex[i]);
        }
        if (ok) starts.push_back(s);
      }
    }
    if (starts.empty()) {
      ++skip;
      if (++consecutive_skips > dataset.size() * 4) {
        throw InvalidInput("no example is long enough for the gap");
      }
      continue;
    }
    consecutive_skips = 0;
    const std::size_t s = starts[uniform_index(rng, starts.size())];
    Sequence truth(ex.begin() + s, ex.begin() + s + k);
    tasks.push_back({GapTask::mask_span(ex, s, s + k, vocab.mask_id()),
                     std::move(truth)});
  }
  if (skipped) *skipped = skip;
  return tasks;
}

// ---------------------------------------------------------------------------
// Running

namespace {

ResultRow run_one(const ExperimentConfig& cfg, const MethodSpec& method,
                  std::size_t method_index, const BackendPtr& backend,
                  const BuiltBackend& built, const LabeledTask& lt,
                  std::size_t task_id, MaskProbStats& mask_stats) {
  ResultRow row;
  row.task_id = task_id;
  row.method_index = method_index;
  row.method = method.label();
  row.gap = lt.task.gap_length();
  auto recorder = std::make_shared<MaskProbRecorder>(backend);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    std::vector<Completion> ranked;
    if (method.type == MethodSpec::Type::Beam) {
      BeamConfig bc = method.beam;
      if (bc.mode.kind == ScoringKind::HcbPivot) {
        bc.mode.pivot = method.pivot_pattern.size() == 1
                            ? Sequence(row.gap, method.pivot_pattern[0])
                            : method.pivot_pattern;
      }
      auto res = infill_beam_search(*recorder, lt.task, bc);
      row.scoring_calls = res.stats.scoring_calls();
      row.probe_calls = res.stats.probe_calls;
      ranked = std::move(res.ranked);
    } else {
      SamplerConfig sc = method.sampler;
      sc.seed = derive_seed({cfg.seed, task_id, method_index});
      auto res = sample_infill(*recorder, lt.task, sc);
      for (auto c : res.calls_per_step) row.scoring_calls += c;
      ranked = collapse_duplicates(std::move(res.ranked));
    }
    std::vector<Sequence> spans;
    for (const auto& c : ranked) {
      spans.push_back(c.span());
      row.scores.push_back(c.score);
    }
    row.record = evaluate(task_id, row.method, lt.truth, std::move(spans));
    if (cfg.oracle_agreement && built.exact && !row.record.predictions.empty()) {
      try {
        const auto exact = enumerate_gap(built.exact->joint(), lt.task);
        row.oracle_agree = row.record.predictions.front() == exact.front().span;
      } catch (const TooLarge&) {
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    row.error = e.what();
    row.record.task_id = task_id;
    row.record.method = row.method;
    row.record.truth = lt.truth;
  }
  row.millis = std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - t0)
                   .count();
  mask_stats = recorder->stats();
  return row;
}

}  // namespace

std::vector<MethodSummary> summarize(const std::vector<ResultRow>& rows,
                                     const std::vector<std::string>& methods,
                                     const std::vector<std::size_t>& top_k) {
  std::vector<MethodSummary> out;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodSummary s;
    s.method = methods[m];
    std::vector<std::size_t> hits(top_k.size(), 0);
    std::size_t ok = 0;
    std::size_t oracle_n = 0;
    std::size_t oracle_hits = 0;
    double bleu = 0.0;
    for (const auto& r : rows) {
      if (r.method_index != m) continue;
      ++s.tasks;
      s.scoring_calls += r.scoring_calls;
      s.probe_calls += r.probe_calls;
      if (r.error) {
        ++s.errors;
        continue;
      }
      ++ok;
      bleu += r.record.bleu;
      for (std::size_t i = 0; i < top_k.size(); ++i) {
        if (r.record.hit_rank && *r.record.hit_rank <= top_k[i]) ++hits[i];
      }
      if (r.oracle_agree) {
        ++oracle_n;
        if (*r.oracle_agree) ++oracle_hits;
      }
    }
    for (std::size_t i = 0; i < top_k.size(); ++i) {
      s.top_k_accuracy.emplace_back(
          top_k[i], ok ? 100.0 * double(hits[i]) / double(ok) : 0.0);
    }
    s.mean_bleu = ok ? bleu / double(ok) : 0.0;
    if (oracle_n) {
      s.oracle_agreement = 100.0 * double(oracle_hits) / double(oracle_n);
    }
    out.push_back(std::move(s));
  }
  return out;
}

ExperimentResult run_methods(const ExperimentConfig& cfg,
                             const BuiltBackend& built,
                             const std::vector<LabeledTask>& tasks) {
  cfg.validate();
  ExperimentResult result;
  std::vector<std::string> labels;
  std::vector<std::vector<MaskProbStats>> mask_stats;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    const MethodSpec& method = cfg.methods[m];
    labels.push_back(method.label());
    BackendPtr backend = built.backend;
    const std::uint64_t ablation_seed = derive_seed({cfg.seed, m, 0xAB});
    if (method.ablation == Ablation::ContextScramble) {
      backend = ablation1_wrap(backend, ablation_seed);
    } else if (method.ablation == Ablation::TokenSwap) {
      backend = ablation2_wrap(backend, ablation_seed);
    }
    std::vector<ResultRow> rows(tasks.size());
    std::vector<MaskProbStats> stats(tasks.size());
    // Ablation wrappers carry state across calls; run them in task order.
    const std::size_t workers =
        method.ablation != Ablation::None
            ? 1
            : std::max<std::size_t>(1, std::min(cfg.workers, tasks.size()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&] {
      for (std::size_t t; (t = next.fetch_add(1)) < tasks.size();) {
        try {
          rows[t] = run_one(cfg, method, m, backend, built, tasks[t], t,
                            stats[t]);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
          next = tasks.size();
        }
      }
    };
    if (workers == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
      for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    for (auto& r : rows) result.rows.push_back(std::move(r));
    mask_stats.push_back(std::move(stats));
  }
  result.summary = summarize(result.rows, labels, cfg.top_k);
  for (std::size_t m = 0; m < result.summary.size(); ++m) {
    for (const auto& s : mask_stats[m]) result.summary[m].mask_prob.merge(s);
  }
  std::size_t errors = 0;
  for (const auto& r : result.rows) errors += r.error.has_value();
  result.aborted = !result.rows.empty() &&
                   double(errors) > 0.10 * double(result.rows.size());
  return result;
}

namespace {

std::vector<LabeledTask> build_tasks(const ExperimentConfig& cfg,
                                     const BuiltBackend& built,
                                     std::size_t* skipped) {
  std::vector<Sequence> data;
  if (cfg.dataset_path) {
    data = load_dataset(*cfg.dataset_path, built);
  } else if (built.exact) {
    data = built.exact->joint().sample(cfg.num_examples,
                                       derive_seed({cfg.seed, 0xDA7A}));
  } else {
    throw ConfigError("a remote backend needs --dataset");
  }
  return generate_tasks(data, built.backend->vocab(), cfg.gap_min, cfg.gap_max,
                        cfg.num_examples, cfg.seed, skipped);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const BuiltBackend built = make_backend(cfg.backend);
  std::size_t skipped = 0;
  const auto tasks = build_tasks(cfg, built, &skipped);
  auto result = run_methods(cfg, built, tasks);
  result.skipped_examples = skipped;
  return result;
}

std::vector<PivotRow> pivot_sweep(const ExperimentConfig& cfg) {
  if (cfg.pivots.empty()) throw ConfigError("pivot sweep needs pivots");
  MethodSpec base;
  if (!cfg.methods.empty() && cfg.methods.front().type == MethodSpec::Type::Beam) {
    base = cfg.methods.front();
  }
  base.ablation = Ablation::None;
  base.beam.mode.kind = ScoringKind::HcbPivot;
  ExperimentConfig sweep = cfg;
  sweep.methods.clear();
  for (const auto& pivot : cfg.pivots) {
    MethodSpec m = base;
    m.pivot_pattern = pivot;
    sweep.methods.push_back(m);
  }
  const auto result = run_experiment(sweep);
  std::vector<PivotRow> rows;
  for (std::size_t i = 0; i < cfg.pivots.size(); ++i) {
    rows.push_back({cfg.pivots[i], result.summary[i]});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.summary.top_k_accuracy.front().second >
           b.summary.top_k_accuracy.front().second;
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Output

void write_rows_jsonl(std::ostream& out, const std::vector<ResultRow>& rows) {
  for (const auto& r : rows) {
    json j;
    j["task_id"] = r.task_id;
    j["method"] = r.method;
    j["gap"] = r.gap;
    j["truth"] = r.record.truth;
    j["predictions"] = r.record.predictions;
    j["scores"] = r.scores;
    j["hit_rank"] = r.record.hit_rank ? json(*r.record.hit_rank) : json(nullptr);
    j["bleu"] = r.record.bleu;
    j["oracle_agree"] = r.oracle_agree ? json(*r.oracle_agree) : json(nullptr);
    j["millis"] = r.millis;
    j["scoring_calls"] = r.scoring_calls;
    j["probe_calls"] = r.probe_calls;
    j["error"] = r.error ? json(*r.error) : json(nullptr);
    out << j.dump() << '\n';
  }
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_rows_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "task_id,method,gap,hit_rank,bleu,oracle_agree,scoring_calls,"
         "probe_calls,millis,truth,top1,error\n";
  for (const auto& r : rows) {
    out << r.task_id << ',' << csv_escape(r.method) << ',' << r.gap << ','
        << (r.record.hit_rank ? std::to_string(*r.record.hit_rank) : "") << ','
        << r.record.bleu << ','
        << (r.oracle_agree ? (*r.oracle_agree ? "1" : "0") : "") << ','
        << r.scoring_calls << ',' << r.probe_calls << ',' << r.millis << ','
        << join_tokens(r.record.truth) << ','
        << (r.record.predictions.empty()
                ? ""
                : join_tokens(r.record.predictions.front()))
        << ',' << csv_escape(r.error.value_or("")) << '\n';
  }
}

void write_summary_csv(std::ostream& out,
                       const std::vector<MethodSummary>& summary) {
  out << "method,tasks,errors";
  if (!summary.empty()) {
    for (const auto& [k, _] : summary.front().top_k_accuracy) {
      out << ",top" << k;
    }
  }
  out << ",mean_bleu,oracle_agreement,scoring_calls,probe_calls,"
         "mask_prob_mean,mask_prob_var\n";
  for (const auto& s : summary) {
    out << csv_escape(s.method) << ',' << s.tasks << ',' << s.errors;
    for (const auto& [_, acc] : s.top_k_accuracy) out << ',' << acc;
    out << ',' << s.mean_bleu << ','
        << (s.oracle_agreement ? format_number(*s.oracle_agreement) : "")
        << ',' << s.scoring_calls << ',' << s.probe_calls << ','
        << s.mask_prob.mean << ',' << s.mask_prob.variance() << '\n';
  }
}

}  // namespace hcbfill

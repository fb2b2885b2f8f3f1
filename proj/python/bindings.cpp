#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "hcbfill/backends.hpp"
#include "hcbfill/errors.hpp"
#include "hcbfill/harness.hpp"
#include "hcbfill/metrics.hpp"
#include "hcbfill/oracle.hpp"
#include "hcbfill/remote.hpp"
#include "hcbfill/sampling.hpp"
#include "hcbfill/scoring.hpp"
#include "hcbfill/search.hpp"
#include "hcbfill/seqcore.hpp"

namespace py = pybind11;
using namespace hcbfill;

namespace {

using PyBackend = std::shared_ptr<ConditionalBackend>;

void register_errors(py::module_& m) {
  // Translators run newest first, so the base is registered before subclasses.
  auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidDistribution>(m, "InvalidDistribution", base);
  py::register_exception<InvalidToken>(m, "InvalidToken", base);
  py::register_exception<InvalidQuery>(m, "InvalidQuery", base);
  py::register_exception<InvalidInput>(m, "InvalidInput", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<TooLarge>(m, "TooLarge", base);
  py::register_exception<BackendUnavailable>(m, "BackendUnavailable", base);
  py::register_exception<ProtocolError>(m, "ProtocolError", base);
  py::register_exception<RunAborted>(m, "RunAborted", base);
}

std::vector<double> to_vector(const CondDistribution& d) {
  return {d.logp().begin(), d.logp().end()};
}

}  // namespace

PYBIND11_MODULE(_hcbfill, m) {
  m.doc() = "Gap infilling with bidirectional conditionals";
  register_errors(m);
  m.attr("REMOTE_URL_ENV") = kRemoteUrlEnv;

  py::class_<Vocab>(m, "Vocab")
      .def_static("synthetic", &Vocab::synthetic, py::arg("alphabet_size"))
      .def("__len__", &Vocab::size)
      .def_property_readonly("mask_id", &Vocab::mask_id)
      .def_property_readonly("content_ids", &Vocab::content_ids)
      .def_property_readonly("special_ids", &Vocab::special_ids)
      .def("token", &Vocab::token)
      .def("find", &Vocab::find);

  py::class_<GapTask>(m, "GapTask")
      .def(py::init<Sequence, std::size_t, std::size_t, TokenId>(),
           py::arg("tokens"), py::arg("span_start"), py::arg("span_end"),
           py::arg("mask_id"))
      .def_static("mask_span", &GapTask::mask_span, py::arg("full"),
                  py::arg("start"), py::arg("end"), py::arg("mask_id"))
      .def_property_readonly("tokens", &GapTask::tokens)
      .def_property_readonly("span_start", &GapTask::span_start)
      .def_property_readonly("span_end", &GapTask::span_end)
      .def_property_readonly("gap_length", &GapTask::gap_length)
      .def_property_readonly("mask_id", &GapTask::mask_id)
      .def("__repr__", [](const GapTask& t) {
        std::ostringstream os;
        os << "GapTask(length=" << t.length() << ", span=[" << t.span_start()
           << ", " << t.span_end() << "))";
        return os.str();
      });

  py::class_<LabeledTask>(m, "LabeledTask")
      .def_readonly("task", &LabeledTask::task)
      .def_readonly("truth", &LabeledTask::truth);

  py::class_<JointTable>(m, "JointTable")
      .def(py::init<std::size_t, std::size_t, std::vector<double>>(),
           py::arg("alphabet_size"), py::arg("length"), py::arg("logp"))
      .def_static("random", &JointTable::random, py::arg("alphabet_size"),
                  py::arg("length"), py::arg("seed"),
                  py::arg("concentration") = 1.0)
      .def_static("uniform", &JointTable::uniform)
      .def_static("point_mass", &JointTable::point_mass)
      .def_property_readonly("alphabet_size", &JointTable::alphabet_size)
      .def_property_readonly("length", &JointTable::length)
      .def_property_readonly("logp", [](const JointTable& j) {
        return std::vector<double>(j.logp().begin(), j.logp().end());
      })
      .def("log_prob",
           [](const JointTable& j, const Sequence& s) { return j.log_prob(s); })
      .def("log_marginal", [](const JointTable& j, const Sequence& pattern) {
        return j.log_marginal(pattern);
      })
      .def("sample", &JointTable::sample, py::arg("count"), py::arg("seed"));

  py::class_<ConditionalBackend, PyBackend>(m, "Backend")
      .def_property_readonly("vocab", &ConditionalBackend::vocab,
                             py::return_value_policy::reference_internal)
      .def_property_readonly("name", &ConditionalBackend::name)
      .def(
          "conditionals",
          [](const ConditionalBackend& b, const Sequence& context,
             std::size_t position) {
            py::gil_scoped_release release;
            return to_vector(b.conditionals(context, position));
          },
          py::arg("context"), py::arg("position"))
      .def(
          "conditionals_batch",
          [](const ConditionalBackend& b,
             const std::vector<std::pair<Sequence, std::size_t>>& queries) {
            std::vector<Query> qs;
            qs.reserve(queries.size());
            for (const auto& [ctx, pos] : queries) qs.push_back({ctx, pos});
            std::vector<CondDistribution> out;
            {
              py::gil_scoped_release release;
              out = b.conditionals_batch(qs);
            }
            std::vector<std::vector<double>> result;
            result.reserve(out.size());
            for (const auto& d : out) result.push_back(to_vector(d));
            return result;
          },
          py::arg("queries"));

  py::class_<ExactMarginalModel, ConditionalBackend,
             std::shared_ptr<ExactMarginalModel>>(m, "ExactMarginalModel")
      .def(py::init<JointTable, double>(), py::arg("joint"),
           py::arg("mask_mass") = 1e-4)
      .def_property_readonly("joint", &ExactMarginalModel::joint,
                             py::return_value_policy::reference_internal)
      .def_property_readonly("mask_mass", &ExactMarginalModel::mask_mass)
      .def(
          "content_conditional",
          [](const ExactMarginalModel& b, const Sequence& context,
             std::size_t position) {
            return b.content_conditional(context, position);
          },
          py::arg("context"), py::arg("position"));

  py::class_<PerturbedModel, ConditionalBackend,
             std::shared_ptr<PerturbedModel>>(m, "PerturbedModel")
      .def(py::init<std::shared_ptr<const ExactMarginalModel>, double,
                    std::uint64_t>(),
           py::arg("base"), py::arg("strength"), py::arg("seed") = 7)
      .def_property_readonly("strength", &PerturbedModel::strength);

  py::class_<EmpiricalMaskedEstimator, ConditionalBackend,
             std::shared_ptr<EmpiricalMaskedEstimator>>(
      m, "EmpiricalMaskedEstimator")
      .def_static(
          "fit",
          [](const std::vector<Sequence>& corpus, std::size_t alphabet_size,
             std::size_t num_samples, double mask_rate, double smoothing,
             double mask_mass, std::uint64_t seed) {
            EmpiricalFitOptions opt;
            opt.num_samples = num_samples;
            opt.mask_rate = mask_rate;
            opt.smoothing = smoothing;
            opt.mask_mass = mask_mass;
            opt.seed = seed;
            py::gil_scoped_release release;
            return std::make_shared<EmpiricalMaskedEstimator>(
                EmpiricalMaskedEstimator::fit(corpus, alphabet_size, opt));
          },
          py::arg("corpus"), py::arg("alphabet_size"), py::arg("num_samples"),
          py::arg("mask_rate") = 0.15, py::arg("smoothing") = 0.5,
          py::arg("mask_mass") = 1e-4, py::arg("seed") = 0)
      .def_property_readonly("num_samples",
                             &EmpiricalMaskedEstimator::num_samples)
      .def_property_readonly("num_contexts",
                             &EmpiricalMaskedEstimator::num_contexts);

  py::class_<RemoteBackend, ConditionalBackend, std::shared_ptr<RemoteBackend>>(
      m, "RemoteBackend")
      .def(py::init([](std::optional<std::string> url, double timeout_s,
                       std::size_t batch_size) {
             RemoteConfig cfg = remote_config_from(std::move(url));
             cfg.timeout = std::chrono::milliseconds(
                 static_cast<long long>(timeout_s * 1000.0));
             cfg.batch_size = batch_size;
             py::gil_scoped_release release;
             return std::make_shared<RemoteBackend>(cfg);
           }),
           py::arg("url") = py::none(), py::arg("timeout") = 30.0,
           py::arg("batch_size") = 64)
      .def("tokenize", &RemoteBackend::tokenize, py::arg("text"),
           py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("model_name", [](const RemoteBackend& b) {
        return b.meta().model_name;
      });

  py::enum_<ScoringKind>(m, "ScoringKind")
      .value("STANDARD", ScoringKind::Standard)
      .value("HCB_MASK", ScoringKind::HcbMask)
      .value("HCB_PIVOT", ScoringKind::HcbPivot);

  py::class_<ScoringMode>(m, "ScoringMode")
      .def(py::init<>())
      .def_static("standard", &ScoringMode::standard)
      .def_static("hcb_mask", &ScoringMode::hcb_mask)
      .def_static("hcb_pivot", &ScoringMode::hcb_pivot, py::arg("pivot"))
      .def_readwrite("kind", &ScoringMode::kind)
      .def_readwrite("pivot", &ScoringMode::pivot)
      .def_readwrite("query_holds_mask", &ScoringMode::query_holds_mask)
      .def("__repr__", [](const ScoringMode& s) {
        return "ScoringMode(" + to_string(s.kind) + ")";
      });

  py::enum_<OrderKind>(m, "OrderKind")
      .value("LEFT_TO_RIGHT", OrderKind::LeftToRight)
      .value("BEST_TO_WORST", OrderKind::BestToWorst);

  py::class_<OrderPolicy>(m, "OrderPolicy")
      .def(py::init<>())
      .def_static("left_to_right", &OrderPolicy::left_to_right)
      .def_static("best_to_worst", &OrderPolicy::best_to_worst)
      .def_readwrite("kind", &OrderPolicy::kind)
      .def_readwrite("per_hypothesis", &OrderPolicy::per_hypothesis)
      .def_readwrite("mode_consistent", &OrderPolicy::mode_consistent);

  py::class_<BeamConfig>(m, "BeamConfig")
      .def(py::init([](std::size_t beam_size, ScoringMode mode,
                       OrderPolicy order) {
             return BeamConfig{beam_size, std::move(mode), order};
           }),
           py::arg("beam_size") = 5, py::arg("mode") = ScoringMode{},
           py::arg("order") = OrderPolicy{})
      .def_readwrite("beam_size", &BeamConfig::beam_size)
      .def_readwrite("mode", &BeamConfig::mode)
      .def_readwrite("order", &BeamConfig::order);

  py::class_<Completion>(m, "Completion")
      .def_readonly("tokens", &Completion::tokens)
      .def_readonly("span_start", &Completion::span_start)
      .def_readonly("span_end", &Completion::span_end)
      .def_readonly("score", &Completion::score)
      .def_readonly("fill_order", &Completion::fill_order)
      .def_readonly("step_scores", &Completion::step_scores)
      .def_property_readonly("span", &Completion::span)
      .def("__repr__", [](const Completion& c) {
        std::ostringstream os;
        os << "Completion(span=[";
        const Sequence s = c.span();
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
        os << "], score=" << c.score << ")";
        return os.str();
      });

  py::class_<SearchStats>(m, "SearchStats")
      .def_readonly("scoring_calls_per_step",
                    &SearchStats::scoring_calls_per_step)
      .def_readonly("probe_calls", &SearchStats::probe_calls)
      .def_property_readonly("scoring_calls", &SearchStats::scoring_calls)
      .def_property_readonly("total_calls", &SearchStats::total_calls);

  py::class_<SearchResult>(m, "SearchResult")
      .def_readonly("ranked", &SearchResult::ranked)
      .def_readonly("stats", &SearchResult::stats);

  m.def(
      "infill_beam_search",
      [](const ConditionalBackend& b, const GapTask& task,
         const BeamConfig& cfg) {
        py::gil_scoped_release release;
        return infill_beam_search(b, task, cfg);
      },
      py::arg("backend"), py::arg("task"), py::arg("config") = BeamConfig{});

  m.def(
      "autoregressive_beam_search",
      [](const ConditionalBackend& b, std::size_t length,
         std::size_t beam_size) {
        py::gil_scoped_release release;
        return autoregressive_beam_search(b, length, beam_size);
      },
      py::arg("backend"), py::arg("length"), py::arg("beam_size"));

  m.def(
      "score_path",
      [](const ConditionalBackend& b, const GapTask& task, const Sequence& span,
         const ScoringMode& mode, const OrderPolicy& order) {
        const Hypothesis h = score_path(b, task, span, mode, order);
        return py::make_tuple(h.score(), h.step_scores(), h.fill_order());
      },
      py::arg("backend"), py::arg("task"), py::arg("span"),
      py::arg("mode") = ScoringMode{}, py::arg("order") = OrderPolicy{},
      "Returns (score, step_scores, fill_order) for one completion.");

  m.def("all_completions", &all_completions, py::arg("vocab"),
        py::arg("gap_length"), py::arg("limit") = 1'000'000);

  py::enum_<SamplerKind>(m, "SamplerKind")
      .value("PURE", SamplerKind::Pure)
      .value("TEMPERATURE", SamplerKind::Temperature)
      .value("NUCLEUS", SamplerKind::Nucleus);

  py::class_<SamplerConfig>(m, "SamplerConfig")
      .def(py::init<>())
      .def_static("pure", &SamplerConfig::pure, py::arg("num_candidates"),
                  py::arg("seed") = 0)
      .def_static("with_temperature", &SamplerConfig::with_temperature,
                  py::arg("temperature"), py::arg("num_candidates"),
                  py::arg("seed") = 0)
      .def_static("nucleus", &SamplerConfig::nucleus, py::arg("top_p"),
                  py::arg("num_candidates"), py::arg("seed") = 0)
      .def_readwrite("kind", &SamplerConfig::kind)
      .def_readwrite("temperature", &SamplerConfig::temperature)
      .def_readwrite("top_p", &SamplerConfig::top_p)
      .def_readwrite("num_candidates", &SamplerConfig::num_candidates)
      .def_readwrite("seed", &SamplerConfig::seed);

  py::class_<SampleResult>(m, "SampleResult")
      .def_readonly("ranked", &SampleResult::ranked)
      .def_readonly("calls_per_step", &SampleResult::calls_per_step);

  m.def(
      "sample_infill",
      [](const ConditionalBackend& b, const GapTask& task,
         const SamplerConfig& cfg) {
        py::gil_scoped_release release;
        return sample_infill(b, task, cfg);
      },
      py::arg("backend"), py::arg("task"), py::arg("config"));

  py::class_<ScoredSpan>(m, "ScoredSpan")
      .def_readonly("span", &ScoredSpan::span)
      .def_readonly("logp", &ScoredSpan::logp);

  py::class_<CiResidual>(m, "CiResidual")
      .def_readonly("mean", &CiResidual::mean)
      .def_readonly("max", &CiResidual::max)
      .def_readonly("mean_kl", &CiResidual::mean_kl)
      .def_readonly("num_queries", &CiResidual::num_queries);

  m.def("enumerate_gap", &enumerate_gap, py::arg("joint"), py::arg("task"));
  m.def("hcb_identity_check", &hcb_identity_check, py::arg("joint"),
        py::arg("x"), py::arg("y"));
  m.def(
      "ci_residual",
      [](const ConditionalBackend& b, const ExactMarginalModel& reference,
         const std::vector<LabeledTask>& tasks) {
        py::gil_scoped_release release;
        return ci_residual(b, reference, tasks);
      },
      py::arg("backend"), py::arg("reference"), py::arg("tasks"));
  m.def(
      "pivot_spread",
      [](const ConditionalBackend& b, const GapTask& task,
         const std::vector<Sequence>& pivots,
         const std::vector<Sequence>& completions) {
        py::gil_scoped_release release;
        return pivot_spread(b, task, pivots, completions);
      },
      py::arg("backend"), py::arg("task"), py::arg("pivots"),
      py::arg("completions"));

  m.def(
      "top_k_hit",
      [](const std::vector<Sequence>& ranked, const Sequence& truth,
         std::size_t k) { return top_k_hit(ranked, truth, k); },
      py::arg("ranked"), py::arg("truth"), py::arg("k"));
  m.def(
      "hit_rank",
      [](const std::vector<Sequence>& ranked, const Sequence& truth) {
        return hit_rank(ranked, truth);
      },
      py::arg("ranked"), py::arg("truth"));
  m.def("bleu_k", &bleu_k, py::arg("candidate"), py::arg("reference"));

  // Experiment harness.
  py::enum_<BackendKind>(m, "BackendKind")
      .value("EXACT", BackendKind::Exact)
      .value("EMPIRICAL", BackendKind::Empirical)
      .value("PERTURBED", BackendKind::Perturbed)
      .value("REMOTE", BackendKind::Remote);

  py::enum_<Ablation>(m, "Ablation")
      .value("NONE", Ablation::None)
      .value("CONTEXT_SCRAMBLE", Ablation::ContextScramble)
      .value("TOKEN_SWAP", Ablation::TokenSwap);

  py::class_<BackendSpec>(m, "BackendSpec")
      .def(py::init<>())
      .def_readwrite("kind", &BackendSpec::kind)
      .def_readwrite("alphabet", &BackendSpec::alphabet)
      .def_readwrite("length", &BackendSpec::length)
      .def_readwrite("joint_seed", &BackendSpec::joint_seed)
      .def_readwrite("concentration", &BackendSpec::concentration)
      .def_readwrite("mask_mass", &BackendSpec::mask_mass)
      .def_readwrite("strength", &BackendSpec::strength)
      .def_readwrite("perturb_seed", &BackendSpec::perturb_seed)
      .def_readwrite("mask_rate", &BackendSpec::mask_rate)
      .def_readwrite("num_samples", &BackendSpec::num_samples)
      .def_readwrite("smoothing", &BackendSpec::smoothing)
      .def_readwrite("endpoint", &BackendSpec::endpoint)
      .def_readwrite("batch_size", &BackendSpec::batch_size);

  py::enum_<MethodSpec::Type>(m, "MethodType")
      .value("BEAM", MethodSpec::Type::Beam)
      .value("SAMPLER", MethodSpec::Type::Sampler);

  py::class_<MethodSpec>(m, "MethodSpec")
      .def(py::init<>())
      .def_static(
          "from_beam",
          [](BeamConfig beam, Sequence pivot_pattern, Ablation ablation) {
            MethodSpec s;
            s.type = MethodSpec::Type::Beam;
            s.beam = std::move(beam);
            s.pivot_pattern = std::move(pivot_pattern);
            s.ablation = ablation;
            return s;
          },
          py::arg("config"), py::arg("pivot_pattern") = Sequence{},
          py::arg("ablation") = Ablation::None)
      .def_static(
          "from_sampler",
          [](SamplerConfig sampler) {
            MethodSpec s;
            s.type = MethodSpec::Type::Sampler;
            s.sampler = sampler;
            return s;
          },
          py::arg("config"))
      .def_readwrite("type", &MethodSpec::type)
      .def_readwrite("beam", &MethodSpec::beam)
      .def_readwrite("sampler", &MethodSpec::sampler)
      .def_readwrite("ablation", &MethodSpec::ablation)
      .def_readwrite("pivot_pattern", &MethodSpec::pivot_pattern)
      .def_property_readonly("label", &MethodSpec::label);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("backend", &ExperimentConfig::backend)
      .def_readwrite("dataset_path", &ExperimentConfig::dataset_path)
      .def_readwrite("gap_min", &ExperimentConfig::gap_min)
      .def_readwrite("gap_max", &ExperimentConfig::gap_max)
      .def_readwrite("num_examples", &ExperimentConfig::num_examples)
      .def_readwrite("methods", &ExperimentConfig::methods)
      .def_readwrite("pivots", &ExperimentConfig::pivots)
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("top_k", &ExperimentConfig::top_k)
      .def_readwrite("workers", &ExperimentConfig::workers)
      .def_readwrite("oracle_agreement", &ExperimentConfig::oracle_agreement)
      .def("validate", &ExperimentConfig::validate);

  py::class_<EvalRecord>(m, "EvalRecord")
      .def_readonly("task_id", &EvalRecord::task_id)
      .def_readonly("method", &EvalRecord::method)
      .def_readonly("truth", &EvalRecord::truth)
      .def_readonly("predictions", &EvalRecord::predictions)
      .def_readonly("hit_rank", &EvalRecord::hit_rank)
      .def_readonly("bleu", &EvalRecord::bleu);

  py::class_<ResultRow>(m, "ResultRow")
      .def_readonly("task_id", &ResultRow::task_id)
      .def_readonly("method_index", &ResultRow::method_index)
      .def_readonly("method", &ResultRow::method)
      .def_readonly("gap", &ResultRow::gap)
      .def_readonly("record", &ResultRow::record)
      .def_readonly("scores", &ResultRow::scores)
      .def_readonly("oracle_agree", &ResultRow::oracle_agree)
      .def_readonly("millis", &ResultRow::millis)
      .def_readonly("scoring_calls", &ResultRow::scoring_calls)
      .def_readonly("probe_calls", &ResultRow::probe_calls)
      .def_readonly("error", &ResultRow::error);

  py::class_<MethodSummary>(m, "MethodSummary")
      .def_readonly("method", &MethodSummary::method)
      .def_readonly("tasks", &MethodSummary::tasks)
      .def_readonly("errors", &MethodSummary::errors)
      .def_readonly("top_k_accuracy", &MethodSummary::top_k_accuracy)
      .def_readonly("mean_bleu", &MethodSummary::mean_bleu)
      .def_readonly("oracle_agreement", &MethodSummary::oracle_agreement)
      .def_readonly("scoring_calls", &MethodSummary::scoring_calls)
      .def_readonly("probe_calls", &MethodSummary::probe_calls)
      .def_property_readonly("mask_prob_mean", [](const MethodSummary& s) {
        return s.mask_prob.mean;
      });

  py::class_<ExperimentResult>(m, "ExperimentResult")
      .def_readonly("rows", &ExperimentResult::rows)
      .def_readonly("summary", &ExperimentResult::summary)
      .def_readonly("skipped_examples", &ExperimentResult::skipped_examples)
      .def_readonly("aborted", &ExperimentResult::aborted)
      .def("summary_csv", [](const ExperimentResult& r) {
        std::ostringstream os;
        write_summary_csv(os, r.summary);
        return os.str();
      })
      .def("rows_jsonl", [](const ExperimentResult& r) {
        std::ostringstream os;
        write_rows_jsonl(os, r.rows);
        return os.str();
      });

  py::class_<PivotRow>(m, "PivotRow")
      .def_readonly("pivot", &PivotRow::pivot)
      .def_readonly("summary", &PivotRow::summary);

  m.def(
      "run_experiment",
      [](const ExperimentConfig& cfg) {
        py::gil_scoped_release release;
        return run_experiment(cfg);
      },
      py::arg("config"));
  m.def(
      "pivot_sweep",
      [](const ExperimentConfig& cfg) {
        py::gil_scoped_release release;
        return pivot_sweep(cfg);
      },
      py::arg("config"));
}

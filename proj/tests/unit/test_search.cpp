#include <cmath>
#include <random>
#include <set>

#include "../support/brute.hpp"
#include "doctest.h"
#include "hcbfill/errors.hpp"
#include "hcbfill/search.hpp"

using namespace hcbfill;

namespace {

struct RandomTask {
  std::shared_ptr<const ExactMarginalModel> model;
  GapTask task;
  Sequence full;
};

RandomTask random_task(std::mt19937_64& rng, std::size_t A, std::size_t n,
                       std::size_t gap, std::uint64_t seed) {
  auto m = std::make_shared<const ExactMarginalModel>(JointTable::random(A, n, seed));
  Sequence full = m->joint().sample(1, seed)[0];
  const std::size_t s = rng() % (n - gap + 1);
  return {m, GapTask::mask_span(full, s, s + gap, static_cast<TokenId>(A)), full};
}

// Cumulative left-to-right objective of `span`, summed step by step.
double ltr_objective(const ConditionalBackend& b, const GapTask& task,
                     const Sequence& span, const ScoringMode& mode) {
  Hypothesis h(task);
  double total = 0.0;
  for (std::size_t i = 0; i < span.size(); ++i) {
    const std::size_t pos = task.span_start() + i;
    const auto s = step_scores(b, task, h, pos, mode);
    total += s[span[i]];
    h = h.fill(pos, span[i], s[span[i]]);
  }
  return total;
}

std::vector<Sequence> spans_of(const SearchResult& r) {
  std::vector<Sequence> out;
  for (const auto& c : r.ranked) out.push_back(c.span());
  return out;
}

std::vector<ScoringMode> all_modes(std::size_t gap, std::size_t A) {
  Sequence pivot(gap);
  for (std::size_t i = 0; i < gap; ++i) pivot[i] = static_cast<TokenId>(i % A);
  return {ScoringMode::standard(), ScoringMode::hcb_mask(), ScoringMode::hcb_pivot(pivot)};
}

// Joint over A^n that factorizes, with position `sharp` concentrated on 0.
JointTable product_joint(std::size_t A, std::size_t n, std::size_t sharp) {
  std::vector<double> lp(static_cast<std::size_t>(std::pow(A, n)));
  for (std::size_t idx = 0; idx < lp.size(); ++idx) {
    const Sequence s = brute::decode(idx, A, n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == sharp) {
        v += s[i] == 0 ? std::log(0.98) : std::log(0.02 / double(A - 1));
      } else {
        v += -std::log(double(A));
      }
    }
    lp[idx] = v;
  }
  const double lse = log_sum_exp(lp);
  for (double& v : lp) v -= lse;
  return JointTable(A, n, lp);
}

}  // namespace

TEST_SUITE("search") {

TEST_CASE("gap of one with a full beam is the argsort of one step") {
  std::mt19937_64 rng(1);
  auto rt = random_task(rng, 4, 5, 1, 3);
  BeamConfig cfg;
  cfg.beam_size = 4;
  const auto r = infill_beam_search(*rt.model, rt.task, cfg);
  const auto s = step_scores(*rt.model, rt.task, Hypothesis(rt.task), rt.task.span_start(),
                             ScoringMode::standard());
  const std::vector<double> content(s.begin(), s.begin() + 4);
  const auto order = brute::argsort_desc(content);
  REQUIRE(r.ranked.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.ranked[i].span() == Sequence{static_cast<TokenId>(order[i])});
    CHECK(r.ranked[i].score == content[order[i]]);
  }
}

TEST_CASE("beam of one is the greedy chain") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto rt = random_task(rng, 3, 6, 3, 50 + trial);
    BeamConfig cfg;
    cfg.beam_size = 1;
    const auto r = infill_beam_search(*rt.model, rt.task, cfg);
    Hypothesis h(rt.task);
    for (std::size_t p = rt.task.span_start(); p < rt.task.span_end(); ++p) {
      const auto s = step_scores(*rt.model, rt.task, h, p, ScoringMode::standard());
      std::size_t best = 0;
      for (std::size_t a = 1; a < 3; ++a) {
        if (s[a] > s[best]) best = a;
      }
      h = h.fill(p, static_cast<TokenId>(best), s[best]);
    }
    REQUIRE(r.ranked.size() == 1);
    CHECK(r.ranked[0].span() == h.span());
    CHECK(r.ranked[0].score == h.score());
  }
}

TEST_CASE("exhaustive standard beam ranks by the exact span probability") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto rt = random_task(rng, 3, 5, 2, 70 + trial);
    BeamConfig cfg;
    cfg.beam_size = 9;
    const auto r = infill_beam_search(*rt.model, rt.task, cfg);
    REQUIRE(r.ranked.size() == 9);
    std::vector<double> exact;
    for (const auto& c : r.ranked) {
      exact.push_back(brute::span_logp(rt.model->joint(), rt.full, rt.task.span_start(),
                                       rt.task.span_end(), c.span()));
    }
    for (std::size_t i = 0; i + 1 < exact.size(); ++i) CHECK(exact[i] >= exact[i + 1]);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(std::abs(r.ranked[i].score - exact[i] - 2 * std::log1p(-1e-4)) < 1e-9);
    }
  }
}

TEST_CASE("position selection") {
  const auto uniform = ExactMarginalModel(JointTable::uniform(3, 5));
  const GapTask task({0, 3, 3, 3, 1}, 1, 4, 3);
  const Hypothesis empty(task);
  std::size_t probes = 0;
  CHECK(select_next_position(uniform, task, empty, OrderPolicy::left_to_right(), {}, &probes) == 1);
  CHECK(probes == 0);
  CHECK(select_next_position(uniform, task, empty, OrderPolicy::best_to_worst(), {}, &probes) == 1);
  CHECK(probes == 3);

  const auto last = empty.fill(1, 0, 0.0).fill(3, 0, 0.0);
  CHECK(select_next_position(uniform, task, last, OrderPolicy::left_to_right()) == 2);
  probes = 0;
  CHECK(select_next_position(uniform, task, last, OrderPolicy::best_to_worst(), {}, &probes) == 2);
  CHECK(probes == 0);

  const ExactMarginalModel sharp(product_joint(3, 5, 3));
  CHECK(select_next_position(sharp, task, empty, OrderPolicy::best_to_worst()) == 3);
}

TEST_CASE("best-to-worst fills the confident position first") {
  const auto m = std::make_shared<const ExactMarginalModel>(product_joint(3, 5, 3));
  const GapTask task({0, 3, 3, 3, 1}, 1, 4, 3);
  BeamConfig cfg;
  cfg.beam_size = 3;
  cfg.order = OrderPolicy::best_to_worst();
  const auto r = infill_beam_search(*m, task, cfg);
  for (const auto& c : r.ranked) CHECK(c.fill_order.front() == 3);
}

TEST_CASE("autoregressive beam search") {
  const auto m = ExactMarginalModel(JointTable::random(4, 1, 5));
  const auto one = autoregressive_beam_search(m, 1, 4);
  const auto d = m.conditionals(Sequence{4}, 0);
  const std::vector<double> content(d.logp().begin(), d.logp().begin() + 4);
  const auto order = brute::argsort_desc(content);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(one.ranked[i].span() == Sequence{static_cast<TokenId>(order[i])});
  }

  const auto m3 = ExactMarginalModel(JointTable::random(2, 3, 6));
  const auto all = autoregressive_beam_search(m3, 3, 8);
  REQUIRE(all.ranked.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& c = all.ranked[i];
    CHECK(std::abs(c.score - m3.joint().log_prob(c.tokens) - 3 * std::log1p(-1e-4)) < 1e-9);
    if (i > 0) CHECK(all.ranked[i - 1].score >= c.score);
  }

  const auto greedy = autoregressive_beam_search(m3, 3, 1);
  Sequence chain;
  Sequence ctx{2, 2, 2};
  for (std::size_t p = 0; p < 3; ++p) {
    const auto q = m3.conditionals(ctx, p);
    const TokenId best = q[0] >= q[1] ? 0 : 1;
    chain.push_back(best);
    ctx[p] = best;
  }
  CHECK(greedy.ranked[0].tokens == chain);
}

TEST_CASE("top-1 score is monotone in the beam size for gaps up to two") {
  // With two steps the final candidates are extensions of a retained set that
  // only grows with B. Longer gaps carry no such guarantee.
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t gap = 1 + trial % 2;
    auto rt = random_task(rng, 3, 6, gap, 200 + trial);
    for (const auto& mode : all_modes(gap, 3)) {
      for (auto order : {OrderPolicy::left_to_right(), OrderPolicy::best_to_worst()}) {
        double prev = -INFINITY;
        for (std::size_t B : {1u, 2u, 4u, 8u}) {
          BeamConfig cfg{B, mode, order};
          const double top = infill_beam_search(*rt.model, rt.task, cfg).ranked[0].score;
          CHECK(top >= prev);
          prev = top;
        }
      }
    }
  }
}

TEST_CASE("exhaustive beam dominates every narrower beam") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto rt = random_task(rng, 3, 6, 3, 250 + trial);
    for (const auto& mode : all_modes(3, 3)) {
      const double best = infill_beam_search(*rt.model, rt.task, {27, mode, {}}).ranked[0].score;
      for (std::size_t B : {1u, 2u, 4u, 8u}) {
        CHECK(infill_beam_search(*rt.model, rt.task, {B, mode, {}}).ranked[0].score <= best);
      }
    }
  }
}

TEST_CASE("exhaustive beam equals enumeration of the objective") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto rt = random_task(rng, 3, 5, 3, 300 + trial);
    const auto completions = all_completions(rt.model->vocab(), 3);
    CHECK(completions.size() == 27);
    for (const auto& mode : all_modes(3, 3)) {
      BeamConfig cfg{27, mode, OrderPolicy::left_to_right()};
      const auto r = infill_beam_search(*rt.model, rt.task, cfg);
      std::vector<std::pair<double, Sequence>> want;
      for (const auto& c : completions) {
        want.emplace_back(ltr_objective(*rt.model, rt.task, c, mode), c);
      }
      std::stable_sort(want.begin(), want.end(), [](const auto& a, const auto& b) {
        return ranks_before(a.first, a.second, b.first, b.second);
      });
      REQUIRE(r.ranked.size() == 27);
      for (std::size_t i = 0; i < 27; ++i) {
        CHECK(r.ranked[i].span() == want[i].second);
        CHECK(r.ranked[i].score == doctest::Approx(want[i].first).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("both orders agree at gap length one") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto rt = random_task(rng, 4, 5, 1, 400 + trial);
    for (const auto& mode : all_modes(1, 4)) {
      const auto a = infill_beam_search(*rt.model, rt.task, {3, mode, OrderPolicy::left_to_right()});
      const auto b = infill_beam_search(*rt.model, rt.task, {3, mode, OrderPolicy::best_to_worst()});
      CHECK(spans_of(a) == spans_of(b));
    }
  }
}

TEST_CASE("hcb mask and standard agree under constant mask mass") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto rt = random_task(rng, 3, 6, 3, 500 + trial);
    for (auto order : {OrderPolicy::left_to_right(), OrderPolicy::best_to_worst()}) {
      const auto a = infill_beam_search(*rt.model, rt.task, {5, ScoringMode::standard(), order});
      const auto b = infill_beam_search(*rt.model, rt.task, {5, ScoringMode::hcb_mask(), order});
      CHECK(spans_of(a) == spans_of(b));
    }
  }
}

TEST_CASE("search is deterministic") {
  std::mt19937_64 rng(8);
  auto rt = random_task(rng, 3, 6, 3, 600);
  const BeamConfig cfg{4, ScoringMode::hcb_mask(), OrderPolicy::best_to_worst()};
  const auto a = infill_beam_search(*rt.model, rt.task, cfg);
  const auto b = infill_beam_search(*rt.model, rt.task, cfg);
  REQUIRE(a.ranked.size() == b.ranked.size());
  for (std::size_t i = 0; i < a.ranked.size(); ++i) {
    CHECK(a.ranked[i].tokens == b.ranked[i].tokens);
    CHECK(a.ranked[i].score == b.ranked[i].score);
    CHECK(a.ranked[i].fill_order == b.ranked[i].fill_order);
  }
}

TEST_CASE("call budget is the number of live hypotheses per step") {
  std::mt19937_64 rng(9);
  auto rt = random_task(rng, 3, 6, 3, 700);
  auto counter = std::make_shared<CallCountingBackend>(rt.model);
  const auto r = infill_beam_search(*counter, rt.task, {5, ScoringMode::standard(), {}});
  CHECK(r.stats.scoring_calls_per_step == std::vector<std::size_t>{1, 3, 5});
  CHECK(r.stats.probe_calls == 0);
  CHECK(counter->calls() == 9);

  counter->reset();
  const auto b2w = infill_beam_search(*counter, rt.task,
                                      {5, ScoringMode::standard(), OrderPolicy::best_to_worst()});
  CHECK(b2w.stats.scoring_calls() == 9);
  // Probes: 3 open slots for 1 hypothesis, then 2 for each of 3.
  CHECK(b2w.stats.probe_calls == 3 + 3 * 2);
  CHECK(counter->calls() == b2w.stats.total_calls());
}

TEST_CASE("global and mode-consistent best-to-worst variants") {
  std::mt19937_64 rng(10);
  auto rt = random_task(rng, 3, 6, 3, 800);
  OrderPolicy global = OrderPolicy::best_to_worst();
  global.per_hypothesis = false;
  OrderPolicy consistent = OrderPolicy::best_to_worst();
  consistent.mode_consistent = true;
  for (const auto& order : {global, consistent}) {
    const auto r = infill_beam_search(*rt.model, rt.task, {5, ScoringMode::hcb_pivot({0, 0, 0}), order});
    REQUIRE(r.ranked.size() == 5);
    std::set<Sequence> distinct;
    for (std::size_t i = 0; i < 5; ++i) {
      distinct.insert(r.ranked[i].span());
      if (i) CHECK(r.ranked[i - 1].score >= r.ranked[i].score);
    }
    CHECK(distinct.size() == 5);
  }
  const auto g = infill_beam_search(*rt.model, rt.task, {5, ScoringMode::standard(), global});
  for (const auto& c : g.ranked) CHECK(c.fill_order == g.ranked[0].fill_order);
}

TEST_CASE("configuration errors") {
  std::mt19937_64 rng(11);
  auto rt = random_task(rng, 3, 5, 2, 900);
  CHECK_THROWS_AS(infill_beam_search(*rt.model, rt.task, {0, {}, {}}), ConfigError);
  CHECK_THROWS_AS(all_completions(Vocab::synthetic(10), 7), TooLarge);
  const auto c = all_completions(Vocab::synthetic(2), 2);
  CHECK(c == std::vector<Sequence>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
}

TEST_CASE("tie-break prefers the lexicographically smaller span") {
  CHECK(ranks_before(-1.0, {1, 1}, -2.0, {0, 0}));
  CHECK(ranks_before(-1.0, {0, 1}, -1.0, {1, 0}));
  CHECK_FALSE(ranks_before(-1.0, {1, 0}, -1.0, {0, 1}));
  const auto u = ExactMarginalModel(JointTable::uniform(2, 3));
  const GapTask task({0, 2, 2}, 1, 3, 2);
  const auto r = infill_beam_search(u, task, {4, {}, {}});
  CHECK(spans_of(r) == std::vector<Sequence>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
}

}  // TEST_SUITE

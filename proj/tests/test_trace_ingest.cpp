#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <vector>

#include "entlens/seeding.hpp"
#include "entlens/trace_ingest.hpp"

using namespace entlens;

namespace {

TraceRecord rec(long step, std::string prompt, std::string token, double h) {
  return {step, std::move(prompt), std::move(token), h};
}

RawTrajectories raw_with(const Anchor& a, std::vector<long> steps) {
  RawTrajectories raw;
  AnchorSeries s;
  for (long st : steps) s.points.push_back({st, 0.1 * static_cast<double>(st)});
  s.occurrences = steps.size();
  raw.emplace(a, s);
  return raw;
}

}  // namespace

TEST(BuildTrajectories, GroupsByAnchorAndSortsSteps) {
  const std::vector<TraceRecord> recs{rec(15, "p", "A", 0.3), rec(5, "p", "A", 0.1),
                                      rec(10, "p", "A", 0.2), rec(5, "q", "A", 0.9)};
  const auto raw = build_trajectories(recs);
  ASSERT_EQ(raw.size(), 2u);
  const auto& a = raw.at(Anchor{"p", "A"});
  ASSERT_EQ(a.points.size(), 3u);
  EXPECT_EQ(a.points[0].step, 5);
  EXPECT_EQ(a.points[2].step, 15);
}

TEST(BuildTrajectories, DuplicatesAreMeanAggregated) {
  const std::vector<TraceRecord> recs{rec(5, "p", "A", 0.2), rec(5, "p", "A", 0.4)};
  const auto raw = build_trajectories(recs);
  const auto& a = raw.at(Anchor{"p", "A"});
  ASSERT_EQ(a.points.size(), 1u);
  EXPECT_EQ(a.points[0].step, 5);
  EXPECT_NEAR(a.points[0].entropy, 0.3, 1e-15);
  EXPECT_EQ(a.occurrences, 2u);
}

TEST(BuildTrajectories, EmptyStream) {
  EXPECT_TRUE(build_trajectories(std::vector<TraceRecord>{}).empty());
}

TEST(BuildTrajectories, CaseSensitiveTokens) {
  const std::vector<TraceRecord> recs{rec(5, "p", "Wait", 0.5), rec(5, "p", "wait", 1.5)};
  EXPECT_EQ(build_trajectories(recs).size(), 2u);
}

TEST(BuildTrajectories, RecordOrderIndependence) {
  Rng rng(4);
  std::vector<TraceRecord> recs;
  for (int i = 0; i < 400; ++i) {
    recs.push_back(rec(5 * static_cast<long>(rng.below(8)), "p" + std::to_string(rng.below(3)),
                       "t" + std::to_string(rng.below(6)), 3.0 * rng.uniform()));
  }
  const auto base = build_trajectories(recs);
  for (int trial = 0; trial < 20; ++trial) {
    for (std::size_t i = recs.size(); i > 1; --i) std::swap(recs[i - 1], recs[rng.below(i)]);
    EXPECT_EQ(build_trajectories(recs), base);
    EXPECT_EQ(filter_and_normalize(build_trajectories(recs), 25), filter_and_normalize(base, 25));
  }
}

TEST(ReadTraceJsonl, ParsesAndReportsBadLines) {
  std::istringstream in(
      "{\"step\": 5, \"prompt_id\": \"p0\", \"token\": \"Wait\", \"entropy\": 0.25}\n"
      "not json\n"
      "\n"
      "{\"step\": 5, \"prompt_id\": \"p0\", \"token\": \"\", \"entropy\": 0.25}\n"
      "{\"step\": -1, \"prompt_id\": \"p0\", \"token\": \"x\", \"entropy\": 0.25}\n"
      "{\"step\": 10, \"prompt_id\": \"p0\", \"token\": \"x\", \"entropy\": -0.1}\n"
      "{\"step\": 10, \"prompt_id\": \"p0\", \"entropy\": 0.1}\n"
      "{\"step\": 10, \"prompt_id\": \"p0\", \"token\": \"x\", \"entropy\": 1.5, \"extra\": 3}\n");
  const auto parsed = read_trace_jsonl(in);
  ASSERT_EQ(parsed.records.size(), 2u);
  EXPECT_EQ(parsed.records[0], (TraceRecord{5, "p0", "Wait", 0.25}));
  EXPECT_EQ(parsed.records[1].step, 10);
  std::vector<std::size_t> lines;
  for (const auto& e : parsed.errors) lines.push_back(e.line);
  EXPECT_EQ(lines, (std::vector<std::size_t>{2, 4, 5, 6, 7}));
}

TEST(ReadTraceJsonl, FieldNamesRoundTrip) {
  const TraceRecord r{12, "prompt-7", "tok3", 0.125};
  EXPECT_EQ(to_json(r).dump(),
            "{\"step\":12,\"prompt_id\":\"prompt-7\",\"token\":\"tok3\",\"entropy\":0.125}");
  std::istringstream in(to_json(r).dump() + "\n");
  EXPECT_EQ(read_trace_jsonl(in).records.at(0), r);
}

TEST(ConvergencePoint, PeakAccuracy) {
  ConvergenceSpec spec;
  spec.mode = ConvergenceMode::PeakAccuracy;
  spec.accuracy_curve = {{5, 0.1}, {10, 0.4}, {15, 0.3}};
  EXPECT_EQ(effective_convergence_point(spec), 10);
  spec.accuracy_curve = {{5, 0.4}, {10, 0.4}, {15, 0.3}};
  EXPECT_EQ(effective_convergence_point(spec), 5);  // earliest on ties
}

TEST(ConvergencePoint, Collapse) {
  ConvergenceSpec spec;
  spec.mode = ConvergenceMode::Collapse;
  spec.accuracy_curve = {{5, 0.2}, {10, 0.0}, {15, 0.0}};
  EXPECT_EQ(effective_convergence_point(spec), 10);
  spec.accuracy_curve = {{5, 0.0}, {10, 0.2}, {15, 0.0}, {20, 0.0}};
  EXPECT_EQ(effective_convergence_point(spec), 15);
  spec.accuracy_curve = {{5, 0.2}, {10, 0.0}, {15, 0.1}};
  EXPECT_THROW(effective_convergence_point(spec), NotFound);
}

TEST(ConvergencePoint, PlateauOnset) {
  ConvergenceSpec spec;
  spec.mode = ConvergenceMode::PlateauOnset;
  spec.plateau_window = 3;
  spec.plateau_delta = 0.02;
  spec.accuracy_curve = {{5, 0.1}, {10, 0.30}, {15, 0.31}, {20, 0.30}, {25, 0.31}};
  EXPECT_EQ(effective_convergence_point(spec), 10);
  spec.accuracy_curve = {{5, 0.1}, {10, 0.2}, {15, 0.3}};
  EXPECT_EQ(effective_convergence_point(spec), 15);  // never flattens: last checkpoint
}

TEST(ConvergencePoint, ExplicitOverrideAndErrors) {
  ConvergenceSpec spec;
  spec.mode = ConvergenceMode::Collapse;
  spec.explicit_step = 40;
  EXPECT_EQ(effective_convergence_point(spec), 40);
  spec.explicit_step.reset();
  EXPECT_THROW(effective_convergence_point(spec), InvalidInput);
}

TEST(FilterAndNormalize, Fixtures) {
  const Anchor a{"p", "A"};
  EXPECT_TRUE(filter_and_normalize(raw_with(a, {5}), 15).empty());

  auto out = filter_and_normalize(raw_with(a, {5, 10, 15}), 15);
  ASSERT_EQ(out.size(), 1u);
  ASSERT_EQ(out[0].points.size(), 3u);
  EXPECT_DOUBLE_EQ(out[0].points[0].t_hat, 5.0 / 15.0);
  EXPECT_DOUBLE_EQ(out[0].points[1].t_hat, 10.0 / 15.0);
  EXPECT_DOUBLE_EQ(out[0].points[2].t_hat, 1.0);

  out = filter_and_normalize(raw_with(a, {5, 10, 20}), 15);
  ASSERT_EQ(out[0].points.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0].points[1].t_hat, 10.0 / 15.0);

  // Truncation can leave a single point, which is then filtered.
  EXPECT_TRUE(filter_and_normalize(raw_with(a, {5, 20, 25}), 15).empty());
  EXPECT_THROW(filter_and_normalize(raw_with(a, {5, 10}), 0), InvalidInput);

  // The step-0 checkpoint would sit at t_hat = 0 and is left out.
  out = filter_and_normalize(raw_with(a, {0, 5, 10}), 10);
  ASSERT_EQ(out[0].points.size(), 2u);
  EXPECT_EQ(out[0].points[0].step, 5);
  EXPECT_TRUE(filter_and_normalize(raw_with(a, {0, 5}), 10).empty());
}

TEST(FilterAndNormalize, InvariantsAndIdempotence) {
  Rng rng(21);
  std::vector<TraceRecord> recs;
  for (int i = 0; i < 600; ++i) {
    recs.push_back(rec(5 * static_cast<long>(1 + rng.below(12)), "p" + std::to_string(rng.below(4)),
                       "t" + std::to_string(rng.below(30)), rng.uniform()));
  }
  const auto raw = build_trajectories(recs);
  for (long conv : {5L, 20L, 35L, 60L, 100L}) {
    const auto once = filter_and_normalize(raw, conv);
    for (const auto& t : once) {
      ASSERT_GE(t.points.size(), 2u);
      for (std::size_t i = 0; i < t.points.size(); ++i) {
        EXPECT_GT(t.points[i].t_hat, 0.0);
        EXPECT_LE(t.points[i].t_hat, 1.0);
        if (i) {
          EXPECT_GT(t.points[i].t_hat, t.points[i - 1].t_hat);
        }
      }
    }
    EXPECT_EQ(refilter(once, conv), once);
  }
}

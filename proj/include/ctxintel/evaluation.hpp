#pragma once

// Scenario datasets, completion scoring, summary statistics and inter-rater
// agreement.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctxintel/agent.hpp"
#include "ctxintel/domain.hpp"
#include "ctxintel/gateway.hpp"

namespace ctxintel {

struct Scenario {
    std::string scenario_id;
    ThreatReport trigger;
    std::string ground_truth;
    bool expected_relevant = false;
};

void to_json(Json& j, const Scenario& v);
void from_json(const Json& j, Scenario& v);

struct DatasetLineError {
    std::size_t line = 0;
    std::string message;
};

struct Dataset {
    std::vector<Scenario> scenarios;
    std::vector<DatasetLineError> errors;
};

/// One JSON scenario per line; blank lines are skipped. Throws
/// DatasetParseError at the first bad line.
std::vector<Scenario> load_dataset(const std::filesystem::path& path);
/// Same format, but bad lines are collected instead of thrown.
Dataset load_dataset_lenient(const std::filesystem::path& path);

/// (1 + cosine(embed(answer), embed(ground_truth))) / 2.
double similarity_score(GenerationGateway& gateway, std::string_view answer, std::string_view ground_truth);

/// Reads a 1..5 grade from judge output: a bare integer, "Score: N", or a JSON
/// object with "score". Returns nullopt when no grade can be found.
std::optional<int> parse_judge_score(std::string_view output);

/// Rubric-graded correctness mapped to (score - 1) / 4. Re-asks once on
/// unparsable output, then throws JudgeParseError.
double judge_correctness(GenerationGateway& gateway, std::string_view answer, std::string_view ground_truth);

struct ScoreRecord {
    std::string scenario_id;
    RunOutcome::Kind outcome_kind = RunOutcome::Kind::Discarded;
    std::optional<double> similarity;   // Contextualized only
    std::optional<double> correctness;  // Contextualized only, when judged
    bool expected_relevant = false;
    std::optional<std::string> error;   // Failed runs or scoring errors
};

void to_json(Json& j, const ScoreRecord& v);

struct SummaryStats {
    std::size_t count = 0;
    double mean = 0, std = 0, min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

void to_json(Json& j, const SummaryStats& v);

/// Sample statistics; std uses n - 1 (0 for a single value); quantiles by
/// linear interpolation between order statistics. Throws EmptyInput.
SummaryStats summarize(std::vector<double> values);

/// Per-metric statistics ("similarity", "correctness") over the records that
/// carry the metric. Throws EmptyInput when `records` is empty.
std::map<std::string, SummaryStats> aggregate(const std::vector<ScoreRecord>& records);

/// Rows are subjects, columns categories, cells rater counts. Throws
/// RaggedMatrix when rows differ in total or raters < 2; DegenerateAgreement
/// when chance agreement is 1 without all mass in one category.
double fleiss_kappa(const std::vector<std::vector<int>>& ratings);

struct GateConfusion {
    int true_positive = 0;   // relevant, contextualized
    int false_positive = 0;  // not relevant, contextualized
    int true_negative = 0;   // not relevant, discarded
    int false_negative = 0;  // relevant, discarded
    int failed = 0;

    double precision() const;  // 1 when nothing was contextualized
    double recall() const;     // 1 when nothing was relevant
};

void to_json(Json& j, const GateConfusion& v);

GateConfusion gate_confusion(const std::vector<ScoreRecord>& records);

struct EvalOptions {
    bool judge = true;
    std::size_t workers = 2;
};

struct EvalReport {
    std::vector<ScoreRecord> records;  // dataset order
    std::map<std::string, SummaryStats> aggregate;
    GateConfusion gate;
    std::vector<DatasetLineError> dataset_errors;
    std::vector<RunResult> runs;       // dataset order
};

/// Runs every scenario through `agent` and scores the contextualized ones.
/// Throws EmptyInput when there are no scenarios.
EvalReport evaluate(const Agent& agent, GenerationGateway& gateway, const std::vector<Scenario>& scenarios,
                    const EvalOptions& options = {});

/// scores.jsonl, aggregate.json and scores.csv.
void write_eval_outputs(const std::filesystem::path& out_dir, const EvalReport& report);

}  // namespace ctxintel

#include "ctxintel/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <regex>
#include <sstream>

#include "ctxintel/retrieval.hpp"
#include "ctxintel/text.hpp"

namespace ctxintel {

namespace fs = std::filesystem;

void to_json(Json& j, const Scenario& v) {
    j = Json{{"scenario_id", v.scenario_id},
             {"trigger", v.trigger},
             {"ground_truth", v.ground_truth},
             {"expected_relevant", v.expected_relevant}};
}

void from_json(const Json& j, Scenario& v) {
    v.scenario_id = j.at("scenario_id").get<std::string>();
    if (text::trim(v.scenario_id).empty()) throw InvalidArgument("scenario_id is empty");
    v.trigger = j.at("trigger").get<ThreatReport>();
    v.expected_relevant = j.at("expected_relevant").get<bool>();
    v.ground_truth = j.contains("ground_truth") && !j["ground_truth"].is_null()
                         ? j["ground_truth"].get<std::string>()
                         : std::string();
    if (v.expected_relevant && text::trim(v.ground_truth).empty())
        throw InvalidArgument("ground_truth is required when expected_relevant is true");
}

namespace {

Scenario parse_scenario_line(const std::string& line, std::size_t n) {
    try {
        return Json::parse(line).get<Scenario>();
    } catch (const nlohmann::json::exception& e) {
        throw DatasetParseError(n, e.what());
    } catch (const Error& e) {
        throw DatasetParseError(n, e.what());
    }
}

template <typename OnScenario, typename OnError>
void scan_dataset(const fs::path& path, OnScenario&& on_scenario, OnError&& on_error) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFound("dataset not found: " + path.string());
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) {
        ++n;
        if (text::trim(line).empty()) continue;
        try {
            on_scenario(parse_scenario_line(line, n));
        } catch (const DatasetParseError& e) {
            on_error(e);
        }
    }
}

double quantile(const std::vector<double>& sorted, double p) {
    const double pos = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string csv_number(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream ss;
    ss.precision(17);
    ss << *v;
    return ss.str();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::vector<Scenario> load_dataset(const fs::path& path) {
    std::vector<Scenario> out;
    scan_dataset(path, [&](Scenario s) { out.push_back(std::move(s)); },
                 [](const DatasetParseError& e) { throw e; });
    return out;
}

Dataset load_dataset_lenient(const fs::path& path) {
    Dataset out;
    scan_dataset(path, [&](Scenario s) { out.scenarios.push_back(std::move(s)); },
                 [&](const DatasetParseError& e) { out.errors.push_back({e.line(), e.what()}); });
    return out;
}

double similarity_score(GenerationGateway& gateway, std::string_view answer, std::string_view ground_truth) {
    if (text::trim(answer).empty() || text::trim(ground_truth).empty())
        throw InvalidArgument("similarity_score needs two nonempty texts");
    const std::vector<std::string> texts{std::string(answer), std::string(ground_truth)};
    const auto v = gateway.embed(texts);
    return std::clamp((1.0 + retrieval::cosine(v[0], v[1])) / 2.0, 0.0, 1.0);
}

std::optional<int> parse_judge_score(std::string_view output) {
    const std::string s(text::trim(output));
    auto in_range = [](long v) -> std::optional<int> {
        if (v >= 1 && v <= 5) return static_cast<int>(v);
        return std::nullopt;
    };
    static const std::regex kBare(R"(^([1-5])(\s*/\s*5)?\.?$)");
    static const std::regex kLabelled(R"(score\W{0,3}([1-5])\b)", std::regex::icase);
    std::smatch m;
    if (std::regex_match(s, m, kBare)) return std::stoi(m[1]);
    if (const auto open = s.find('{'); open != std::string::npos) {
        try {
            const auto j = Json::parse(s.substr(open, s.rfind('}') - open + 1));
            if (j.is_object() && j.contains("score") && j["score"].is_number_integer())
                return in_range(j["score"].get<long>());
        } catch (const nlohmann::json::exception&) {
        }
    }
    if (std::regex_search(s, m, kLabelled)) return std::stoi(m[1]);
    return std::nullopt;
}

double judge_correctness(GenerationGateway& gateway, std::string_view answer, std::string_view ground_truth) {
    Bindings bindings{{"answer", std::string(answer)}, {"ground_truth", std::string(ground_truth)}};
    GenerationRequest request;
    request.template_id = TemplateId::CorrectnessJudge;
    request.prompt = render_prompt(TemplateId::CorrectnessJudge, bindings);
    request.bindings_digest = bindings_digest(bindings);
    const auto first = gateway.complete(request);
    auto score = parse_judge_score(first.text);
    if (!score) {
        request.prompt += "\n\nThe previous answer could not be read as a grade:\n" + first.text +
                          "\n\nReply with one integer from 1 to 5 only.\n";
        bindings["previous_output"] = first.text;
        request.bindings_digest = bindings_digest(bindings);
        score = parse_judge_score(gateway.complete(request).text);
        if (!score) throw JudgeParseError("judge output has no 1-5 grade after re-ask");
    }
    return (*score - 1) / 4.0;
}

void to_json(Json& j, const ScoreRecord& v) {
    j = Json{{"scenario_id", v.scenario_id},
             {"outcome_kind", to_string(v.outcome_kind)},
             {"similarity", v.similarity ? Json(*v.similarity) : Json()},
             {"correctness", v.correctness ? Json(*v.correctness) : Json()},
             {"expected_relevant", v.expected_relevant}};
    if (v.error) j["error"] = *v.error;
}

void to_json(Json& j, const SummaryStats& v) {
    j = Json{{"count", v.count}, {"mean", v.mean},     {"std", v.std}, {"min", v.min},
             {"q1", v.q1},       {"median", v.median}, {"q3", v.q3},   {"max", v.max}};
}

SummaryStats summarize(std::vector<double> values) {
    if (values.empty()) throw EmptyInput("no values to summarize");
    std::sort(values.begin(), values.end());
    SummaryStats s;
    s.count = values.size();
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / (n - 1));
    }
    s.min = values.front();
    s.max = values.back();
    s.q1 = quantile(values, 0.25);
    s.median = quantile(values, 0.5);
    s.q3 = quantile(values, 0.75);
    return s;
}

std::map<std::string, SummaryStats> aggregate(const std::vector<ScoreRecord>& records) {
    if (records.empty()) throw EmptyInput("no score records");
    std::vector<double> similarity, correctness;
    for (const auto& r : records) {
        if (r.similarity) similarity.push_back(*r.similarity);
        if (r.correctness) correctness.push_back(*r.correctness);
    }
    std::map<std::string, SummaryStats> out;
    if (!similarity.empty()) out["similarity"] = summarize(std::move(similarity));
    if (!correctness.empty()) out["correctness"] = summarize(std::move(correctness));
    return out;
}

double fleiss_kappa(const std::vector<std::vector<int>>& ratings) {
    if (ratings.empty()) throw EmptyInput("no subjects");
    const std::size_t categories = ratings.front().size();
    if (categories == 0) throw RaggedMatrix("no categories");
    long raters = -1;
    for (const auto& row : ratings) {
        if (row.size() != categories) throw RaggedMatrix("rows have different category counts");
        long total = 0;
        for (int c : row) {
            if (c < 0) throw RaggedMatrix("negative rater count");
            total += c;
        }
        if (raters < 0) raters = total;
        if (total != raters) throw RaggedMatrix("rows have different rater totals");
    }
    if (raters < 2) throw RaggedMatrix("at least two raters per subject are required");

    const double N = static_cast<double>(ratings.size());
    const double n = static_cast<double>(raters);
    std::vector<double> column(categories, 0.0);
    double p_bar = 0;
    for (const auto& row : ratings) {
        double sq = 0;
        for (std::size_t j = 0; j < categories; ++j) {
            column[j] += row[j];
            sq += static_cast<double>(row[j]) * row[j];
        }
        p_bar += (sq - n) / (n * (n - 1));
    }
    p_bar /= N;
    double p_e = 0;
    for (double c : column) {
        const double p = c / (N * n);
        p_e += p * p;
    }
    if (p_e >= 1.0) {
        const auto nonzero = std::count_if(column.begin(), column.end(), [](double c) { return c > 0; });
        if (nonzero == 1) return 1.0;
        throw DegenerateAgreement("chance agreement is 1");
    }
    return (p_bar - p_e) / (1.0 - p_e);
}

double GateConfusion::precision() const {
    const int predicted = true_positive + false_positive;
    return predicted == 0 ? 1.0 : static_cast<double>(true_positive) / predicted;
}

double GateConfusion::recall() const {
    const int relevant = true_positive + false_negative;
    return relevant == 0 ? 1.0 : static_cast<double>(true_positive) / relevant;
}

void to_json(Json& j, const GateConfusion& v) {
    j = Json{{"true_positive", v.true_positive},   {"false_positive", v.false_positive},
             {"true_negative", v.true_negative},   {"false_negative", v.false_negative},
             {"failed", v.failed},                 {"precision", v.precision()},
             {"recall", v.recall()}};
}

GateConfusion gate_confusion(const std::vector<ScoreRecord>& records) {
    GateConfusion g;
    for (const auto& r : records) {
        switch (r.outcome_kind) {
            case RunOutcome::Kind::Contextualized: (r.expected_relevant ? g.true_positive : g.false_positive)++; break;
            case RunOutcome::Kind::Discarded: (r.expected_relevant ? g.false_negative : g.true_negative)++; break;
            case RunOutcome::Kind::Failed: g.failed++; break;
        }
    }
    return g;
}

EvalReport evaluate(const Agent& agent, GenerationGateway& gateway, const std::vector<Scenario>& scenarios,
                    const EvalOptions& options) {
    if (scenarios.empty()) throw EmptyInput("dataset has no scenarios");
    EvalReport report;
    report.records.resize(scenarios.size());
    report.runs.resize(scenarios.size());

    auto score_one = [&](std::size_t i) {
        const auto& sc = scenarios[i];
        auto run = agent.run(sc.trigger);
        ScoreRecord rec;
        rec.scenario_id = sc.scenario_id;
        rec.expected_relevant = sc.expected_relevant;
        rec.outcome_kind = run.outcome.kind;
        if (run.outcome.kind == RunOutcome::Kind::Failed && run.outcome.failure)
            rec.error = run.outcome.failure->kind + ": " + run.outcome.failure->message;
        if (run.outcome.kind == RunOutcome::Kind::Contextualized && !text::trim(sc.ground_truth).empty()) {
            try {
                rec.similarity = similarity_score(gateway, run.outcome.intel->text, sc.ground_truth);
                if (options.judge) rec.correctness = judge_correctness(gateway, run.outcome.intel->text, sc.ground_truth);
            } catch (const Error& e) {
                rec.error = e.kind() + ": " + e.what();
            }
        }
        report.records[i] = std::move(rec);
        report.runs[i] = std::move(run);
    };

    const std::size_t workers = std::max<std::size_t>(1, options.workers);
    for (std::size_t base = 0; base < scenarios.size(); base += workers) {
        std::vector<std::future<void>> batch;
        for (std::size_t i = base; i < std::min(base + workers, scenarios.size()); ++i)
            batch.push_back(std::async(std::launch::async, score_one, i));
        for (auto& f : batch) f.get();
    }

    report.gate = gate_confusion(report.records);
    report.aggregate = aggregate(report.records);
    return report;
}

void write_eval_outputs(const fs::path& out_dir, const EvalReport& report) {
    fs::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "scores.jsonl", std::ios::binary | std::ios::trunc);
        for (const auto& r : report.records) out << Json(r).dump() << '\n';
    }
    {
        Json agg{{"metrics", report.aggregate}, {"gate", report.gate}, {"scenarios", report.records.size()}};
        agg["dataset_errors"] = Json::array();
        for (const auto& e : report.dataset_errors)
            agg["dataset_errors"].push_back({{"line", e.line}, {"message", e.message}});
        std::ofstream out(out_dir / "aggregate.json", std::ios::binary | std::ios::trunc);
        out << agg.dump(2) << '\n';
    }
    {
        std::ofstream out(out_dir / "scores.csv", std::ios::binary | std::ios::trunc);
        out << "scenario_id,similarity,correctness\n";
        for (const auto& r : report.records)
            out << csv_field(r.scenario_id) << ',' << csv_number(r.similarity) << ',' << csv_number(r.correctness)
                << '\n';
    }
}

}  // namespace ctxintel

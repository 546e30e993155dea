#include <CLI11.hpp>

#include <iostream>

#include "ctxintel/app.hpp"
#include "ctxintel/service.hpp"

using namespace ctxintel;

namespace {

struct SharedFlags {
    std::optional<std::string> config;
    std::vector<std::string> sets;
    std::optional<std::string> llm;
    std::optional<std::string> embedder;
    std::optional<std::string> script;
    std::optional<std::string> feed_fixtures;
    bool live = false;
    std::optional<std::string> cache_dir;
    bool frozen_clock = false;
    bool debug_log = false;

    void add_to(CLI::App& cmd) {
        cmd.add_option("--config", config, "key = value settings file");
        cmd.add_option("--set", sets, "override one setting, key=value (repeatable)");
        cmd.add_option("--llm", llm, "completion backend")->check(CLI::IsMember({"offline", "remote"}));
        cmd.add_option("--embedder", embedder, "embedding backend")->check(CLI::IsMember({"offline", "remote"}));
        cmd.add_option("--script", script, "scripted completions (offline backend)");
        cmd.add_option("--feed-fixtures", feed_fixtures, "serve the vulnerability feed from a fixture directory");
        cmd.add_flag("--live", live, "query the live NVD API");
        cmd.add_option("--cache-dir", cache_dir, "on-disk feed response cache");
        cmd.add_flag("--frozen-clock", frozen_clock, "stamp artifacts with a fixed time");
        cmd.add_flag("--debug-log", debug_log, "log backend exchanges (keys redacted) next to run artifacts");
    }

    Settings resolve() const {
        KeyValues flags;
        if (llm) flags.emplace_back("llm", *llm);
        if (embedder) flags.emplace_back("embedder", *embedder);
        if (script) flags.emplace_back("script", *script);
        if (feed_fixtures) flags.emplace_back("feed_fixtures", *feed_fixtures);
        if (live) flags.emplace_back("feed", "nvd");
        if (cache_dir) flags.emplace_back("cache_dir", *cache_dir);
        if (frozen_clock) flags.emplace_back("frozen_clock", "true");
        if (debug_log) flags.emplace_back("debug_log", "true");
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError(s, "--set expects key=value");
            flags.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        return resolve_settings(config ? std::optional<std::filesystem::path>(*config) : std::nullopt, flags);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contextualizes zero-day threat reports against local organizational knowledge."};
    app.require_subcommand(1);

    SharedFlags shared;

    auto* ingest = app.add_subcommand("ingest", "chunk, embed and index a corpus directory");
    IngestOptions ingest_opts;
    std::string corpus, ingest_index;
    ingest->add_option("--corpus", corpus, "directory of .txt/.md documents")->required();
    ingest->add_option("--index", ingest_index, "index directory")->required();
    shared.add_to(*ingest);

    auto* run = app.add_subcommand("run", "contextualize one trigger");
    RunOptions run_opts;
    std::string run_index, runs_dir = "runs";
    std::optional<std::string> trigger, cve_id;
    run->add_option("--index", run_index, "index directory")->required();
    auto* trig = run->add_option("--trigger", trigger, "ThreatReport JSON file");
    auto* cve = run->add_option("--cve-id", cve_id, "fetch the trigger from the feed");
    trig->excludes(cve);
    cve->excludes(trig);
    run->add_option("--runs-dir", runs_dir, "artifact root")->capture_default_str();
    shared.add_to(*run);

    auto* eval = app.add_subcommand("eval", "run and score a scenario dataset");
    EvalCommandOptions eval_opts;
    std::string eval_index, dataset, out_dir;
    bool no_judge = false;
    eval->add_option("--index", eval_index, "index directory")->required();
    eval->add_option("--dataset", dataset, "scenario JSONL file")->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_flag("--no-judge", no_judge, "skip correctness judging");
    shared.add_to(*eval);

    auto* serve = app.add_subcommand("serve", "serve POST /v1/contextualize and GET /healthz");
    ServeOptions serve_opts;
    std::string serve_index;
    std::optional<std::string> serve_runs;
    serve->add_option("--index", serve_index, "index directory")->required();
    serve->add_option("--host", serve_opts.host, "bind address")->capture_default_str();
    serve->add_option("--port", serve_opts.port, "bind port")->capture_default_str();
    serve->add_option("--runs-dir", serve_runs, "write run artifacts per trigger");
    shared.add_to(*serve);

    CLI11_PARSE(app, argc, argv);

    try {
        const Settings settings = shared.resolve();
        if (*ingest) {
            ingest_opts.corpus_dir = corpus;
            ingest_opts.index_dir = ingest_index;
            return cmd_ingest(settings, ingest_opts, std::cout, std::cerr);
        }
        if (*run) {
            run_opts.index_dir = run_index;
            run_opts.runs_dir = runs_dir;
            if (trigger) run_opts.trigger_file = *trigger;
            run_opts.cve_id = cve_id;
            return cmd_run(settings, run_opts, std::cout, std::cerr);
        }
        if (*eval) {
            eval_opts.index_dir = eval_index;
            eval_opts.dataset = dataset;
            eval_opts.out_dir = out_dir;
            eval_opts.judge = !no_judge;
            return cmd_eval(settings, eval_opts, std::cout, std::cerr);
        }
        if (*serve) {
            serve_opts.index_dir = serve_index;
            if (serve_runs) serve_opts.runs_dir = *serve_runs;
            return cmd_serve(settings, serve_opts, std::cout, std::cerr);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << e.kind() << ": " << e.what() << '\n';
        return kExitFailed;
    }
    return kExitUsage;
}

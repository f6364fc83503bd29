#include "cli.hpp"

#include "cultalign/error.hpp"
#include "cultalign/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace cultalign::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;
    int verbosity = 0;
    bool ping = false;
    std::string prompt_path;
};

void add_common(CLI::App* cmd, Options& opt)
{
    cmd->add_option("--config", opt.config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set,--overrides", opt.overrides, "Override a config value, e.g. de.rng_seed=42")
        ->allow_extra_args(false);
    cmd->add_option("--output", opt.output_dir, "Artifact directory (overrides output_dir)");
    cmd->add_flag("-v", opt.verbosity, "Verbosity; repeat for more");
}

bool is_validation(ErrorKind kind)
{
    return kind == ErrorKind::ConfigError || kind == ErrorKind::MissingQuestion || kind == ErrorKind::OutOfScale;
}

json load_document(const Options& opt)
{
    json doc = harness::read_json_file(opt.config_path);
    harness::apply_overrides(doc, opt.overrides);
    if (!opt.output_dir.empty())
        doc["output_dir"] = fs::absolute(opt.output_dir).string();
    return doc;
}

harness::ExperimentConfig load_config(const Options& opt)
{
    const json doc = load_document(opt);
    auto cfg = harness::config_from_json(doc, fs::path(opt.config_path).parent_path());
    cfg.provenance = {{"config", doc}, {"overrides", opt.overrides}};
    return cfg;
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::ConfigError, "cannot write " + path.string());
    out << text;
}

int cmd_validate(const Options& opt, std::ostream& out)
{
    const json doc = load_document(opt);
    auto problems = harness::validate_config(doc, fs::path(opt.config_path).parent_path());

    if (problems.empty() && opt.ping) {
        const auto cfg = harness::config_from_json(doc, fs::path(opt.config_path).parent_path());
        if (cfg.backend.kind == harness::BackendKind::Remote) {
            try {
                respond::RemoteRespondent client(cfg.backend.remote);
                const long served = client.served_embed_dim();
                if (served != cfg.embed_dim)
                    problems.push_back(fmt::format("DimMismatch: served embed_dim {} vs embed_dim {}", served,
                                                   cfg.embed_dim));
            } catch (const std::exception& e) {
                problems.emplace_back(e.what());
            }
        }
    }

    out << json{{"ok", problems.empty()}, {"diagnostics", problems}}.dump(2) << '\n';
    return problems.empty() ? kSuccess : kValidationFailure;
}

int cmd_eval(const Options& opt, std::ostream& out)
{
    auto cfg = load_config(opt);
    harness::Experiment experiment(cfg);
    const auto& target = experiment.config().dataset.target;

    std::vector<harness::EvaluationReport> reports;
    reports.push_back(experiment.run_naive_baseline());
    if (respond::has_icl_examples(cfg.dataset.country_code))
        reports.push_back(experiment.run_icl_baseline());
    if (!opt.prompt_path.empty())
        reports.push_back(experiment.evaluate_candidate(io::load(opt.prompt_path)).second);

    json doc = json::array();
    for (const auto& r : reports) {
        fmt::print(out, "{:<12} vsm13_loss={:.4f} unparseable={}\n", harness::to_string(r.method), r.vsm13_loss,
                   r.unparseable_count);
        doc.push_back(harness::report_to_json(r, target));
    }
    if (!cfg.output_dir.empty()) {
        fs::create_directories(cfg.output_dir);
        json report{{"reports", doc}, {"config", cfg.provenance}};
        write_file(cfg.output_dir / "report.json", report.dump(2) + "\n");
        write_file(cfg.output_dir / "radar.csv", harness::radar_csv(target, reports));
    }
    return kSuccess;
}

int cmd_optimize(const Options& opt, std::ostream& out)
{
    auto cfg = load_config(opt);
    if (cfg.output_dir.empty())
        cfg.output_dir = "output";
    harness::Experiment experiment(cfg);

    auto observer = [&](const de::GenerationRecord& record, const de::Population<float>&) {
        if (opt.verbosity > 0)
            fmt::print(out, "generation {:>4}  best {:.6f}  mean {:.6f}  {}\n", record.generation,
                       record.best_fitness, record.mean_fitness, record.best_member_digest.substr(0, 12));
        else
            fmt::print(out, "generation {:>4}  best {:.6f}\n", record.generation, record.best_fitness);
        out.flush();
    };
    const auto result = experiment.run_de_experiment(observer);

    fmt::print(out, "initial best {:.6f}  final {:.6f}  generations {}{}\n", result.initial_best_fitness,
               result.report.vsm13_loss, result.history.size(), result.converged ? " (converged)" : "");
    if (opt.verbosity > 1)
        fmt::print(out, "evaluations {}  cache hits {}\n", result.evaluations, result.cache_hits);
    fmt::print(out, "artifacts in {}\n", cfg.output_dir.string());
    return kSuccess;
}

int cmd_ablate(const Options& opt, std::ostream& out)
{
    auto cfg = load_config(opt);
    const auto rows = harness::run_ablation(cfg.ablation, cfg);
    const std::string table = harness::ablation_csv(rows);
    out << table;
    if (!cfg.output_dir.empty()) {
        fs::create_directories(cfg.output_dir);
        write_file(cfg.output_dir / "ablation.csv", table);
    }
    const bool all_failed = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return !r.vsm13_loss; });
    return all_failed ? kRuntimeFailure : kSuccess;
}

int cmd_inspect(const std::string& path, std::ostream& out)
{
    const auto prompt = io::load(path);
    const bool empty = prompt.size() == 0;
    fmt::print(out, "tokens {}\ndim {}\nmin {}\nmax {}\nmean {}\ndigest {}\n", prompt.rows(), prompt.cols(),
               empty ? 0.0f : prompt.minCoeff(), empty ? 0.0f : prompt.maxCoeff(),
               empty ? 0.0 : prompt.cast<double>().mean(), digest(prompt));
    return kSuccess;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Soft-prompt cultural alignment with differential evolution"};
    app.require_subcommand(1);
    Options opt;

    auto* validate = app.add_subcommand("validate", "Check a config and its dataset");
    add_common(validate, opt);
    validate->add_flag("--ping", opt.ping, "Also query a remote backend's model-info");

    auto* eval = app.add_subcommand("eval", "Evaluate the naive and ICL baselines, and optionally a prompt");
    add_common(eval, opt);
    eval->add_option("--prompt", opt.prompt_path, "Soft prompt to evaluate")->check(CLI::ExistingFile);

    auto* optimize = app.add_subcommand("optimize", "Run differential evolution over soft prompts");
    add_common(optimize, opt);

    auto* ablate = app.add_subcommand("ablate", "Run the hyperparameter sweep from the config's ablation block");
    add_common(ablate, opt);

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "Summarize a soft prompt file");
    inspect->add_option("prompt", inspect_path, "Soft prompt file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kValidationFailure;
    }

    try {
        if (*validate)
            return cmd_validate(opt, out);
        if (*eval)
            return cmd_eval(opt, out);
        if (*optimize)
            return cmd_optimize(opt, out);
        if (*ablate)
            return cmd_ablate(opt, out);
        if (*inspect)
            return cmd_inspect(inspect_path, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return is_validation(e.kind()) ? kValidationFailure : kRuntimeFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
    return kRuntimeFailure;
}

} // namespace cultalign::cli

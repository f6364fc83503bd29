#include "cultalign/harness.hpp"

#include "cultalign/error.hpp"

#include <fmt/format.h>

#include <fstream>
#include <random>

namespace cultalign::harness {

using nlohmann::json;

std::string_view to_string(Method method)
{
    switch (method) {
    case Method::Naive: return "Naive";
    case Method::ICL: return "ICL";
    case Method::DEOptimized: return "DEOptimized";
    }
    return "Unknown";
}

std::shared_ptr<respond::RespondentBackend> make_backend(const BackendConfig& cfg, int token_count, int embed_dim)
{
    if (cfg.kind == BackendKind::Remote)
        return std::make_shared<respond::RemoteRespondent>(cfg.remote);

    respond::SyntheticRespondentConfig synthetic;
    synthetic.projection_seed = cfg.projection_seed;
    synthetic.mode = cfg.mode;
    if (cfg.planted_path) {
        synthetic.planted_optimum = io::load(*cfg.planted_path);
    } else if (cfg.planted_seed) {
        std::seed_seq seq{std::uint32_t(*cfg.planted_seed), std::uint32_t(*cfg.planted_seed >> 32),
                          std::uint32_t(token_count), std::uint32_t(embed_dim)};
        std::mt19937_64 rng(seq);
        std::uniform_real_distribution<double> uniform(-cfg.planted_scale, cfg.planted_scale);
        SoftPromptf planted(token_count, embed_dim);
        for (Eigen::Index i = 0; i < planted.size(); ++i)
            planted.data()[i] = static_cast<float>(uniform(rng));
        synthetic.planted_optimum = std::move(planted);
    }
    return std::make_shared<respond::SyntheticRespondent>(std::move(synthetic));
}

Experiment::Experiment(ExperimentConfig cfg, std::shared_ptr<respond::RespondentBackend> backend)
    : _cfg(std::move(cfg)), _backend(std::move(backend))
{
    if (_cfg.token_count < 1 || _cfg.embed_dim < 1)
        throw Error(ErrorKind::ConfigError, "token_count and embed_dim must be ≥ 1");
    if (_cfg.samples_per_question < 1)
        throw Error(ErrorKind::ConfigError, "samples_per_question must be ≥ 1");
    if (!_backend)
        _backend = make_backend(_cfg.backend, _cfg.token_count, _cfg.embed_dim);
    _instruction = respond::build_instruction(_cfg.persona_text);

    if (_cfg.target_from_planted) {
        const auto* synthetic = dynamic_cast<const respond::SyntheticRespondent*>(_backend.get());
        if (!synthetic)
            throw Error(ErrorKind::ConfigError, "target_from_planted requires the synthetic backend");
        const SoftPromptf planted = synthetic->config().planted_optimum.value_or(
            SoftPromptf::Zero(_cfg.token_count, _cfg.embed_dim));
        _cfg.dataset.target = collect(planted, Method::DEOptimized).dimensions;
    }
}

EvaluationReport Experiment::collect(const SoftPromptf& prompt, Method method)
{
    const bool strict = _cfg.unparseable_policy == UnparseablePolicy::Strict;
    std::vector<std::pair<int, double>> raw;
    raw.reserve(_cfg.dataset.questions.size() * std::size_t(_cfg.samples_per_question));
    int unparseable = 0;

    for (const auto& question : _cfg.dataset.questions) {
        vsm::SurveyQuestion asked = question;
        if (method == Method::ICL)
            asked.text = respond::build_icl_prompt(_cfg.dataset.country_code, question);
        const std::string context = "question " + std::to_string(question.index);

        auto ask = [&]() -> double {
            try {
                return _backend->answer(prompt, _instruction, asked);
            } catch (const Error&) {
                throw;
            } catch (const std::exception& e) {
                throw Error(ErrorKind::BackendError, e.what());
            }
        };

        for (int k = 0; k < _cfg.samples_per_question; ++k) {
            try {
                raw.emplace_back(question.index, ask());
                continue;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::UnparseableAnswer)
                    throw e.with_context(context);
            }
            ++unparseable;
            if (strict)
                continue;
            try {
                raw.emplace_back(question.index, ask());
                --unparseable;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::UnparseableAnswer)
                    throw e.with_context(context);
                raw.emplace_back(question.index, question.midpoint());
            }
        }
    }
    if (strict && unparseable > 0)
        throw Error(ErrorKind::UnparseableAnswer,
                    std::to_string(unparseable) + " of " + std::to_string(raw.size() + std::size_t(unparseable))
                        + " answers unparseable");

    EvaluationReport report;
    report.method = method;
    report.responses = vsm::aggregate_responses(raw, _cfg.dataset.questions);
    report.dimensions = vsm::compute_dimensions(report.responses, _cfg.dataset.constants);
    report.vsm13_loss = vsm::l1_fitness(report.dimensions, _cfg.dataset.target);
    report.unparseable_count = unparseable;
    return report;
}

std::pair<double, EvaluationReport> Experiment::evaluate_candidate(const SoftPromptf& prompt, Method method)
{
    auto report = collect(prompt, method);
    return {report.vsm13_loss, std::move(report)};
}

EvaluationReport Experiment::run_naive_baseline()
{
    return collect(SoftPromptf(0, _cfg.embed_dim), Method::Naive);
}

EvaluationReport Experiment::run_icl_baseline()
{
    if (!respond::has_icl_examples(_cfg.dataset.country_code))
        throw Error(ErrorKind::UnknownCountry, _cfg.dataset.country_code);
    return collect(SoftPromptf(0, _cfg.embed_dim), Method::ICL);
}

double Experiment::fitness(const SoftPromptf& prompt)
{
    const bool use_cache = _cfg.cache_fitness && _backend->deterministic();
    std::string key;
    if (use_cache) {
        key = digest(prompt);
        std::lock_guard lock(_cache_mutex);
        if (const auto it = _cache.find(key); it != _cache.end()) {
            ++_cache_hits;
            return it->second;
        }
    }

    double f;
    try {
        f = collect(prompt, Method::DEOptimized).vsm13_loss;
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::UnparseableAnswer)
            throw;
        f = std::numeric_limits<double>::infinity();
    }

    if (use_cache) {
        std::lock_guard lock(_cache_mutex);
        _cache.emplace(std::move(key), f);
    }
    return f;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::ConfigError, "cannot write " + path.string());
    out << text;
}

} // namespace

DEResult Experiment::run_de_experiment(const de::GenerationObserver<float>& observer)
{
    const bool persist = !_cfg.output_dir.empty();
    const auto prompt_path = _cfg.output_dir / "best_prompt.bin";

    std::vector<SoftPromptf> seeds;
    if (persist && _cfg.resume && std::filesystem::exists(prompt_path))
        seeds.push_back(io::load(prompt_path));
    for (const auto& path : _cfg.seed_prompts)
        if (seeds.size() < std::size_t(_cfg.de.population_size))
            seeds.push_back(io::load(path));

    auto population = de::init_population<float>(_cfg.de, _cfg.token_count, _cfg.embed_dim, seeds);

    std::ofstream history;
    if (persist) {
        std::filesystem::create_directories(_cfg.output_dir);
        history.open(_cfg.output_dir / "history.jsonl", std::ios::trunc);
        if (!history)
            throw Error(ErrorKind::ConfigError, "cannot write history in " + _cfg.output_dir.string());
    }

    // evolve calls the observer from its own thread between generations, so
    // all artifact writes are serialized here
    auto on_generation = [&](const de::GenerationRecord& record, const de::Population<float>& pop) {
        if (persist) {
            history << history_line(record).dump() << '\n' << std::flush;
            io::save(prompt_path, pop.best());
        }
        if (observer)
            observer(record, pop);
    };

    const std::size_t hits_before = _cache_hits;
    auto evolved = de::evolve<float>(std::move(population), [this](const SoftPromptf& v) { return fitness(v); },
                                     _cfg.de, on_generation);

    DEResult result;
    result.best = std::move(evolved.best);
    result.best_fitness = evolved.best_fitness;
    result.initial_best_fitness = evolved.initial_best_fitness;
    result.history = std::move(evolved.history);
    result.converged = evolved.converged;
    result.evaluations = evolved.evaluations;
    result.cache_hits = _cache_hits - hits_before;
    result.report = collect(result.best, Method::DEOptimized);

    if (persist) {
        io::save(prompt_path, result.best);
        json doc = report_to_json(result.report, _cfg.dataset.target);
        doc["training_best_fitness"] = result.best_fitness;
        doc["initial_best_fitness"] = result.initial_best_fitness;
        doc["generations"] = result.history.size();
        doc["converged"] = result.converged;
        doc["evaluations"] = result.evaluations;
        doc["cache_hits"] = result.cache_hits;
        doc["best_prompt_digest"] = digest(result.best);
        doc["config"] = _cfg.provenance;
        write_text(_cfg.output_dir / "report.json", doc.dump(2) + "\n");
        write_text(_cfg.output_dir / "radar.csv", radar_csv(_cfg.dataset.target, {result.report}));
    }
    return result;
}

// Ablation

std::vector<AblationRow> ablation_settings(const AblationGrid& grid)
{
    if (grid.token_counts.empty() || grid.mutation_rates.empty() || grid.recombination_rates.empty()
        || grid.population_sizes.empty())
        throw Error(ErrorKind::ConfigError, "ablation grid has an empty value list");

    std::vector<AblationRow> rows;
    if (grid.sampling == Sampling::Exhaustive) {
        for (int tokens : grid.token_counts)
            for (double mr : grid.mutation_rates)
                for (double cr : grid.recombination_rates)
                    for (int pop : grid.population_sizes)
                        rows.push_back({int(rows.size()) + 1, tokens, mr, cr, pop, std::nullopt, {}});
        return rows;
    }

    if (grid.trials < 1)
        throw Error(ErrorKind::ConfigError, "random ablation needs trials ≥ 1");
    std::mt19937_64 rng(grid.seed);
    auto draw = [&rng](const auto& values) {
        std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
        return values[pick(rng)];
    };
    for (int i = 1; i <= grid.trials; ++i) {
        AblationRow row;
        row.exp_no = i;
        row.tokens = draw(grid.token_counts);
        row.mutation_rate = draw(grid.mutation_rates);
        row.recombination_rate = draw(grid.recombination_rates);
        row.population_size = draw(grid.population_sizes);
        rows.push_back(row);
    }
    return rows;
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const ExperimentConfig& base,
                                      std::shared_ptr<respond::RespondentBackend> backend)
{
    auto rows = ablation_settings(grid);
    for (auto& row : rows) {
        ExperimentConfig cfg = base;
        cfg.token_count = row.tokens;
        cfg.de.mutation_rate = row.mutation_rate;
        cfg.de.recombination_rate = row.recombination_rate;
        cfg.de.population_size = row.population_size;
        cfg.output_dir.clear();
        cfg.resume = false;
        cfg.seed_prompts.clear();
        try {
            Experiment experiment(std::move(cfg), backend);
            row.vsm13_loss = experiment.run_de_experiment().report.vsm13_loss;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    }
    return rows;
}

// Artifacts

namespace {

std::string csv_field(const std::string& value)
{
    if (value.find_first_of(",\"\n") == std::string::npos)
        return value;
    std::string quoted = "\"";
    for (char c : value) {
        if (c == '"')
            quoted += '"';
        quoted += c;
    }
    return quoted + "\"";
}

} // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows)
{
    std::string out = "exp_no,tokens,mutation_rate,recombination_rate,population_size,vsm13_loss\n";
    for (const auto& row : rows) {
        const std::string loss = row.vsm13_loss ? fmt::format("{}", *row.vsm13_loss) : csv_field("ERROR: " + row.error);
        out += fmt::format("{},{},{},{},{},{}\n", row.exp_no, row.tokens, row.mutation_rate, row.recombination_rate,
                           row.population_size, loss);
    }
    return out;
}

std::string radar_csv(const vsm::CulturalDimensions& target, const std::vector<EvaluationReport>& reports)
{
    std::string out = "method,pdi,idv,mas,uai,lto,ivr\n";
    auto line = [&out](std::string_view name, const vsm::CulturalDimensions& d) {
        out += fmt::format("{},{},{},{},{},{},{}\n", name, d.pdi, d.idv, d.mas, d.uai, d.lto, d.ivr);
    };
    line("Target", target);
    for (const auto& r : reports)
        line(to_string(r.method), r.dimensions);
    return out;
}

json history_line(const de::GenerationRecord& record)
{
    return {{"generation", record.generation},
            {"best_fitness", record.best_fitness},
            {"mean_fitness", record.mean_fitness},
            {"best_member_digest", record.best_member_digest}};
}

json report_to_json(const EvaluationReport& report, const vsm::CulturalDimensions& target)
{
    json responses = json::object();
    for (int q = 1; q <= vsm::kQuestionCount; ++q)
        responses[std::to_string(q)] = {{"values", report.responses.responses(q)}, {"mean", report.responses.mean(q)}};
    return {{"method", to_string(report.method)},
            {"dimensions", vsm::dimensions_to_json(report.dimensions)},
            {"target", vsm::dimensions_to_json(target)},
            {"vsm13_loss", report.vsm13_loss},
            {"unparseable_count", report.unparseable_count},
            {"responses", std::move(responses)}};
}

} // namespace cultalign::harness

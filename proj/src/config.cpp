#include "cultalign/error.hpp"
#include "cultalign/harness.hpp"

#include <fstream>

namespace cultalign::harness {

using nlohmann::json;

json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::ConfigError, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides)
{
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0)
            throw Error(ErrorKind::ConfigError, "override must look like key=value: " + item);
        const std::string key = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);

        json value = json::parse(text, nullptr, false);
        if (value.is_discarded())
            value = text;

        json* node = &doc;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty())
                throw Error(ErrorKind::ConfigError, "empty path segment in override " + item);
            if (!node->is_object())
                *node = json::object();
            node = &(*node)[part];
            if (dot == std::string::npos)
                break;
            start = dot + 1;
        }
        *node = std::move(value);
    }
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p)
{
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : base_dir / path).lexically_normal();
}

json dataset_document(const json& doc, const std::filesystem::path& base_dir)
{
    const json& ds = doc.at("dataset");
    if (ds.is_string())
        return read_json_file(resolve(base_dir, ds.get<std::string>()));
    return ds;
}

de::DEConfig de_from_json(const json& j)
{
    de::DEConfig c;
    c.population_size = j.value("population_size", c.population_size);
    c.max_generations = j.value("max_generations", c.max_generations);
    c.mutation_rate = j.value("mutation_rate", c.mutation_rate);
    c.recombination_rate = j.value("recombination_rate", c.recombination_rate);
    c.lower_bound = j.value("lower_bound", c.lower_bound);
    c.upper_bound = j.value("upper_bound", c.upper_bound);
    c.abs_tolerance = j.value("abs_tolerance", c.abs_tolerance);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.workers = j.value("workers", c.workers);
    return c;
}

BackendConfig backend_from_json(const json& j, const std::filesystem::path& base_dir)
{
    BackendConfig b;
    const std::string kind = j.value("kind", std::string("synthetic"));
    if (kind == "synthetic") {
        b.kind = BackendKind::Synthetic;
        b.projection_seed = j.value("projection_seed", std::uint64_t{0});
        const std::string mode = j.value("mode", std::string("continuous"));
        if (mode == "continuous")
            b.mode = respond::SyntheticMode::Continuous;
        else if (mode == "quantized")
            b.mode = respond::SyntheticMode::Quantized;
        else
            throw Error(ErrorKind::ConfigError, "backend.mode must be continuous or quantized");
        if (j.contains("planted_optimum") && j["planted_optimum"].is_string())
            b.planted_path = resolve(base_dir, j["planted_optimum"].get<std::string>());
        if (j.contains("planted_seed") && !j["planted_seed"].is_null())
            b.planted_seed = j["planted_seed"].get<std::uint64_t>();
        b.planted_scale = j.value("planted_scale", b.planted_scale);
    } else if (kind == "remote") {
        b.kind = BackendKind::Remote;
        auto& r = b.remote;
        r.base_url = j.at("base_url").get<std::string>();
        r.model_name = j.value("model", std::string{});
        r.timeout = std::chrono::milliseconds(j.value("timeout_ms", 30000));
        r.max_retries = j.value("max_retries", r.max_retries);
        r.backoff = std::chrono::milliseconds(j.value("backoff_ms", 250));
        r.max_in_flight = j.value("max_in_flight", r.max_in_flight);
        r.max_new_tokens = j.value("max_new_tokens", r.max_new_tokens);
        r.temperature = j.value("temperature", r.temperature);
        r.check_embed_dim = j.value("check_embed_dim", r.check_embed_dim);
    } else {
        throw Error(ErrorKind::ConfigError, "backend.kind must be synthetic or remote");
    }
    return b;
}

template <typename T>
std::vector<T> list_or(const json& j, const char* key, std::vector<T> fallback)
{
    return j.contains(key) ? j[key].get<std::vector<T>>() : std::move(fallback);
}

AblationGrid ablation_from_json(const json& j)
{
    AblationGrid g;
    g.token_counts = list_or(j, "token_counts", g.token_counts);
    g.mutation_rates = list_or(j, "mutation_rates", g.mutation_rates);
    g.recombination_rates = list_or(j, "recombination_rates", g.recombination_rates);
    g.population_sizes = list_or(j, "population_sizes", g.population_sizes);
    g.trials = j.value("trials", g.trials);
    g.seed = j.value("seed", g.seed);
    const std::string sampling = j.value("sampling", std::string("random"));
    if (sampling == "random")
        g.sampling = Sampling::Random;
    else if (sampling == "exhaustive")
        g.sampling = Sampling::Exhaustive;
    else
        throw Error(ErrorKind::ConfigError, "ablation.sampling must be random or exhaustive");
    return g;
}

} // namespace

ExperimentConfig config_from_json(const json& doc, const std::filesystem::path& base_dir)
{
    try {
        ExperimentConfig cfg;
        cfg.dataset = vsm::dataset_from_json(dataset_document(doc, base_dir));
        cfg.backend = backend_from_json(doc.value("backend", json::object()), base_dir);
        cfg.de = de_from_json(doc.value("de", json::object()));
        cfg.de.validate();
        cfg.token_count = doc.value("token_count", cfg.token_count);
        cfg.embed_dim = doc.value("embed_dim", cfg.embed_dim);
        cfg.persona_text = doc.value("persona_text", cfg.persona_text);
        const std::string policy = doc.value("unparseable_policy", std::string("retry_then_neutral"));
        if (policy == "retry_then_neutral")
            cfg.unparseable_policy = UnparseablePolicy::RetryThenNeutral;
        else if (policy == "strict")
            cfg.unparseable_policy = UnparseablePolicy::Strict;
        else
            throw Error(ErrorKind::ConfigError, "unparseable_policy must be retry_then_neutral or strict");
        cfg.samples_per_question = doc.value("samples_per_question", cfg.samples_per_question);
        cfg.cache_fitness = doc.value("cache_fitness", cfg.cache_fitness);
        cfg.target_from_planted = doc.value("target_from_planted", cfg.target_from_planted);
        cfg.resume = doc.value("resume", cfg.resume);
        for (const auto& p : doc.value("seed_prompts", json::array()))
            cfg.seed_prompts.push_back(resolve(base_dir, p.get<std::string>()));
        if (doc.contains("output_dir") && doc["output_dir"].is_string())
            cfg.output_dir = resolve(base_dir, doc["output_dir"].get<std::string>());
        cfg.ablation = ablation_from_json(doc.value("ablation", json::object()));
        cfg.provenance = doc;
        if (cfg.token_count < 1 || cfg.embed_dim < 1)
            throw Error(ErrorKind::ConfigError, "token_count and embed_dim must be ≥ 1");
        return cfg;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigError, e.what());
    }
}

std::vector<std::string> validate_config(const json& doc, const std::filesystem::path& base_dir)
{
    std::vector<std::string> out;
    if (!doc.is_object())
        return {"config must be a JSON object"};

    if (!doc.contains("dataset")) {
        out.emplace_back("MissingField: dataset");
    } else {
        try {
            for (auto& d : vsm::validate_dataset(dataset_document(doc, base_dir)))
                out.push_back(std::move(d.message));
        } catch (const std::exception& e) {
            out.emplace_back(e.what());
        }
    }

    try {
        for (auto& d : de_from_json(doc.value("de", json::object())).diagnostics())
            out.push_back(std::move(d));
    } catch (const json::exception& e) {
        out.emplace_back(std::string("InvalidField: de: ") + e.what());
    }

    if (doc.value("token_count", 10) < 1)
        out.emplace_back("token_count must be ≥ 1");
    if (doc.value("embed_dim", 8) < 1)
        out.emplace_back("embed_dim must be ≥ 1");

    // remaining structure: reuse the full parser once the pieces above are clean
    if (out.empty()) {
        try {
            config_from_json(doc, base_dir);
        } catch (const std::exception& e) {
            out.emplace_back(e.what());
        }
    }
    return out;
}

} // namespace cultalign::harness

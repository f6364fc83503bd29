#pragma once

#include "cultalign/de.hpp"
#include "cultalign/respondents.hpp"
#include "cultalign/soft_prompt.hpp"
#include "cultalign/vsm.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cultalign::harness {

enum class Method { Naive, ICL, DEOptimized };
enum class UnparseablePolicy { RetryThenNeutral, Strict };
enum class BackendKind { Synthetic, Remote };
enum class Sampling { Exhaustive, Random };

std::string_view to_string(Method method);

struct BackendConfig {
    BackendKind kind = BackendKind::Synthetic;

    // synthetic
    std::uint64_t projection_seed = 0;
    respond::SyntheticMode mode = respond::SyntheticMode::Continuous;
    std::optional<std::filesystem::path> planted_path;
    // uniform in [-planted_scale, planted_scale], drawn per prompt shape
    std::optional<std::uint64_t> planted_seed;
    double planted_scale = 1.0;

    respond::RemoteEndpointConfig remote;
};

struct AblationGrid {
    std::vector<int> token_counts{10, 20, 40, 60, 80, 100};
    std::vector<double> mutation_rates{0.2, 0.5, 0.7, 0.9};
    std::vector<double> recombination_rates{0.2, 0.5, 0.7, 0.9};
    std::vector<int> population_sizes{5, 10, 20, 30};
    int trials = 15;
    Sampling sampling = Sampling::Random;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    vsm::SurveyDataset dataset;
    BackendConfig backend;
    de::DEConfig de;
    int token_count = 10;
    int embed_dim = 8;
    std::string persona_text;
    UnparseablePolicy unparseable_policy = UnparseablePolicy::RetryThenNeutral;
    int samples_per_question = 1;
    bool cache_fitness = true;
    // Replace the dataset target with the profile produced at the planted optimum.
    bool target_from_planted = false;
    bool resume = false;
    std::vector<std::filesystem::path> seed_prompts;
    std::filesystem::path output_dir;
    AblationGrid ablation;
    // Echoed into report.json.
    nlohmann::json provenance = nlohmann::json::object();
};

struct EvaluationReport {
    Method method = Method::DEOptimized;
    vsm::CulturalDimensions dimensions;
    double vsm13_loss = 0.0;
    vsm::ResponseSet responses;
    int unparseable_count = 0;
};

struct DEResult {
    SoftPromptf best;
    double best_fitness = 0.0;
    double initial_best_fitness = 0.0;
    EvaluationReport report;
    std::vector<de::GenerationRecord> history;
    bool converged = false;
    std::size_t evaluations = 0;
    std::size_t cache_hits = 0;
};

struct AblationRow {
    int exp_no = 0;
    int tokens = 0;
    double mutation_rate = 0.0;
    double recombination_rate = 0.0;
    int population_size = 0;
    std::optional<double> vsm13_loss;
    std::string error;
};

/// Builds the configured backend for a given prompt shape (the planted optimum
/// of a seeded synthetic backend depends on it).
std::shared_ptr<respond::RespondentBackend> make_backend(const BackendConfig& cfg, int token_count, int embed_dim);

/// Binds a config to a backend and runs evaluations against it.
class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg, std::shared_ptr<respond::RespondentBackend> backend = nullptr);

    /// Fitness is the L1 loss of the report's dimensions against the dataset target.
    std::pair<double, EvaluationReport> evaluate_candidate(const SoftPromptf& prompt,
                                                           Method method = Method::DEOptimized);

    EvaluationReport run_naive_baseline();
    EvaluationReport run_icl_baseline();

    /// Writes history.jsonl, best_prompt.bin (refreshed every generation),
    /// report.json and radar.csv when output_dir is set.
    DEResult run_de_experiment(const de::GenerationObserver<float>& observer = {});

    const ExperimentConfig& config() const { return _cfg; }
    respond::RespondentBackend& backend() { return *_backend; }

private:
    EvaluationReport collect(const SoftPromptf& prompt, Method method);
    double fitness(const SoftPromptf& prompt);

    ExperimentConfig _cfg;
    std::shared_ptr<respond::RespondentBackend> _backend;
    respond::InstructionPrompt _instruction;
    std::mutex _cache_mutex;
    std::unordered_map<std::string, double> _cache;
    std::atomic<std::size_t> _cache_hits{0};
};

/// Settings in row order; Random draws each value independently with grid.seed.
std::vector<AblationRow> ablation_settings(const AblationGrid& grid);

/// Runs one DE experiment per setting. Failed rows carry `error`, the sweep continues.
std::vector<AblationRow> run_ablation(const AblationGrid& grid, const ExperimentConfig& base,
                                      std::shared_ptr<respond::RespondentBackend> backend = nullptr);

// Artifacts

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string radar_csv(const vsm::CulturalDimensions& target, const std::vector<EvaluationReport>& reports);
nlohmann::json history_line(const de::GenerationRecord& record);
nlohmann::json report_to_json(const EvaluationReport& report, const vsm::CulturalDimensions& target);

// Config file

/// Applies "a.b.c=value" overrides in order (last wins). Values parse as JSON
/// when possible, otherwise as strings.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

/// Human-readable problems; empty means the config is usable.
std::vector<std::string> validate_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

ExperimentConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

nlohmann::json read_json_file(const std::filesystem::path& path);

} // namespace cultalign::harness

#pragma once

#include "cultalign/soft_prompt.hpp"
#include "cultalign/vsm.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>

namespace cultalign::respond {

using vsm::SurveyQuestion;

struct InstructionPrompt {
    std::string system_text;
    std::string persona_text;
};

/// The fixed system instruction; `{prompt}` is the persona slot.
inline constexpr std::string_view kInstructionTemplate =
    "<|start_header_id|>system<|end_header_id|>\n"
    "You are an assistant that can only\n"
    "reply with 1, 2, 3, 4, or 5 \n"
    "based on a persona given to you.\n"
    "{prompt}\n"
    "Numerical Answer:<|eot_id|>";

InstructionPrompt build_instruction(std::string_view persona);

/// Inverse of build_instruction; nullopt if the text does not follow the template.
std::optional<std::string> extract_persona(std::string_view system_text);

/// Two example sentences per registered country code (SA, US, CN, IN)
/// followed by the question text. Throws UnknownCountry.
std::string build_icl_prompt(std::string_view country_code, const SurveyQuestion& question);
bool has_icl_examples(std::string_view country_code);

/// First standalone digit 1-5 after the last "Numerical Answer" marker when the
/// marker occurs (case-insensitive), otherwise the first standalone digit 1-5 in
/// the text. nullopt means unparseable.
std::optional<int> parse_numeric_answer(std::string_view text);

/// Anything that answers a survey question given a soft prompt. Implementations
/// must be safe to call concurrently.
class RespondentBackend {
public:
    virtual ~RespondentBackend() = default;

    /// Returns a value in [1, 5] or throws cultalign::Error.
    virtual double answer(const SoftPromptf& prompt, const InstructionPrompt& instruction,
                          const SurveyQuestion& question) = 0;

    /// Identical inputs always give identical answers.
    virtual bool deterministic() const = 0;
};

// Synthetic respondent

enum class SyntheticMode { Continuous, Quantized };

struct SyntheticRespondentConfig {
    std::uint64_t projection_seed = 0;
    SyntheticMode mode = SyntheticMode::Continuous;
    std::optional<SoftPromptf> planted_optimum;
};

/// Unit-norm direction for one question, derived from (seed, question index).
Eigen::VectorXd synthetic_projection(std::uint64_t projection_seed, int question_index, Eigen::Index length);

/// r = clip(3 + 2 tanh(w_q . flatten(v - v0)), 1, 5), rounded in Quantized mode.
double synthetic_answer(const SyntheticRespondentConfig& cfg, const SoftPromptf& prompt,
                        const SurveyQuestion& question);

class SyntheticRespondent final : public RespondentBackend {
public:
    explicit SyntheticRespondent(SyntheticRespondentConfig cfg) : _cfg(std::move(cfg)) {}

    double answer(const SoftPromptf& prompt, const InstructionPrompt& instruction,
                  const SurveyQuestion& question) override;
    bool deterministic() const override { return true; }

    const SyntheticRespondentConfig& config() const { return _cfg; }

private:
    const Eigen::VectorXd& projection(int question_index, Eigen::Index length);

    SyntheticRespondentConfig _cfg;
    std::mutex _mutex;
    std::map<std::pair<int, Eigen::Index>, Eigen::VectorXd> _projections;
};

// Remote endpoint

inline constexpr const char* kAuthTokenEnv = "CULTALIGN_AUTH_TOKEN";

struct RemoteEndpointConfig {
    std::string base_url;
    std::chrono::milliseconds timeout{30000};
    int max_retries = 3;
    std::string model_name;
    std::optional<std::string> auth_token;
    int max_new_tokens = 16;
    double temperature = 0.0;
    std::chrono::milliseconds backoff{250};
    int max_in_flight = 4;
    bool check_embed_dim = true;
};

/// Request body for POST {base_url}/v1/embedded-completion.
nlohmann::json build_completion_request(const RemoteEndpointConfig& cfg, const SoftPromptf& prompt,
                                        const InstructionPrompt& instruction, std::string_view question_text);

class RemoteRespondent final : public RespondentBackend {
public:
    explicit RemoteRespondent(RemoteEndpointConfig cfg);
    ~RemoteRespondent() override;

    double answer(const SoftPromptf& prompt, const InstructionPrompt& instruction,
                  const SurveyQuestion& question) override;

    /// Greedy decoding is treated as deterministic.
    bool deterministic() const override { return _cfg.temperature == 0.0; }

    /// Raw generated text for one question; transport errors are retried.
    std::string complete(const SoftPromptf& prompt, const InstructionPrompt& instruction,
                         std::string_view question_text);

    /// Embedding width reported by GET {base_url}/v1/model-info (cached).
    long served_embed_dim();

private:
    struct Endpoint;

    nlohmann::json send(const std::string& method, const std::string& path, const std::string& body);

    RemoteEndpointConfig _cfg;
    std::unique_ptr<Endpoint> _endpoint;
    std::counting_semaphore<> _in_flight;
    std::mutex _handshake_mutex;
    std::optional<long> _served_dim;
};

double remote_answer(const RemoteEndpointConfig& cfg, const SoftPromptf& prompt, const InstructionPrompt& instruction,
                     const SurveyQuestion& question);

} // namespace cultalign::respond

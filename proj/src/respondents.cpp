#include "cultalign/respondents.hpp"

#include "cultalign/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <random>

namespace cultalign::respond {

namespace {

constexpr std::string_view kSlot = "{prompt}";

struct IclExamples {
    std::string_view code;
    std::array<std::string_view, 2> sentences;
};

constexpr std::array<IclExamples, 4> kIclRegistry{{
    {"SA",
     {"In Saudi Arabia, family is highly valued, and decisions are often made with the family's best interest in "
      "mind.",
      "Hospitality is a key cultural value in Saudi Arabia, and guests are treated with great respect and "
      "generosity."}},
    {"CN",
     {"In China, collectivism is emphasized, and people often prioritize group harmony over individual needs.",
      "Respect for elders and authority is a deeply ingrained cultural value in China."}},
    {"US",
     {"In the United States, individualism is highly valued, and personal freedom and independence are often "
      "prioritized.",
      "The US culture values diversity and equality, and people are encouraged to express their unique "
      "identities."}},
    {"IN",
     {"In India, family and community play a central role in decision-making, and interdependence is valued.",
      "Respect for traditions and religious practices is a significant cultural value in India."}},
}};

const IclExamples* find_icl(std::string_view code)
{
    for (const auto& entry : kIclRegistry)
        if (entry.code == code)
            return &entry;
    return nullptr;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::optional<int> first_standalone_digit(std::string_view text)
{
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c < '1' || c > '5')
            continue;
        const bool left_clear = i == 0 || !is_word_char(text[i - 1]);
        const bool right_clear = i + 1 == text.size() || !is_word_char(text[i + 1]);
        if (left_clear && right_clear)
            return c - '0';
    }
    return std::nullopt;
}

std::string lowercase(std::string_view text)
{
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return out;
}

} // namespace

InstructionPrompt build_instruction(std::string_view persona)
{
    std::string text(kInstructionTemplate);
    text.replace(text.find(kSlot), kSlot.size(), persona);
    return {std::move(text), std::string(persona)};
}

std::optional<std::string> extract_persona(std::string_view system_text)
{
    const auto slot = kInstructionTemplate.find(kSlot);
    const auto head = kInstructionTemplate.substr(0, slot);
    const auto tail = kInstructionTemplate.substr(slot + kSlot.size());
    if (system_text.size() < head.size() + tail.size() || !system_text.starts_with(head)
        || !system_text.ends_with(tail))
        return std::nullopt;
    return std::string(system_text.substr(head.size(), system_text.size() - head.size() - tail.size()));
}

bool has_icl_examples(std::string_view country_code) { return find_icl(country_code) != nullptr; }

std::string build_icl_prompt(std::string_view country_code, const SurveyQuestion& question)
{
    const auto* entry = find_icl(country_code);
    if (!entry)
        throw Error(ErrorKind::UnknownCountry, std::string(country_code));
    std::string prompt;
    for (const auto sentence : entry->sentences) {
        prompt += sentence;
        prompt += '\n';
    }
    prompt += question.text;
    return prompt;
}

std::optional<int> parse_numeric_answer(std::string_view text)
{
    constexpr std::string_view kMarker = "numerical answer";
    const std::string lower = lowercase(text);
    if (const auto pos = lower.rfind(kMarker); pos != std::string::npos)
        return first_standalone_digit(text.substr(pos + kMarker.size()));
    return first_standalone_digit(text);
}

// Synthetic respondent

Eigen::VectorXd synthetic_projection(std::uint64_t projection_seed, int question_index, Eigen::Index length)
{
    std::seed_seq seq{std::uint32_t(projection_seed), std::uint32_t(projection_seed >> 32),
                      std::uint32_t(question_index)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    Eigen::VectorXd w(length);
    for (Eigen::Index i = 0; i < length; ++i)
        w[i] = normal(rng);
    const double norm = w.norm();
    if (norm > 0.0)
        w /= norm;
    return w;
}

namespace {

double squash(const SyntheticRespondentConfig& cfg, const Eigen::VectorXd& w, const SoftPromptf& prompt)
{
    double projected = 0.0;
    if (prompt.size() > 0) {
        SoftPromptd offset = prompt.cast<double>();
        if (cfg.planted_optimum) {
            const auto& planted = *cfg.planted_optimum;
            if (planted.rows() != prompt.rows() || planted.cols() != prompt.cols())
                throw Error(ErrorKind::ShapeMismatch, "planted optimum is " + std::to_string(planted.rows()) + "x"
                                                          + std::to_string(planted.cols()) + ", prompt is "
                                                          + std::to_string(prompt.rows()) + "x"
                                                          + std::to_string(prompt.cols()));
            offset -= planted.cast<double>();
        }
        projected = w.dot(Eigen::Map<const Eigen::VectorXd>(offset.data(), offset.size()));
    }
    const double r = std::clamp(3.0 + 2.0 * std::tanh(projected), 1.0, 5.0);
    return cfg.mode == SyntheticMode::Quantized ? std::round(r) : r;
}

} // namespace

double synthetic_answer(const SyntheticRespondentConfig& cfg, const SoftPromptf& prompt,
                        const SurveyQuestion& question)
{
    return squash(cfg, synthetic_projection(cfg.projection_seed, question.index, prompt.size()), prompt);
}

const Eigen::VectorXd& SyntheticRespondent::projection(int question_index, Eigen::Index length)
{
    std::lock_guard lock(_mutex);
    auto [it, inserted] = _projections.try_emplace({question_index, length});
    if (inserted)
        it->second = synthetic_projection(_cfg.projection_seed, question_index, length);
    return it->second;
}

double SyntheticRespondent::answer(const SoftPromptf& prompt, const InstructionPrompt&, const SurveyQuestion& question)
{
    return squash(_cfg, projection(question.index, prompt.size()), prompt);
}

} // namespace cultalign::respond

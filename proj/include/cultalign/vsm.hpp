#pragma once

#include <nlohmann/json.hpp>
#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cultalign::vsm {

inline constexpr int kQuestionCount = 24;

struct SurveyQuestion {
    int index = 0;
    std::string text;
    int scale_min = 1;
    int scale_max = 5;

    double midpoint() const { return 0.5 * (scale_min + scale_max); }
};

/// Additive offsets applied after the weighted differences. Zero by default.
struct DimensionConstants {
    double c_pdi = 0.0;
    double c_idv = 0.0;
    double c_mas = 0.0;
    double c_uai = 0.0;
    double c_lto = 0.0;
    double c_ivr = 0.0;
};

struct CulturalDimensions {
    double pdi = 0.0;
    double idv = 0.0;
    double mas = 0.0;
    double uai = 0.0;
    double lto = 0.0;
    double ivr = 0.0;

    using Vector = Eigen::Matrix<double, 6, 1>;

    Vector as_vector() const { return (Vector() << pdi, idv, mas, uai, lto, ivr).finished(); }
    static CulturalDimensions from_vector(const Vector& v) { return {v[0], v[1], v[2], v[3], v[4], v[5]}; }

    bool operator==(const CulturalDimensions&) const = default;
};

inline constexpr std::array<const char*, 6> kDimensionNames{"pdi", "idv", "mas", "uai", "lto", "ivr"};

/// Question pairs and weights per dimension, in PDI, IDV, MAS, UAI, LTO, IVR order.
/// Each term is weight * (mean[plus] - mean[minus]).
struct WeightedPair {
    double weight;
    int plus;
    int minus;
};
inline constexpr std::array<std::array<WeightedPair, 2>, 6> kDimensionTerms{{
    {{{35, 7, 2}, {25, 20, 23}}},
    {{{35, 4, 1}, {35, 9, 6}}},
    {{{35, 5, 3}, {25, 8, 10}}},
    {{{40, 18, 15}, {25, 21, 24}}},
    {{{40, 13, 14}, {25, 19, 22}}},
    {{{35, 12, 11}, {40, 17, 16}}},
}};

struct SurveyDataset {
    std::vector<SurveyQuestion> questions;
    std::string country_code;
    CulturalDimensions target;
    DimensionConstants constants;

    const SurveyQuestion& question(int index) const;
};

/// Per-question responses (index 1..24 maps to slot index-1) and their means.
class ResponseSet {
public:
    const std::vector<double>& responses(int question) const { return _per_question.at(slot(question)); }
    double mean(int question) const { return _means.at(slot(question)); }
    const std::array<double, kQuestionCount>& means() const { return _means; }

    friend ResponseSet aggregate_responses(std::span<const std::pair<int, double>>,
                                           std::span<const SurveyQuestion>);

private:
    static std::size_t slot(int question);

    std::array<std::vector<double>, kQuestionCount> _per_question;
    std::array<double, kQuestionCount> _means{};
};

/// Groups (question, response) pairs and averages them. Scales come from
/// `questions` when given, otherwise every question uses [1, 5].
/// Throws MissingQuestion or OutOfScale.
ResponseSet aggregate_responses(std::span<const std::pair<int, double>> raw,
                                std::span<const SurveyQuestion> questions = {});

CulturalDimensions compute_dimensions(const ResponseSet& responses, const DimensionConstants& constants = {});

/// Mean absolute difference over the six dimensions.
double l1_fitness(const CulturalDimensions& d, const CulturalDimensions& target);

// JSON dataset file.
struct Diagnostic {
    std::string message;
};

std::vector<Diagnostic> validate_dataset(const nlohmann::json& doc);
SurveyDataset dataset_from_json(const nlohmann::json& doc);
nlohmann::json dataset_to_json(const SurveyDataset& dataset);
SurveyDataset load_dataset(const std::filesystem::path& path);

nlohmann::json dimensions_to_json(const CulturalDimensions& d);
CulturalDimensions dimensions_from_json(const nlohmann::json& j);

/// 24 placeholder questions with the right index structure, no instrument text.
SurveyDataset placeholder_dataset();

} // namespace cultalign::vsm

#include "cultalign/vsm.hpp"

#include "cultalign/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace cultalign::vsm {

using nlohmann::json;

const SurveyQuestion& SurveyDataset::question(int index) const
{
    for (const auto& q : questions)
        if (q.index == index)
            return q;
    throw Error(ErrorKind::MissingQuestion, std::to_string(index));
}

std::size_t ResponseSet::slot(int question)
{
    if (question < 1 || question > kQuestionCount)
        throw Error(ErrorKind::MissingQuestion, "question index " + std::to_string(question) + " outside 1..24");
    return static_cast<std::size_t>(question - 1);
}

ResponseSet aggregate_responses(std::span<const std::pair<int, double>> raw, std::span<const SurveyQuestion> questions)
{
    std::array<std::pair<double, double>, kQuestionCount> scales;
    scales.fill({1.0, 5.0});
    for (const auto& q : questions)
        scales[ResponseSet::slot(q.index)] = {double(q.scale_min), double(q.scale_max)};

    ResponseSet rs;
    for (const auto& [question, value] : raw) {
        const auto s = ResponseSet::slot(question);
        const auto [lo, hi] = scales[s];
        if (!(value >= lo && value <= hi))
            throw Error(ErrorKind::OutOfScale, "question " + std::to_string(question) + " response "
                                                   + std::to_string(value) + " outside [" + std::to_string(lo) + ", "
                                                   + std::to_string(hi) + "]");
        rs._per_question[s].push_back(value);
    }
    for (std::size_t s = 0; s < kQuestionCount; ++s) {
        const auto& values = rs._per_question[s];
        if (values.empty())
            throw Error(ErrorKind::MissingQuestion, std::to_string(s + 1));
        double sum = 0.0;
        for (double v : values)
            sum += v;
        rs._means[s] = sum / static_cast<double>(values.size());
    }
    return rs;
}

CulturalDimensions compute_dimensions(const ResponseSet& responses, const DimensionConstants& constants)
{
    const std::array<double, 6> offsets{constants.c_pdi, constants.c_idv, constants.c_mas,
                                        constants.c_uai, constants.c_lto, constants.c_ivr};
    CulturalDimensions::Vector scores;
    for (std::size_t d = 0; d < kDimensionTerms.size(); ++d) {
        const auto& [first, second] = kDimensionTerms[d];
        scores[Eigen::Index(d)] = first.weight * (responses.mean(first.plus) - responses.mean(first.minus))
                                  + second.weight * (responses.mean(second.plus) - responses.mean(second.minus))
                                  + offsets[d];
    }
    return CulturalDimensions::from_vector(scores);
}

double l1_fitness(const CulturalDimensions& d, const CulturalDimensions& target)
{
    return (d.as_vector() - target.as_vector()).cwiseAbs().sum() / 6.0;
}

json dimensions_to_json(const CulturalDimensions& d)
{
    return {{"pdi", d.pdi}, {"idv", d.idv}, {"mas", d.mas}, {"uai", d.uai}, {"lto", d.lto}, {"ivr", d.ivr}};
}

CulturalDimensions dimensions_from_json(const json& j)
{
    CulturalDimensions d;
    d.pdi = j.at("pdi").get<double>();
    d.idv = j.at("idv").get<double>();
    d.mas = j.at("mas").get<double>();
    d.uai = j.at("uai").get<double>();
    d.lto = j.at("lto").get<double>();
    d.ivr = j.at("ivr").get<double>();
    return d;
}

namespace {

DimensionConstants constants_from_json(const json& j)
{
    DimensionConstants c;
    c.c_pdi = j.value("pdi", 0.0);
    c.c_idv = j.value("idv", 0.0);
    c.c_mas = j.value("mas", 0.0);
    c.c_uai = j.value("uai", 0.0);
    c.c_lto = j.value("lto", 0.0);
    c.c_ivr = j.value("ivr", 0.0);
    return c;
}

void check_six(const json& doc, const char* field, bool required, std::vector<Diagnostic>& out)
{
    if (!doc.contains(field)) {
        if (required)
            out.push_back({std::string("MissingField: ") + field});
        return;
    }
    const json& block = doc[field];
    if (!block.is_object()) {
        out.push_back({std::string("InvalidField: ") + field + " must be an object"});
        return;
    }
    for (const char* name : kDimensionNames) {
        if (!block.contains(name)) {
            if (required)
                out.push_back({std::string("MissingField: ") + field + "." + name});
        } else if (!block[name].is_number() || !std::isfinite(block[name].get<double>())) {
            out.push_back({std::string("InvalidField: ") + field + "." + name + " must be a finite number"});
        }
    }
}

} // namespace

std::vector<Diagnostic> validate_dataset(const json& doc)
{
    std::vector<Diagnostic> out;
    if (!doc.is_object())
        return {{"InvalidField: dataset must be a JSON object"}};
    if (!doc.contains("country_code") || !doc["country_code"].is_string())
        out.push_back({"MissingField: country_code"});
    check_six(doc, "target", true, out);
    check_six(doc, "constants", false, out);

    if (!doc.contains("questions") || !doc["questions"].is_array()) {
        out.push_back({"MissingField: questions"});
        return out;
    }
    std::set<int> seen;
    for (const auto& q : doc["questions"]) {
        if (!q.is_object() || !q.contains("index") || !q["index"].is_number_integer()) {
            out.push_back({"InvalidField: question without integer index"});
            continue;
        }
        const int index = q["index"].get<int>();
        if (index < 1 || index > kQuestionCount) {
            out.push_back({"InvalidQuestion: " + std::to_string(index)});
            continue;
        }
        if (!seen.insert(index).second)
            out.push_back({"DuplicateQuestion: " + std::to_string(index)});
        const int lo = q.value("scale_min", 1);
        const int hi = q.value("scale_max", 5);
        if (!(1 <= lo && lo < hi))
            out.push_back({"InvalidScale: " + std::to_string(index)});
    }
    for (int i = 1; i <= kQuestionCount; ++i)
        if (!seen.contains(i))
            out.push_back({"MissingQuestion: " + std::to_string(i)});
    if (doc["questions"].size() != kQuestionCount && out.empty())
        out.push_back({"InvalidField: expected exactly 24 questions"});
    return out;
}

SurveyDataset dataset_from_json(const json& doc)
{
    const auto diagnostics = validate_dataset(doc);
    if (!diagnostics.empty()) {
        const auto& first = diagnostics.front().message;
        const auto kind = first.starts_with("MissingQuestion") ? ErrorKind::MissingQuestion : ErrorKind::ConfigError;
        throw Error(kind, first);
    }
    SurveyDataset ds;
    ds.country_code = doc.at("country_code").get<std::string>();
    ds.target = dimensions_from_json(doc.at("target"));
    if (doc.contains("constants"))
        ds.constants = constants_from_json(doc["constants"]);
    for (const auto& q : doc.at("questions"))
        ds.questions.push_back({q.at("index").get<int>(), q.value("text", std::string{}), q.value("scale_min", 1),
                                q.value("scale_max", 5)});
    std::sort(ds.questions.begin(), ds.questions.end(),
              [](const SurveyQuestion& a, const SurveyQuestion& b) { return a.index < b.index; });
    return ds;
}

json dataset_to_json(const SurveyDataset& dataset)
{
    json questions = json::array();
    for (const auto& q : dataset.questions) {
        json item{{"index", q.index}, {"text", q.text}};
        if (q.scale_min != 1 || q.scale_max != 5) {
            item["scale_min"] = q.scale_min;
            item["scale_max"] = q.scale_max;
        }
        questions.push_back(std::move(item));
    }
    const auto& c = dataset.constants;
    return {{"country_code", dataset.country_code},
            {"target", dimensions_to_json(dataset.target)},
            {"constants", {{"pdi", c.c_pdi}, {"idv", c.c_idv}, {"mas", c.c_mas},
                           {"uai", c.c_uai}, {"lto", c.c_lto}, {"ivr", c.c_ivr}}},
            {"questions", std::move(questions)}};
}

SurveyDataset load_dataset(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::ConfigError, "cannot open dataset " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    return dataset_from_json(doc);
}

SurveyDataset placeholder_dataset()
{
    SurveyDataset ds;
    ds.country_code = "CN";
    ds.target = {80.0, 20.0, 66.0, 30.0, 87.0, 24.0};
    for (int i = 1; i <= kQuestionCount; ++i)
        ds.questions.push_back({i, "Placeholder for content question " + std::to_string(i)
                                       + ". Reply with 1, 2, 3, 4, or 5."});
    return ds;
}

} // namespace cultalign::vsm

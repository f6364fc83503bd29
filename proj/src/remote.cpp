#include "cultalign/error.hpp"
#include "cultalign/respondents.hpp"

#include <httplib.h>

#include <cstdlib>
#include <tuple>
#include <thread>

namespace cultalign::respond {

using nlohmann::json;

struct RemoteRespondent::Endpoint {
    std::string scheme_host_port;
    std::string path_prefix;
};

json build_completion_request(const RemoteEndpointConfig& cfg, const SoftPromptf& prompt,
                              const InstructionPrompt& instruction, std::string_view question_text)
{
    json tokens = json::array();
    for (Eigen::Index t = 0; t < prompt.rows(); ++t) {
        json row = json::array();
        for (Eigen::Index d = 0; d < prompt.cols(); ++d)
            row.push_back(prompt(t, d));
        tokens.push_back(std::move(row));
    }
    return {{"model", cfg.model_name},
            {"virtual_tokens", std::move(tokens)},
            {"instruction", instruction.system_text},
            {"question", std::string(question_text)},
            {"max_new_tokens", cfg.max_new_tokens},
            {"temperature", cfg.temperature}};
}

namespace {

// "scheme://host[:port]" and an optional path prefix without trailing slash.
std::pair<std::string, std::string> split_url(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw Error(ErrorKind::ConfigError, "base_url must start with http:// or https://: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    std::string prefix = path_start == std::string::npos ? std::string{} : url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/')
        prefix.pop_back();
    return {url.substr(0, path_start), std::move(prefix)};
}

} // namespace

RemoteRespondent::RemoteRespondent(RemoteEndpointConfig cfg)
    : _cfg(std::move(cfg)), _endpoint(std::make_unique<Endpoint>()), _in_flight(std::max(1, _cfg.max_in_flight))
{
    if (_cfg.max_retries < 0)
        throw Error(ErrorKind::ConfigError, "max_retries must be ≥ 0");
    if (!_cfg.auth_token)
        if (const char* env = std::getenv(kAuthTokenEnv); env && *env)
            _cfg.auth_token = env;
    std::tie(_endpoint->scheme_host_port, _endpoint->path_prefix) = split_url(_cfg.base_url);
}

RemoteRespondent::~RemoteRespondent() = default;

json RemoteRespondent::send(const std::string& method, const std::string& path, const std::string& body)
{
    const std::string full_path = _endpoint->path_prefix + path;
    std::string last_error;
    for (int attempt = 0; attempt <= _cfg.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(_cfg.backoff * (1 << std::min(attempt - 1, 16)));

        httplib::Result res;
        {
            _in_flight.acquire();
            httplib::Client client(_endpoint->scheme_host_port);
            const auto secs = _cfg.timeout.count() / 1000;
            const auto usecs = (_cfg.timeout.count() % 1000) * 1000;
            client.set_connection_timeout(secs, usecs);
            client.set_read_timeout(secs, usecs);
            client.set_write_timeout(secs, usecs);
            httplib::Headers headers;
            if (_cfg.auth_token)
                headers.emplace("Authorization", "Bearer " + *_cfg.auth_token);
            res = method == "GET" ? client.Get(full_path, headers)
                                  : client.Post(full_path, headers, body, "application/json");
            _in_flight.release();
        }

        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500 || res->status == 429) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        json doc = json::parse(res->body, nullptr, false);
        if (res->status != 200) {
            std::string detail = doc.is_object() && doc.contains("error") ? doc["error"].dump() : res->body;
            throw Error(ErrorKind::BackendError, "HTTP " + std::to_string(res->status) + " from " + full_path + ": "
                                                     + detail);
        }
        if (doc.is_discarded())
            throw Error(ErrorKind::BackendError, "malformed JSON from " + full_path);
        return doc;
    }
    throw Error(ErrorKind::TransportError, method + " " + full_path + " failed after "
                                               + std::to_string(_cfg.max_retries + 1) + " attempt(s): " + last_error);
}

long RemoteRespondent::served_embed_dim()
{
    std::lock_guard lock(_handshake_mutex);
    if (!_served_dim) {
        const json info = send("GET", "/v1/model-info", {});
        if (!info.contains("embed_dim") || !info["embed_dim"].is_number_integer())
            throw Error(ErrorKind::BackendError, "model-info response lacks integer embed_dim");
        _served_dim = info["embed_dim"].get<long>();
    }
    return *_served_dim;
}

std::string RemoteRespondent::complete(const SoftPromptf& prompt, const InstructionPrompt& instruction,
                                       std::string_view question_text)
{
    if (prompt.size() > 0 && _cfg.check_embed_dim) {
        const long served = served_embed_dim();
        if (served != prompt.cols())
            throw Error(ErrorKind::DimMismatch, "served embed_dim " + std::to_string(served) + " vs prompt dim "
                                                    + std::to_string(prompt.cols()));
    }
    const json reply = send("POST", "/v1/embedded-completion",
                            build_completion_request(_cfg, prompt, instruction, question_text).dump());
    if (!reply.contains("text") || !reply["text"].is_string())
        throw Error(ErrorKind::BackendError, "completion response lacks string text");
    return reply["text"].get<std::string>();
}

double RemoteRespondent::answer(const SoftPromptf& prompt, const InstructionPrompt& instruction,
                                const SurveyQuestion& question)
{
    const std::string text = complete(prompt, instruction, question.text);
    const auto digit = parse_numeric_answer(text);
    if (!digit)
        throw Error(ErrorKind::UnparseableAnswer,
                    "question " + std::to_string(question.index) + ": \"" + text.substr(0, 80) + "\"");
    return double(*digit);
}

double remote_answer(const RemoteEndpointConfig& cfg, const SoftPromptf& prompt, const InstructionPrompt& instruction,
                     const SurveyQuestion& question)
{
    RemoteRespondent client(cfg);
    return client.answer(prompt, instruction, question);
}

} // namespace cultalign::respond

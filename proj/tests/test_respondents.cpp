#include "cultalign/error.hpp"
#include "cultalign/respondents.hpp"

// after Eigen: <resolv.h> defines a _res macro
#include "fake_server.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <random>

using namespace cultalign;
using namespace cultalign::respond;
using testing::Reply;
using testing::ScriptedServer;

namespace {

SurveyQuestion question(int index, std::string text = "Which do you prefer? 1: restraint 2: indulgence.")
{
    return {index, std::move(text), 1, 5};
}

RemoteEndpointConfig remote_config(const ScriptedServer& server)
{
    RemoteEndpointConfig cfg;
    cfg.base_url = server.url();
    cfg.model_name = "fake";
    cfg.timeout = std::chrono::milliseconds(2000);
    cfg.backoff = std::chrono::milliseconds(5);
    cfg.max_retries = 3;
    return cfg;
}

ErrorKind kind_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::BackendError;
}

} // namespace

TEST_CASE("parser corpus")
{
    std::ifstream in(std::string(CULTALIGN_TEST_DATA) + "/parser_corpus.json");
    REQUIRE(in);
    const auto corpus = nlohmann::json::parse(in);
    REQUIRE(corpus.size() >= 20);
    for (const auto& entry : corpus) {
        const auto text = entry["text"].get<std::string>();
        const auto got = parse_numeric_answer(text);
        if (entry["expected"].is_null())
            CHECK_MESSAGE(!got.has_value(), text);
        else
            CHECK_MESSAGE(got == entry["expected"].get<int>(), text);
    }
}

TEST_CASE("parser is total on arbitrary bytes")
{
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> byte(0, 255);
    std::uniform_int_distribution<int> len(0, 64);
    for (int trial = 0; trial < 5000; ++trial) {
        std::string s(std::size_t(len(rng)), '\0');
        for (auto& c : s)
            c = char(byte(rng));
        const auto a = parse_numeric_answer(s);
        CHECK(a == parse_numeric_answer(s));
        if (a)
            CHECK((*a >= 1 && *a <= 5));
    }
}

TEST_CASE("instruction template")
{
    const auto empty = build_instruction("");
    CHECK(empty.system_text.starts_with("<|start_header_id|>system<|end_header_id|>\n"));
    CHECK(empty.system_text.ends_with("\n\nNumerical Answer:<|eot_id|>"));
    CHECK(empty.system_text.find("reply with 1, 2, 3, 4, or 5 \n") != std::string::npos);
    CHECK(extract_persona(empty.system_text) == std::string{});

    const std::string persona = "Answer as a citizen of China.";
    const auto filled = build_instruction(persona);
    CHECK(filled.persona_text == persona);
    CHECK(filled.system_text == "<|start_header_id|>system<|end_header_id|>\nYou are an assistant that can only\n"
                                "reply with 1, 2, 3, 4, or 5 \nbased on a persona given to you.\n"
                                "Answer as a citizen of China.\nNumerical Answer:<|eot_id|>");
    CHECK(extract_persona(filled.system_text) == persona);
    CHECK(extract_persona(build_instruction("{prompt} nested").system_text) == "{prompt} nested");
    CHECK(!extract_persona("not the template").has_value());
}

TEST_CASE("ICL prompts")
{
    const auto q = question(3, "How important is it to have a good working relationship with your boss?");
    const auto sa = build_icl_prompt("SA", q);
    CHECK(sa.find("Hospitality is a key cultural value in Saudi Arabia") != std::string::npos);
    CHECK(sa.ends_with(q.text));
    CHECK(sa.find("In Saudi Arabia, family is highly valued") < sa.find("Hospitality"));
    CHECK(build_icl_prompt("US", q).find("individualism is highly valued") != std::string::npos);
    CHECK(build_icl_prompt("CN", q).find("group harmony") != std::string::npos);
    CHECK(build_icl_prompt("IN", q).find("religious practices") != std::string::npos);
    CHECK(kind_of([&] { build_icl_prompt("XX", q); }) == ErrorKind::UnknownCountry);
}

TEST_CASE("synthetic respondent fixed point and bounds")
{
    SyntheticRespondentConfig cfg;
    cfg.projection_seed = 99;
    SoftPromptf planted = SoftPromptf::Random(2, 8);
    cfg.planted_optimum = planted;
    for (int q = 1; q <= 24; ++q)
        CHECK(synthetic_answer(cfg, planted, question(q)) == 3.0);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> u(-5.0f, 5.0f);
    SyntheticRespondentConfig quantized = cfg;
    quantized.mode = SyntheticMode::Quantized;
    for (int trial = 0; trial < 500; ++trial) {
        SoftPromptf v(2, 8);
        for (Eigen::Index i = 0; i < v.size(); ++i)
            v.data()[i] = u(rng);
        const int q = 1 + trial % 24;
        const double c = synthetic_answer(cfg, v, question(q));
        const double r = synthetic_answer(quantized, v, question(q));
        CHECK((c >= 1.0 && c <= 5.0));
        CHECK(std::fabs(c - r) <= 0.5);
        CHECK(r == std::round(r));
        CHECK(c == synthetic_answer(cfg, v, question(q)));
    }

    CHECK(kind_of([&] { synthetic_answer(cfg, SoftPromptf::Zero(3, 8), question(1)); }) == ErrorKind::ShapeMismatch);
    CHECK(synthetic_answer(cfg, SoftPromptf(0, 8), question(1)) == 3.0);
}

TEST_CASE("synthetic projections are unit norm and question specific")
{
    for (int q = 1; q <= 24; ++q) {
        const auto w = synthetic_projection(5, q, 16);
        CHECK(w.norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(w == synthetic_projection(5, q, 16));
        if (q > 1)
            CHECK(w != synthetic_projection(5, q - 1, 16));
    }
    CHECK(synthetic_projection(5, 1, 16) != synthetic_projection(6, 1, 16));
}

TEST_CASE("synthetic respondent is 2-Lipschitz in the prompt")
{
    SyntheticRespondentConfig cfg;
    cfg.projection_seed = 3;
    std::mt19937_64 rng(10);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (int trial = 0; trial < 2000; ++trial) {
        SoftPromptf v(2, 4), dv(2, 4);
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            v.data()[i] = n(rng);
            dv.data()[i] = 0.01f * n(rng);
        }
        const SoftPromptf w = v + dv;
        const int q = 1 + trial % 24;
        const double delta = std::fabs(synthetic_answer(cfg, w, question(q)) - synthetic_answer(cfg, v, question(q)));
        const double step = (w.cast<double>() - v.cast<double>()).norm();
        CHECK(delta <= 2.0 * step + 1e-12);
    }
}

TEST_CASE("SyntheticRespondent matches the free function")
{
    SyntheticRespondentConfig cfg;
    cfg.projection_seed = 12;
    SyntheticRespondent backend(cfg);
    const SoftPromptf v = SoftPromptf::Random(3, 5);
    for (int q = 1; q <= 24; ++q)
        CHECK(backend.answer(v, build_instruction(""), question(q)) == synthetic_answer(cfg, v, question(q)));
    CHECK(backend.deterministic());
}

TEST_CASE("remote answers are parsed from the reply text")
{
    ScriptedServer server(testing::always("Numerical Answer: 4"));
    CHECK(remote_answer(remote_config(server), SoftPromptf::Zero(2, 8), build_instruction(""), question(1)) == 4.0);

    ScriptedServer saudi(testing::always("1. As a citizen of Saudi Arabia, I prefer restraint..."));
    CHECK(remote_answer(remote_config(saudi), SoftPromptf::Zero(2, 8), build_instruction(""), question(1)) == 1.0);

    ScriptedServer unclear(testing::always("Numerical Answer: Unclear"));
    CHECK(kind_of([&] {
              remote_answer(remote_config(unclear), SoftPromptf::Zero(2, 8), build_instruction(""), question(1));
          })
          == ErrorKind::UnparseableAnswer);
    CHECK(unclear.completion_calls() == 1);
}

TEST_CASE("remote request body follows the wire protocol")
{
    ScriptedServer server(testing::always("2"));
    auto cfg = remote_config(server);
    cfg.auth_token = "secret-token";
    SoftPromptf v(2, 3);
    v << 0.5f, -1.0f, 2.0f, 3.0f, 4.0f, -0.25f;
    const auto instruction = build_instruction("Answer as a citizen of China.");
    RemoteRespondent client(cfg);
    CHECK(kind_of([&] { client.answer(v, instruction, question(5)); }) == ErrorKind::DimMismatch);
    CHECK(server.completion_calls() == 0);

    ScriptedServer matching(testing::always("2"), 3);
    auto cfg3 = remote_config(matching);
    cfg3.auth_token = "secret-token";
    RemoteRespondent ok(cfg3);
    CHECK(ok.answer(v, instruction, question(5, "Q five")) == 2.0);
    const auto requests = matching.requests();
    REQUIRE(requests.size() == 1);
    const auto& body = requests[0];
    CHECK(body["model"] == "fake");
    CHECK(body["instruction"] == instruction.system_text);
    CHECK(body["question"] == "Q five");
    CHECK(body["max_new_tokens"] == 16);
    CHECK(body["temperature"] == 0.0);
    REQUIRE(body["virtual_tokens"].size() == 2);
    CHECK(body["virtual_tokens"][0] == nlohmann::json{0.5, -1.0, 2.0});
    CHECK(body["virtual_tokens"][1] == nlohmann::json{3.0, 4.0, -0.25});
    CHECK(matching.auth_headers().at(0) == "Bearer secret-token");
    CHECK(matching.info_calls() == 1);
}

TEST_CASE("empty virtual tokens skip the dimension handshake")
{
    ScriptedServer server(testing::always("5"), 4096);
    RemoteRespondent client(remote_config(server));
    CHECK(client.answer(SoftPromptf(0, 8), build_instruction(""), question(1)) == 5.0);
    CHECK(server.info_calls() == 0);
    CHECK(server.requests().at(0)["virtual_tokens"] == nlohmann::json::array());
}

TEST_CASE("auth token from the environment")
{
    ScriptedServer server(testing::always("3"));
    ::setenv(kAuthTokenEnv, "env-token", 1);
    RemoteRespondent client(remote_config(server));
    ::unsetenv(kAuthTokenEnv);
    client.answer(SoftPromptf(0, 8), build_instruction(""), question(1));
    CHECK(server.auth_headers().at(0) == "Bearer env-token");
}

TEST_CASE("timeouts are retried with backoff")
{
    ScriptedServer server([](int call, const nlohmann::json&) {
        return call < 2 ? Reply{200, "5", std::chrono::milliseconds(600), {}} : Reply{200, "2", {}, {}};
    });
    auto cfg = remote_config(server);
    cfg.timeout = std::chrono::milliseconds(200);
    cfg.max_retries = 3;
    CHECK(remote_answer(cfg, SoftPromptf(0, 8), build_instruction(""), question(1)) == 2.0);
    CHECK(server.completion_calls() == 3);
}

TEST_CASE("retries are bounded by max_retries")
{
    for (int retries : {0, 1, 2}) {
        ScriptedServer server([](int, const nlohmann::json&) { return Reply{503, "overloaded", {}, {}}; });
        auto cfg = remote_config(server);
        cfg.max_retries = retries;
        CHECK(kind_of([&] { remote_answer(cfg, SoftPromptf(0, 8), build_instruction(""), question(1)); })
              == ErrorKind::TransportError);
        CHECK(server.completion_calls() == 1 + retries);
    }

    ScriptedServer rejecting([](int, const nlohmann::json&) { return Reply{400, "bad request", {}, {}}; });
    CHECK(kind_of([&] {
              remote_answer(remote_config(rejecting), SoftPromptf(0, 8), build_instruction(""), question(1));
          })
          == ErrorKind::BackendError);
    CHECK(rejecting.completion_calls() == 1);

    ScriptedServer garbage([](int, const nlohmann::json&) { return Reply{200, "", {}, "not json"}; });
    CHECK(kind_of([&] {
              remote_answer(remote_config(garbage), SoftPromptf(0, 8), build_instruction(""), question(1));
          })
          == ErrorKind::BackendError);
}

TEST_CASE("unreachable endpoint is a transport error")
{
    RemoteEndpointConfig cfg;
    cfg.base_url = "http://127.0.0.1:1";
    cfg.max_retries = 1;
    cfg.backoff = std::chrono::milliseconds(1);
    cfg.timeout = std::chrono::milliseconds(300);
    CHECK(kind_of([&] { remote_answer(cfg, SoftPromptf(0, 8), build_instruction(""), question(1)); })
          == ErrorKind::TransportError);

    cfg.base_url = "127.0.0.1:8000";
    CHECK(kind_of([&] { RemoteRespondent bad(cfg); }) == ErrorKind::ConfigError);
}

TEST_CASE("in-flight requests are bounded")
{
    std::atomic<int> current{0}, peak{0};
    ScriptedServer server([&](int, const nlohmann::json&) {
        const int now = ++current;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        --current;
        return Reply{200, "4", {}, {}};
    });
    auto cfg = remote_config(server);
    cfg.max_in_flight = 2;
    RemoteRespondent client(cfg);
    std::vector<std::jthread> threads;
    for (int t = 0; t < 6; ++t)
        threads.emplace_back([&] { client.answer(SoftPromptf(0, 8), build_instruction(""), question(1)); });
    threads.clear();
    CHECK(server.completion_calls() == 6);
    CHECK(peak.load() <= 2);
}

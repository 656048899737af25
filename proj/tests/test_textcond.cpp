#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "gmotion/textcond.hpp"

using namespace gmotion;

TEST_SUITE("textcond") {

TEST_CASE("empty prompt maps to the null embedding") {
  const TextEmbedding e = embed_text("");
  CHECK(e.is_null);
  for (double v : e.vec) CHECK(v == 0.0);
  CHECK(embed_text("  ,.!  ").is_null);
}

TEST_CASE("embedding is deterministic and unit norm") {
  const TextEmbedding a = embed_text("two people dancing");
  const TextEmbedding b = embed_text("two people dancing");
  CHECK(a.vec == b.vec);
  CHECK(!a.is_null);
  double norm = 0.0;
  for (double v : a.vec) norm += v * v;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("different prompts are not colinear") {
  const TextEmbedding a = embed_text("two people dancing");
  const TextEmbedding b = embed_text("three people running");
  double dot = 0.0;
  for (int i = 0; i < a.dim(); ++i) dot += a.vec[i] * b.vec[i];
  CHECK(dot < 1.0 - 1e-6);
}

TEST_CASE("tokenization ignores case and punctuation") {
  CHECK(embed_text("Two People, Dancing!").vec == embed_text("two people dancing").vec);
}

TEST_CASE("drop_condition endpoints") {
  Rng rng(1);
  const TextEmbedding e = embed_text("a person walks");
  for (int i = 0; i < 50; ++i) {
    CHECK(!drop_condition(e, 0.0, rng).is_null);
    CHECK(drop_condition(e, 1.0, rng).is_null);
  }
}

TEST_CASE("drop_condition hits the requested rate") {
  Rng rng(7);
  const TextEmbedding e = embed_text("a person walks");
  int dropped = 0;
  const int trials = 100000;
  for (int i = 0; i < trials; ++i)
    if (drop_condition(e, 0.1, rng).is_null) ++dropped;
  CHECK(std::abs(dropped / double(trials) - 0.1) < 0.01);
}

TEST_CASE("subject_count rules") {
  CHECK(subject_count("a man walks forward") == 1);
  CHECK(subject_count("two people shake hands") == 2);
  CHECK(subject_count("a group of five friends jumping") == 5); // numeral beats group word
  CHECK(subject_count("a group of dancers") == 4);
  CHECK(subject_count("a crowd gathers") == 4);
  CHECK(subject_count("friends hug each other") == 2);
  CHECK(subject_count("dancers rehearse") == 2);
  CHECK(subject_count("3 kids play") == 3);
  CHECK(subject_count("12 people march") == 10); // clamped
  CHECK(subject_count("one person stands still") == 1);
  CHECK(subject_count("a couple waltzes") == 2);
}

TEST_CASE("subject_count stays in range on arbitrary text") {
  Rng rng(3);
  const char* words[] = {"a", "people", "seven", "group", "0", "dances", "!!", "42"};
  for (int i = 0; i < 200; ++i) {
    std::string prompt;
    for (int w = 0; w < 6; ++w) {
      prompt += words[rand_index(rng, 8)];
      prompt += ' ';
    }
    const int n = subject_count(prompt);
    CHECK(n >= 1);
    CHECK(n <= 10);
  }
}

TEST_CASE("llm client overrides rules and falls back on failure") {
  httplib::Server server;
  std::atomic<int> mode{0}; // 0: integer, 1: object, 2: garbage, 3: http error
  std::string last_body;
  server.Post("/count", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = req.body;
    switch (mode.load()) {
      case 0: res.set_content("7", "application/json"); break;
      case 1: res.set_content("{\"count\": 3}", "application/json"); break;
      case 2: res.set_content("not json at all", "text/plain"); break;
      default: res.status = 500; break;
    }
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  LlmConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/count";
  const SubjectCountClient client(cfg);

  mode = 0;
  CHECK(subject_count("a man walks", &client) == 7);
  CHECK(last_body.find("how many subjects appear in this description") != std::string::npos);
  CHECK(last_body.find("a man walks") != std::string::npos);

  mode = 1;
  CHECK(subject_count("a man walks", &client) == 3);

  mode = 2; // schema violation: rules take over
  CHECK(subject_count("a man walks", &client) == 1);
  mode = 3; // transport failure: rules take over
  CHECK(subject_count("two people hug", &client) == 2);

  server.stop();
  server_thread.join();
}

TEST_CASE("llm client result is clamped like the rules") {
  httplib::Server server;
  server.Post("/count", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content("42", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  LlmConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/count";
  const SubjectCountClient client(cfg);
  CHECK(subject_count("a man walks", &client) == 10);

  server.stop();
  server_thread.join();
}

TEST_CASE("client requires a parsable endpoint") {
  LlmConfig cfg;
  cfg.endpoint = "ftp://nope";
  CHECK_THROWS_AS(SubjectCountClient{cfg}, ConfigError);
}

TEST_CASE("concurrent queries respect the in-flight bound") {
  httplib::Server server;
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  server.Post("/count", [&](const httplib::Request&, httplib::Response& res) {
    const int now = ++in_flight;
    int expected = peak.load();
    while (now > expected && !peak.compare_exchange_weak(expected, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --in_flight;
    res.set_content("2", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  LlmConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/count";
  cfg.max_in_flight = 2;
  const SubjectCountClient client(cfg);
  std::vector<std::thread> workers;
  for (int i = 0; i < 8; ++i)
    workers.emplace_back([&] { CHECK(client.query("three people") == 2); });
  for (auto& w : workers) w.join();
  CHECK(peak.load() <= 2);

  server.stop();
  server_thread.join();
}

} // TEST_SUITE

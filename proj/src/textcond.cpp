#include "gmotion/textcond.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <semaphore>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace gmotion {

namespace {

std::vector<std::string> tokenize(const std::string& prompt) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : prompt) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

// FNV-1a, fixed 64-bit: stable across platforms, unlike std::hash.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

} // namespace

TextEmbedding embed_text(const std::string& prompt, int dim) {
  const std::vector<std::string> tokens = tokenize(prompt);
  TextEmbedding e = TextEmbedding::null(dim);
  if (tokens.empty()) return e;

  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string gram = tokens[i];
    for (std::size_t len = 1; len <= 3; ++len) {
      if (len > 1) {
        if (i + len > tokens.size()) break;
        gram += '\x1f';
        gram += tokens[i + len - 1];
      }
      const std::uint64_t h = fnv1a(gram);
      const int bucket = static_cast<int>(h % static_cast<std::uint64_t>(dim));
      const double sign = ((h >> 32) & 1ULL) ? 1.0 : -1.0;
      e.vec[bucket] += sign;
    }
  }

  double norm = 0.0;
  for (double v : e.vec) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    // Signed counts cancelled; keep a nonzero deterministic direction so a
    // non-empty prompt never aliases the null condition.
    e.vec.assign(dim, 0.0);
    e.vec[static_cast<int>(fnv1a(tokens[0]) % static_cast<std::uint64_t>(dim))] = 1.0;
  } else {
    for (double& v : e.vec) v /= norm;
  }
  e.is_null = false;
  return e;
}

TextEmbedding drop_condition(const TextEmbedding& e, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw Error("drop_condition: p must be in [0,1]");
  if (rand_bernoulli(rng, p)) return TextEmbedding::null(e.dim());
  return e;
}

namespace {

const std::map<std::string, int>& number_words() {
  static const std::map<std::string, int> words = {
      {"one", 1},  {"two", 2},   {"three", 3}, {"four", 4}, {"five", 5},
      {"six", 6},  {"seven", 7}, {"eight", 8}, {"nine", 9}, {"ten", 10},
      {"couple", 2}, {"pair", 2}, {"both", 2}, {"trio", 3}, {"quartet", 4},
  };
  return words;
}

bool is_group_word(const std::string& t) {
  return t == "group" || t == "crowd" || t == "team" || t == "everyone" || t == "everybody";
}

bool is_plural_person_noun(const std::string& t) {
  static const char* nouns[] = {"people",  "persons", "men",     "women",  "boys",
                                "girls",   "children", "kids",   "friends", "dancers",
                                "players", "runners",  "workers", "guys",   "folks",
                                "adults",  "teenagers", "strangers", "partners", "humans"};
  for (const char* n : nouns)
    if (t == n) return true;
  return false;
}

int clamp_count(long v) { return static_cast<int>(std::clamp<long>(v, 1, 10)); }

} // namespace

int subject_count(const std::string& prompt) {
  const std::vector<std::string> tokens = tokenize(prompt);
  for (const std::string& t : tokens) {
    if (!t.empty() && std::isdigit(static_cast<unsigned char>(t[0]))) {
      char* end = nullptr;
      const long v = std::strtol(t.c_str(), &end, 10);
      if (end && *end == '\0' && v > 0) return clamp_count(v);
    }
    const auto it = number_words().find(t);
    if (it != number_words().end()) return it->second;
  }
  for (const std::string& t : tokens)
    if (is_group_word(t)) return 4;
  for (const std::string& t : tokens)
    if (is_plural_person_noun(t)) return 2;
  return 1;
}

struct SubjectCountClient::Impl {
  LlmConfig cfg;
  std::string host;
  int port = 80;
  std::string path = "/";
  mutable std::counting_semaphore<64> in_flight;

  explicit Impl(LlmConfig c) : cfg(std::move(c)), in_flight(std::max(1, cfg.max_in_flight)) {
    std::string rest = cfg.endpoint;
    const std::string scheme = "http://";
    if (rest.rfind(scheme, 0) != 0)
      throw ConfigError("SubjectCountClient: endpoint must start with http://");
    rest = rest.substr(scheme.size());
    const auto slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    path = slash == std::string::npos ? "/" : rest.substr(slash);
    const auto colon = hostport.find(':');
    if (colon == std::string::npos) {
      host = hostport;
    } else {
      host = hostport.substr(0, colon);
      port = std::atoi(hostport.c_str() + colon + 1);
    }
    if (host.empty() || port <= 0)
      throw ConfigError("SubjectCountClient: cannot parse endpoint " + cfg.endpoint);
  }
};

SubjectCountClient::SubjectCountClient(LlmConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
SubjectCountClient::~SubjectCountClient() = default;
const LlmConfig& SubjectCountClient::config() const { return impl_->cfg; }

std::optional<int> SubjectCountClient::query(const std::string& prompt) const {
  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<64>& sem;
    ~Release() { sem.release(); }
  } release{impl_->in_flight};

  try {
    httplib::Client client(impl_->host, impl_->port);
    client.set_connection_timeout(0, impl_->cfg.timeout_ms * 1000);
    client.set_read_timeout(0, impl_->cfg.timeout_ms * 1000);

    httplib::Headers headers;
    if (const char* key = std::getenv(impl_->cfg.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    nlohmann::json body;
    body["instruction"] = "how many subjects appear in this description";
    body["prompt"] = prompt;

    const auto res = client.Post(impl_->path, headers, body.dump(), "application/json");
    if (!res || res->status != 200) return std::nullopt;

    const auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) return std::nullopt;
    if (parsed.is_number_integer()) return parsed.get<int>();
    if (parsed.is_object() && parsed.contains("count") && parsed["count"].is_number_integer())
      return parsed["count"].get<int>();
    return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

int subject_count(const std::string& prompt, const SubjectCountClient* client) {
  if (client) {
    const std::optional<int> n = client->query(prompt);
    if (n && *n >= 1) return clamp_count(*n);
  }
  return subject_count(prompt);
}

} // namespace gmotion

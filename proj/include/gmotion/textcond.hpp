#ifndef GMOTION_TEXTCOND_HPP
#define GMOTION_TEXTCOND_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gmotion/common.hpp"

namespace gmotion {

constexpr int kDefaultTextDim = 256;

// Null condition is the all-zero vector; is_null tracks it explicitly so
// padding zeros can never be mistaken for a dropped condition.
struct TextEmbedding {
  std::vector<double> vec;
  bool is_null = true;

  static TextEmbedding null(int dim = kDefaultTextDim) {
    TextEmbedding e;
    e.vec.assign(dim, 0.0);
    e.is_null = true;
    return e;
  }
  int dim() const { return static_cast<int>(vec.size()); }
};

/// Deterministic bag of hashed token 1-3 grams with signed counts,
/// L2-normalized. Empty or punctuation-only prompts map to null.
TextEmbedding embed_text(const std::string& prompt, int dim = kDefaultTextDim);

/// With probability p, replaces the embedding with the null condition.
TextEmbedding drop_condition(const TextEmbedding& e, double p, Rng& rng);

/// Rule-based subject count in [1,10]: explicit numbers win, then group
/// words (4), then plural person nouns (2), else 1.
int subject_count(const std::string& prompt);

// Optional external counter with a strict single-integer response schema.
// The request carries the instruction verbatim plus the prompt; anything
// unparsable or out of contract falls back to the rules.
struct LlmConfig {
  std::string endpoint;                              // e.g. http://host:port/path
  std::string api_key_env = "GMOTION_LLM_API_KEY";   // key read from this env var
  int timeout_ms = 3000;
  int max_in_flight = 4;
};

class SubjectCountClient {
public:
  explicit SubjectCountClient(LlmConfig cfg);
  ~SubjectCountClient();
  SubjectCountClient(const SubjectCountClient&) = delete;
  SubjectCountClient& operator=(const SubjectCountClient&) = delete;

  /// Raw query; empty optional on transport or schema failure.
  std::optional<int> query(const std::string& prompt) const;

  const LlmConfig& config() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Rules with an optional client override; the override is validated and
/// clamped exactly like the rule output.
int subject_count(const std::string& prompt, const SubjectCountClient* client);

} // namespace gmotion

#endif

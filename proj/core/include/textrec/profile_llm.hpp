#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "textrec/data.hpp"
#include "textrec/rng.hpp"

namespace textrec {

enum class PromptKind { kItemGen, kUserGen, kItemDiversify, kUserDiversify };

/// Instruction plus required/optional input slots for one prompt shape.
struct PromptTemplate {
  PromptKind kind;
  std::string instruction;
  std::vector<std::string> required_slots;
  std::vector<std::string> optional_slots;

  static const PromptTemplate& get(PromptKind kind);
};

struct ChatMessage {
  std::string role;
  std::string content;
};

/// System message = instruction, user message = formatted slot payload.
/// Byte-deterministic; missing required slots, empty values, and unknown
/// slots are errors.
std::vector<ChatMessage> render_prompt(const PromptTemplate& tmpl,
                                       const std::map<std::string, std::string>& slots);

struct UserHistoryItem {
  std::string title;
  std::string profile;
  std::string review;  // may be empty
};

/// History sample cap for user profile generation.
inline constexpr std::int32_t kUserGenMaxItems = 5;

/// Samples min(max_items, history size) items without replacement and packs
/// their titles, profiles, and reviews into the user-gen "interactions" slot.
std::map<std::string, std::string> render_user_gen_input(
    const std::vector<UserHistoryItem>& history, std::int32_t max_items, Rng& rng);

inline std::map<std::string, std::string> render_user_gen_input(
    const std::vector<UserHistoryItem>& history, Rng& rng) {
  return render_user_gen_input(history, kUserGenMaxItems, rng);
}

/// Extracts the text after the first case-sensitive "REVISED PROFILE:" marker.
/// Throws ParseError (carrying the raw response) when the marker is absent or
/// the remainder is empty.
std::string parse_revision(const std::string& response_text);

// ---------------------------------------------------------------------------
// Chat-completion client.

struct LlmRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 1.0;
};

/// Canonical JSON body of the request.
std::string request_body_json(const LlmRequest& request);
/// sha256 of the canonical body; the key of mock transcript entries.
std::string request_hash(const LlmRequest& request);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const LlmRequest& request) = 0;
  virtual std::int64_t network_calls() const = 0;
  virtual std::int64_t total_calls() const = 0;
};

struct LlmClientConfig {
  std::string endpoint;         // e.g. https://api.example.com/v1/chat/completions
  std::string model = "gpt-3.5-turbo";
  std::string auth_env = "TEXTREC_API_KEY";
  double timeout_seconds = 30.0;
  int max_retries = 3;
  std::string mock_transcript;  // JSONL {request_hash, response_text}
  double temperature = 1.0;
};

/// Live client iff endpoint is set, offline transcript client iff
/// mock_transcript is set; exactly one must be configured.
std::unique_ptr<LlmClient> make_llm_client(const LlmClientConfig& config);

/// Deterministic offline client: answers from a transcript keyed by
/// request_hash, never touching the network.
class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(const std::string& transcript_path);
  explicit MockLlmClient(std::map<std::string, std::string> responses);

  std::string complete(const LlmRequest& request) override;
  std::int64_t network_calls() const override { return 0; }
  std::int64_t total_calls() const override { return calls_.load(); }

 private:
  std::map<std::string, std::string> responses_;
  std::atomic<std::int64_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Diversification.

struct DiversifyOptions {
  std::int32_t t = 3;
  bool user_side = true;       // selects the user vs item template
  std::string model = "gpt-3.5-turbo";
  double temperature = 1.0;
  std::string progress_path;   // JSONL {entity_id, iteration, profile}; optional
  int workers = 1;
};

struct DiversifyReport {
  std::int64_t calls_made = 0;
  std::int64_t resumed_iterations = 0;
  std::vector<std::string> failed_entities;
};

/// Grows every profile set to t diversified rewrites by chaining calls (call
/// j rephrases profile j-1). Progress persists after every successful call so
/// interrupted runs resume without repeating work. Index 0 is never touched;
/// failures flag the entity and the pipeline continues.
DiversifyReport diversify(ProfileMap& profiles, const std::vector<std::string>& order,
                          const DiversifyOptions& options, LlmClient& client);

}  // namespace textrec

#include "textrec/profile_llm.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "textrec/common.hpp"
#include "textrec/manifest.hpp"

// httplib last: its transitive system headers leak macros that break Eigen.
#include <httplib.h>

namespace textrec {

using nlohmann::json;

namespace {

// Diversification replies must lead with the exact marker parse_revision
// scans for.
const char* kUserDiversifyInstruction =
    "You will assist me in revising a user's profile while maintaining its original meaning. "
    "I will present you with the user's initial profile.\n\n"
    "Instructions:\n\n"
    "USER PROFILE: The original user profile.\n\n"
    "Requirements:\n\n"
    "1. Please provide the revised profile directly begin with \"REVISED PROFILE: \".\n"
    "2. The rephrased profile should minimize duplication with the original text while "
    "preserving its intended meaning.\n"
    "3. The revised profile should exhibit varied sentence structures while faithfully "
    "conveying the original profile's essence.";

const char* kItemDiversifyInstruction =
    "You will assist me in revising a item's profile while maintaining its original meaning. "
    "I will present you with the item's initial profile.\n\n"
    "Instructions:\n\n"
    "ITEM PROFILE: The original item profile.\n\n"
    "Requirements:\n\n"
    "1. Please provide the revised profile directly begin with \"REVISED PROFILE: \".\n"
    "2. The rephrased profile should minimize duplication with the original text while "
    "preserving its intended meaning.\n"
    "3. The revised profile should exhibit varied sentence structures while faithfully "
    "conveying the original profile's essence.";

// Project defaults for first-time profile generation; the upstream generation
// wording is not public, so these are our own.
const char* kItemGenInstruction =
    "You will write a concise yet informative profile for a catalog item. I will give you the "
    "item's title and any category, description, or customer reviews that are available. "
    "Summarize what the item is and who would enjoy it in two or three sentences, writing "
    "plain prose with no lists or headings.";

const char* kUserGenInstruction =
    "You will write a concise profile of a user's preferences. I will give you a sample of "
    "items the user interacted with: each entry holds the item's title, its profile, and the "
    "user's review when one exists. Describe in two or three sentences what this user enjoys "
    "and values, writing plain prose with no lists or headings.";

const char* kRevisionMarker = "REVISED PROFILE:";

std::string format_slot_block(const std::string& label, const std::string& value) {
  return label + ": " + value;
}

}  // namespace

const PromptTemplate& PromptTemplate::get(PromptKind kind) {
  static const PromptTemplate item_gen{PromptKind::kItemGen, kItemGenInstruction,
                                       {"title"},
                                       {"category", "description", "reviews"}};
  static const PromptTemplate user_gen{PromptKind::kUserGen, kUserGenInstruction,
                                       {"interactions"},
                                       {}};
  static const PromptTemplate item_div{PromptKind::kItemDiversify, kItemDiversifyInstruction,
                                       {"profile"},
                                       {}};
  static const PromptTemplate user_div{PromptKind::kUserDiversify, kUserDiversifyInstruction,
                                       {"profile"},
                                       {}};
  switch (kind) {
    case PromptKind::kItemGen: return item_gen;
    case PromptKind::kUserGen: return user_gen;
    case PromptKind::kItemDiversify: return item_div;
    case PromptKind::kUserDiversify: return user_div;
  }
  throw DataError("invalid prompt kind");
}

std::vector<ChatMessage> render_prompt(const PromptTemplate& tmpl,
                                       const std::map<std::string, std::string>& slots) {
  for (const auto& [key, value] : slots) {
    const bool known =
        std::find(tmpl.required_slots.begin(), tmpl.required_slots.end(), key) !=
            tmpl.required_slots.end() ||
        std::find(tmpl.optional_slots.begin(), tmpl.optional_slots.end(), key) !=
            tmpl.optional_slots.end();
    if (!known) throw DataError("unknown prompt slot '" + key + "'");
    if (value.empty()) throw DataError("prompt slot '" + key + "' is empty");
  }
  for (const auto& required : tmpl.required_slots) {
    if (!slots.count(required)) throw DataError("missing prompt slot '" + required + "'");
  }

  std::string body;
  switch (tmpl.kind) {
    case PromptKind::kUserDiversify:
      body = format_slot_block("USER PROFILE", slots.at("profile"));
      break;
    case PromptKind::kItemDiversify:
      body = format_slot_block("ITEM PROFILE", slots.at("profile"));
      break;
    case PromptKind::kItemGen: {
      body = format_slot_block("TITLE", slots.at("title"));
      for (const char* key : {"category", "description", "reviews"}) {
        auto it = slots.find(key);
        if (it != slots.end()) {
          std::string label = key;
          std::transform(label.begin(), label.end(), label.begin(),
                         [](unsigned char c) { return std::toupper(c); });
          body += "\n" + format_slot_block(label, it->second);
        }
      }
      break;
    }
    case PromptKind::kUserGen:
      body = format_slot_block("INTERACTED ITEMS", slots.at("interactions"));
      break;
  }
  return {{"system", tmpl.instruction}, {"user", body}};
}

std::map<std::string, std::string> render_user_gen_input(
    const std::vector<UserHistoryItem>& history, std::int32_t max_items, Rng& rng) {
  if (history.empty()) throw DataError("render_user_gen_input: empty interaction history");
  if (max_items < 1) throw DataError("render_user_gen_input: max_items must be >= 1");
  const auto picks = rng.sample_without_replacement(
      history.size(), static_cast<std::size_t>(max_items));
  std::string block;
  for (std::size_t n = 0; n < picks.size(); ++n) {
    const auto& item = history[picks[n]];
    if (n > 0) block += "\n\n";
    block += "TITLE: " + item.title + "\nPROFILE: " + item.profile;
    if (!item.review.empty()) block += "\nREVIEW: " + item.review;
  }
  return {{"interactions", block}};
}

std::string parse_revision(const std::string& response_text) {
  const auto at = response_text.find(kRevisionMarker);
  if (at == std::string::npos) {
    throw ParseError("response lacks the 'REVISED PROFILE:' marker", response_text);
  }
  std::string rest = response_text.substr(at + std::string(kRevisionMarker).size());
  const auto begin = rest.find_first_not_of(" \t\r\n");
  const auto end = rest.find_last_not_of(" \t\r\n");
  if (begin == std::string::npos) {
    throw ParseError("empty revised profile after marker", response_text);
  }
  return rest.substr(begin, end - begin + 1);
}

// ---------------------------------------------------------------------------
// Clients

std::string request_body_json(const LlmRequest& request) {
  json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  body["messages"] = json::array();
  for (const auto& message : request.messages) {
    body["messages"].push_back({{"role", message.role}, {"content", message.content}});
  }
  return body.dump();
}

std::string request_hash(const LlmRequest& request) {
  return sha256_hex(request_body_json(request));
}

MockLlmClient::MockLlmClient(const std::string& transcript_path) {
  std::ifstream in(transcript_path, std::ios::binary);
  if (!in) throw DataError("cannot open mock transcript: " + transcript_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.contains("request_hash") || !obj.contains("response_text")) {
      throw DataError(transcript_path + ":" + std::to_string(line_no) +
                      ": transcript lines need request_hash and response_text");
    }
    responses_[obj["request_hash"].get<std::string>()] = obj["response_text"].get<std::string>();
  }
}

MockLlmClient::MockLlmClient(std::map<std::string, std::string> responses)
    : responses_(std::move(responses)) {}

std::string MockLlmClient::complete(const LlmRequest& request) {
  calls_.fetch_add(1);
  const std::string key = request_hash(request);
  auto it = responses_.find(key);
  if (it == responses_.end()) {
    throw DataError("mock transcript has no entry for request hash " + key);
  }
  return it->second;
}

namespace {

class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(LlmClientConfig config) : config_(std::move(config)) {
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos) {
      throw DataError("endpoint must start with http:// or https://");
    }
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base_ = config_.endpoint;
      path_ = "/";
    } else {
      base_ = config_.endpoint.substr(0, path_start);
      path_ = config_.endpoint.substr(path_start);
    }
  }

  std::string complete(const LlmRequest& request) override {
    const std::string body = request_body_json(request);
    httplib::Headers headers;
    if (const char* token = std::getenv(config_.auth_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(
            static_cast<std::int64_t>(500.0 * static_cast<double>(1 << (attempt - 1)))));
      }
      calls_.fetch_add(1);
      httplib::Client client(base_);
      client.set_connection_timeout(static_cast<time_t>(config_.timeout_seconds), 0);
      client.set_read_timeout(static_cast<time_t>(config_.timeout_seconds), 0);
      auto res = client.Post(path_, headers, body, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw DataError("chat endpoint returned HTTP " + std::to_string(res->status) + ": " +
                        res->body);
      }
      json reply = json::parse(res->body, nullptr, false);
      if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty() ||
          !reply["choices"][0].contains("message")) {
        throw ParseError("chat endpoint returned an unexpected body", res->body);
      }
      return reply["choices"][0]["message"]["content"].get<std::string>();
    }
    throw DataError("chat endpoint unreachable after " + std::to_string(config_.max_retries + 1) +
                    " attempts (" + last_error + ")");
  }

  std::int64_t network_calls() const override { return calls_.load(); }
  std::int64_t total_calls() const override { return calls_.load(); }

 private:
  LlmClientConfig config_;
  std::string base_, path_;
  std::atomic<std::int64_t> calls_{0};
};

}  // namespace

std::unique_ptr<LlmClient> make_llm_client(const LlmClientConfig& config) {
  const bool live = !config.endpoint.empty();
  const bool mock = !config.mock_transcript.empty();
  if (live == mock) {
    throw DataError("configure exactly one of a live endpoint or a mock transcript");
  }
  if (mock) return std::make_unique<MockLlmClient>(config.mock_transcript);
  return std::make_unique<HttpLlmClient>(config);
}

// ---------------------------------------------------------------------------
// Diversification

namespace {

struct ProgressEntry {
  std::string entity_id;
  std::int32_t iteration;
  std::string profile;
};

std::vector<ProgressEntry> read_progress(const std::string& path) {
  std::vector<ProgressEntry> entries;
  std::ifstream in(path, std::ios::binary);
  if (!in) return entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.contains("entity_id") || !obj.contains("iteration") ||
        !obj.contains("profile")) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed progress line");
    }
    entries.push_back({obj["entity_id"].get<std::string>(), obj["iteration"].get<std::int32_t>(),
                       obj["profile"].get<std::string>()});
  }
  return entries;
}

}  // namespace

DiversifyReport diversify(ProfileMap& profiles, const std::vector<std::string>& order,
                          const DiversifyOptions& options, LlmClient& client) {
  if (options.t < 1) throw DataError("diversify: t must be >= 1");
  DiversifyReport report;

  // Resume: apply contiguous iterations recorded by an earlier run.
  if (!options.progress_path.empty()) {
    for (const auto& entry : read_progress(options.progress_path)) {
      auto it = profiles.find(entry.entity_id);
      if (it == profiles.end()) continue;
      if (entry.iteration == static_cast<std::int32_t>(it->second.profiles.size()) &&
          entry.iteration <= options.t && !entry.profile.empty()) {
        it->second.profiles.push_back(entry.profile);
        ++report.resumed_iterations;
      }
    }
  }

  std::mutex io_mutex;
  std::ofstream progress;
  if (!options.progress_path.empty()) {
    progress.open(options.progress_path, std::ios::binary | std::ios::app);
    if (!progress) throw DataError("cannot open progress file: " + options.progress_path);
  }

  const PromptTemplate& tmpl = PromptTemplate::get(options.user_side ? PromptKind::kUserDiversify
                                                                     : PromptKind::kItemDiversify);

  std::atomic<std::size_t> cursor{0};
  std::atomic<std::int64_t> calls{0};
  std::mutex failures_mutex;

  auto worker = [&] {
    while (true) {
      const std::size_t idx = cursor.fetch_add(1);
      if (idx >= order.size()) return;
      auto it = profiles.find(order[idx]);
      if (it == profiles.end()) {
        std::lock_guard lock(failures_mutex);
        report.failed_entities.push_back(order[idx]);
        continue;
      }
      ProfileSet& set = it->second;
      bool failed = false;
      while (static_cast<std::int32_t>(set.profiles.size()) <= options.t) {
        const std::string& source = set.profiles.back();
        LlmRequest request;
        request.model = options.model;
        request.temperature = options.temperature;
        request.messages = render_prompt(tmpl, {{"profile", source}});
        std::string revised;
        try {
          const std::string response = client.complete(request);
          calls.fetch_add(1);
          revised = parse_revision(response);
        } catch (const std::exception&) {
          failed = true;
          break;
        }
        set.profiles.push_back(revised);
        if (progress.is_open()) {
          json line;
          line["entity_id"] = set.entity_id;
          line["iteration"] = static_cast<std::int32_t>(set.profiles.size()) - 1;
          line["profile"] = revised;
          std::lock_guard lock(io_mutex);
          progress << line.dump() << '\n';
          progress.flush();
        }
      }
      if (failed) {
        std::lock_guard lock(failures_mutex);
        report.failed_entities.push_back(set.entity_id);
      }
    }
  };

  const int workers = std::max(1, options.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::sort(report.failed_entities.begin(), report.failed_entities.end());
  report.calls_made = calls.load();
  return report;
}

}  // namespace textrec

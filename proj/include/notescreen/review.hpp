#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "notescreen/common.hpp"
#include "notescreen/explain.hpp"
#include "notescreen/textproc.hpp"

namespace notescreen::review {

enum class Condition { unaided, ai_assisted };

std::string_view condition_name(Condition c);
Condition parse_condition(std::string_view s);

// Request-level failure carrying an HTTP status.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

struct TopSentence {
  std::size_t index = 0;
  double score = 0.0;
  std::size_t rank = 0;
  explain::PhenotypeCategory category = explain::PhenotypeCategory::Unassigned;
};

struct CaseAssist {
  Label predicted = Label::Epilepsy;
  double p_epilepsy = 0.5;
  std::vector<TopSentence> top;
};

struct CaseRecord {
  std::string id;
  std::string text;
  Label label = Label::Epilepsy;
  std::vector<textproc::Span> sentences;
  std::optional<CaseAssist> assist;
};

struct RegisteredCohort {
  std::string cohort_id;
  std::vector<CaseRecord> cases;
  std::map<std::string, std::size_t> index;

  bool fully_attributed() const;
};

struct Decision {
  std::string case_id;
  Label label = Label::Epilepsy;
  std::int64_t timestamp_ms = 0;
  std::int64_t elapsed_ms = 0;
};

struct ReviewSession {
  std::string session_id;
  Condition condition = Condition::unaided;
  std::string cohort_id;
  std::uint64_t seed = 0;
  std::vector<std::string> case_order;
  std::vector<Decision> decisions;  // in recording order
  std::vector<std::string> reviewers;
  std::int64_t created_at = 0;
};

inline constexpr std::size_t kAssistTopK = 10;

// Serialized case payload. Unaided views carry no model output at all.
nlohmann::json case_view(const CaseRecord& c, Condition condition);

// Keys that must never appear in an unaided payload.
inline const std::vector<std::string> kBlindedKeys = {"predicted_label", "probability", "score",
                                                      "category", "rank", "p_epilepsy", "assist"};

// Recursive key scan; returns the first forbidden key found.
std::optional<std::string> find_blinded_key(const nlohmann::json& doc);

// Case-level record built from a note and, optionally, its attribution report.
CaseRecord make_case(const nlohmann::json& note, const nlohmann::json* attribution);

// Session state behind the HTTP API. Every mutation is an event appended to a JSONL log
// before it is applied; opening a store on an existing log replays it.
class ReviewStore {
 public:
  using Clock = std::function<std::int64_t()>;  // milliseconds

  explicit ReviewStore(std::optional<std::filesystem::path> log_path = std::nullopt,
                       Clock clock = {});
  ~ReviewStore();
  ReviewStore(const ReviewStore&) = delete;
  ReviewStore& operator=(const ReviewStore&) = delete;

  // POST /cohorts: {cohort_id, notes:[...], attributions:[...]?}
  nlohmann::json register_cohort(const nlohmann::json& body);
  // POST /sessions: {cohort_id, condition, seed, reviewers}
  nlohmann::json create_session(const nlohmann::json& body);
  // GET /sessions/{id}/next
  nlohmann::json next_case(const std::string& session_id);
  // POST /sessions/{id}/decision: {case_id, label, elapsed_ms?}
  nlohmann::json record_decision(const std::string& session_id, const nlohmann::json& body);
  // GET /sessions/{id}/report
  nlohmann::json report(const std::string& session_id) const;

  std::optional<ReviewSession> session(const std::string& session_id) const;
  std::size_t event_count() const;

  // Report computed by replaying a log into a fresh, read-only store.
  static nlohmann::json report_from_log(const std::filesystem::path& log_path,
                                        const std::string& session_id);

 private:
  struct SessionSlot {
    mutable std::shared_mutex mutex;
    ReviewSession state;
    std::optional<std::int64_t> served_at;
  };

  nlohmann::json append(nlohmann::json event);
  void apply(const nlohmann::json& event);
  SessionSlot& slot(const std::string& session_id) const;
  std::shared_ptr<const RegisteredCohort> cohort(const std::string& cohort_id) const;

  std::optional<std::filesystem::path> log_path_;
  std::ofstream log_;
  Clock clock_;
  std::mutex log_mutex_;
  std::uint64_t seq_ = 0;
  mutable std::shared_mutex maps_mutex_;
  std::map<std::string, std::shared_ptr<const RegisteredCohort>> cohorts_;
  std::map<std::string, std::unique_ptr<SessionSlot>> sessions_;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

// Routes one request; used by the HTTP server and directly by tests.
Response dispatch(ReviewStore& store, const std::string& method, const std::string& path,
                  const std::string& body);

class ReviewServer {
 public:
  explicit ReviewServer(ReviewStore& store);
  ~ReviewServer();

  // Binds the port (0 picks a free one). Throws RuntimeFailure when the port is taken.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace notescreen::review

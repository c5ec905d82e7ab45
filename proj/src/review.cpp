#include "notescreen/review.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include <httplib.h>

#include "notescreen/corpus.hpp"
#include "notescreen/eval.hpp"
#include "notescreen/random.hpp"

namespace notescreen::review {

using nlohmann::json;

std::string_view condition_name(Condition c) {
  return c == Condition::unaided ? "unaided" : "ai_assisted";
}

Condition parse_condition(std::string_view s) {
  if (s == "unaided") return Condition::unaided;
  if (s == "ai_assisted") return Condition::ai_assisted;
  throw ApiError(400, "bad_condition", "unknown condition \"" + std::string(s) + "\"");
}

bool RegisteredCohort::fully_attributed() const {
  return std::all_of(cases.begin(), cases.end(), [](const CaseRecord& c) { return c.assist.has_value(); });
}

json case_view(const CaseRecord& c, Condition condition) {
  json sentences = json::array();
  for (std::size_t i = 0; i < c.sentences.size(); ++i) {
    sentences.push_back({{"index", i}, {"start", c.sentences[i].begin}, {"end", c.sentences[i].end}});
  }
  json view{{"case_id", c.id}, {"text", c.text}, {"sentences", std::move(sentences)}};
  if (condition == Condition::ai_assisted && c.assist) {
    json top = json::array();
    for (const auto& t : c.assist->top) {
      top.push_back({{"index", t.index},
                     {"score", t.score},
                     {"rank", t.rank},
                     {"category", explain::category_name(t.category)}});
    }
    view["assist"] = {{"predicted_label", label_name(c.assist->predicted)},
                      {"p_epilepsy", c.assist->p_epilepsy},
                      {"top_sentences", std::move(top)}};
  }
  return view;
}

std::optional<std::string> find_blinded_key(const json& doc) {
  if (doc.is_object()) {
    for (const auto& [key, value] : doc.items()) {
      if (std::find(kBlindedKeys.begin(), kBlindedKeys.end(), key) != kBlindedKeys.end()) return key;
      if (auto hit = find_blinded_key(value)) return hit;
    }
  } else if (doc.is_array()) {
    for (const auto& value : doc) {
      if (auto hit = find_blinded_key(value)) return hit;
    }
  }
  return std::nullopt;
}

CaseRecord make_case(const json& note_doc, const json* attribution) {
  corpus::Note note;
  try {
    note = corpus::note_from_json(note_doc);
  } catch (const std::exception& e) {
    throw ApiError(400, "bad_note", e.what());
  }
  CaseRecord c;
  c.id = note.id;
  c.text = note.text;
  c.label = note.label;
  for (const auto& s : textproc::segment_sentences(c.text).sentences) c.sentences.push_back(s.chars);
  if (attribution == nullptr) return c;
  try {
    const auto report = explain::attribution_from_json(*attribution);
    if (report.spans != c.sentences) {
      throw ApiError(400, "bad_attribution",
                     "attribution sentences for \"" + c.id + "\" do not match the note text");
    }
    CaseAssist assist;
    assist.predicted = parse_label(attribution->at("predicted_label").get<std::string>());
    assist.p_epilepsy = attribution->at("p_epilepsy").get<double>();
    for (std::size_t idx : report.ranked()) {
      if (assist.top.size() == kAssistTopK) break;
      const auto& s = report.sentences[idx];
      assist.top.push_back({s.index, s.score, s.rank, report.categories[idx]});
    }
    c.assist = std::move(assist);
  } catch (const json::exception& e) {
    throw ApiError(400, "bad_attribution", std::string("attribution for \"") + c.id + "\": " + e.what());
  } catch (const DataError& e) {
    throw ApiError(400, "bad_attribution", std::string("attribution for \"") + c.id + "\": " + e.what());
  }
  return c;
}

// ---- store ---------------------------------------------------------------------------

namespace {

std::int64_t system_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string session_id_for(std::uint64_t seq) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s-%06llu", static_cast<unsigned long long>(seq));
  return buf;
}

json progress(const ReviewSession& s) {
  return {{"decided", s.decisions.size()}, {"total", s.case_order.size()}};
}

const json& require(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key)) {
    throw ApiError(400, "missing_field", std::string("missing field \"") + key + "\"");
  }
  return body.at(key);
}

std::string require_string(const json& body, const char* key) {
  const auto& v = require(body, key);
  if (!v.is_string()) throw ApiError(400, "bad_field", std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

Label require_label(const json& body) {
  const std::string s = require_string(body, "label");
  try {
    return parse_label(s);
  } catch (const DataError& e) {
    throw ApiError(400, "bad_label", e.what());
  }
}

}  // namespace

ReviewStore::ReviewStore(std::optional<std::filesystem::path> log_path, Clock clock)
    : log_path_(std::move(log_path)), clock_(clock ? std::move(clock) : Clock(system_ms)) {
  if (!log_path_) return;
  if (std::filesystem::exists(*log_path_)) {
    std::ifstream in(*log_path_, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    std::uintmax_t good_bytes = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const bool terminated = !in.eof();
      if (line.empty()) {
        good_bytes += 1;
        continue;
      }
      json event;
      try {
        event = json::parse(line);
      } catch (const json::parse_error&) {
        // A torn final write is dropped; anything else is corruption.
        if (!terminated) break;
        throw DataError("event log line " + std::to_string(line_no) + " is not valid JSON");
      }
      if (!terminated) break;
      const auto seq = event.value("seq", std::uint64_t{0});
      if (seq != seq_ + 1) {
        throw DataError("event log line " + std::to_string(line_no) + ": sequence " +
                        std::to_string(seq) + " follows " + std::to_string(seq_));
      }
      apply(event);
      seq_ = seq;
      good_bytes += line.size() + 1;
    }
    in.close();
    if (std::filesystem::file_size(*log_path_) != good_bytes) {
      std::filesystem::resize_file(*log_path_, good_bytes);
    }
  }
  log_.open(*log_path_, std::ios::app | std::ios::binary);
  if (!log_) throw RuntimeFailure("cannot open event log " + log_path_->string());
}

ReviewStore::~ReviewStore() = default;

json ReviewStore::append(json event) {
  event["seq"] = seq_ + 1;
  if (log_.is_open()) {
    log_ << event.dump() << '\n';
    log_.flush();
    if (!log_) throw RuntimeFailure("event log write failed");
  }
  ++seq_;
  return event;
}

void ReviewStore::apply(const json& event) {
  const std::string type = event.at("type").get<std::string>();
  if (type == "cohort_registered") {
    auto c = std::make_shared<RegisteredCohort>();
    c->cohort_id = event.at("cohort_id").get<std::string>();
    std::map<std::string, const json*> attributions;
    for (const auto& a : event.at("attributions")) attributions[a.at("note_id").get<std::string>()] = &a;
    for (const auto& n : event.at("notes")) {
      const std::string id = n.at("id").get<std::string>();
      const auto it = attributions.find(id);
      c->index[id] = c->cases.size();
      c->cases.push_back(make_case(n, it == attributions.end() ? nullptr : it->second));
    }
    std::unique_lock lock(maps_mutex_);
    cohorts_[c->cohort_id] = std::move(c);
  } else if (type == "session_created") {
    auto s = std::make_unique<SessionSlot>();
    s->state.session_id = event.at("session_id").get<std::string>();
    s->state.condition = parse_condition(event.at("condition").get<std::string>());
    s->state.cohort_id = event.at("cohort_id").get<std::string>();
    s->state.seed = event.at("seed").get<std::uint64_t>();
    s->state.case_order = event.at("case_order").get<std::vector<std::string>>();
    s->state.reviewers = event.at("reviewers").get<std::vector<std::string>>();
    s->state.created_at = event.at("created_at").get<std::int64_t>();
    std::unique_lock lock(maps_mutex_);
    const std::string id = s->state.session_id;
    sessions_[id] = std::move(s);
  } else if (type == "decision_recorded") {
    // Callers hold the session's write lock (or are single-threaded during replay).
    auto& s = slot(event.at("session_id").get<std::string>());
    s.state.decisions.push_back({event.at("case_id").get<std::string>(),
                                 parse_label(event.at("label").get<std::string>()),
                                 event.at("timestamp_ms").get<std::int64_t>(),
                                 event.at("elapsed_ms").get<std::int64_t>()});
    s.served_at.reset();
  } else {
    throw DataError("unknown event type \"" + type + "\"");
  }
}

ReviewStore::SessionSlot& ReviewStore::slot(const std::string& session_id) const {
  std::shared_lock lock(maps_mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ApiError(404, "unknown_session", "no session \"" + session_id + "\"");
  return *it->second;
}

std::shared_ptr<const RegisteredCohort> ReviewStore::cohort(const std::string& cohort_id) const {
  std::shared_lock lock(maps_mutex_);
  const auto it = cohorts_.find(cohort_id);
  if (it == cohorts_.end()) throw ApiError(404, "unknown_cohort", "no cohort \"" + cohort_id + "\"");
  return it->second;
}

json ReviewStore::register_cohort(const json& body) {
  const std::string cohort_id = require_string(body, "cohort_id");
  const json& notes = require(body, "notes");
  if (!notes.is_array() || notes.empty()) throw ApiError(400, "bad_notes", "notes must be a non-empty array");
  json attributions = body.value("attributions", json::array());
  if (!attributions.is_array()) throw ApiError(400, "bad_attributions", "attributions must be an array");

  // Validate fully before anything reaches the log.
  std::map<std::string, const json*> by_id;
  for (const auto& a : attributions) {
    if (!a.is_object() || !a.contains("note_id") || !a.at("note_id").is_string()) {
      throw ApiError(400, "bad_attribution", "every attribution needs a note_id");
    }
    by_id[a.at("note_id").get<std::string>()] = &a;
  }
  std::map<std::string, bool> seen;
  std::size_t attributed = 0;
  for (const auto& n : notes) {
    const CaseRecord c = make_case(n, nullptr);
    if (seen.count(c.id)) throw ApiError(400, "duplicate_case", "duplicate note id \"" + c.id + "\"");
    seen[c.id] = true;
    const auto it = by_id.find(c.id);
    if (it != by_id.end()) {
      make_case(n, it->second);
      ++attributed;
    }
  }
  if (attributed != by_id.size()) {
    throw ApiError(400, "bad_attribution", "attribution refers to a note outside the cohort");
  }

  std::lock_guard log_lock(log_mutex_);
  {
    std::shared_lock lock(maps_mutex_);
    if (cohorts_.count(cohort_id)) {
      throw ApiError(409, "cohort_exists", "cohort \"" + cohort_id + "\" is already registered");
    }
  }
  const json event = append({{"type", "cohort_registered"},
                             {"cohort_id", cohort_id},
                             {"notes", notes},
                             {"attributions", attributions}});
  apply(event);
  return {{"cohort_id", cohort_id},
          {"cases", notes.size()},
          {"attributed", attributed},
          {"ai_assisted_available", attributed == notes.size()}};
}

json ReviewStore::create_session(const json& body) {
  const std::string cohort_id = require_string(body, "cohort_id");
  const Condition condition = parse_condition(require_string(body, "condition"));
  std::uint64_t seed = 0;
  if (body.contains("seed")) {
    const auto& v = body.at("seed");
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ApiError(400, "bad_field", "seed must be a non-negative integer");
    }
    seed = body.at("seed").get<std::uint64_t>();
  }
  std::vector<std::string> reviewers;
  if (body.contains("reviewers")) {
    try {
      reviewers = body.at("reviewers").get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw ApiError(400, "bad_field", "reviewers must be an array of strings");
    }
  }
  const auto c = cohort(cohort_id);
  if (condition == Condition::ai_assisted && !c->fully_attributed()) {
    throw ApiError(409, "missing_attributions",
                   "cohort \"" + cohort_id + "\" lacks attributions for ai_assisted review");
  }
  std::vector<std::string> order;
  for (const auto& cs : c->cases) order.push_back(cs.id);
  Rng rng(derive_seed(seed, 0x5e55));
  rng.shuffle(std::span<std::string>(order));

  std::lock_guard log_lock(log_mutex_);
  const std::string session_id = session_id_for(seq_ + 1);
  const json event = append({{"type", "session_created"},
                             {"session_id", session_id},
                             {"cohort_id", cohort_id},
                             {"condition", condition_name(condition)},
                             {"seed", seed},
                             {"reviewers", reviewers},
                             {"created_at", clock_()},
                             {"case_order", order}});
  apply(event);
  return {{"session_id", session_id},
          {"condition", condition_name(condition)},
          {"cases", order.size()},
          {"case_order", order}};
}

json ReviewStore::next_case(const std::string& session_id) {
  auto& s = slot(session_id);
  std::unique_lock lock(s.mutex);
  const auto& st = s.state;
  if (st.decisions.size() == st.case_order.size()) {
    return {{"done", true}, {"progress", progress(st)}};
  }
  const auto c = cohort(st.cohort_id);
  const auto& record = c->cases[c->index.at(st.case_order[st.decisions.size()])];
  if (!s.served_at) s.served_at = clock_();
  return {{"done", false}, {"case", case_view(record, st.condition)}, {"progress", progress(st)}};
}

json ReviewStore::record_decision(const std::string& session_id, const json& body) {
  const std::string case_id = require_string(body, "case_id");
  const Label label = require_label(body);
  std::optional<std::int64_t> elapsed;
  if (body.contains("elapsed_ms")) {
    if (!body.at("elapsed_ms").is_number_integer() || body.at("elapsed_ms").get<std::int64_t>() < 0) {
      throw ApiError(400, "bad_field", "elapsed_ms must be a non-negative integer");
    }
    elapsed = body.at("elapsed_ms").get<std::int64_t>();
  }

  auto& s = slot(session_id);
  std::unique_lock lock(s.mutex);
  const auto& st = s.state;
  const auto c = cohort(st.cohort_id);
  if (!c->index.count(case_id)) {
    throw ApiError(400, "unknown_case", "case \"" + case_id + "\" is not in this session");
  }
  for (const auto& d : st.decisions) {
    if (d.case_id != case_id) continue;
    if (d.label != label) {
      throw ApiError(409, "conflicting_decision",
                     "case \"" + case_id + "\" was already decided as " + std::string(label_name(d.label)));
    }
    return {{"acknowledged", true}, {"duplicate", true}, {"progress", progress(st)}};
  }
  const std::string& expected = st.case_order[st.decisions.size()];
  if (case_id != expected) {
    throw ApiError(409, "out_of_order", "expected a decision for \"" + expected + "\", got \"" + case_id + "\"");
  }
  const std::int64_t now = clock_();
  if (!elapsed) elapsed = s.served_at ? std::max<std::int64_t>(0, now - *s.served_at) : 0;

  std::lock_guard log_lock(log_mutex_);
  const json event = append({{"type", "decision_recorded"},
                             {"session_id", session_id},
                             {"case_id", case_id},
                             {"label", label_name(label)},
                             {"timestamp_ms", now},
                             {"elapsed_ms", *elapsed}});
  apply(event);
  return {{"acknowledged", true}, {"duplicate", false}, {"seq", event.at("seq")}, {"progress", progress(st)}};
}

json ReviewStore::report(const std::string& session_id) const {
  auto& s = slot(session_id);
  std::shared_lock lock(s.mutex);
  const auto& st = s.state;
  if (st.decisions.empty()) throw ApiError(409, "no_decisions", "session has no decisions yet");
  const auto c = cohort(st.cohort_id);

  std::vector<double> human_scores;
  std::vector<Label> truth;
  std::vector<double> human_correct;
  std::vector<double> model_correct;
  bool model_available = true;
  for (const auto& d : st.decisions) {
    const auto& record = c->cases[c->index.at(d.case_id)];
    human_scores.push_back(d.label == Label::Epilepsy ? 1.0 : 0.0);
    truth.push_back(record.label);
    human_correct.push_back(d.label == record.label ? 1.0 : 0.0);
    if (record.assist) {
      model_correct.push_back(record.assist->predicted == record.label ? 1.0 : 0.0);
    } else {
      model_available = false;
    }
  }
  const auto acc = eval::accuracy(human_scores, truth);
  eval::BootstrapOptions opts;
  opts.seed = st.seed;
  const auto boot = eval::bootstrap_ci(
      [](std::span<const double> sc, std::span<const Label> lb) { return eval::accuracy(sc, lb).accuracy; },
      human_scores, truth, opts);

  json out{{"session_id", st.session_id},
           {"cohort_id", st.cohort_id},
           {"condition", condition_name(st.condition)},
           {"n_cases", st.case_order.size()},
           {"n_decisions", st.decisions.size()},
           {"complete", st.decisions.size() == st.case_order.size()},
           {"accuracy", acc.accuracy},
           {"ci_accuracy", {{"lower", boot.ci.lo}, {"upper", boot.ci.hi}}},
           {"n_boot", opts.n_boot},
           {"seed", st.seed},
           {"confusion", eval::confusion_to_json(acc.confusion)}};
  if (model_available) {
    double model_acc = 0.0;
    for (double x : model_correct) model_acc += x;
    model_acc /= static_cast<double>(model_correct.size());
    const auto u = eval::mann_whitney_u(human_correct, model_correct);
    out["model_comparison"] = {{"model_accuracy", model_acc},
                               {"u", u.u},
                               {"p", u.p},
                               {"method", eval::method_name(u.method)},
                               {"stars", eval::significance_stars(u.p)}};
  }
  return out;
}

std::optional<ReviewSession> ReviewStore::session(const std::string& session_id) const {
  std::shared_lock maps(maps_mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return std::nullopt;
  std::shared_lock lock(it->second->mutex);
  return it->second->state;
}

std::size_t ReviewStore::event_count() const { return seq_; }

json ReviewStore::report_from_log(const std::filesystem::path& log_path, const std::string& session_id) {
  if (!std::filesystem::exists(log_path)) throw DataError("missing event log " + log_path.string());
  ReviewStore replay(log_path);
  return replay.report(session_id);
}

// ---- routing -------------------------------------------------------------------------

namespace {

Response error(int status, const std::string& code, const std::string& message) {
  return {status, {{"code", code}, {"message", message}}};
}

std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string::npos ? path.size() : j;
    if (end > i) out.push_back(path.substr(i, end - i));
    i = end;
  }
  return out;
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw ApiError(400, "bad_json", std::string("request body is not valid JSON: ") + e.what());
  }
}

}  // namespace

Response dispatch(ReviewStore& store, const std::string& method, const std::string& path,
                  const std::string& body) {
  try {
    const auto seg = segments(path);
    if (method == "GET" && seg == std::vector<std::string>{"healthz"}) {
      return {200, {{"status", "ok"}, {"version", kVersion}}};
    }
    if (method == "POST" && seg == std::vector<std::string>{"cohorts"}) {
      return {200, store.register_cohort(parse_body(body))};
    }
    if (method == "POST" && seg == std::vector<std::string>{"sessions"}) {
      return {200, store.create_session(parse_body(body))};
    }
    if (seg.size() == 3 && seg[0] == "sessions") {
      if (method == "GET" && seg[2] == "next") return {200, store.next_case(seg[1])};
      if (method == "POST" && seg[2] == "decision") return {200, store.record_decision(seg[1], parse_body(body))};
      if (method == "GET" && seg[2] == "report") return {200, store.report(seg[1])};
    }
    return error(404, "not_found", "no route for " + method + " " + path);
  } catch (const ApiError& e) {
    return error(e.status(), e.code(), e.what());
  } catch (const DataError& e) {
    return error(400, "invalid", e.what());
  } catch (const std::exception& e) {
    return error(500, "internal", e.what());
  }
}

// ---- HTTP ----------------------------------------------------------------------------

struct ReviewServer::Impl {
  ReviewStore& store;
  httplib::Server server;
};

ReviewServer::ReviewServer(ReviewStore& store) : impl_(std::make_unique<Impl>(store)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    const Response r = dispatch(impl_->store, req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  // SO_REUSEPORT (the library default) would let a second server share a busy port.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  });
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) throw RuntimeFailure("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw RuntimeFailure("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  }
  return port;
}

void ReviewServer::listen() { impl_->server.listen_after_bind(); }

void ReviewServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace notescreen::review

#pragma once

// Benchmark-side data model and metrics: structured caption documents,
// four-option QA items, seeded option shuffling, multiple-choice accuracy
// with refusals, the caption-evaluation round and the GSB score.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "actionsieve/types.hpp"

namespace actionsieve {

// ---------------------------------------------------------------------------
// Caption documents

struct SubjectAttributes {
  std::string gender;
  std::string age_group;
  std::vector<std::string> clothing;
  std::vector<std::string> accessories;

  friend bool operator==(const SubjectAttributes&, const SubjectAttributes&) = default;
};

struct Subject {
  std::string subject_id;
  SubjectAttributes attributes;

  friend bool operator==(const Subject&, const Subject&) = default;
};

struct CaptionEvent {
  std::int64_t order_index = 0;
  std::string subject_id;
  std::string description;
  std::vector<std::string> interaction_targets;

  friend bool operator==(const CaptionEvent&, const CaptionEvent&) = default;
};

// Who is in the clip (distinguishing attributes) and what they do, in order.
struct CaptionDoc {
  std::vector<Subject> subjects;
  std::vector<CaptionEvent> events;

  friend bool operator==(const CaptionDoc&, const CaptionDoc&) = default;
};

struct Violation {
  std::string path;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

// Empty result means the document is well formed.
inline std::vector<Violation> validate_caption_doc(const CaptionDoc& doc) {
  std::vector<Violation> out;
  if (doc.subjects.empty()) out.push_back({"subjects", "at least one subject required"});

  std::set<std::string> declared;
  for (std::size_t i = 0; i < doc.subjects.size(); ++i) {
    const std::string path = "subjects[" + std::to_string(i) + "].subject_id";
    const std::string& id = doc.subjects[i].subject_id;
    if (id.empty()) {
      out.push_back({path, "empty subject_id"});
    } else if (!declared.insert(id).second) {
      out.push_back({path, "duplicate subject_id " + id});
    }
  }

  for (std::size_t i = 0; i < doc.events.size(); ++i) {
    const CaptionEvent& e = doc.events[i];
    const std::string path = "events[" + std::to_string(i) + "]";
    if (!declared.count(e.subject_id))
      out.push_back({path + ".subject_id", "unknown subject_id " + e.subject_id});
    if (i > 0 && e.order_index <= doc.events[i - 1].order_index)
      out.push_back({path + ".order_index", "non-increasing order_index"});
    for (std::size_t k = 0; k < e.interaction_targets.size(); ++k) {
      if (!declared.count(e.interaction_targets[k]))
        out.push_back({path + ".interaction_targets[" + std::to_string(k) + "]",
                       "unknown subject_id " + e.interaction_targets[k]});
    }
  }
  return out;
}

inline CaptionDoc caption_doc_from_json(const nlohmann::json& j) {
  try {
    CaptionDoc doc;
    for (const auto& s : j.at("subjects")) {
      Subject sub;
      sub.subject_id = s.at("subject_id").get<std::string>();
      if (auto it = s.find("attributes"); it != s.end()) {
        const auto& a = *it;
        sub.attributes.gender = a.value("gender", "");
        sub.attributes.age_group = a.value("age_group", "");
        sub.attributes.clothing = a.value("clothing", std::vector<std::string>{});
        sub.attributes.accessories = a.value("accessories", std::vector<std::string>{});
      }
      doc.subjects.push_back(std::move(sub));
    }
    if (auto it = j.find("events"); it != j.end()) {
      for (const auto& e : *it) {
        CaptionEvent ev;
        ev.order_index = e.at("order_index").get<std::int64_t>();
        ev.subject_id = e.at("subject_id").get<std::string>();
        ev.description = e.value("description", "");
        ev.interaction_targets =
            e.value("interaction_targets", std::vector<std::string>{});
        doc.events.push_back(std::move(ev));
      }
    }
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("caption_doc", e.what());
  }
}

inline nlohmann::json caption_doc_to_json(const CaptionDoc& doc) {
  nlohmann::ordered_json j;
  j["subjects"] = nlohmann::ordered_json::array();
  for (const Subject& s : doc.subjects) {
    j["subjects"].push_back({{"subject_id", s.subject_id},
                             {"attributes",
                              {{"gender", s.attributes.gender},
                               {"age_group", s.attributes.age_group},
                               {"clothing", s.attributes.clothing},
                               {"accessories", s.attributes.accessories}}}});
  }
  j["events"] = nlohmann::ordered_json::array();
  for (const CaptionEvent& e : doc.events) {
    j["events"].push_back({{"order_index", e.order_index},
                           {"subject_id", e.subject_id},
                           {"description", e.description},
                           {"interaction_targets", e.interaction_targets}});
  }
  return nlohmann::json::parse(j.dump());
}

// ---------------------------------------------------------------------------
// QA items

enum class QACategory { interaction, action_details, action_sequence, count, attribute };

inline constexpr std::array<QACategory, 5> kQACategories = {
    QACategory::interaction, QACategory::action_details, QACategory::action_sequence,
    QACategory::count, QACategory::attribute};

inline std::string_view to_string(QACategory c) {
  switch (c) {
    case QACategory::interaction:
      return "interaction";
    case QACategory::action_details:
      return "action_details";
    case QACategory::action_sequence:
      return "action_sequence";
    case QACategory::count:
      return "count";
    case QACategory::attribute:
      return "attribute";
  }
  return "unknown";
}

inline std::optional<QACategory> qa_category_from_string(std::string_view s) {
  for (QACategory c : kQACategories) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

struct QAItem {
  QACategory category = QACategory::interaction;
  std::string question;
  std::array<std::string, 4> options;
  int answer_index = 0;

  friend bool operator==(const QAItem&, const QAItem&) = default;
};

inline std::vector<Violation> validate_qa_item(const QAItem& item) {
  std::vector<Violation> out;
  if (item.answer_index < 0 || item.answer_index > 3)
    out.push_back({"answer_index", "outside 0..3"});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = i + 1; k < 4; ++k) {
      if (item.options[i] == item.options[k])
        out.push_back({"options[" + std::to_string(k) + "]",
                       "duplicate of options[" + std::to_string(i) + "]"});
    }
  }
  return out;
}

// {"category","question","options":[4],"answer_index"}; throws
// ValidationError on schema or invariant violations.
inline QAItem qa_item_from_json(const nlohmann::json& j) {
  QAItem item;
  try {
    const std::string cat = j.at("category").get<std::string>();
    auto c = qa_category_from_string(cat);
    if (!c) throw ValidationError("category", "unknown category " + cat);
    item.category = *c;
    item.question = j.at("question").get<std::string>();
    const auto& opts = j.at("options");
    if (!opts.is_array() || opts.size() != 4)
      throw ValidationError("options", "expected exactly 4 options");
    for (std::size_t i = 0; i < 4; ++i) item.options[i] = opts[i].get<std::string>();
    item.answer_index = j.at("answer_index").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("qa_item", e.what());
  }
  if (auto v = validate_qa_item(item); !v.empty())
    throw ValidationError(v.front().path, v.front().message);
  return item;
}

inline nlohmann::ordered_json qa_item_to_json(const QAItem& item) {
  return {{"category", to_string(item.category)},
          {"question", item.question},
          {"options", item.options},
          {"answer_index", item.answer_index}};
}

// ---------------------------------------------------------------------------
// Option shuffling

// Seeded permutation of the four option slots: shuffled[i] = original[perm[i]].
// Fisher-Yates over mt19937_64 with rejection sampling, so the result is the
// same on every standard library.
inline std::array<int, 4> option_permutation(std::uint64_t seed) {
  std::array<int, 4> perm = {0, 1, 2, 3};
  std::mt19937_64 rng(seed);
  for (std::uint64_t i = 3; i > 0; --i) {
    const std::uint64_t bound = i + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(perm[i], perm[r % bound]);
  }
  return perm;
}

inline QAItem shuffle_options(const QAItem& item, std::uint64_t seed) {
  const auto perm = option_permutation(seed);
  QAItem out = item;
  for (int i = 0; i < 4; ++i) {
    out.options[i] = item.options[perm[i]];
    if (perm[i] == item.answer_index) out.answer_index = i;
  }
  return out;
}

// Restores the option order that shuffle_options(item, seed) started from.
inline QAItem unshuffle_options(const QAItem& shuffled, std::uint64_t seed) {
  const auto perm = option_permutation(seed);
  QAItem out = shuffled;
  for (int i = 0; i < 4; ++i) {
    out.options[perm[i]] = shuffled.options[i];
    if (i == shuffled.answer_index) out.answer_index = perm[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accuracy

struct AnswerOutcome {
  enum class Kind { choice, refusal };
  Kind kind = Kind::refusal;
  int index = -1;  // valid for choice only

  static AnswerOutcome choice(int i) {
    if (i < 0 || i > 3) throw InputError("choice index outside 0..3");
    return {Kind::choice, i};
  }
  static AnswerOutcome refusal() { return {Kind::refusal, -1}; }

  bool is_refusal() const { return kind == Kind::refusal; }

  friend bool operator==(const AnswerOutcome&, const AnswerOutcome&) = default;
};

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t refusals = 0;
  double accuracy() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
};

struct AccuracyReport {
  Tally overall;
  std::map<QACategory, Tally> by_category;

  double accuracy() const { return overall.accuracy(); }
};

// Refusals stay in the denominator and are never correct. `categories` is
// optional; when given it must be as long as `outcomes`.
inline AccuracyReport accuracy(std::span<const AnswerOutcome> outcomes,
                               std::span<const int> gold,
                               std::span<const QACategory> categories = {}) {
  if (outcomes.size() != gold.size())
    throw InputError("accuracy: " + std::to_string(outcomes.size()) + " outcomes vs " +
                     std::to_string(gold.size()) + " gold answers");
  if (outcomes.empty()) throw InputError("accuracy: no outcomes");
  if (!categories.empty() && categories.size() != outcomes.size())
    throw InputError("accuracy: category list length mismatch");

  AccuracyReport rep;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const bool ok = !outcomes[i].is_refusal() && outcomes[i].index == gold[i];
    auto bump = [&](Tally& t) {
      ++t.total;
      t.correct += ok;
      t.refusals += outcomes[i].is_refusal();
    };
    bump(rep.overall);
    if (!categories.empty()) bump(rep.by_category[categories[i]]);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// GSB

struct GsbJudgment {
  std::uint64_t good = 0;
  std::uint64_t same = 0;
  std::uint64_t bad = 0;
};

// (good + same) / (bad + same). +infinity when nothing is Bad or Same.
inline double gsb_score(const GsbJudgment& j) {
  if (j.good + j.same + j.bad == 0) throw InputError("gsb_score: no judgments");
  const auto den = j.bad + j.same;
  if (den == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(j.good + j.same) / static_cast<double>(den);
}

inline std::string format_gsb(double score) {
  if (std::isinf(score)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", score);
  return buf;
}

// ---------------------------------------------------------------------------
// Caption evaluation

inline constexpr std::string_view kDefaultRefusalToken = "REFUSE";

struct AnswerRequest {
  std::string caption;
  std::string question;
  std::array<std::string, 4> options;
};

// Thrown by clients for transport-level failures (retryable).
class ClientError : public Error {
 public:
  using Error::Error;
};

class AnsweringClient {
 public:
  virtual ~AnsweringClient() = default;
  // Returns the raw reply text, or throws ClientError.
  virtual std::string answer(const AnswerRequest& request) = 0;
};

// Replays canned replies in order; an empty optional simulates a transport
// failure. The last entry repeats once the script is exhausted.
class ScriptedClient : public AnsweringClient {
 public:
  explicit ScriptedClient(std::vector<std::optional<std::string>> script)
      : script_(std::move(script)) {}

  std::string answer(const AnswerRequest& request) override {
    requests_.push_back(request);
    if (script_.empty()) throw ClientError("empty script");
    const auto& r = script_[std::min(next_, script_.size() - 1)];
    ++next_;
    if (!r) throw ClientError("scripted transport failure");
    return *r;
  }

  const std::vector<AnswerRequest>& requests() const { return requests_; }

 private:
  std::vector<std::optional<std::string>> script_;
  std::size_t next_ = 0;
  std::vector<AnswerRequest> requests_;
};

// Wire format for an HTTP-JSON answering service.
inline nlohmann::ordered_json answer_request_to_json(const AnswerRequest& r) {
  return {{"caption", r.caption}, {"question", r.question}, {"options", r.options}};
}

inline std::string reply_from_json(const nlohmann::json& j) {
  try {
    return j.at("reply").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ClientError(std::string("malformed reply: ") + e.what());
  }
}

namespace detail {

inline std::string trim_copy(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

inline std::optional<int> option_letter(char c) {
  if (c >= 'A' && c <= 'D') return c - 'A';
  if (c >= 'a' && c <= 'd') return c - 'a';
  return std::nullopt;
}

}  // namespace detail

// Reply parsing, first rule that applies wins:
//   1. the reply equals the refusal token          -> refusal
//   2. a bare letter A-D, optionally followed by '.' -> choice
//   3. the first "(X)" with X in A-D anywhere       -> choice
//   4. anything else                                -> refusal (unparseable)
// Letters are case-insensitive; surrounding whitespace is ignored.
inline AnswerOutcome parse_answer_reply(std::string_view reply,
                                        std::string_view refusal_token = kDefaultRefusalToken) {
  const std::string t = detail::trim_copy(reply);
  if (!refusal_token.empty() && t == refusal_token) return AnswerOutcome::refusal();
  if (t.size() == 1 || (t.size() == 2 && t[1] == '.')) {
    if (auto i = detail::option_letter(t[0])) return AnswerOutcome::choice(*i);
  }
  for (std::size_t p = 0; p + 2 < t.size(); ++p) {
    if (t[p] == '(' && t[p + 2] == ')') {
      if (auto i = detail::option_letter(t[p + 1])) return AnswerOutcome::choice(*i);
    }
  }
  return AnswerOutcome::refusal();
}

struct EvalRound {
  AnswerOutcome outcome;
  std::string raw_reply;  // last reply received; empty after client failure
  std::size_t attempts = 0;
  std::string reason;  // "answered", "refused", "unparseable reply", "client failure"
};

inline constexpr std::size_t kMaxClientAttempts = 3;

// Asks the client to answer `item` from `caption` alone.
inline EvalRound caption_eval_round(const std::string& caption, const QAItem& item,
                                    AnsweringClient& client,
                                    std::string_view refusal_token = kDefaultRefusalToken) {
  const AnswerRequest req{caption, item.question, item.options};
  EvalRound round;
  for (round.attempts = 1; round.attempts <= kMaxClientAttempts; ++round.attempts) {
    try {
      round.raw_reply = client.answer(req);
    } catch (const ClientError&) {
      continue;
    }
    round.outcome = parse_answer_reply(round.raw_reply, refusal_token);
    if (!round.outcome.is_refusal()) {
      round.reason = "answered";
    } else if (detail::trim_copy(round.raw_reply) == refusal_token) {
      round.reason = "refused";
    } else {
      round.reason = "unparseable reply";
    }
    return round;
  }
  round.attempts = kMaxClientAttempts;
  round.outcome = AnswerOutcome::refusal();
  round.reason = "client failure";
  return round;
}

struct CaptionEvalTask {
  std::string item_id;
  std::string caption;
  QAItem item;
};

// Runs every task and joins outcomes by item id.
inline std::map<std::string, EvalRound> run_caption_eval(std::span<const CaptionEvalTask> tasks,
                                                         AnsweringClient& client) {
  std::map<std::string, EvalRound> out;
  for (const auto& t : tasks) {
    if (out.count(t.item_id)) throw InputError("duplicate item id " + t.item_id);
    out.emplace(t.item_id, caption_eval_round(t.caption, t.item, client));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset statistics

inline std::size_t count_words(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c));
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

struct CaptionDocStats {
  std::size_t subjects = 0;
  std::size_t events = 0;
  std::size_t interactions = 0;  // events with at least one target
  std::size_t words = 0;         // over event descriptions
};

inline CaptionDocStats caption_doc_stats(const CaptionDoc& doc) {
  CaptionDocStats s;
  s.subjects = doc.subjects.size();
  s.events = doc.events.size();
  for (const auto& e : doc.events) {
    s.interactions += !e.interaction_targets.empty();
    s.words += count_words(e.description);
  }
  return s;
}

struct BenchmarkStats {
  std::size_t documents = 0;
  double mean_subjects = 0.0;
  double mean_events = 0.0;
  double mean_words = 0.0;
  std::size_t max_words = 0;
  std::map<QACategory, std::size_t> qa_per_category;
};

inline BenchmarkStats benchmark_stats(std::span<const CaptionDoc> docs,
                                      std::span<const QAItem> items) {
  BenchmarkStats s;
  s.documents = docs.size();
  for (const auto& d : docs) {
    const auto ds = caption_doc_stats(d);
    s.mean_subjects += static_cast<double>(ds.subjects);
    s.mean_events += static_cast<double>(ds.events);
    s.mean_words += static_cast<double>(ds.words);
    s.max_words = std::max(s.max_words, ds.words);
  }
  if (!docs.empty()) {
    const auto n = static_cast<double>(docs.size());
    s.mean_subjects /= n;
    s.mean_events /= n;
    s.mean_words /= n;
  }
  for (QACategory c : kQACategories) s.qa_per_category[c] = 0;
  for (const auto& q : items) ++s.qa_per_category[q.category];
  return s;
}

}  // namespace actionsieve

#pragma once

// Tag grammar of one model turn:
//
//   <reason>free text</reason>
//   <text_search>{"queries":[{"entity":..,"q":..}]}</text_search>
//   | <image_search>{"queries":[...]}</image_search>
//   | <answer>{"entities":[{"span":..,"type":..,"box":[x1,y1,x2,y2]|null}]}</answer>
//
// Environment output is injected as <information>...</information>.
// Parsing is strict: nothing is repaired, every violation is reported with
// the byte offset where it was detected.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/entity.hpp"

namespace sake {

enum class ActionKind { TextSearch, ImageSearch, Answer };
enum class Modality { Text, Image };

inline std::string_view to_string(ActionKind a) noexcept {
  switch (a) {
    case ActionKind::TextSearch: return "text_search";
    case ActionKind::ImageSearch: return "image_search";
    case ActionKind::Answer: return "answer";
  }
  return "?";
}

inline std::string_view to_string(Modality m) noexcept {
  return m == Modality::Text ? "text" : "image";
}

inline Modality modality_from_string(std::string_view s) {
  if (s == "text") return Modality::Text;
  if (s == "image") return Modality::Image;
  throw validation_error("BadModality", "unknown modality '" + std::string(s) + "'");
}

struct SearchQuery {
  std::string entity;  // entity hint, may be empty
  std::string q;

  friend bool operator==(const SearchQuery&, const SearchQuery&) = default;
};

struct SearchQuerySet {
  std::vector<SearchQuery> entries;
  Modality modality = Modality::Text;

  friend bool operator==(const SearchQuerySet&, const SearchQuerySet&) = default;
};

struct AnswerPayload {
  std::vector<Entity> entities;

  friend bool operator==(const AnswerPayload&, const AnswerPayload&) = default;
};

// One reason + action turn. Equality ignores `raw`, which only records the
// exact text the segment was parsed from.
struct TurnSegment {
  std::string reason;
  ActionKind action = ActionKind::Answer;
  std::variant<SearchQuerySet, AnswerPayload> payload = AnswerPayload{};
  std::string raw;

  bool is_search() const noexcept { return action != ActionKind::Answer; }
  const SearchQuerySet& queries() const { return std::get<SearchQuerySet>(payload); }
  const AnswerPayload& answer() const { return std::get<AnswerPayload>(payload); }

  friend bool operator==(const TurnSegment& a, const TurnSegment& b) {
    return a.reason == b.reason && a.action == b.action && a.payload == b.payload;
  }
};

struct Observation {
  std::string body;
  Modality source_modality = Modality::Text;

  friend bool operator==(const Observation&, const Observation&) = default;
};

enum class ProtocolErrc {
  MissingReason,
  MultipleReasons,
  MultipleActions,
  NoAction,
  MalformedPayload,
  UnbalancedTags,
  StrayText,
};

inline std::string_view to_string(ProtocolErrc e) noexcept {
  switch (e) {
    case ProtocolErrc::MissingReason: return "MissingReason";
    case ProtocolErrc::MultipleReasons: return "MultipleReasons";
    case ProtocolErrc::MultipleActions: return "MultipleActions";
    case ProtocolErrc::NoAction: return "NoAction";
    case ProtocolErrc::MalformedPayload: return "MalformedPayload";
    case ProtocolErrc::UnbalancedTags: return "UnbalancedTags";
    case ProtocolErrc::StrayText: return "StrayText";
  }
  return "?";
}

struct ProtocolError {
  ProtocolErrc code;
  std::size_t offset = 0;  // byte offset of the first violation
  std::string detail;
};

namespace tags {

inline constexpr std::string_view kReasonOpen = "<reason>";
inline constexpr std::string_view kReasonClose = "</reason>";
inline constexpr std::string_view kTextSearchOpen = "<text_search>";
inline constexpr std::string_view kTextSearchClose = "</text_search>";
inline constexpr std::string_view kImageSearchOpen = "<image_search>";
inline constexpr std::string_view kImageSearchClose = "</image_search>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kInformationOpen = "<information>";
inline constexpr std::string_view kInformationClose = "</information>";

// Closing tags that end a generated segment.
inline constexpr std::array<std::string_view, 3> kStopTags = {kTextSearchClose, kImageSearchClose,
                                                              kAnswerClose};

inline std::string_view open_tag(ActionKind a) noexcept {
  switch (a) {
    case ActionKind::TextSearch: return kTextSearchOpen;
    case ActionKind::ImageSearch: return kImageSearchOpen;
    case ActionKind::Answer: return kAnswerOpen;
  }
  return {};
}

inline std::string_view close_tag(ActionKind a) noexcept {
  switch (a) {
    case ActionKind::TextSearch: return kTextSearchClose;
    case ActionKind::ImageSearch: return kImageSearchClose;
    case ActionKind::Answer: return kAnswerClose;
  }
  return {};
}

}  // namespace tags

namespace detail {

enum class Tok {
  ReasonOpen, ReasonClose,
  TextOpen, TextClose,
  ImageOpen, ImageClose,
  AnswerOpen, AnswerClose,
  InfoOpen, InfoClose,
};

struct TagHit {
  Tok tok;
  std::size_t offset;
  std::size_t length;
};

inline constexpr std::array<std::pair<std::string_view, Tok>, 10> kTokTable = {{
    {tags::kReasonOpen, Tok::ReasonOpen},
    {tags::kReasonClose, Tok::ReasonClose},
    {tags::kTextSearchOpen, Tok::TextOpen},
    {tags::kTextSearchClose, Tok::TextClose},
    {tags::kImageSearchOpen, Tok::ImageOpen},
    {tags::kImageSearchClose, Tok::ImageClose},
    {tags::kAnswerOpen, Tok::AnswerOpen},
    {tags::kAnswerClose, Tok::AnswerClose},
    {tags::kInformationOpen, Tok::InfoOpen},
    {tags::kInformationClose, Tok::InfoClose},
}};

inline std::vector<TagHit> scan_tags(std::string_view text) {
  std::vector<TagHit> hits;
  for (std::size_t pos = text.find('<'); pos != std::string_view::npos; pos = text.find('<', pos + 1)) {
    for (const auto& [lit, tok] : kTokTable) {
      if (text.compare(pos, lit.size(), lit) == 0) {
        hits.push_back({tok, pos, lit.size()});
        break;
      }
    }
  }
  return hits;
}

inline bool is_action_open(Tok t) noexcept {
  return t == Tok::TextOpen || t == Tok::ImageOpen || t == Tok::AnswerOpen;
}

inline ActionKind action_of(Tok open) noexcept {
  switch (open) {
    case Tok::TextOpen: return ActionKind::TextSearch;
    case Tok::ImageOpen: return ActionKind::ImageSearch;
    default: return ActionKind::Answer;
  }
}

inline Tok close_of(Tok open) noexcept {
  switch (open) {
    case Tok::TextOpen: return Tok::TextClose;
    case Tok::ImageOpen: return Tok::ImageClose;
    case Tok::AnswerOpen: return Tok::AnswerClose;
    default: return Tok::ReasonClose;
  }
}

// Offset of the first non-space byte in [b, e), or npos.
inline std::size_t first_non_space(std::string_view text, std::size_t b, std::size_t e) noexcept {
  for (std::size_t i = b; i < e; ++i)
    if (!is_space(text[i])) return i;
  return std::string_view::npos;
}

inline void require_exact_keys(const nlohmann::json& j, std::initializer_list<std::string_view> keys,
                               const char* what) {
  if (!j.is_object()) throw validation_error("BadPayload", std::string(what) + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (auto key : keys) known = known || k == key;
    if (!known) throw validation_error("BadPayload", std::string(what) + " has unknown field '" + k + "'");
  }
  for (auto key : keys)
    if (!j.contains(std::string(key)))
      throw validation_error("BadPayload", std::string(what) + " is missing '" + std::string(key) + "'");
}

inline SearchQuerySet decode_queries(const nlohmann::json& j, Modality modality) {
  require_exact_keys(j, {"queries"}, "search payload");
  const auto& qs = j["queries"];
  if (!qs.is_array() || qs.empty()) throw validation_error("BadPayload", "queries must be a non-empty array");
  SearchQuerySet set;
  set.modality = modality;
  for (const auto& item : qs) {
    require_exact_keys(item, {"entity", "q"}, "query");
    if (!item["entity"].is_string() || !item["q"].is_string())
      throw validation_error("BadPayload", "query fields must be strings");
    SearchQuery q{item["entity"].get<std::string>(), item["q"].get<std::string>()};
    if (trim(q.q).empty()) throw validation_error("BadPayload", "query text is empty");
    set.entries.push_back(std::move(q));
  }
  return set;
}

inline AnswerPayload decode_answer(const nlohmann::json& j) {
  require_exact_keys(j, {"entities"}, "answer payload");
  const auto& es = j["entities"];
  if (!es.is_array()) throw validation_error("BadPayload", "entities must be an array");
  AnswerPayload out;
  for (const auto& e : es) out.entities.push_back(entity_from_json(e));
  return out;
}

// JSON allows raw '<' and '>' only inside strings, so escaping them keeps
// payload text free of anything that could be read as a tag delimiter.
inline std::string dump_tag_safe(const nlohmann::ordered_json& j) {
  const std::string s = j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '<') out += "\\u003c";
    else if (c == '>') out += "\\u003e";
    else out += c;
  }
  return out;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const SearchQuerySet& set) {
  nlohmann::ordered_json j;
  j["queries"] = nlohmann::ordered_json::array();
  for (const auto& e : set.entries) {
    nlohmann::ordered_json item;
    item["entity"] = e.entity;
    item["q"] = e.q;
    j["queries"].push_back(std::move(item));
  }
  return j;
}

inline nlohmann::ordered_json to_json(const AnswerPayload& a) {
  nlohmann::ordered_json j;
  j["entities"] = nlohmann::ordered_json::array();
  for (const auto& e : a.entities) j["entities"].push_back(to_json(e));
  return j;
}

// Decodes the JSON document carried inside <answer>...</answer>.
inline AnswerPayload answer_from_json(const nlohmann::json& j) { return detail::decode_answer(j); }

inline Expected<TurnSegment, ProtocolError> parse_segment(std::string_view raw) {
  using detail::Tok;
  auto fail = [](ProtocolErrc c, std::size_t off, std::string detail) {
    return Unexpected<ProtocolError>{ProtocolError{c, off, std::move(detail)}};
  };

  const auto hits = detail::scan_tags(raw);
  const std::size_t lead = detail::first_non_space(raw, 0, raw.size());

  if (hits.empty()) {
    return fail(ProtocolErrc::MissingReason, lead == std::string_view::npos ? 0 : lead, "no protocol tags");
  }
  const auto& first = hits[0];
  if (first.tok != Tok::ReasonOpen) {
    if (first.tok == Tok::ReasonClose || first.tok == Tok::TextClose || first.tok == Tok::ImageClose ||
        first.tok == Tok::AnswerClose || first.tok == Tok::InfoClose)
      return fail(ProtocolErrc::UnbalancedTags, first.offset, "closing tag without opening tag");
    return fail(ProtocolErrc::MissingReason, first.offset, "segment must start with <reason>");
  }
  if (lead < first.offset) return fail(ProtocolErrc::StrayText, lead, "text before <reason>");

  if (hits.size() < 2) return fail(ProtocolErrc::UnbalancedTags, first.offset, "<reason> is never closed");
  if (hits[1].tok != Tok::ReasonClose) {
    return fail(ProtocolErrc::UnbalancedTags, hits[1].offset, "tag nested inside <reason>");
  }
  const std::size_t reason_begin = first.offset + first.length;
  const std::size_t reason_end = hits[1].offset;
  const std::size_t after_reason = hits[1].offset + hits[1].length;

  if (hits.size() < 3) {
    const auto gap = detail::first_non_space(raw, after_reason, raw.size());
    return fail(ProtocolErrc::NoAction, gap == std::string_view::npos ? raw.size() : gap,
                "no action block after </reason>");
  }
  const auto& open = hits[2];
  if (!detail::is_action_open(open.tok)) {
    if (open.tok == Tok::ReasonOpen)
      return fail(ProtocolErrc::MultipleReasons, open.offset, "second <reason> block");
    if (open.tok == Tok::InfoOpen)
      return fail(ProtocolErrc::NoAction, open.offset, "<information> is environment-only");
    return fail(ProtocolErrc::UnbalancedTags, open.offset, "unexpected closing tag");
  }
  if (auto gap = detail::first_non_space(raw, after_reason, open.offset); gap != std::string_view::npos)
    return fail(ProtocolErrc::StrayText, gap, "text between </reason> and action");

  if (hits.size() < 4) return fail(ProtocolErrc::UnbalancedTags, open.offset, "action block is never closed");
  const auto& close = hits[3];
  if (close.tok != detail::close_of(open.tok))
    return fail(ProtocolErrc::UnbalancedTags, close.offset, "mismatched or nested tag inside action block");

  // Structure after the action block is checked before the payload is
  // decoded, so a second action is reported as such even when the first
  // payload is also broken.
  const std::size_t after_action = close.offset + close.length;
  if (hits.size() > 4) {
    for (std::size_t i = 4; i < hits.size(); ++i)
      if (detail::is_action_open(hits[i].tok))
        return fail(ProtocolErrc::MultipleActions, hits[i].offset, "more than one action block");
    if (hits[4].tok == Tok::ReasonOpen)
      return fail(ProtocolErrc::MultipleReasons, hits[4].offset, "second <reason> block");
    return fail(ProtocolErrc::UnbalancedTags, hits[4].offset, "unexpected tag after action block");
  }
  if (auto tail = detail::first_non_space(raw, after_action, raw.size()); tail != std::string_view::npos)
    return fail(ProtocolErrc::StrayText, tail, "text after action block");

  const std::size_t payload_begin = open.offset + open.length;
  const std::string_view payload = raw.substr(payload_begin, close.offset - payload_begin);
  const ActionKind action = detail::action_of(open.tok);

  TurnSegment seg;
  seg.reason = std::string(raw.substr(reason_begin, reason_end - reason_begin));
  seg.action = action;
  seg.raw = std::string(raw);
  try {
    const auto doc = nlohmann::json::parse(payload);
    if (action == ActionKind::Answer) {
      seg.payload = detail::decode_answer(doc);
    } else {
      seg.payload = detail::decode_queries(doc, action == ActionKind::TextSearch ? Modality::Text : Modality::Image);
    }
  } catch (const nlohmann::json::exception& e) {
    return fail(ProtocolErrc::MalformedPayload, payload_begin, e.what());
  } catch (const Error& e) {
    return fail(ProtocolErrc::MalformedPayload, payload_begin, e.what());
  }
  return seg;
}

// Canonical form. Requires `seg.reason` to contain no protocol tag.
inline std::string serialize_segment(const TurnSegment& seg) {
  std::string out;
  out += tags::kReasonOpen;
  out += seg.reason;
  out += tags::kReasonClose;
  out += '\n';
  out += tags::open_tag(seg.action);
  if (seg.action == ActionKind::Answer) {
    out += detail::dump_tag_safe(to_json(seg.answer()));
  } else {
    out += detail::dump_tag_safe(to_json(seg.queries()));
  }
  out += tags::close_tag(seg.action);
  return out;
}

inline std::string serialize_observation(const Observation& obs) {
  std::string out;
  out += tags::kInformationOpen;
  out += obs.body;
  out += tags::kInformationClose;
  return out;
}

// True when `text` contains any protocol tag literal.
inline bool contains_protocol_tag(std::string_view text) { return !detail::scan_tags(text).empty(); }

// Truncates at the end of the first closing stop tag, if any.
inline std::string truncate_at_stop(std::string_view text, const std::vector<std::string>& stop_tags) {
  std::size_t cut = std::string_view::npos;
  for (const auto& tag : stop_tags) {
    if (tag.empty()) continue;
    const auto pos = text.find(tag);
    if (pos != std::string_view::npos) cut = std::min(cut, pos + tag.size());
  }
  return std::string(cut == std::string_view::npos ? text : text.substr(0, cut));
}

inline std::vector<std::string> default_stop_tags() {
  return {std::string(tags::kTextSearchClose), std::string(tags::kImageSearchClose),
          std::string(tags::kAnswerClose)};
}

}  // namespace sake

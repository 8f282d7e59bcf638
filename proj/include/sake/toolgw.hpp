#pragma once

// Search gateway: similarity-keyed result cache in front of a search backend,
// with top-K truncation, a summarizer pass for text results and single-flight
// deduplication of concurrent identical misses.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"
#include "sake/jsonl.hpp"
#include "sake/protocol.hpp"

namespace sake {

inline constexpr double kDefaultCacheThreshold = 0.9;
inline constexpr std::size_t kDefaultTopK = 3;

// Lowercase, collapse whitespace runs to one space, trim.
inline std::string normalize_query(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

inline std::size_t lcs_length(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Sequence similarity on normalized queries: 2 * LCS / (|a| + |b|).
// Two empty strings are identical (1.0).
inline double similarity_normalized(std::string_view na, std::string_view nb) {
  if (na.empty() && nb.empty()) return 1.0;
  if (na == nb) return 1.0;
  const auto l = lcs_length(na, nb);
  return 2.0 * static_cast<double>(l) / static_cast<double>(na.size() + nb.size());
}

inline double similarity(std::string_view a, std::string_view b) {
  return similarity_normalized(normalize_query(a), normalize_query(b));
}

struct SearchResult {
  std::string title;
  std::string summary;
  std::string url;
  std::string image_ref;   // image modality only
  bool degraded = false;   // raw snippet kept because the summarizer failed

  friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

inline nlohmann::ordered_json to_json(const SearchResult& r) {
  nlohmann::ordered_json j;
  j["title"] = r.title;
  j["summary"] = r.summary;
  j["url"] = r.url;
  if (!r.image_ref.empty()) j["image_ref"] = r.image_ref;
  if (r.degraded) j["degraded"] = true;
  return j;
}

inline SearchResult search_result_from_json(const nlohmann::json& j) {
  SearchResult r;
  r.title = j.value("title", "");
  r.summary = j.contains("summary") ? j["summary"].get<std::string>() : j.value("snippet", "");
  r.url = j.value("url", "");
  r.image_ref = j.value("image_ref", "");
  r.degraded = j.value("degraded", false);
  return r;
}

class SearchBackend {
 public:
  virtual ~SearchBackend() = default;
  // Ranked results, best first. May return more than K. Throws
  // Error{Upstream, "BackendUnavailable"}.
  virtual std::vector<SearchResult> fetch(std::string_view query, Modality modality) = 0;
  virtual std::string id() const = 0;
};

// Deterministic keyword index over a JSONL document corpus:
//   {"id", "modality": "text"|"image", "title", "text", "url", "image_ref", "keywords": [..]}
// Documents are ranked by the number of distinct query words they contain;
// ties keep corpus order.
class LocalIndex final : public SearchBackend {
 public:
  struct Document {
    std::string id;
    Modality modality = Modality::Text;
    std::string title;
    std::string text;
    std::string url;
    std::string image_ref;
    std::set<std::string> words;
  };

  explicit LocalIndex(std::vector<Document> docs, std::string name = "local") : name_(std::move(name)) {
    docs_ = std::move(docs);
  }

  static std::vector<std::string> words_of(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (std::isalnum(static_cast<unsigned char>(c))) {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  // `path` is a JSONL file or a directory of *.jsonl files (read in name order).
  static std::unique_ptr<LocalIndex> from_path(const std::filesystem::path& path) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(path)) {
      for (const auto& e : std::filesystem::directory_iterator(path))
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
      std::sort(files.begin(), files.end());
    } else {
      files.push_back(path);
    }
    if (files.empty()) throw config_error("EmptyCorpus", "no .jsonl files under " + path.string());
    std::vector<Document> docs;
    for (const auto& f : files) {
      for (const auto& j : jsonl::read(f)) {
        Document d;
        d.id = j.value("id", "");
        d.modality = modality_from_string(j.value("modality", "text"));
        d.title = j.value("title", "");
        d.text = j.value("text", "");
        d.url = j.value("url", "");
        d.image_ref = j.value("image_ref", "");
        std::string bag = d.title + " " + d.text;
        if (j.contains("keywords"))
          for (const auto& k : j["keywords"]) bag += " " + k.get<std::string>();
        for (auto& w : words_of(bag)) d.words.insert(std::move(w));
        docs.push_back(std::move(d));
      }
    }
    return std::make_unique<LocalIndex>(std::move(docs), "local:" + path.string());
  }

  std::vector<SearchResult> fetch(std::string_view query, Modality modality) override {
    std::set<std::string> qwords;
    for (auto& w : words_of(query)) qwords.insert(std::move(w));
    std::vector<std::pair<std::size_t, std::size_t>> scored;  // (score, doc index)
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      if (docs_[i].modality != modality) continue;
      std::size_t s = 0;
      for (const auto& w : qwords) s += docs_[i].words.count(w);
      if (s > 0) scored.emplace_back(s, i);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<SearchResult> out;
    for (const auto& [_, i] : scored) {
      const auto& d = docs_[i];
      out.push_back({d.title, d.text, d.url, d.modality == Modality::Image ? d.image_ref : std::string{}, false});
    }
    return out;
  }

  std::string id() const override { return name_; }
  std::size_t size() const noexcept { return docs_.size(); }

 private:
  std::string name_;
  std::vector<Document> docs_;
};

class Summarizer {
 public:
  virtual ~Summarizer() = default;
  // Throws Error{Upstream, "SummarizerUnavailable"}.
  virtual std::string summarize(std::string_view query, const SearchResult& raw) = 0;
};

class IdentitySummarizer final : public Summarizer {
 public:
  std::string summarize(std::string_view, const SearchResult& raw) override { return raw.summary; }
};

struct CacheEntry {
  std::string key_query;  // normalized
  Modality modality = Modality::Text;
  std::vector<SearchResult> results;
  std::int64_t created_at = 0;  // unix seconds
};

// Append-only, similarity-keyed result cache, scoped per modality.
class SearchCache {
 public:
  explicit SearchCache(double threshold = kDefaultCacheThreshold) : threshold_(threshold) {}

  // Loads entries from an existing JSONL file (if any) and appends new
  // entries to it from then on.
  void attach_file(const std::filesystem::path& path) {
    std::unique_lock lock(mu_);
    if (std::filesystem::exists(path)) {
      for (const auto& j : jsonl::read(path)) {
        CacheEntry e;
        e.key_query = j.at("key").get<std::string>();
        e.modality = modality_from_string(j.at("modality").get<std::string>());
        e.created_at = j.value("created_at", std::int64_t{0});
        for (const auto& r : j.at("results")) e.results.push_back(search_result_from_json(r));
        insert_locked(std::move(e));
      }
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    file_.open(path, std::ios::binary | std::ios::app);
    if (!file_) throw config_error("UnwritableCache", "cannot append to " + path.string());
  }

  struct Hit {
    std::vector<SearchResult> results;
    double similarity = 0.0;
    std::string matched_key;
  };

  // Best entry of the same modality whose similarity strictly exceeds the
  // threshold; the earliest entry wins ties.
  std::optional<Hit> lookup(std::string_view normalized_query, Modality modality) const {
    std::shared_lock lock(mu_);
    const auto& bucket = entries_[index(modality)];
    if (auto it = exact_[index(modality)].find(std::string(normalized_query)); it != exact_[index(modality)].end())
      return Hit{bucket[it->second].results, 1.0, bucket[it->second].key_query};
    const CacheEntry* best = nullptr;
    double best_sim = 0.0;
    for (const auto& e : bucket) {
      const double s = similarity_normalized(normalized_query, e.key_query);
      if (s > threshold_ && (best == nullptr || s > best_sim)) {
        best = &e;
        best_sim = s;
      }
    }
    if (best == nullptr) return std::nullopt;
    return Hit{best->results, best_sim, best->key_query};
  }

  void store(CacheEntry entry) {
    std::unique_lock lock(mu_);
    if (exact_[index(entry.modality)].count(entry.key_query)) return;  // entries are immutable
    if (file_.is_open()) {
      nlohmann::ordered_json j;
      j["key"] = entry.key_query;
      j["modality"] = std::string(to_string(entry.modality));
      j["created_at"] = entry.created_at;
      j["results"] = nlohmann::ordered_json::array();
      for (const auto& r : entry.results) j["results"].push_back(to_json(r));
      file_ << jsonl::dump_line(j) << '\n';
      file_.flush();
    }
    insert_locked(std::move(entry));
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_[0].size() + entries_[1].size();
  }

  double threshold() const noexcept { return threshold_; }

 private:
  static std::size_t index(Modality m) noexcept { return m == Modality::Text ? 0 : 1; }

  void insert_locked(CacheEntry e) {
    auto& bucket = entries_[index(e.modality)];
    exact_[index(e.modality)].emplace(e.key_query, bucket.size());
    bucket.push_back(std::move(e));
  }

  double threshold_;
  mutable std::shared_mutex mu_;
  std::vector<CacheEntry> entries_[2];
  std::unordered_map<std::string, std::size_t> exact_[2];
  std::ofstream file_;
};

struct GatewayConfig {
  std::size_t k_results = kDefaultTopK;
  double cache_threshold = kDefaultCacheThreshold;
  std::optional<std::filesystem::path> cache_file;
};

struct GatewayStats {
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  std::size_t coalesced = 0;  // misses that waited on an in-flight identical query
};

class SearchGateway {
 public:
  using Clock = std::function<std::int64_t()>;

  SearchGateway(std::shared_ptr<SearchBackend> backend, GatewayConfig cfg = {},
                std::shared_ptr<Summarizer> summarizer = std::make_shared<IdentitySummarizer>())
      : backend_(std::move(backend)), summarizer_(std::move(summarizer)), cfg_(std::move(cfg)),
        cache_(cfg_.cache_threshold) {
    if (cfg_.k_results == 0) throw config_error("BadTopK", "k_results must be >= 1");
    if (cfg_.cache_file) cache_.attach_file(*cfg_.cache_file);
    clock_ = [] {
      return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
    };
  }

  void set_clock(Clock clock) { clock_ = std::move(clock); }

  std::vector<SearchResult> search(std::string_view query, Modality modality) {
    const std::string key = normalize_query(query);
    if (key.empty()) throw validation_error("EmptyQuery", "search query is empty");

    if (auto hit = cache_.lookup(key, modality)) {
      cache_hits_.fetch_add(1);
      return std::move(hit->results);
    }

    const std::string flight_key = std::string(to_string(modality)) + '\n' + key;
    std::promise<std::vector<SearchResult>> promise;
    std::shared_future<std::vector<SearchResult>> waiter;
    {
      std::lock_guard lock(flight_mu_);
      // Re-check under the flight lock: a leader stores into the cache before
      // it leaves the in-flight table, so one of the two must be visible.
      if (auto hit = cache_.lookup(key, modality)) {
        cache_hits_.fetch_add(1);
        return std::move(hit->results);
      }
      if (auto it = in_flight_.find(flight_key); it != in_flight_.end()) {
        waiter = it->second;
      } else {
        in_flight_.emplace(flight_key, promise.get_future().share());
      }
    }
    if (waiter.valid()) {
      coalesced_.fetch_add(1);
      return waiter.get();
    }

    cache_misses_.fetch_add(1);
    try {
      auto results = fetch_and_summarize(query, modality);
      cache_.store({key, modality, results, clock_()});
      {
        std::lock_guard lock(flight_mu_);
        in_flight_.erase(flight_key);
      }
      promise.set_value(results);
      return results;
    } catch (...) {
      {
        std::lock_guard lock(flight_mu_);
        in_flight_.erase(flight_key);
      }
      promise.set_exception(std::current_exception());
      throw;
    }
  }

  GatewayStats stats() const {
    return {backend_calls_.load(), cache_hits_.load(), cache_misses_.load(), coalesced_.load()};
  }

  const GatewayConfig& config() const noexcept { return cfg_; }
  const SearchCache& cache() const noexcept { return cache_; }

 private:
  std::vector<SearchResult> fetch_and_summarize(std::string_view query, Modality modality) {
    backend_calls_.fetch_add(1);
    std::vector<SearchResult> raw;
    try {
      raw = backend_->fetch(query, modality);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw upstream_error("BackendUnavailable", e.what());
    }
    if (raw.size() > cfg_.k_results) raw.resize(cfg_.k_results);
    if (modality == Modality::Text) {
      for (auto& r : raw) {
        std::string summary;
        try {
          summary = summarizer_->summarize(query, r);
        } catch (const std::exception&) {
          r.degraded = true;
        }
        if (!summary.empty()) {
          r.summary = std::move(summary);
        } else {
          r.degraded = true;
        }
        if (r.summary.empty()) r.summary = r.title;
      }
    }
    return raw;
  }

  std::shared_ptr<SearchBackend> backend_;
  std::shared_ptr<Summarizer> summarizer_;
  GatewayConfig cfg_;
  SearchCache cache_;
  Clock clock_;

  std::mutex flight_mu_;
  std::unordered_map<std::string, std::shared_future<std::vector<SearchResult>>> in_flight_;

  std::atomic<std::size_t> backend_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> cache_misses_{0};
  std::atomic<std::size_t> coalesced_{0};
};

// Results for one entry of a batched query.
struct QueryResults {
  SearchQuery query;
  std::vector<SearchResult> results;
};

// Observation body for one batched search action. All query results go into
// a single <information> block.
inline std::string format_observation_body(Modality modality, const std::vector<QueryResults>& batch) {
  std::ostringstream os;
  os << '\n';
  for (std::size_t qi = 0; qi < batch.size(); ++qi) {
    const auto& [q, results] = batch[qi];
    os << "Query " << qi + 1;
    if (!q.entity.empty()) os << " (entity: " << q.entity << ")";
    os << ": " << q.q << '\n';
    if (results.empty()) os << "(no results)\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      os << '[' << i + 1 << "] " << r.title << '\n';
      if (!r.summary.empty()) os << "    " << r.summary << '\n';
      if (modality == Modality::Image && !r.image_ref.empty()) os << "    image: " << r.image_ref << '\n';
      if (!r.url.empty()) os << "    url: " << r.url << '\n';
      if (r.degraded) os << "    (unsummarized)\n";
    }
  }
  return os.str();
}

inline Observation make_observation(Modality modality, const std::vector<QueryResults>& batch) {
  return {format_observation_body(modality, batch), modality};
}

// What the rollout engine calls to execute a search action.
class Tools {
 public:
  virtual ~Tools() = default;
  // Throws Error{Upstream, "ToolUnavailable"}.
  virtual Observation execute(const SearchQuerySet& queries) = 0;
  virtual std::string describe() const = 0;
};

class GatewayTools final : public Tools {
 public:
  explicit GatewayTools(std::shared_ptr<SearchGateway> gateway) : gateway_(std::move(gateway)) {}

  Observation execute(const SearchQuerySet& queries) override {
    std::vector<QueryResults> batch;
    batch.reserve(queries.entries.size());
    try {
      for (const auto& q : queries.entries) batch.push_back({q, gateway_->search(q.q, queries.modality)});
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Upstream) throw upstream_error("ToolUnavailable", e.what());
      throw;
    }
    return make_observation(queries.modality, batch);
  }

  std::string describe() const override { return "gateway"; }
  SearchGateway& gateway() noexcept { return *gateway_; }

 private:
  std::shared_ptr<SearchGateway> gateway_;
};

}  // namespace sake

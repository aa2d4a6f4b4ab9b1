// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace srec {

// Continuous time in days.
using Time = double;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Side { user, item };

inline const char* to_string(Side side) { return side == Side::user ? "user" : "item"; }

enum class EventKind : std::uint8_t { user_birth, item_birth, rating };

// Entity fields index into the owning EventLog's id tables.
struct Event {
  Time time = 0.0;
  EventKind kind = EventKind::rating;
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  int level = 0;

  static Event user_birth(Time t, std::uint32_t user) { return {t, EventKind::user_birth, user, 0, 0}; }
  static Event item_birth(Time t, std::uint32_t item) { return {t, EventKind::item_birth, 0, item, 0}; }
  static Event rating(Time t, std::uint32_t user, std::uint32_t item, int level) {
    return {t, EventKind::rating, user, item, level};
  }

  bool is_birth() const { return kind != EventKind::rating; }

  friend bool operator==(const Event&, const Event&) = default;
};

/// Interns opaque string identifiers into dense indices in order of first use.
class IdTable {
 public:
  std::uint32_t intern(std::string_view name) {
    if (auto it = index_.find(std::string{name}); it != index_.end()) return it->second;
    const auto idx = static_cast<std::uint32_t>(names_.size());
    names_.emplace_back(name);
    index_.emplace(names_.back(), idx);
    return idx;
  }

  std::optional<std::uint32_t> find(std::string_view name) const {
    if (auto it = index_.find(std::string{name}); it != index_.end()) return it->second;
    return std::nullopt;
  }

  const std::string& name(std::uint32_t idx) const { return names_.at(idx); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const IdTable& a, const IdTable& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Time-ordered stream of births and ratings with interned ids.
struct EventLog {
  std::vector<Event> events;
  IdTable users;
  IdTable items;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  std::size_t rating_count() const {
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(),
                                                  [](const Event& e) { return !e.is_birth(); }));
  }

  void add_user_birth(Time t, std::string_view user) { events.push_back(Event::user_birth(t, users.intern(user))); }
  void add_item_birth(Time t, std::string_view item) { events.push_back(Event::item_birth(t, items.intern(item))); }
  void add_rating(Time t, std::string_view user, std::string_view item, int level) {
    events.push_back(Event::rating(t, users.intern(user), items.intern(item), level));
  }

  friend bool operator==(const EventLog&, const EventLog&) = default;
};

/// Ordered-probit thresholds pi_1 < ... < pi_{K+1}, with pi_1 = -inf and pi_{K+1} = +inf.
class RatingScale {
 public:
  RatingScale() = default;

  // `interior` holds pi_2..pi_K.
  explicit RatingScale(std::vector<double> interior) {
    if (interior.empty()) throw std::invalid_argument("rating scale needs at least one finite threshold");
    thresholds_.reserve(interior.size() + 2);
    thresholds_.push_back(-std::numeric_limits<double>::infinity());
    for (double v : interior) {
      if (!std::isfinite(v)) throw std::invalid_argument("interior thresholds must be finite");
      if (v <= thresholds_.back()) throw std::invalid_argument("thresholds must be strictly increasing");
      thresholds_.push_back(v);
    }
    thresholds_.push_back(std::numeric_limits<double>::infinity());
  }

  int levels() const { return static_cast<int>(thresholds_.size()) - 1; }
  bool valid() const { return thresholds_.size() >= 3; }

  // Interval (lower(k), upper(k)] for level k in 1..K.
  double lower(int k) const { return thresholds_.at(static_cast<std::size_t>(k - 1)); }
  double upper(int k) const { return thresholds_.at(static_cast<std::size_t>(k)); }

  const std::vector<double>& thresholds() const { return thresholds_; }

  bool contains_level(int k) const { return k >= 1 && k <= levels(); }

  friend bool operator==(const RatingScale&, const RatingScale&) = default;

 private:
  std::vector<double> thresholds_;
};

struct ModelParams {
  double sigma2_E = 1.0;
  double sigma2_U = 1e-3;
  double sigma2_V = 1e-3;
  double sigma2_U0 = 1.0;
  double sigma2_V0 = 1.0;
  int d = 16;
  // Std of a seeded per-entity offset added to newborn prior means; 0 keeps the plain prior.
  double birth_jitter = 0.3;
  std::uint64_t birth_seed = 0;

  double drift(Side side) const { return side == Side::user ? sigma2_U : sigma2_V; }
  double birth_variance(Side side) const { return side == Side::user ? sigma2_U0 : sigma2_V0; }

  void validate() const {
    if (d < 1) throw std::invalid_argument("latent dimension d must be >= 1");
    for (double v : {sigma2_E, sigma2_U, sigma2_V, sigma2_U0, sigma2_V0}) {
      if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("model variances must be positive and finite");
    }
    if (!(birth_jitter >= 0.0) || !std::isfinite(birth_jitter)) throw std::invalid_argument("birth_jitter must be >= 0");
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Gaussian posterior of one user or item topic vector.
struct LatentState {
  Vector mean;
  Matrix cov;
  Time last_event_time = 0.0;

  int dim() const { return static_cast<int>(mean.size()); }

  friend bool operator==(const LatentState& a, const LatentState& b) {
    return a.last_event_time == b.last_event_time && a.mean.size() == b.mean.size() && a.mean == b.mean &&
           a.cov.rows() == b.cov.rows() && a.cov == b.cov;
  }
};

inline bool is_symmetric(const Matrix& cov, double tol = 1e-10) {
  if (cov.rows() != cov.cols()) return false;
  return cov.rows() == 0 || (cov - cov.transpose()).cwiseAbs().maxCoeff() < tol;
}

inline double min_eigenvalue(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_psd(const Matrix& cov, double tol = 1e-9) {
  return is_symmetric(cov) && min_eigenvalue(cov) >= -tol;
}

// ---------------------------------------------------------------------------
// Log validation and birth insertion

struct ValidationReport {
  std::size_t events = 0;
  std::size_t missing_births = 0;
  std::size_t ordering_violations = 0;
  std::size_t level_violations = 0;
  std::size_t duplicate_births = 0;
  std::vector<std::string> messages;

  bool ok() const { return missing_births + ordering_violations + level_violations + duplicate_births == 0; }
};

/// Report-only check of a log. `levels` <= 0 skips the level-range check.
inline ValidationReport validate_log(const EventLog& log, int levels = 0) {
  ValidationReport report;
  report.events = log.size();
  constexpr Time unborn = std::numeric_limits<Time>::infinity();
  std::vector<Time> user_birth(log.users.size(), unborn);
  std::vector<Time> item_birth(log.items.size(), unborn);

  for (const Event& e : log.events) {
    if (e.kind == EventKind::user_birth) {
      if (user_birth[e.user] != unborn) ++report.duplicate_births;
      user_birth[e.user] = std::min(user_birth[e.user], e.time);
    } else if (e.kind == EventKind::item_birth) {
      if (item_birth[e.item] != unborn) ++report.duplicate_births;
      item_birth[e.item] = std::min(item_birth[e.item], e.time);
    }
  }

  for (std::size_t n = 0; n < log.events.size(); ++n) {
    const Event& e = log.events[n];
    if (n > 0 && e.time < log.events[n - 1].time) {
      ++report.ordering_violations;
      report.messages.push_back("event " + std::to_string(n) + ": time goes backwards");
    }
    if (e.kind != EventKind::rating) continue;
    if (!(user_birth[e.user] <= e.time)) {
      ++report.missing_births;
      report.messages.push_back("event " + std::to_string(n) + ": user '" + log.users.name(e.user) + "' not born");
    }
    if (!(item_birth[e.item] <= e.time)) {
      ++report.missing_births;
      report.messages.push_back("event " + std::to_string(n) + ": item '" + log.items.name(e.item) + "' not born");
    }
    if (levels > 0 && (e.level < 1 || e.level > levels)) {
      ++report.level_violations;
      report.messages.push_back("event " + std::to_string(n) + ": level " + std::to_string(e.level) +
                                " outside 1.." + std::to_string(levels));
    }
  }
  return report;
}

namespace detail {
inline int kind_rank(EventKind k) { return k == EventKind::rating ? 1 : 0; }

inline void sort_events(std::vector<Event>& events) {
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.time != b.time) return a.time < b.time;
    return kind_rank(a.kind) < kind_rank(b.kind);
  });
}
}  // namespace detail

/// Inserts a birth at the first appearance of every user/item without one.
inline EventLog auto_insert_births(const EventLog& log) {
  std::vector<bool> user_has_birth(log.users.size(), false);
  std::vector<bool> item_has_birth(log.items.size(), false);
  for (const Event& e : log.events) {
    if (e.kind == EventKind::user_birth) user_has_birth[e.user] = true;
    if (e.kind == EventKind::item_birth) item_has_birth[e.item] = true;
  }

  EventLog out;
  out.users = log.users;
  out.items = log.items;
  out.events.reserve(log.events.size() + log.users.size() + log.items.size());
  for (const Event& e : log.events) {
    if (e.kind == EventKind::rating) {
      if (!user_has_birth[e.user]) {
        out.events.push_back(Event::user_birth(e.time, e.user));
        user_has_birth[e.user] = true;
      }
      if (!item_has_birth[e.item]) {
        out.events.push_back(Event::item_birth(e.time, e.item));
        item_has_birth[e.item] = true;
      }
    }
    out.events.push_back(e);
  }
  detail::sort_events(out.events);
  return out;
}

// ---------------------------------------------------------------------------
// Canonical event-log CSV: time,kind,user,item,level

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is available in libstdc++ 11.
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      if (s == "inf" || s == "+inf") return std::numeric_limits<T>::infinity();
      if (s == "-inf") return -std::numeric_limits<T>::infinity();
      return std::nullopt;
    }
  } else {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  }
  return value;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline void write_event_csv(const EventLog& log, std::ostream& os) {
  os << "time,kind,user,item,level\n";
  for (const Event& e : log.events) {
    os << detail::format_double(e.time) << ',';
    switch (e.kind) {
      case EventKind::user_birth: os << "ubirth," << log.users.name(e.user) << ",,\n"; break;
      case EventKind::item_birth: os << "ibirth,," << log.items.name(e.item) << ",\n"; break;
      case EventKind::rating:
        os << "rate," << log.users.name(e.user) << ',' << log.items.name(e.item) << ',' << e.level << '\n';
        break;
    }
  }
}

inline void write_event_csv(const EventLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_event_csv(log, os);
}

inline EventLog read_event_csv(std::istream& is, const std::string& source = "<stream>") {
  EventLog log;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw std::runtime_error(source + ":" + std::to_string(line_no) + ": " + what);
  };
  if (!std::getline(is, line)) throw std::runtime_error(source + ": empty event log");
  ++line_no;
  if (detail::trim(line) != "time,kind,user,item,level") fail("expected header 'time,kind,user,item,level'");
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cols = detail::split(line, ',');
    if (cols.size() != 5) fail("expected 5 columns");
    const auto t = detail::parse_number<double>(cols[0]);
    if (!t || !std::isfinite(*t) || *t < 0.0) fail("bad time");
    const auto kind = detail::trim(cols[1]);
    const auto user = detail::trim(cols[2]);
    const auto item = detail::trim(cols[3]);
    if (kind == "ubirth") {
      if (user.empty()) fail("ubirth without user");
      log.add_user_birth(*t, user);
    } else if (kind == "ibirth") {
      if (item.empty()) fail("ibirth without item");
      log.add_item_birth(*t, item);
    } else if (kind == "rate") {
      const auto level = detail::parse_number<int>(cols[4]);
      if (user.empty() || item.empty() || !level) fail("malformed rating");
      log.add_rating(*t, user, item, *level);
    } else {
      fail("unknown kind '" + std::string(kind) + "'");
    }
  }
  return log;
}

inline EventLog read_event_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_event_csv(is, path);
}

}  // namespace srec

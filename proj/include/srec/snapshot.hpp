// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "srec/online_filter.hpp"
#include "srec/params_io.hpp"

namespace srec {

// Snapshot CSV layout:
//   # srec snapshot v1
//   key=value header lines (d, variances, thresholds, now, running mean sums)
//   side,id,birth_time,last_event_time,mean_0..mean_{d-1},cov_0_0,cov_1_0,cov_1_1,...
// followed by one row per entity in birth order. Reals use %.17g, so loading is bit-exact.

namespace detail {

inline std::string join_17g(const Vector& v) {
  std::string out;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k) out += ';';
    out += format_17g(v[k]);
  }
  return out;
}

inline Vector parse_vector(std::string_view s, int d, const std::string& what) {
  const auto parts = split(s, ';');
  if (static_cast<int>(parts.size()) != d) throw std::runtime_error("snapshot: bad length for " + what);
  Vector v(d);
  for (int k = 0; k < d; ++k) {
    const auto x = parse_number<double>(parts[static_cast<std::size_t>(k)]);
    if (!x) throw std::runtime_error("snapshot: bad number in " + what);
    v[k] = *x;
  }
  return v;
}

}  // namespace detail

inline void write_snapshot(const FilterState& fs, std::ostream& os) {
  using detail::format_17g;
  const int d = fs.params.d;
  os << "# srec snapshot v1\n";
  os << "d=" << d << '\n'
     << "sigma2_E=" << format_17g(fs.params.sigma2_E) << '\n'
     << "sigma2_U=" << format_17g(fs.params.sigma2_U) << '\n'
     << "sigma2_V=" << format_17g(fs.params.sigma2_V) << '\n'
     << "sigma2_U0=" << format_17g(fs.params.sigma2_U0) << '\n'
     << "sigma2_V0=" << format_17g(fs.params.sigma2_V0) << '\n'
     << "birth_jitter=" << format_17g(fs.params.birth_jitter) << '\n'
     << "birth_seed=" << fs.params.birth_seed << '\n';
  os << "thresholds=";
  const auto& th = fs.scale.thresholds();
  for (std::size_t k = 1; k + 1 < th.size(); ++k) os << (k > 1 ? ";" : "") << format_17g(th[k]);
  os << '\n';
  os << "now=" << format_17g(fs.now) << '\n'
     << "user_mean_sum=" << detail::join_17g(fs.users.mean_sum) << '\n'
     << "item_mean_sum=" << detail::join_17g(fs.items.mean_sum) << '\n';

  os << "side,id,birth_time,last_event_time";
  for (int k = 0; k < d; ++k) os << ",mean_" << k;
  for (int r = 0; r < d; ++r)
    for (int c = 0; c <= r; ++c) os << ",cov_" << r << '_' << c;
  os << '\n';

  for (Side side : {Side::user, Side::item}) {
    const auto& table = fs.table(side);
    for (std::size_t s = 0; s < table.size(); ++s) {
      const auto& st = table.states[s];
      os << to_string(side) << ',' << table.names[s] << ',' << format_17g(table.birth_times[s]) << ','
         << format_17g(st.last_event_time);
      for (int k = 0; k < d; ++k) os << ',' << format_17g(st.mean[k]);
      for (int r = 0; r < d; ++r)
        for (int c = 0; c <= r; ++c) os << ',' << format_17g(st.cov(r, c));
      os << '\n';
    }
  }
}

inline void write_snapshot(const FilterState& fs, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_snapshot(fs, os);
}

inline FilterState read_snapshot(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || detail::trim(line) != "# srec snapshot v1") {
    throw std::runtime_error("snapshot: missing '# srec snapshot v1' header");
  }
  std::string params_text, thresholds, now, user_sum, item_sum;
  while (std::getline(is, line)) {
    if (line.starts_with("side,")) break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("snapshot: bad header line '" + line + "'");
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key == "thresholds") thresholds = value;
    else if (key == "now") now = value;
    else if (key == "user_mean_sum") user_sum = value;
    else if (key == "item_mean_sum") item_sum = value;
    else params_text += line + '\n';
  }
  std::istringstream pis(params_text);
  const ModelParams params = read_params(pis, {}, "snapshot").params;
  const int d = params.d;

  std::vector<double> interior;
  for (auto part : detail::split(thresholds, ';')) {
    const auto v = detail::parse_number<double>(part);
    if (!v) throw std::runtime_error("snapshot: bad thresholds");
    interior.push_back(*v);
  }
  FilterState fs(params, RatingScale(std::move(interior)));
  const auto now_v = detail::parse_number<double>(now);
  if (!now_v) throw std::runtime_error("snapshot: bad 'now'");

  const std::size_t expected = 4 + static_cast<std::size_t>(d) + static_cast<std::size_t>(d * (d + 1) / 2);
  while (std::getline(is, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cols = detail::split(detail::trim(line), ',');
    if (cols.size() != expected) throw std::runtime_error("snapshot: bad column count");
    Side side;
    if (cols[0] == "user") side = Side::user;
    else if (cols[0] == "item") side = Side::item;
    else throw std::runtime_error("snapshot: bad side");
    auto num = [&](std::size_t c) {
      const auto v = detail::parse_number<double>(cols[c]);
      if (!v) throw std::runtime_error("snapshot: bad number");
      return *v;
    };
    LatentState st;
    st.last_event_time = num(3);
    st.mean.resize(d);
    st.cov.resize(d, d);
    std::size_t c = 4;
    for (int k = 0; k < d; ++k) st.mean[k] = num(c++);
    for (int r = 0; r < d; ++r)
      for (int q = 0; q <= r; ++q) st.cov(r, q) = st.cov(q, r) = num(c++);
    auto& table = fs.table(side);
    const std::string name(cols[1]);
    if (table.find(name)) throw std::runtime_error("snapshot: duplicate entity '" + name + "'");
    table.index.emplace(name, table.size());
    table.names.push_back(name);
    table.birth_times.push_back(num(2));
    table.states.push_back(std::move(st));
  }
  fs.now = *now_v;
  fs.users.mean_sum = detail::parse_vector(user_sum, d, "user_mean_sum");
  fs.items.mean_sum = detail::parse_vector(item_sum, d, "item_mean_sum");
  return fs;
}

inline FilterState read_snapshot(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open snapshot '" + path + "'");
  return read_snapshot(is);
}

}  // namespace srec

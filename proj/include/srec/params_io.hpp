// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include "srec/core_model.hpp"
#include "srec/probit.hpp"

namespace srec {

/// Contents of a params file: learned variances, hyperparameters and the rating scale.
struct ParamsFile {
  ModelParams params;
  StarScale scale;

  friend bool operator==(const ParamsFile&, const ParamsFile&) = default;
};

namespace detail {
inline std::string format_17g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

inline void write_params(const ParamsFile& pf, std::ostream& os) {
  using detail::format_17g;
  os << "sigma2_E=" << format_17g(pf.params.sigma2_E) << '\n'
     << "sigma2_U=" << format_17g(pf.params.sigma2_U) << '\n'
     << "sigma2_V=" << format_17g(pf.params.sigma2_V) << '\n'
     << "d=" << pf.params.d << '\n'
     << "sigma2_U0=" << format_17g(pf.params.sigma2_U0) << '\n'
     << "sigma2_V0=" << format_17g(pf.params.sigma2_V0) << '\n'
     << "birth_jitter=" << format_17g(pf.params.birth_jitter) << '\n'
     << "birth_seed=" << pf.params.birth_seed << '\n'
     << "levels=" << pf.scale.levels << '\n'
     << "star_first=" << format_17g(pf.scale.first) << '\n'
     << "star_step=" << format_17g(pf.scale.step) << '\n'
     << "center=" << format_17g(pf.scale.center) << '\n';
}

inline void write_params(const ParamsFile& pf, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_params(pf, os);
}

/// Parses `key=value` lines; '#' starts a comment. Missing keys keep the values in `defaults`.
inline ParamsFile read_params(std::istream& is, ParamsFile defaults = {}, const std::string& source = "<params>") {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw std::runtime_error(source + ":" + std::to_string(line_no) + ": expected key=value");
    }
    kv[std::string(detail::trim(body.substr(0, eq)))] = std::string(detail::trim(body.substr(eq + 1)));
  }

  ParamsFile pf = defaults;
  auto take_double = [&](const char* key, double& out) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    const auto v = detail::parse_number<double>(it->second);
    if (!v) throw std::runtime_error(source + ": bad value for " + key);
    out = *v;
    kv.erase(it);
  };
  auto take_int = [&](const char* key, int& out) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    const auto v = detail::parse_number<int>(it->second);
    if (!v) throw std::runtime_error(source + ": bad value for " + key);
    out = *v;
    kv.erase(it);
  };
  take_double("sigma2_E", pf.params.sigma2_E);
  auto take_u64 = [&](const char* key, std::uint64_t& out) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    const auto v = detail::parse_number<std::uint64_t>(it->second);
    if (!v) throw std::runtime_error(source + ": bad value for " + key);
    out = *v;
    kv.erase(it);
  };
  take_double("sigma2_U", pf.params.sigma2_U);
  take_double("sigma2_V", pf.params.sigma2_V);
  take_double("sigma2_U0", pf.params.sigma2_U0);
  take_double("sigma2_V0", pf.params.sigma2_V0);
  take_int("d", pf.params.d);
  take_double("birth_jitter", pf.params.birth_jitter);
  take_u64("birth_seed", pf.params.birth_seed);
  take_int("levels", pf.scale.levels);
  take_double("star_first", pf.scale.first);
  take_double("star_step", pf.scale.step);
  take_double("center", pf.scale.center);
  if (!kv.empty()) throw std::runtime_error(source + ": unknown key '" + kv.begin()->first + "'");
  pf.params.validate();
  return pf;
}

inline ParamsFile read_params(const std::string& path, ParamsFile defaults = {}) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open params file '" + path + "'");
  return read_params(is, std::move(defaults), path);
}

}  // namespace srec

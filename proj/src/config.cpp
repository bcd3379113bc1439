// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/config.hpp"

#include "moevc/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>

namespace moevc {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::size_t to_size(const std::string& s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("expected a non-negative integer");
  return v;
}

double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw std::invalid_argument("expected a number");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<std::size_t> to_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    const std::size_t v = to_size(item);
    if (v == 0) throw std::invalid_argument("list entries must be >= 1");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("expected a non-empty list");
  return out;
}

// Accepts "3,9" and "3x9".
Pair to_pair(std::string s) {
  std::replace(s.begin(), s.end(), 'x', ',');
  const auto v = to_size_list(s);
  if (v.size() != 2) throw std::invalid_argument("expected two values such as 3x9");
  return {v[0], v[1]};
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename C>
std::string join(const C& c) {
  std::string out;
  for (const auto& v : c) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      out += fmt(v);
    } else {
      out += std::to_string(v);
    }
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"arch.feature_dim", [](RunConfig& c, const std::string& v) { c.arch.feature_dim = to_size(v); }},
      {"arch.speakers", [](RunConfig& c, const std::string& v) { c.arch.speakers = to_size(v); }},
      {"arch.enc_channels", [](RunConfig& c, const std::string& v) { c.arch.enc_channels = to_size_list(v); }},
      {"arch.kernel", [](RunConfig& c, const std::string& v) { c.arch.kernel = to_pair(v); }},
      {"arch.stride", [](RunConfig& c, const std::string& v) { c.arch.stride = to_pair(v); }},
      {"arch.latent_channels", [](RunConfig& c, const std::string& v) { c.arch.latent_channels = to_size(v); }},
      {"arch.cls_channels", [](RunConfig& c, const std::string& v) { c.arch.cls_channels = to_size_list(v); }},
      {"arch.cls_kernel", [](RunConfig& c, const std::string& v) { c.arch.cls_kernel = to_pair(v); }},
      {"arch.cls_stride", [](RunConfig& c, const std::string& v) { c.arch.cls_stride = to_pair(v); }},
      {"arch.moe", [](RunConfig& c, const std::string& v) { c.arch.moe = to_bool(v); }},
      {"arch.gating",
       [](RunConfig& c, const std::string& v) {
         if (v == "learned") {
           c.arch.gating = GatingMode::kLearned;
         } else if (v == "identity") {
           c.arch.gating = GatingMode::kIdentity;
         } else {
           throw std::invalid_argument("expected learned or identity");
         }
       }},
      {"arch.een_channels", [](RunConfig& c, const std::string& v) { c.arch.een_channels = to_size_list(v); }},
      {"arch.een_kernel", [](RunConfig& c, const std::string& v) { c.arch.een_kernel = to_pair(v); }},
      {"arch.een_stride", [](RunConfig& c, const std::string& v) { c.arch.een_stride = to_pair(v); }},
      {"arch.een_hidden", [](RunConfig& c, const std::string& v) { c.arch.een_hidden = to_size_list(v); }},
      {"arch.embed_dim", [](RunConfig& c, const std::string& v) { c.arch.embed_dim = to_size(v); }},
      {"arch.den_state", [](RunConfig& c, const std::string& v) { c.arch.den_state = to_size(v); }},
      {"arch.den_hidden", [](RunConfig& c, const std::string& v) { c.arch.den_hidden = to_size_list(v); }},
      {"optimizer.lr", [](RunConfig& c, const std::string& v) { c.optimizer.lr = to_double(v); }},
      {"optimizer.b1", [](RunConfig& c, const std::string& v) { c.optimizer.b1 = to_double(v); }},
      {"optimizer.b2", [](RunConfig& c, const std::string& v) { c.optimizer.b2 = to_double(v); }},
      {"optimizer.eps", [](RunConfig& c, const std::string& v) { c.optimizer.eps = to_double(v); }},
      {"optimizer.batch", [](RunConfig& c, const std::string& v) { c.train.batch = to_size(v); }},
      {"loss.lambda_mi", [](RunConfig& c, const std::string& v) { c.loss.lambda_mi = to_double(v); }},
      {"loss.lambda_ce", [](RunConfig& c, const std::string& v) { c.loss.lambda_ce = to_double(v); }},
      {"loss.alpha", [](RunConfig& c, const std::string& v) { c.loss.alpha = to_double(v); }},
      {"loss.beta", [](RunConfig& c, const std::string& v) { c.loss.beta = to_double(v); }},
      {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_size(v); }},
      {"train.segment", [](RunConfig& c, const std::string& v) { c.train.segment = to_size(v); }},
      {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_size(v); }},
      {"train.precision",
       [](RunConfig& c, const std::string& v) {
         const auto p = to_size(v);
         if (p != 32 && p != 64) throw std::invalid_argument("precision must be 32 or 64");
         c.train.precision = static_cast<int>(p);
       }},
      {"train.log", [](RunConfig& c, const std::string& v) { c.train.log = v; }},
      {"sweep.betas",
       [](RunConfig& c, const std::string& v) {
         c.sweep.betas.clear();
         for (const auto& item : split_list(v)) c.sweep.betas.push_back(to_double(item));
         if (c.sweep.betas.empty()) throw std::invalid_argument("expected a non-empty list");
       }},
      {"sweep.seeds",
       [](RunConfig& c, const std::string& v) {
         c.sweep.seeds.clear();
         for (const auto& item : split_list(v)) c.sweep.seeds.push_back(to_size(item));
         if (c.sweep.seeds.empty()) throw std::invalid_argument("expected a non-empty list");
       }},
  };
  return table;
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, m); };
  if (c.arch.latent_channels == 0 || c.arch.embed_dim == 0 || c.arch.den_state == 0) {
    fail("latent_channels, embed_dim and den_state must be >= 1");
  }
  for (const Pair* p : {&c.arch.kernel, &c.arch.stride, &c.arch.cls_kernel, &c.arch.cls_stride,
                        &c.arch.een_kernel, &c.arch.een_stride}) {
    if ((*p)[0] == 0 || (*p)[1] == 0) fail("kernel and stride entries must be >= 1");
  }
  if (c.arch.kernel[0] % 2 == 0 || c.arch.kernel[1] % 2 == 0) fail("arch.kernel must be odd in both axes");
  for (double w : {c.loss.lambda_mi, c.loss.lambda_ce, c.loss.alpha, c.loss.beta}) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail("loss weights must be finite and >= 0");
  }
  if (c.train.segment == 0 || c.train.batch == 0) fail("train.segment and optimizer.batch must be >= 1");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw Error(ErrorCode::kConfig, where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw Error(ErrorCode::kConfig, where + "unknown key '" + key + "'");
    try {
      it->second(config, value);
    } catch (const std::invalid_argument& e) {
      throw Error(ErrorCode::kConfig, where + key + ": " + e.what());
    }
  }
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  return parse_config(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  const auto pair = [](const Pair& p) { return std::to_string(p[0]) + "," + std::to_string(p[1]); };
  o << "arch.feature_dim = " << c.arch.feature_dim << "\n"
    << "arch.speakers = " << c.arch.speakers << "\n"
    << "arch.enc_channels = " << join(c.arch.enc_channels) << "\n"
    << "arch.kernel = " << pair(c.arch.kernel) << "\n"
    << "arch.stride = " << pair(c.arch.stride) << "\n"
    << "arch.latent_channels = " << c.arch.latent_channels << "\n"
    << "arch.cls_channels = " << join(c.arch.cls_channels) << "\n"
    << "arch.cls_kernel = " << pair(c.arch.cls_kernel) << "\n"
    << "arch.cls_stride = " << pair(c.arch.cls_stride) << "\n"
    << "arch.moe = " << (c.arch.moe ? "true" : "false") << "\n"
    << "arch.gating = " << (c.arch.gating == GatingMode::kLearned ? "learned" : "identity") << "\n"
    << "arch.een_channels = " << join(c.arch.een_channels) << "\n"
    << "arch.een_kernel = " << pair(c.arch.een_kernel) << "\n"
    << "arch.een_stride = " << pair(c.arch.een_stride) << "\n"
    << "arch.een_hidden = " << join(c.arch.een_hidden) << "\n"
    << "arch.embed_dim = " << c.arch.embed_dim << "\n"
    << "arch.den_state = " << c.arch.den_state << "\n"
    << "arch.den_hidden = " << join(c.arch.den_hidden) << "\n"
    << "optimizer.lr = " << fmt(c.optimizer.lr) << "\n"
    << "optimizer.b1 = " << fmt(c.optimizer.b1) << "\n"
    << "optimizer.b2 = " << fmt(c.optimizer.b2) << "\n"
    << "optimizer.eps = " << fmt(c.optimizer.eps) << "\n"
    << "optimizer.batch = " << c.train.batch << "\n"
    << "loss.lambda_mi = " << fmt(c.loss.lambda_mi) << "\n"
    << "loss.lambda_ce = " << fmt(c.loss.lambda_ce) << "\n"
    << "loss.alpha = " << fmt(c.loss.alpha) << "\n"
    << "loss.beta = " << fmt(c.loss.beta) << "\n"
    << "train.epochs = " << c.train.epochs << "\n"
    << "train.segment = " << c.train.segment << "\n"
    << "train.seed = " << c.train.seed << "\n"
    << "train.precision = " << c.train.precision << "\n";
  if (!c.train.log.empty()) o << "train.log = " << c.train.log << "\n";
  o << "sweep.betas = " << join(c.sweep.betas) << "\n"
    << "sweep.seeds = " << join(c.sweep.seeds) << "\n";
  return o.str();
}

void apply_env_overrides(RunConfig& config) {
  if (const char* s = std::getenv("MOEVC_SEED"); s && *s) {
    try {
      config.train.seed = to_size(s);
    } catch (const std::invalid_argument&) {
      throw Error(ErrorCode::kConfig, "MOEVC_SEED must be a non-negative integer");
    }
  }
}

}  // namespace moevc

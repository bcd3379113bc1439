// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "moevc/error.hpp"

namespace moevc {

McdResult mcd(const FeatureSeq& a, const FeatureSeq& b) {
  if (a.frames != b.frames || a.dim != b.dim) {
    throw Error(ErrorCode::kShape, "mcd: " + std::to_string(a.frames) + "x" + std::to_string(a.dim) + " vs " +
                                       std::to_string(b.frames) + "x" + std::to_string(b.dim));
  }
  if (a.frames == 0) throw Error(ErrorCode::kZeroDimension, "mcd of empty sequences");
  const double k = 10.0 / std::numbers::ln10;
  double total = 0.0;
  for (std::size_t t = 0; t < a.frames; ++t) {
    double sq = 0.0;
    for (std::size_t d = 0; d < a.dim; ++d) {
      const double diff = static_cast<double>(a.at(t, d)) - static_cast<double>(b.at(t, d));
      sq += diff * diff;
    }
    total += k * std::sqrt(2.0 * sq);
  }
  return {total / static_cast<double>(a.frames), a.frames};
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string sweep_csv_header() {
  return "beta,seed,mean_frr,mean_mcd_convert,mean_mcd_recon,loss_recon,loss_lat,loss_mi,loss_ce,loss_ae,"
         "loss_spc,zero_gate_frac";
}

std::string sweep_csv_row(const SweepRow& r) {
  std::string out = fmt(r.beta) + "," + std::to_string(r.seed);
  for (double v : {r.mean_frr, r.mean_mcd_convert, r.mean_mcd_recon, r.loss_recon, r.loss_lat, r.loss_mi,
                   r.loss_ce, r.loss_ae, r.loss_spc, r.zero_gate_frac}) {
    out += "," + fmt(v);
  }
  return out;
}

SweepRow parse_sweep_csv_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream in(line);
  std::string item;
  while (std::getline(in, item, ',')) f.push_back(item);
  if (f.size() != 12) throw Error(ErrorCode::kData, "sweep row needs 12 fields, got " + std::to_string(f.size()));
  SweepRow r;
  try {
    r.beta = std::stod(f[0]);
    r.seed = std::stoull(f[1]);
    double* fields[] = {&r.mean_frr, &r.mean_mcd_convert, &r.mean_mcd_recon, &r.loss_recon, &r.loss_lat,
                        &r.loss_mi,  &r.loss_ce,          &r.loss_ae,        &r.loss_spc,   &r.zero_gate_frac};
    for (std::size_t i = 0; i < 10; ++i) *fields[i] = std::stod(f[i + 2]);
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kData, "malformed sweep row: " + line);
  }
  return r;
}

std::string trend(const std::vector<double>& v) {
  bool up = v.size() >= 2, down = v.size() >= 2;
  for (std::size_t i = 1; i < v.size(); ++i) {
    up = up && v[i] > v[i - 1];
    down = down && v[i] < v[i - 1];
  }
  return up ? "increasing" : down ? "decreasing" : "mixed";
}

SweepReport aggregate_sweep(std::vector<SweepRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.beta != b.beta ? a.beta < b.beta : a.seed < b.seed;
  });
  SweepReport rep;
  rep.csv = sweep_csv_header() + "\n";
  for (const auto& r : rows) {
    rep.csv += sweep_csv_row(r) + "\n";
    if (rep.by_beta.empty() || rep.by_beta.back().beta != r.beta) rep.by_beta.push_back({r.beta});
    BetaSummary& s = rep.by_beta.back();
    s.mean_frr += r.mean_frr;
    s.mean_mcd_convert += r.mean_mcd_convert;
    s.zero_gate_frac += r.zero_gate_frac;
    ++s.runs;
  }
  std::vector<double> frrs, mcds;
  for (auto& s : rep.by_beta) {
    const double n = static_cast<double>(s.runs);
    s.mean_frr /= n;
    s.mean_mcd_convert /= n;
    s.zero_gate_frac /= n;
    frrs.push_back(s.mean_frr);
    mcds.push_back(s.mean_mcd_convert);
  }
  rep.frr_trend = trend(frrs);
  rep.mcd_trend = trend(mcds);
  std::ostringstream o;
  for (const auto& s : rep.by_beta) {
    o << "beta " << fmt(s.beta) << ": runs " << s.runs << ", mean frr " << fmt(s.mean_frr) << ", mean mcd "
      << fmt(s.mean_mcd_convert) << ", zero gates " << fmt(s.zero_gate_frac) << "\n";
  }
  o << "frr vs beta: " << rep.frr_trend << "\n"
    << "mcd vs beta: " << rep.mcd_trend << "\n";
  rep.summary = o.str();
  return rep;
}

}  // namespace moevc

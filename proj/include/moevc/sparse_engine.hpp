// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Inference that skips gated-off channels, with exact MAC accounting.
//
// A channel is active iff its gate is > 0. Skipped output channels are never
// computed (neither GLU branch) and, being zero, are never read by the next
// layer. Speaker-code input channels are always read.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "moevc/config.hpp"
#include "moevc/features.hpp"
#include "moevc/model.hpp"
#include "moevc/moe_gating.hpp"
#include "moevc/net.hpp"

namespace moevc {

struct LayerPlan {
  std::string name;
  std::vector<std::size_t> active_in;   // includes code channels, indexed after the feature channels
  std::vector<std::size_t> active_out;
};

/// One entry per base layer, in execution order.
struct GatePlan {
  std::vector<LayerPlan> layers;
};

struct LayerLedger {
  std::string name;
  std::uint64_t dense_macs = 0;
  std::uint64_t actual_macs = 0;
};

struct OverheadEntry {
  std::string name;
  std::uint64_t macs = 0;
};

struct FlopLedger {
  std::vector<LayerLedger> layers;
  std::vector<OverheadEntry> overhead;

  std::uint64_t dense_macs() const;
  std::uint64_t actual_macs() const;
  std::uint64_t overhead_macs() const;
};

inline std::uint64_t flops(std::uint64_t macs) { return 2 * macs; }

struct FrrReport {
  std::string utterance_id;
  double frr = 0.0;
  std::uint64_t dense_flops = 0;
  std::uint64_t actual_flops = 0;
  std::uint64_t overhead_flops = 0;
  std::vector<double> layer_reduction;  // 1 - actual/dense per base layer
  std::vector<double> gate_sparsity;    // fraction of zero gates per gated layer
};

template <typename T>
GatePlan plan_gates(const ArchConfig& arch, const GateSet<T>& gates);

/// MACs of one base layer given how many input and output channels take part.
std::uint64_t layer_macs(const BaseLayer& layer, std::size_t active_in, std::size_t active_out);

/// Every base layer dense, plus the gating networks' cost for this input length.
FlopLedger count_flops_dense(const ArchConfig& arch, std::size_t frames);
FlopLedger count_flops_sparse(const GatePlan& plan, const ArchConfig& arch, std::size_t frames);

template <typename T>
FrrReport frr(const FlopLedger& ledger, const GateSet<T>& gates, std::string utterance_id = "");

template <typename T>
struct SparseResult {
  Tensor<T> output;
  GateSet<T> gates;
  GatePlan plan;
  FlopLedger ledger;  // instrumented counts of work actually executed
  FrrReport report;
};

/// Gated conversion of x (1 x D x N, standardized). forced replaces the
/// computed gates after the gating networks have run.
template <typename T>
SparseResult<T> sparse_forward(const ParamSet<T>& params, const ArchConfig& arch, const Tensor<T>& x,
                               const SpeakerCode& source, const SpeakerCode& target,
                               const GateSet<T>* forced = nullptr);

std::string frr_csv_header();
std::string frr_csv_row(const FrrReport& report);
FrrReport parse_frr_csv_row(const std::string& line);

}  // namespace moevc

// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

#include "moevc/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "moevc/error.hpp"
#include "moevc/moe_gating.hpp"
#include "moevc/net.hpp"
#include "moevc/objective.hpp"
#include "moevc/sparse_engine.hpp"

namespace moevc {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string stream_name(const char* purpose, std::size_t epoch) {
  return std::string(purpose) + "/" + std::to_string(epoch);
}

template <typename T>
double value_of(const Var<T>& v) {
  return v.valid() ? static_cast<double>(v.value().item()) : 0.0;
}

template <typename T>
bool all_finite(const GradientSet<T>& g) {
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j)
      if (!std::isfinite(g[i][j])) return false;
  return true;
}

// Config text with the epoch budget blanked, for resume compatibility checks.
std::string shape_of_run(RunConfig c) {
  c.train.epochs = 0;
  c.train.log.clear();
  return format_config(c);
}

}  // namespace

std::string epoch_log_header() {
  return "epoch,loss_total,loss_recon,loss_lat,loss_mi,loss_ce,loss_ae,loss_spc,zero_gate_frac";
}

std::string epoch_log_row(const EpochLog& r) {
  std::string out = std::to_string(r.epoch);
  for (double v : {r.total, r.recon, r.lat, r.mi, r.ce, r.ae, r.spc, r.zero_gate_frac}) out += "," + fmt(v);
  return out;
}

RunConfig resolve_config(const RunConfig& config, const Corpus& corpus) {
  RunConfig c = config;
  const std::size_t dim = corpus.dim(), speakers = corpus.speakers.size();
  if (c.arch.feature_dim != 0 && c.arch.feature_dim != dim) {
    throw Error(ErrorCode::kData, "config expects feature dimension " + std::to_string(c.arch.feature_dim) +
                                      ", corpus has " + std::to_string(dim));
  }
  if (c.arch.speakers != 0 && c.arch.speakers != speakers) {
    throw Error(ErrorCode::kData, "config expects " + std::to_string(c.arch.speakers) + " speakers, corpus has " +
                                      std::to_string(speakers));
  }
  c.arch.feature_dim = dim;
  c.arch.speakers = speakers;
  return c;
}

template <typename T>
TrainResult<T> train_model(const Corpus& corpus, const RunConfig& config, const TrainOptions& options) {
  const RunConfig cfg = resolve_config(config, corpus);
  const ArchConfig& arch = cfg.arch;
  const std::uint64_t seed = cfg.train.seed;

  TrainResult<T> result;
  AdamState<T> adam;
  std::size_t done = 0;
  const auto train_utts = corpus.select(Split::kTrain);
  if (options.resume) {
    if (options.out_model.empty()) throw Error(ErrorCode::kUsage, "resume needs a model path");
    Checkpoint<T> ck = load_model<T>(options.out_model);
    if (!ck.adam) throw Error(ErrorCode::kData, "model has no optimizer state to resume from");
    if (shape_of_run(ck.model.config) != shape_of_run(cfg)) {
      throw Error(ErrorCode::kConfig, "config differs from the checkpoint beyond train.epochs");
    }
    if (ck.model.speakers != corpus.speakers) throw Error(ErrorCode::kData, "corpus speakers differ from the checkpoint");
    result.model = std::move(ck.model);
    result.model.config.train.epochs = cfg.train.epochs;
    adam = std::move(*ck.adam);
    done = ck.epochs_done;
  } else {
    result.model = create_model<T>(cfg);
    std::vector<FeatureSeq> seqs;
    for (const Utterance* u : train_utts) seqs.push_back(u->features);
    result.model.stats = compute_stats(seqs);
    result.model.speakers = corpus.speakers;
    adam = make_adam_state(result.model.params, cfg.optimizer);
  }
  Model<T>& model = result.model;

  std::vector<FeatureSeq> standardized;
  for (const Utterance* u : train_utts) standardized.push_back(standardize(u->features, model.stats));

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, options.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw Error(ErrorCode::kIo, "cannot write log " + options.log_path.string());
    if (!options.resume) log << epoch_log_header() << "\n";
  }

  const Objective objective = options.objective.value_or(objective_for(arch));
  const std::size_t batch = cfg.train.batch;
  for (std::size_t epoch = done + 1; epoch <= cfg.train.epochs; ++epoch) {
    const ParamSet<T> last_good = model.params;
    const AdamState<T> last_adam = adam;
    auto fail = [&](const std::string& what) {
      std::string where;
      if (!options.out_model.empty()) {
        Model<T> good = model;
        good.params = last_good;
        save_model(options.out_model, good, &last_adam, epoch - 1);
        where = "; last good checkpoint (epoch " + std::to_string(epoch - 1) + ") saved to " +
                options.out_model.string();
      }
      throw Error(ErrorCode::kNumeric, what + " at epoch " + std::to_string(epoch) + where);
    };

    Rng segments(seed, stream_name("segments", epoch));
    Rng shuffle(seed, stream_name("shuffle", epoch));
    Rng reparam(seed, stream_name("reparam", epoch));
    Rng target(seed, stream_name("target", epoch));

    std::vector<Tensor<T>> inputs;
    std::vector<SpeakerCode> codes;
    for (std::size_t i = 0; i < train_utts.size(); ++i) {
      inputs.push_back(to_network_input<T>(sample_training_segment(standardized[i], cfg.train.segment, segments)));
      codes.push_back(one_hot(train_utts[i]->speaker, arch.speakers));
    }
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle.shuffle(order.begin(), order.end());

    EpochLog row;
    row.epoch = epoch;
    std::size_t zeros = 0, gate_entries = 0;
    GradientSet<T> grads(model.params);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const T inv = static_cast<T>(1.0 / static_cast<double>(end - start));
      grads.zero();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t item = order[k];
        Tape<T> tape;
        const Net<T> net(tape, model.params);
        const LossTerms<T> terms = training_loss(net, arch, tape.constant(inputs[item]), codes[item], cfg.loss,
                                                 objective, LossRngs{reparam, target});
        const double total = value_of(terms.total);
        if (!std::isfinite(total)) fail("non-finite loss");
        tape.backward(scale(terms.total, inv));
        tape.accumulate_param_grads(grads);

        row.total += total;
        row.recon += value_of(terms.recon);
        row.lat += value_of(terms.lat);
        row.mi += value_of(terms.mi);
        row.ce += value_of(terms.ce);
        row.ae += value_of(terms.ae);
        row.spc += value_of(terms.spc);
        for (const auto& g : terms.gates) {
          for (std::size_t j = 0; j < g.value().size(); ++j) zeros += g.value()[j] == T{0};
          gate_entries += g.value().size();
        }
      }
      if (!all_finite(grads)) fail("non-finite gradient");
      adam_step(model.params, grads, adam);
    }
    const double n = static_cast<double>(order.size());
    for (double* v : {&row.total, &row.recon, &row.lat, &row.mi, &row.ce, &row.ae, &row.spc}) *v /= n;
    row.zero_gate_frac = gate_entries ? static_cast<double>(zeros) / static_cast<double>(gate_entries) : 0.0;
    result.log.push_back(row);
    if (log.is_open()) log << epoch_log_row(row) << "\n" << std::flush;
    if (options.progress) {
      *options.progress << "epoch " << epoch << "/" << cfg.train.epochs << " loss " << fmt(row.total)
                        << " recon " << fmt(row.recon) << " zero_gates " << fmt(row.zero_gate_frac) << "\n";
    }
  }
  if (!options.out_model.empty()) save_model(options.out_model, model, &adam, cfg.train.epochs);
  return result;
}

template <typename T>
EvalSummary evaluate(const Model<T>& model, const Corpus& corpus) {
  if (model.speakers != corpus.speakers) throw Error(ErrorCode::kData, "corpus speakers differ from the model");
  const ArchConfig& arch = model.arch();
  EvalSummary s;
  std::size_t recons = 0;
  double zero = 0.0;
  for (const Utterance* u : corpus.select(Split::kEval)) {
    const Tensor<T> x = to_network_input<T>(standardize(u->features, model.stats));
    const SpeakerCode source = one_hot(u->speaker, arch.speakers);
    const auto recon = sparse_forward(model.params, arch, x, source, source);
    s.mean_mcd_recon += mcd(destandardize(from_network_output(recon.output), model.stats), u->features).mcd_db;
    ++recons;
    for (std::size_t t = 0; t < corpus.speakers.size(); ++t) {
      if (t == u->speaker) continue;
      const Utterance* ref = corpus.find(t, u->name, Split::kEval);
      if (!ref) continue;
      const auto conv = sparse_forward(model.params, arch, x, source, one_hot(t, arch.speakers));
      s.mean_mcd_convert += mcd(destandardize(from_network_output(conv.output), model.stats), ref->features).mcd_db;
      s.mean_mcd_source += mcd(u->features, ref->features).mcd_db;
      s.mean_frr += conv.report.frr;
      zero += zero_gate_fraction(conv.gates);
      ++s.conversions;
    }
  }
  if (s.conversions == 0) throw Error(ErrorCode::kData, "eval split has no parallel utterance pairs");
  const double n = static_cast<double>(s.conversions);
  s.mean_frr /= n;
  s.mean_mcd_convert /= n;
  s.mean_mcd_source /= n;
  s.zero_gate_frac = zero / n;
  s.mean_mcd_recon /= static_cast<double>(recons);
  return s;
}

namespace {

template <typename T>
SweepRow sweep_run(const Corpus& corpus, const RunConfig& config, const SweepOptions& options) {
  TrainOptions train;
  if (!options.model_dir.empty()) {
    train.out_model = options.model_dir / ("beta" + fmt(config.loss.beta) + "_seed" +
                                           std::to_string(config.train.seed) + ".mvcm");
  }
  const TrainResult<T> trained = train_model<T>(corpus, config, train);
  const EvalSummary eval = evaluate(trained.model, corpus);
  SweepRow row;
  row.beta = config.loss.beta;
  row.seed = config.train.seed;
  row.mean_frr = eval.mean_frr;
  row.mean_mcd_convert = eval.mean_mcd_convert;
  row.mean_mcd_recon = eval.mean_mcd_recon;
  if (!trained.log.empty()) {
    const EpochLog& last = trained.log.back();
    row.loss_recon = last.recon;
    row.loss_lat = last.lat;
    row.loss_mi = last.mi;
    row.loss_ce = last.ce;
    row.loss_ae = last.ae;
    row.loss_spc = last.spc;
  }
  row.zero_gate_frac = eval.zero_gate_frac;
  return row;
}

}  // namespace

SweepReport run_sweep(const Corpus& corpus, const RunConfig& config, const SweepOptions& options) {
  if (options.betas.empty() || options.seeds.empty()) throw Error(ErrorCode::kUsage, "sweep needs betas and seeds");
  std::vector<RunConfig> runs;
  for (double b : options.betas) {
    for (std::uint64_t s : options.seeds) {
      RunConfig c = config;
      c.loss.beta = b;
      c.train.seed = s;
      runs.push_back(c);
    }
  }
  if (!options.model_dir.empty()) std::filesystem::create_directories(options.model_dir);
  std::vector<SweepRow> rows(runs.size());
  std::vector<std::string> errors(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        rows[i] = runs[i].train.precision == 64 ? sweep_run<double>(corpus, runs[i], options)
                                                : sweep_run<float>(corpus, runs[i], options);
        if (options.progress) {
          std::lock_guard lock(io);
          *options.progress << "beta " << fmt(rows[i].beta) << " seed " << rows[i].seed << ": frr "
                            << fmt(rows[i].mean_frr) << " mcd " << fmt(rows[i].mean_mcd_convert) << "\n";
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!errors[i].empty()) {
      throw Error(ErrorCode::kNumeric, "sweep run beta=" + fmt(runs[i].loss.beta) + " seed=" +
                                           std::to_string(runs[i].train.seed) + " failed: " + errors[i]);
    }
  }
  return aggregate_sweep(std::move(rows));
}

template TrainResult<float> train_model<float>(const Corpus&, const RunConfig&, const TrainOptions&);
template TrainResult<double> train_model<double>(const Corpus&, const RunConfig&, const TrainOptions&);
template EvalSummary evaluate<float>(const Model<float>&, const Corpus&);
template EvalSummary evaluate<double>(const Model<double>&, const Corpus&);

}  // namespace moevc

// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// moevc: corpus generation, training, conversion, FLOP analysis, beta sweeps
// and gradient checks.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "moevc/config.hpp"
#include "moevc/corpus.hpp"
#include "moevc/error.hpp"
#include "moevc/gradcheck_suite.hpp"
#include "moevc/metrics.hpp"
#include "moevc/model.hpp"
#include "moevc/moe_gating.hpp"
#include "moevc/sparse_engine.hpp"
#include "moevc/trainer.hpp"

namespace fs = std::filesystem;
using namespace moevc;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

fs::path manifest_path(const fs::path& corpus) {
  return fs::is_directory(corpus) ? corpus / kManifestName : corpus;
}

RunConfig config_from(const std::string& path) {
  RunConfig c = path.empty() ? RunConfig{} : load_config(path);
  apply_env_overrides(c);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

// ---- gen-corpus ------------------------------------------------------------

struct GenArgs {
  std::string out;
  SyntheticCorpusSpec spec;
};

void gen_corpus(const GenArgs& a) {
  const Manifest m = gen_synthetic_corpus(a.spec, a.out);
  std::size_t train = 0;
  for (const auto& e : m.entries) train += e.split == Split::kTrain;
  std::cout << "wrote " << m.entries.size() << " feature files for " << a.spec.speakers << " speakers (" << train
            << " train, " << m.entries.size() - train << " eval) to " << a.out << "\n";
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string corpus, config, out_model, log;
  bool resume = false;
};

template <typename T>
void train_as(const Corpus& corpus, const RunConfig& config, const TrainArgs& a) {
  TrainOptions opts;
  opts.out_model = a.out_model;
  opts.log_path = !a.log.empty() ? fs::path(a.log)
                  : !config.train.log.empty() ? fs::path(config.train.log)
                                               : fs::path(a.out_model + ".log.csv");
  opts.resume = a.resume;
  opts.progress = &std::cerr;
  const TrainResult<T> r = train_model<T>(corpus, config, opts);
  std::cout << "trained " << r.log.size() << " epochs; model written to " << a.out_model << "; log "
            << opts.log_path.string() << "\n";
}

void train(const TrainArgs& a) {
  const Corpus corpus = load_corpus(manifest_path(a.corpus));
  const RunConfig config = config_from(a.config);
  if (config.train.precision == 64) {
    train_as<double>(corpus, config, a);
  } else {
    train_as<float>(corpus, config, a);
  }
}

// ---- convert ---------------------------------------------------------------

struct ConvertArgs {
  std::string model, input, source, target, out, frr_csv;
  std::vector<std::string> f0_stats;
  bool dense = false;
};

template <typename T>
void convert_as(const ConvertArgs& a) {
  const Checkpoint<T> ck = load_model<T>(a.model);
  const Model<T>& m = ck.model;
  const ArchConfig& arch = m.arch();
  const std::size_t src = m.speaker_index(a.source), tgt = m.speaker_index(a.target);
  const FeatureSeq in = read_feature_file(a.input);
  if (in.dim != arch.feature_dim) {
    throw Error(ErrorCode::kData, "input has dimension " + std::to_string(in.dim) + ", model expects " +
                                      std::to_string(arch.feature_dim));
  }
  const Tensor<T> x = to_network_input<T>(standardize(in, m.stats));
  const SpeakerCode cs = one_hot(src, arch.speakers), ct = one_hot(tgt, arch.speakers);

  Tensor<T> y;
  std::optional<FrrReport> report;
  if (a.dense) {
    Tape<T> tape;
    const Net<T> net(tape, m.params, false);
    if (arch.moe) {
      y = moe_forward(net, arch, tape.constant(x), cs, ct, ForwardMode::kConvert).output.value();
    } else {
      y = moevc::convert(net, arch, tape.constant(x), ct).value();
    }
  } else {
    SparseResult<T> r = sparse_forward(m.params, arch, x, cs, ct);
    y = std::move(r.output);
    r.report.utterance_id = in.utterance_id;
    report = r.report;
  }

  FeatureSeq out = destandardize(from_network_output(y), m.stats);
  out.utterance_id = in.utterance_id;
  if (!in.f0.empty()) {
    if (a.f0_stats.size() == 2) {
      out.f0 = f0_convert(std::span<const float>(in.f0), read_f0_stats_file(a.f0_stats[0]),
                          read_f0_stats_file(a.f0_stats[1]));
    } else {
      out.f0 = in.f0;
    }
  }
  write_feature_file(out, a.out);
  std::cout << "converted " << a.input << " (" << a.source << " -> " << a.target << ") to " << a.out << "\n";
  if (report) {
    std::cout << "frr " << fmt(report->frr) << " dense_flops " << report->dense_flops << " actual_flops "
              << report->actual_flops << " overhead_flops " << report->overhead_flops << "\n";
    if (!a.frr_csv.empty()) write_text(a.frr_csv, frr_csv_header() + "\n" + frr_csv_row(*report) + "\n");
  } else {
    std::cout << "dense gated path (no FLOP ledger)\n";
  }
}

void convert(const ConvertArgs& a) {
  if (model_precision(fs::path(a.model)) == 64) {
    convert_as<double>(a);
  } else {
    convert_as<float>(a);
  }
}

// ---- flops -----------------------------------------------------------------

struct FlopsArgs {
  std::string model, config, input, source, target;
  std::size_t frames = 256, dim = 36, speakers = 4;
  bool csv = false;
};

template <typename T>
void flops_as(const FlopsArgs& a) {
  Model<T> m;
  if (!a.model.empty()) {
    m = load_model<T>(a.model).model;
  } else {
    RunConfig c = config_from(a.config);
    if (c.arch.feature_dim == 0) c.arch.feature_dim = a.dim;
    if (c.arch.speakers == 0) c.arch.speakers = a.speakers;
    m = create_model<T>(c);
    m.stats.mean.assign(c.arch.feature_dim, 0.0);
    m.stats.std.assign(c.arch.feature_dim, 1.0);
    for (std::size_t s = 0; s < c.arch.speakers; ++s) m.speakers.push_back("spk" + std::to_string(s));
  }
  const ArchConfig& arch = m.arch();
  Tensor<T> x;
  std::string id = "probe";
  if (!a.input.empty()) {
    const FeatureSeq in = read_feature_file(a.input);
    x = to_network_input<T>(standardize(in, m.stats));
    id = in.utterance_id;
  } else {
    Rng rng(0, "flops/probe");
    x = Tensor<T>(Shape{1, arch.feature_dim, a.frames});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(rng.normal());
  }
  const std::size_t src = a.source.empty() ? 0 : m.speaker_index(a.source);
  const std::size_t tgt = a.target.empty() ? (src + 1) % arch.speakers : m.speaker_index(a.target);
  SparseResult<T> r = sparse_forward(m.params, arch, x, one_hot(src, arch.speakers), one_hot(tgt, arch.speakers));
  r.report.utterance_id = id;
  const FlopLedger analytic = count_flops_sparse(r.plan, arch, x.dim(2));
  bool match = analytic.overhead_macs() == r.ledger.overhead_macs();
  for (std::size_t i = 0; i < analytic.layers.size(); ++i) {
    match = match && analytic.layers[i].actual_macs == r.ledger.layers[i].actual_macs &&
            analytic.layers[i].dense_macs == r.ledger.layers[i].dense_macs;
  }
  if (!match) throw Error(ErrorCode::kNumeric, "analytic FLOP count disagrees with the instrumented ledger");

  if (a.csv) {
    std::cout << frr_csv_header() << "\n" << frr_csv_row(r.report) << "\n";
    return;
  }
  std::cout << "input frames " << x.dim(2) << "\n";
  std::cout << "layer dense_flops actual_flops reduction\n";
  for (std::size_t i = 0; i < r.ledger.layers.size(); ++i) {
    const LayerLedger& l = r.ledger.layers[i];
    std::cout << l.name << " " << flops(l.dense_macs) << " " << flops(l.actual_macs) << " "
              << fmt(r.report.layer_reduction[i]) << "\n";
  }
  for (const OverheadEntry& o : r.ledger.overhead) std::cout << "overhead " << o.name << " " << flops(o.macs) << "\n";
  const double dense = static_cast<double>(r.report.dense_flops);
  std::cout << "dense base flops " << r.report.dense_flops << "\n"
            << "actual flops " << r.report.actual_flops << "\n"
            << "overhead flops " << r.report.overhead_flops << " (" << fmt(100.0 * r.report.overhead_flops / dense)
            << "% of dense base)\n"
            << "frr " << fmt(r.report.frr) << "\n"
            << "analytic count matches instrumented ledger\n";
}

void flops(const FlopsArgs& a) {
  if (!a.model.empty() && !a.config.empty()) {
    throw Error(ErrorCode::kUsage, "give either --model or --config");
  }
  const int precision = !a.model.empty() ? model_precision(fs::path(a.model)) : config_from(a.config).train.precision;
  if (precision == 64) {
    flops_as<double>(a);
  } else {
    flops_as<float>(a);
  }
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string corpus, config, out, model_dir;
  std::vector<double> betas;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 0;
};

void sweep(const SweepArgs& a) {
  const Corpus corpus = load_corpus(manifest_path(a.corpus));
  const RunConfig config = config_from(a.config);
  SweepOptions opts;
  opts.betas = a.betas.empty() ? config.sweep.betas : a.betas;
  opts.seeds = a.seeds.empty() ? config.sweep.seeds : a.seeds;
  opts.jobs = a.jobs ? a.jobs : std::max(1u, std::thread::hardware_concurrency());
  opts.model_dir = a.model_dir;
  opts.progress = &std::cerr;
  const SweepReport rep = run_sweep(corpus, config, opts);
  write_text(a.out, rep.csv);
  std::cout << rep.summary << "report written to " << a.out << "\n";
}

// ---- gradcheck -------------------------------------------------------------

struct GradArgs {
  std::string config;
  bool corrupt = false;
};

int gradcheck(const GradArgs& a) {
  const RunConfig c = a.config.empty() ? tiny_gradcheck_config() : load_config(a.config);
  GradCheckOptions opts;
  opts.corrupt_analytic = a.corrupt;
  const GradCheckSuite suite = run_gradcheck_suite(c, opts);
  std::cout << format_suite(suite);
  return suite.passed() ? 0 : exit_status(ErrorCode::kNumeric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voice conversion with sparsely gated convolutions"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "Write a synthetic parallel corpus");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--speakers", gen.spec.speakers, "Number of speakers");
  g->add_option("--utts", gen.spec.utterances, "Utterances per speaker");
  g->add_option("--frames", gen.spec.frames, "Frames per utterance");
  g->add_option("--dim", gen.spec.dim, "Feature dimension");
  g->add_option("--seed", gen.spec.seed, "Random seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--corpus", tr.corpus, "Corpus directory or manifest")->required();
  t->add_option("--config", tr.config, "Run config file");
  t->add_option("--out-model", tr.out_model, "Model output path")->required();
  t->add_option("--log", tr.log, "Per-epoch CSV log (default <model>.log.csv)");
  t->add_flag("--resume", tr.resume, "Continue from the optimizer state stored in --out-model");

  ConvertArgs cv;
  auto* c = app.add_subcommand("convert", "Convert one feature file");
  c->add_option("--model", cv.model, "Model file")->required();
  c->add_option("--input", cv.input, "Input MFCB file")->required();
  c->add_option("--source-speaker", cv.source, "Source speaker id")->required();
  c->add_option("--target-speaker", cv.target, "Target speaker id")->required();
  c->add_option("--out", cv.out, "Output MFCB file")->required();
  c->add_flag("--dense", cv.dense, "Run the dense gated path instead of the sparse engine");
  c->add_option("--f0-stats", cv.f0_stats, "Source and target F0 stats files")->expected(2);
  c->add_option("--frr-csv", cv.frr_csv, "Write the FRR report as CSV");

  FlopsArgs fl;
  auto* f = app.add_subcommand("flops", "FLOP ledger and FRR for one input");
  f->add_option("--model", fl.model, "Model file");
  f->add_option("--config", fl.config, "Config for a freshly initialised model (instead of --model)");
  f->add_option("--frames", fl.frames, "Probe length when no --input is given");
  f->add_option("--input", fl.input, "MFCB file to compute gates on");
  f->add_option("--source-speaker", fl.source, "Source speaker id");
  f->add_option("--target-speaker", fl.target, "Target speaker id");
  f->add_option("--dim", fl.dim, "Feature dimension for --config");
  f->add_option("--speakers", fl.speakers, "Speaker count for --config");
  f->add_flag("--csv", fl.csv, "Print one CSV row");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Train and evaluate over a beta x seed grid");
  s->add_option("--corpus", sw.corpus, "Corpus directory or manifest")->required();
  s->add_option("--config", sw.config, "Run config file");
  s->add_option("--betas", sw.betas, "Comma-separated betas")->delimiter(',');
  s->add_option("--seeds", sw.seeds, "Comma-separated seeds")->delimiter(',');
  s->add_option("--out", sw.out, "Report CSV")->required();
  s->add_option("--jobs", sw.jobs, "Concurrent runs (default: hardware threads)");
  s->add_option("--model-dir", sw.model_dir, "Keep each trained model here");

  GradArgs gc;
  auto* k = app.add_subcommand("gradcheck", "Finite-difference check of every loss term");
  k->add_option("--config", gc.config, "Config for the tiny model");
  k->add_flag("--corrupt-gradient", gc.corrupt)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_status(ErrorCode::kUsage);
  }

  try {
    if (*g) gen_corpus(gen);
    if (*t) train(tr);
    if (*c) convert(cv);
    if (*f) flops(fl);
    if (*s) sweep(sw);
    if (*k) return gradcheck(gc);
  } catch (const Error& e) {
    std::cerr << "moevc: " << e.what() << "\n";
    return exit_status(e.code());
  } catch (const std::exception& e) {
    std::cerr << "moevc: " << e.what() << "\n";
    return exit_status(ErrorCode::kData);
  }
  return 0;
}

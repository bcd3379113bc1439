// Copyright 2026 The MoEVC Authors
// SPDX-License-Identifier: Apache-2.0

// Python bindings: feature files, metrics, F0, FLOP accounting, training and
// conversion. Feature matrices cross the boundary as float32 arrays of shape
// (frames, dim).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include "moevc/config.hpp"
#include "moevc/corpus.hpp"
#include "moevc/error.hpp"
#include "moevc/features.hpp"
#include "moevc/gradcheck_suite.hpp"
#include "moevc/metrics.hpp"
#include "moevc/model.hpp"
#include "moevc/sparse_engine.hpp"
#include "moevc/trainer.hpp"

namespace py = pybind11;
using namespace moevc;

namespace {

using Matrix = py::array_t<float, py::array::c_style | py::array::forcecast>;

FeatureSeq to_seq(const Matrix& values, std::vector<float> f0 = {}) {
  if (values.ndim() != 2) throw Error(ErrorCode::kShape, "features must be a (frames, dim) array");
  const auto frames = static_cast<std::size_t>(values.shape(0));
  const auto dim = static_cast<std::size_t>(values.shape(1));
  std::vector<float> v(values.data(), values.data() + frames * dim);
  return make_feature_seq(frames, dim, std::move(v), std::move(f0));
}

Matrix to_array(const FeatureSeq& seq) {
  Matrix out({seq.frames, seq.dim});
  std::memcpy(out.mutable_data(), seq.values.data(), seq.values.size() * sizeof(float));
  return out;
}

py::dict report_dict(const FrrReport& r) {
  py::dict d;
  d["frr"] = r.frr;
  d["dense_flops"] = r.dense_flops;
  d["actual_flops"] = r.actual_flops;
  d["overhead_flops"] = r.overhead_flops;
  d["layer_reduction"] = r.layer_reduction;
  d["gate_sparsity"] = r.gate_sparsity;
  return d;
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

template <typename T>
py::tuple convert_as(const Checkpoint<T>& ck, const Matrix& features, const std::string& source,
                     const std::string& target) {
  const Model<T>& m = ck.model;
  const ArchConfig& arch = m.arch();
  const Tensor<T> x = to_network_input<T>(standardize(to_seq(features), m.stats));
  const auto r = sparse_forward(m.params, arch, x, one_hot(m.speaker_index(source), arch.speakers),
                                one_hot(m.speaker_index(target), arch.speakers));
  return py::make_tuple(to_array(destandardize(from_network_output(r.output), m.stats)), report_dict(r.report));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Voice conversion with sparsely gated convolutions";

  static py::exception<Error> error(m, "MoevcError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error(e.what());
    }
  });

  m.def(
      "read_features",
      [](const std::filesystem::path& path) {
        const FeatureSeq seq = read_feature_file(path);
        return py::make_tuple(to_array(seq), seq.f0);
      },
      py::arg("path"), "Read an MFCB file; returns (features, f0).");
  m.def(
      "write_features",
      [](const std::filesystem::path& path, const Matrix& features, std::vector<float> f0) {
        write_feature_file(to_seq(features, std::move(f0)), path);
      },
      py::arg("path"), py::arg("features"), py::arg("f0") = std::vector<float>{});

  m.def(
      "mcd", [](const Matrix& a, const Matrix& b) { return moevc::mcd(to_seq(a), to_seq(b)).mcd_db; }, py::arg("a"),
      py::arg("b"), "Mel-cepstral distance in dB, averaged over frames.");

  m.def(
      "f0_stats",
      [](const std::vector<double>& f0) {
        const F0Stats s = compute_f0_stats(f0);
        return py::make_tuple(s.log_mean, s.log_std);
      },
      py::arg("f0"), "(log_mean, log_std) over voiced frames.");
  m.def(
      "f0_convert",
      [](const std::vector<double>& f0, std::pair<double, double> src, std::pair<double, double> tgt) {
        return moevc::f0_convert(f0, F0Stats{src.first, src.second}, F0Stats{tgt.first, tgt.second});
      },
      py::arg("f0"), py::arg("source_stats"), py::arg("target_stats"));

  m.def(
      "gen_corpus",
      [](const std::filesystem::path& out, std::size_t speakers, std::size_t utterances, std::size_t frames,
         std::size_t dim, std::uint64_t seed) {
        SyntheticCorpusSpec spec;
        spec.speakers = speakers;
        spec.utterances = utterances;
        spec.frames = frames;
        spec.dim = dim;
        spec.seed = seed;
        return gen_synthetic_corpus(spec, out).entries.size();
      },
      py::arg("out"), py::arg("speakers") = 4, py::arg("utterances") = 20, py::arg("frames") = 256,
      py::arg("dim") = 36, py::arg("seed") = 1, "Write a synthetic parallel corpus; returns the file count.");

  m.def(
      "format_config", [](const std::string& path) { return format_config(config_or_default(path)); },
      py::arg("path") = "", "Canonical text of a config file (defaults when path is empty).");

  m.def(
      "dense_flops",
      [](const std::string& config, std::size_t dim, std::size_t speakers, std::size_t frames) {
        RunConfig c = config_or_default(config);
        if (c.arch.feature_dim == 0) c.arch.feature_dim = dim;
        if (c.arch.speakers == 0) c.arch.speakers = speakers;
        const FlopLedger l = count_flops_dense(c.arch, frames);
        py::dict d;
        d["dense_flops"] = flops(l.dense_macs());
        d["overhead_flops"] = flops(l.overhead_macs());
        py::dict layers;
        for (const auto& layer : l.layers) layers[layer.name.c_str()] = flops(layer.dense_macs);
        d["layers"] = layers;
        return d;
      },
      py::arg("config") = "", py::arg("dim") = 36, py::arg("speakers") = 4, py::arg("frames") = 256);

  m.def(
      "train",
      [](const std::filesystem::path& corpus, const std::string& config, const std::filesystem::path& out_model) {
        const Corpus c = load_corpus(std::filesystem::is_directory(corpus) ? corpus / kManifestName : corpus);
        const RunConfig rc = config_or_default(config);
        TrainOptions opts;
        opts.out_model = out_model;
        std::vector<double> totals;
        py::gil_scoped_release release;
        const auto log = rc.train.precision == 64 ? train_model<double>(c, rc, opts).log
                                                  : train_model<float>(c, rc, opts).log;
        for (const auto& row : log) totals.push_back(row.total);
        return totals;
      },
      py::arg("corpus"), py::arg("config"), py::arg("out_model"), "Train a model; returns per-epoch total loss.");

  m.def(
      "convert",
      [](const std::filesystem::path& model, const Matrix& features, const std::string& source,
         const std::string& target) {
        if (model_precision(model) == 64) return convert_as(load_model<double>(model), features, source, target);
        return convert_as(load_model<float>(model), features, source, target);
      },
      py::arg("model"), py::arg("features"), py::arg("source"), py::arg("target"),
      "Convert raw features through the sparse engine; returns (features, frr_report).");

  m.def(
      "gradcheck",
      [](const std::string& config) {
        const RunConfig c = config.empty() ? tiny_gradcheck_config() : load_config(config);
        const GradCheckSuite suite = run_gradcheck_suite(c);
        return py::make_tuple(suite.passed(), format_suite(suite));
      },
      py::arg("config") = "", "Finite-difference suite; returns (passed, report).");
}

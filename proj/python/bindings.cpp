// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Tensors cross the boundary as float32 numpy arrays and
// token ids as int32 arrays of shape [batch, seq].

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "fbi/bitpack.hpp"
#include "fbi/data.hpp"
#include "fbi/distill.hpp"
#include "fbi/errors.hpp"
#include "fbi/fbi_linear.hpp"
#include "fbi/metrics.hpp"
#include "fbi/model.hpp"
#include "fbi/runtime.hpp"
#include "fbi/serialize.hpp"
#include "fbi/trainer.hpp"

namespace py = pybind11;
using namespace fbi;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IdArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

TokenBatch to_batch(const IdArray& ids) {
  if (ids.ndim() != 2) throw DimensionError("token ids must have shape [batch, seq]");
  return TokenBatch::from_ids(static_cast<std::size_t>(ids.shape(0)), static_cast<std::size_t>(ids.shape(1)),
                              std::span(ids.data(), static_cast<std::size_t>(ids.size())));
}

std::vector<std::int32_t> to_ids(const IdArray& ids) { return {ids.data(), ids.data() + ids.size()}; }

py::dict census_dict(const ParameterCensus& c) {
  py::dict d;
  d["linear_weights"] = c.linear_weights;
  d["scale_shift"] = c.scale_shift;
  d["norms"] = c.norms;
  d["embedding"] = c.embedding;
  d["head"] = c.head;
  d["total"] = c.total();
  return d;
}

py::dict log_row_dict(const TrainLogRow& r) {
  py::dict d;
  d["step"] = r.step;
  d["loss"] = r.loss;
  d["lr"] = r.lr;
  d["grad_norm_preclip"] = r.grad_norm_preclip;
  d["ff_ratio"] = r.ff_ratio;
  d["chunk_id"] = r.chunk_id;
  d["event"] = r.event;
  return d;
}

}  // namespace

PYBIND11_MODULE(_fbi, m) {
  m.doc() = "Fully binarized transformer training and 1-bit inference";
  keep_freed_memory();

  auto base = py::register_exception<Error>(m, "FbiError");
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<TrainingAborted>(m, "TrainingAborted", base.ptr());

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("hidden_size", &ModelConfig::hidden_size)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("n_kv_heads", &ModelConfig::n_kv_heads)
      .def_readwrite("intermediate_size", &ModelConfig::intermediate_size)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("initializer_range", &ModelConfig::initializer_range)
      .def_readwrite("binarize", &ModelConfig::binarize)
      .def_readwrite("rms_eps", &ModelConfig::rms_eps)
      .def_readwrite("rope_base", &ModelConfig::rope_base)
      .def("validate", &ModelConfig::validate)
      .def("to_dict", [](const ModelConfig& c) { return c.to_kv(""); })
      .def_static("toy", &ModelConfig::toy)
      .def_static("fbi_130m", &ModelConfig::fbi_130m)
      .def_static("fbi_1_3b", &ModelConfig::fbi_1_3b)
      .def_static("fbi_7b", &ModelConfig::fbi_7b)
      .def("census", [](const ModelConfig& c) { return census_dict(census_for(c)); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("peak_lr", &TrainConfig::peak_lr)
      .def_readwrite("final_lr", &TrainConfig::final_lr)
      .def_readwrite("warmup_steps", &TrainConfig::warmup_steps)
      .def_readwrite("total_steps", &TrainConfig::total_steps)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("batch_tokens", &TrainConfig::batch_tokens)
      .def_readwrite("seq_len", &TrainConfig::seq_len)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
      .def_readwrite("keep_checkpoints", &TrainConfig::keep_checkpoints)
      .def_readwrite("ff_interval", &TrainConfig::ff_interval)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_property(
          "spike_window", [](const TrainConfig& c) { return c.spike.window; },
          [](TrainConfig& c, std::size_t v) { c.spike.window = v; })
      .def_property(
          "spike_factor", [](const TrainConfig& c) { return c.spike.factor; },
          [](TrainConfig& c, double v) { c.spike.factor = v; })
      .def_property(
          "spike_patience", [](const TrainConfig& c) { return c.spike.patience; },
          [](TrainConfig& c, std::size_t v) { c.spike.patience = v; })
      .def("validate", &TrainConfig::validate)
      .def("to_dict", [](const TrainConfig& c) { return c.to_kv(""); });

  // --- tokenizer and data ---------------------------------------------------------
  m.attr("VOCAB_SIZE") = kByteVocab;
  m.attr("BOS") = kBosToken;
  m.def("encode", [](const std::string& text) { return Tokenizer{}.encode(text); });
  m.def("encode_documents", [](const std::string& text) { return Tokenizer{}.encode_documents(text); });
  m.def("decode", [](const std::vector<std::int32_t>& ids) { return py::bytes(Tokenizer{}.decode(ids)); });

  py::class_<ChunkedDataset>(m, "ChunkedDataset")
      .def_static(
          "from_tokens",
          [](const IdArray& ids, std::size_t tokens_per_chunk, std::size_t seq_len) {
            return ChunkedDataset::from_tokens(to_ids(ids), tokens_per_chunk, seq_len);
          },
          py::arg("tokens"), py::arg("tokens_per_chunk"), py::arg("seq_len"))
      .def_static("open", &ChunkedDataset::open)
      .def("__len__", &ChunkedDataset::size)
      .def_property_readonly("total_tokens", &ChunkedDataset::total_tokens)
      .def("chunk", [](const ChunkedDataset& d, std::size_t i) { return d.chunk(i); });
  m.def("build_chunks", &build_chunks, py::arg("corpus"), py::arg("tokens_per_chunk"), py::arg("seq_len"),
        py::arg("out_dir"));

  // --- binarized linear layer --------------------------------------------------------
  m.def("ste_sign", [](const FloatArray& w) { return to_numpy(ste_sign(to_tensor(w))); });
  m.def("init_scales", [](const FloatArray& w) {
    const auto s = init_scales(to_tensor(w));
    return py::make_tuple(to_numpy(s.alpha), to_numpy(s.beta));
  });
  m.def(
      "fbi_linear_forward",
      [](const FloatArray& x, const FloatArray& w, const FloatArray& alpha, const FloatArray& beta) {
        FbiLinearParams p{to_tensor(w), to_tensor(alpha), to_tensor(beta)};
        return to_numpy(fbi_linear_forward(p, to_tensor(x)));
      },
      py::arg("x"), py::arg("w"), py::arg("alpha"), py::arg("beta"));

  // --- losses -------------------------------------------------------------------------
  m.def(
      "ad_loss",
      [](const FloatArray& logits, const FloatArray& teacher_probs) {
        return ad_loss(to_tensor(logits), DistributionBatch{to_tensor(teacher_probs)}).item();
      },
      py::arg("student_logits"), py::arg("teacher_probs"));
  m.def(
      "na_loss", [](const FloatArray& logits, const IdArray& ids) { return na_loss(to_tensor(logits), to_batch(ids)).item(); },
      py::arg("student_logits"), py::arg("ids"));

  // --- packed inference ------------------------------------------------------------
  py::class_<PackedLinear>(m, "PackedLinear")
      .def_readonly("m", &PackedLinear::m)
      .def_readonly("n", &PackedLinear::n)
      .def_property_readonly("words",
                             [](const PackedLinear& p) {
                               return py::array_t<std::uint64_t>(static_cast<py::ssize_t>(p.words.size()),
                                                                 p.words.data());
                             })
      .def_readonly("alpha", &PackedLinear::alpha)
      .def_readonly("beta", &PackedLinear::beta)
      .def("__eq__", [](const PackedLinear& a, const PackedLinear& b) { return a == b; });
  m.def(
      "pack",
      [](const FloatArray& w, const FloatArray& alpha, const FloatArray& beta) {
        return pack(FbiLinearParams{to_tensor(w), to_tensor(alpha), to_tensor(beta)});
      },
      py::arg("w"), py::arg("alpha"), py::arg("beta"));
  m.def("unpack", [](const PackedLinear& p) { return to_numpy(unpack(p)); });
  m.def("packed_forward", [](const PackedLinear& p, const FloatArray& x) { return to_numpy(packed_forward(p, to_tensor(x))); });

  // --- models ----------------------------------------------------------------------
  py::class_<Model>(m, "Model")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("config", &Model::config)
      .def("forward_logits", [](const Model& md, const IdArray& ids) { return to_numpy(md.forward_logits(to_batch(ids))); })
      .def("next_token_distribution",
           [](const Model& md, const IdArray& ids) { return to_numpy(md.next_token_distribution(to_batch(ids))); })
      .def("census", [](const Model& md) { return census_dict(md.census()); })
      .def("parameter_names",
           [](const Model& md) {
             std::vector<std::string> names;
             for (const auto& p : md.named_parameters()) names.push_back(p.name);
             return names;
           })
      .def("parameter",
           [](const Model& md, const std::string& name) {
             for (const auto& p : md.named_parameters())
               if (p.name == name) return to_numpy(p.tensor);
             throw InputError("no parameter named '" + name + "'");
           })
      .def("clone", &Model::clone)
      .def_static("binarized_from", &Model::binarized_from)
      .def("save", [](const Model& md, const std::filesystem::path& path) { save_checkpoint(model_checkpoint(md), path); });
  m.def("load_model", [](const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint(path)); });

  py::class_<PackedModel>(m, "PackedModel")
      .def_static("from_model", &PackedModel::from_model)
      .def_property_readonly("config", &PackedModel::config)
      .def("forward_logits",
           [](const PackedModel& pm, const IdArray& ids) { return to_numpy(pm.forward_logits(to_batch(ids))); })
      .def("linear", &PackedModel::linear, py::arg("layer"), py::arg("slot"))
      .def("encode", [](const PackedModel& pm) { return py::bytes(pm.encode()); });
  py::enum_<LinearSlot>(m, "LinearSlot")
      .value("Q", LinearSlot::kQ)
      .value("K", LinearSlot::kK)
      .value("V", LinearSlot::kV)
      .value("O", LinearSlot::kO)
      .value("GATE", LinearSlot::kGate)
      .value("UP", LinearSlot::kUp)
      .value("DOWN", LinearSlot::kDown);
  m.def("export_packed", &export_packed, py::arg("model"), py::arg("path"));
  m.def("import_packed", &import_packed, py::arg("path"));

  // --- metrics ---------------------------------------------------------------------
  m.def(
      "perplexity",
      [](const Model& md, const IdArray& ids, std::size_t seq_len) {
        const auto r = perplexity(md, to_ids(ids), seq_len);
        py::dict d;
        d["perplexity"] = r.perplexity;
        d["mean_nll"] = r.mean_nll;
        d["predicted_tokens"] = r.predicted_tokens;
        return d;
      },
      py::arg("model"), py::arg("tokens"), py::arg("seq_len"));
  m.def(
      "avg_bitwidth",
      [](const ModelConfig& c, bool strict) { return avg_bitwidth(c, strict ? CensusMode::kStrict : CensusMode::kDecoderBody); },
      py::arg("config"), py::arg("strict") = false);
  m.def("module_bitwidth", &module_bitwidth, py::arg("n"));
  m.def("storage_report", [](const ModelConfig& c) {
    const auto r = storage_report(c);
    py::dict d;
    d["census"] = census_dict(r.census);
    d["full_bytes"] = r.full_bytes;
    d["binarized_bytes"] = r.binarized_bytes;
    d["compression_ratio"] = r.compression_ratio;
    d["extra_parameter_ratio"] = r.extra_parameter_ratio;
    d["avg_bitwidth"] = r.avg_bitwidth;
    return d;
  });

  py::class_<SignSnapshot>(m, "SignSnapshot")
      .def_readonly("step", &SignSnapshot::step)
      .def_readonly("names", &SignSnapshot::names)
      .def_property_readonly("n_total", &SignSnapshot::n_total);
  m.def("sign_snapshot", py::overload_cast<const Model&, std::size_t>(&sign_snapshot), py::arg("model"),
        py::arg("step") = 0);
  m.def("ff_ratio", [](const SignSnapshot& a, const SignSnapshot& b) {
    const auto r = ff_ratio(a, b);
    py::dict d;
    d["ratio"] = r.ratio;
    d["total_flips"] = r.total_flips;
    d["n_total"] = r.n_total;
    d["per_layer_flips"] = r.per_layer_flips;
    return d;
  });

  // --- training --------------------------------------------------------------------
  m.def(
      "train",
      [](Model& student, const ChunkedDataset& data, const TrainConfig& cfg, const std::string& mode,
         const Model* teacher) {
        const TrainMode train_mode = parse_mode(mode);
        TeacherFn teach;
        if (teacher != nullptr) teach = model_teacher(*teacher, student.config().vocab_size);
        TrainResult r;
        {
          py::gil_scoped_release release;
          Trainer trainer(student, data, cfg, train_mode, teach);
          r = trainer.run();
        }
        py::list rows;
        for (const auto& row : r.log.rows) rows.append(log_row_dict(row));
        py::dict d;
        d["log"] = rows;
        d["steps_completed"] = r.steps_completed;
        d["rollbacks"] = r.rollbacks;
        d["exhausted"] = r.exhausted;
        d["skipped_chunks"] = r.skipped_chunks;
        d["retained_chunks"] = r.retained_chunks;
        return d;
      },
      py::arg("student"), py::arg("data"), py::arg("config"), py::arg("mode") = "na",
      py::arg("teacher") = nullptr);
}

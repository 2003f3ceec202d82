#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "slicefusion/attention_export.hpp"
#include "slicefusion/encoders.hpp"
#include "slicefusion/fusion.hpp"
#include "slicefusion/metrics.hpp"
#include "slicefusion/synthetic.hpp"
#include "slicefusion/train.hpp"
#include "slicefusion/volume.hpp"

namespace py = pybind11;
using namespace slicefusion;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array volume_to_numpy(const Volume& v) {
  Array out({v.depth(), v.height(), v.width()});
  std::copy(v.voxels().begin(), v.voxels().end(), out.mutable_data());
  return out;
}

Volume volume_from_numpy(const Array& a, bool windowed) {
  if (a.ndim() != 3) throw std::invalid_argument("volume must be a 3-d array");
  return Volume(a.shape(0), a.shape(1), a.shape(2), std::vector<double>(a.data(), a.data() + a.size()), windowed);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual 3D/2D volumetric feature fusion with text-guided slice scoring";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<VolumeError>(m, "VolumeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::enum_<Strategy>(m, "Strategy")
      .value("tgis", Strategy::tgis)
      .value("avg", Strategy::avg)
      .value("gaussian", Strategy::gaussian)
      .value("random", Strategy::random)
      .value("maxpool", Strategy::maxpool)
      .value("only_3d", Strategy::only_3d)
      .value("only_2d", Strategy::only_2d);
  py::enum_<TaskKind>(m, "TaskKind")
      .value("locate", TaskKind::locate)
      .value("count", TaskKind::count)
      .value("texture", TaskKind::texture)
      .value("report", TaskKind::report);
  py::enum_<FormatKind>(m, "FormatKind").value("choice", FormatKind::choice).value("free_form", FormatKind::free_form);

  py::class_<EncoderConfig>(m, "EncoderConfig")
      .def(py::init<>())
      .def_readwrite("depth", &EncoderConfig::depth)
      .def_readwrite("height", &EncoderConfig::height)
      .def_readwrite("width", &EncoderConfig::width)
      .def_readwrite("patch_depth", &EncoderConfig::patch_depth)
      .def_readwrite("patch_height", &EncoderConfig::patch_height)
      .def_readwrite("patch_width", &EncoderConfig::patch_width)
      .def_readwrite("pool", &EncoderConfig::pool)
      .def_readwrite("hidden", &EncoderConfig::hidden)
      .def_readwrite("tokens_2d", &EncoderConfig::tokens_2d)
      .def_readwrite("text_dim", &EncoderConfig::text_dim)
      .def_readwrite("mixing", &EncoderConfig::mixing)
      .def("validate", &EncoderConfig::validate)
      .def_property_readonly("tokens_3d", &EncoderConfig::tokens_3d)
      .def_property_readonly("slice_tokens", &EncoderConfig::slice_tokens);
  py::class_<DecoderConfig>(m, "DecoderConfig")
      .def(py::init<>())
      .def_readwrite("width", &DecoderConfig::width)
      .def_readwrite("ff_hidden", &DecoderConfig::ff_hidden)
      .def_readwrite("vocab", &DecoderConfig::vocab)
      .def_readwrite("max_len", &DecoderConfig::max_len);
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("encoder", &ModelConfig::encoder)
      .def_readwrite("decoder", &ModelConfig::decoder);

  py::class_<ModelParams>(m, "ModelParams")
      .def_property_readonly("config", &ModelParams::config)
      .def_property_readonly("seed", &ModelParams::seed)
      .def("numel", &ModelParams::numel)
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });
  m.def("init_params", &init_params, py::arg("seed"), py::arg("config") = ModelConfig{});
  m.def("save_checkpoint", &save_checkpoint);
  m.def("load_checkpoint", &load_checkpoint);

  m.def("hu_window", [](const Array& raw) { return volume_to_numpy(hu_window(volume_from_numpy(raw, false))); },
        "Clip to [-1000, 1000] HU and map onto [0, 1].");
  m.def("resize", [](const Array& v, std::size_t n, std::size_t h, std::size_t w) {
    return volume_to_numpy(resize(volume_from_numpy(v, false), n, h, w));
  });
  m.def("read_mvol", [](const std::filesystem::path& p) { return volume_to_numpy(read_mvol(p)); });
  m.def("write_mvol", [](const Array& v, const std::filesystem::path& p) { write_mvol(volume_from_numpy(v, false), p); });

  m.def("softmax", [](const Array& v) { return to_numpy(softmax(from_numpy(v))); });
  m.def("repeat_blocks", [](const Array& t, std::size_t f) { return to_numpy(repeat_blocks(from_numpy(t), f)); });
  m.def("transform_3d", [](const Array& z, const EncoderConfig& c) { return to_numpy(transform_3d(from_numpy(z), c)); });
  m.def("tgis_scores_from_query",
        [](const Array& q, const Array& f) { return to_numpy(tgis_scores_from_query(from_numpy(q), from_numpy(f))); });

  m.def("bleu", [](const TokenSeq& h, const TokenSeq& r, std::size_t n) { return bleu(h, r, n); }, py::arg("hypothesis"),
        py::arg("reference"), py::arg("max_n") = 4);
  m.def("rouge_l", [](const TokenSeq& h, const TokenSeq& r) { return rouge_l(h, r); });

  m.def("instruction_text", &instruction_text);
  m.def("encode_text", [](const std::string& text) { return Vocabulary::standard().encode(text); },
        "Token ids of `text` under the built-in vocabulary.");
  m.def(
      "generate_sample",
      [](std::uint64_t seed, std::size_t index) {
        const auto g = generate_sample(seed, index, SyntheticConfig{});
        py::dict d;
        d["volume"] = volume_to_numpy(g.volume);
        d["instruction"] = g.sample.instruction;
        d["answer"] = g.sample.answer;
        d["task"] = g.sample.task;
        d["format"] = g.sample.format;
        d["ground_truth_slices"] = g.sample.ground_truth_slices;
        return d;
      },
      "One synthetic sample with its raw HU volume.");

  m.def(
      "slice_scores",
      [](const ModelParams& p, const Array& raw, const std::string& instruction) {
        const auto out = pipeline(p, volume_from_numpy(raw, false), Vocabulary::standard().encode(instruction), Strategy::tgis);
        return to_numpy(*out.scores);
      },
      "Text-guided per-slice scores for a raw HU volume.");
  m.def(
      "image_features",
      [](const ModelParams& p, const Array& raw, const std::string& instruction, Strategy s, std::uint64_t seed) {
        return to_numpy(pipeline(p, volume_from_numpy(raw, false), Vocabulary::standard().encode(instruction), s, seed)
                            .image_features);
      },
      py::arg("params"), py::arg("volume"), py::arg("instruction"), py::arg("strategy") = Strategy::tgis,
      py::arg("seed") = 0);
  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        ModelParams p = init_params(seed, ModelConfig{});
        apply_stage(p, Stage::finetune);
        const Dataset d = Dataset::synthetic(seed, 1, SyntheticConfig{});
        GradcheckOptions o;
        o.seed = seed;
        const auto r = gradcheck(p, d.volume(0), d.instruction(0), d.target(0), 1e-4, o);
        return py::make_tuple(r.max_rel_error, r.entries.size());
      },
      "Max relative gradient error and entry count for a random model and sample.");
  m.def("scores_csv", [](const Array& s) { return scores_csv(from_numpy(s)); });
  m.def("scores_svg", [](const Array& s, const std::string& title) { return scores_svg(from_numpy(s), title); },
        py::arg("scores"), py::arg("title") = "");
}

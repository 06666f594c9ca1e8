#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "moext/data.hpp"
#include "moext/errors.hpp"
#include "moext/flow.hpp"
#include "moext/losses.hpp"
#include "moext/metrics.hpp"
#include "moext/synth.hpp"

namespace py = pybind11;
using namespace moext;
using eval::ConfusionMatrix;
using namespace moext::losses;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

ConfusionMatrix to_cm(const std::vector<std::vector<long>>& rows) {
  const auto c = rows.size();
  std::vector<std::string> names;
  for (std::size_t k = 0; k < c; ++k) names.push_back("c" + std::to_string(k));
  ConfusionMatrix cm(names);
  for (std::size_t t = 0; t < c; ++t) {
    if (rows[t].size() != c) throw py::value_error("confusion matrix must be square");
    for (std::size_t p = 0; p < c; ++p) cm.add(static_cast<int>(t), static_cast<int>(p), rows[t][p]);
  }
  return cm;
}

Tensor<double> to_tensor(const F64Array& a) {
  if (a.ndim() != 4) throw py::value_error("expected an n x c x h x w array");
  Tensor<double> t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                   static_cast<int>(a.shape(3)));
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

// h x w x 3 (RGB, [0, 1]) to the 1 x 3 x h x w layout used everywhere else.
ImageTensor to_image(const F32Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("expected an h x w x 3 frame");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  ImageTensor t(1, 3, h, w);
  auto r = a.unchecked<3>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(0, c, y, x) = r(y, x, c);
  return t;
}

LossConfig loss_cfg(double epsilon, int m) {
  LossConfig c;
  c.epsilon = epsilon;
  c.m = m;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_moext, mod) {
  mod.doc() = "MoExt micro-expression toolkit";

  py::register_exception<Error>(mod, "MoextError");

  mod.def("uf1", [](const std::vector<std::vector<long>>& cm) { return eval::uf1(to_cm(cm)); }, py::arg("confusion"));
  mod.def("uar", [](const std::vector<std::vector<long>>& cm) { return eval::uar(to_cm(cm)); }, py::arg("confusion"));
  mod.def("acc", [](const std::vector<std::vector<long>>& cm) { return eval::acc(to_cm(cm)); }, py::arg("confusion"));

  mod.def(
      "reconstruction_loss",
      [](const F64Array& target, const F64Array& recon) {
        return reconstruction_loss(to_tensor(target), to_tensor(recon));
      },
      py::arg("target"), py::arg("reconstruction"));
  mod.def(
      "st_loss",
      [](const Matrix<double>& shape, const Matrix<double>& texture, const RowVector<double>& anchor, int n, int m,
         double epsilon) { return st_loss_embedded(shape, texture, anchor, n, m, loss_cfg(epsilon, m)).value; },
      py::arg("shape_emb"), py::arg("texture_emb"), py::arg("anchor_emb"), py::arg("n"), py::arg("m"),
      py::arg("epsilon") = 0.3);
  mod.def(
      "ss_loss",
      [](const Matrix<double>& shape, int n, int m, double epsilon) {
        return ss_loss_embedded(shape, n, m, loss_cfg(epsilon, m)).value;
      },
      py::arg("shape_emb"), py::arg("n"), py::arg("m"), py::arg("epsilon") = 0.3);

  mod.def(
      "dense_flow",
      [](const F32Array& a, const F32Array& b) {
        const auto f = flow::dense_flow(to_image(a), to_image(b));
        py::array_t<float> u({f.height, f.width}), v({f.height, f.width});
        std::copy(f.u.begin(), f.u.end(), u.mutable_data());
        std::copy(f.v.begin(), f.v.end(), v.mutable_data());
        return py::make_tuple(u, v);
      },
      py::arg("a"), py::arg("b"));
  mod.def(
      "flow_stats",
      [](const std::vector<F32Array>& frames, int reference, int jobs) {
        std::vector<ImageTensor> imgs;
        for (const auto& f : frames) imgs.push_back(to_image(f));
        py::list out;
        for (const auto& s : flow::flow_stats(imgs, reference, jobs))
          out.append(py::make_tuple(s.frame_idx, s.mean_magnitude, s.mean_angle_rad));
        return out;
      },
      py::arg("frames"), py::arg("reference") = 0, py::arg("jobs") = 1);

  mod.def(
      "synthesize",
      [](const std::filesystem::path& out_dir, int subjects, int clips, int classes, int macro_clips,
         std::uint64_t seed) {
        synth::SynthConfig c;
        c.n_subjects = subjects;
        c.clips_per_subject = clips;
        c.n_classes = classes;
        c.macro_clips_per_subject = macro_clips;
        c.seed = seed;
        const auto r = synth::generate_synthetic_dataset(c, out_dir);
        return py::dict(py::arg("micro") = r.micro.samples.size(), py::arg("macro") = r.macro.samples.size());
      },
      py::arg("out_dir"), py::arg("subjects") = 6, py::arg("clips") = 6, py::arg("classes") = 3,
      py::arg("macro_clips") = 0, py::arg("seed") = 0);

  mod.def(
      "load_manifest",
      [](const std::filesystem::path& path) {
        const auto m = data::load_manifest(path);
        py::list rows;
        for (const auto& s : m.samples) {
          py::dict d;
          d["dataset"] = data::to_string(s.dataset);
          d["subject"] = s.subject_id;
          d["clip"] = s.clip_id;
          d["frames"] = s.frame_paths.size();
          d["onset"] = s.onset_idx;
          d["apex"] = s.apex_idx ? py::object(py::int_(*s.apex_idx)) : py::object(py::none());
          d["offset"] = s.offset_idx;
          d["label"] = s.label;
          d["macro"] = s.is_macro;
          rows.append(d);
        }
        return rows;
      },
      py::arg("path"));

  // Same entry point as the command-line tool; returns its exit code.
  mod.def(
      "run",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "moext");
        py::gil_scoped_release release;
        return cli::run(args);
      },
      py::arg("args"));
}

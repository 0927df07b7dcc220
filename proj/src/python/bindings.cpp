#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

#include "cosrec/baselines.hpp"
#include "cosrec/checkpoint.hpp"
#include "cosrec/cli.hpp"
#include "cosrec/data.hpp"
#include "cosrec/metrics.hpp"
#include "cosrec/train.hpp"

namespace py = pybind11;
using namespace cosrec;

namespace {

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return load_dataset(in);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return load_checkpoint(in);
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["map"] = m.map;
  for (std::size_t k = 0; k < kCutoffs.size(); ++k) {
    d[("prec@" + std::to_string(kCutoffs[k])).c_str()] = m.precision[k];
    d[("recall@" + std::to_string(kCutoffs[k])).c_str()] = m.recall[k];
  }
  d["users"] = m.users;
  return d;
}

RunConfig run_from_dict(const py::dict& overrides, const std::string& dataset) {
  nlohmann::json j = RunConfig::defaults_for(parse_dataset_kind(dataset)).to_json();
  for (const auto& [k, v] : overrides) {
    const auto key = py::cast<std::string>(k);
    if (!j.contains(key)) throw py::key_error("unknown run option '" + key + "'");
    if (py::isinstance<py::bool_>(v)) throw py::type_error("run option '" + key + "' is not a flag");
    if (j[key].is_string()) {
      j[key] = py::cast<std::string>(v);
    } else if (j[key].is_number_float()) {
      j[key] = py::cast<double>(v);
    } else {
      j[key] = py::cast<std::uint64_t>(v);
    }
  }
  return RunConfig::from_json(j);
}

py::array_t<float> to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

// Trained model held with its run settings.
struct Model {
  RunConfig run;
  CosRecModel<Real> model;
  std::vector<EpochLog> epochs;
  Checkpoint checkpoint;
};

}  // namespace

PYBIND11_MODULE(_cosrec, m) {
  m.doc() = "CosRec sequential recommender";

  py::class_<Dataset>(m, "Dataset")
      .def_static("load", &read_dataset, py::arg("path"))
      .def_static(
          "from_sequences",
          [](std::size_t items, std::vector<std::vector<ItemId>> seqs) {
            return Dataset::from_sequences(items, std::move(seqs));
          },
          py::arg("num_items"), py::arg("sequences"))
      .def_static("cyclic_pattern", &cyclic_pattern_dataset, py::arg("num_users"), py::arg("num_items"),
                  py::arg("pattern_length"), py::arg("sequence_length"))
      .def(
          "save",
          [](const Dataset& d, const std::string& path) {
            std::ofstream out(path, std::ios::binary);
            if (!out) throw std::runtime_error("cannot write '" + path + "'");
            save_dataset(d, out);
          },
          py::arg("path"))
      .def_property_readonly("num_users", &Dataset::num_users)
      .def_property_readonly("num_items", &Dataset::num_items)
      .def_property_readonly("num_actions", &Dataset::num_actions)
      .def("train", [](const Dataset& d, UserId u) { auto s = d.train(u); return std::vector<ItemId>(s.begin(), s.end()); })
      .def("test", [](const Dataset& d, UserId u) { auto s = d.test(u); return std::vector<ItemId>(s.begin(), s.end()); });

  py::class_<Model>(m, "Model")
      .def_static(
          "load",
          [](const std::string& path) {
            Checkpoint ck = read_checkpoint(path);
            RunConfig run = ck.run;
            auto model = restore_model<Real>(ck);
            return Model{run, std::move(model), {}, std::move(ck)};
          },
          py::arg("path"))
      .def(
          "save",
          [](const Model& self, const std::string& path) {
            std::ofstream out(path, std::ios::binary);
            if (!out) throw std::runtime_error("cannot write '" + path + "'");
            save_checkpoint(self.checkpoint, out);
          },
          py::arg("path"))
      .def_property_readonly("config", [](const Model& self) { return py::module_::import("json").attr("loads")(self.run.to_json().dump()); })
      .def_property_readonly("epochs",
                             [](const Model& self) {
                               py::list out;
                               for (const auto& e : self.epochs) {
                                 out.append(py::module_::import("json").attr("loads")(format_epoch_log(e)));
                               }
                               return out;
                             })
      .def(
          "score",
          [](const Model& self, std::vector<UserId> users, std::vector<ItemId> windows) {
            const std::size_t L = self.model.config().markov_order, I = self.model.config().num_items;
            if (windows.size() != users.size() * L) throw py::value_error("windows must hold markov_order items per user");
            std::vector<double> s(users.size() * I);
            ModelScorer<Real>(self.model).score(users, windows, s);
            py::array_t<double> a({static_cast<py::ssize_t>(users.size()), static_cast<py::ssize_t>(I)});
            std::copy(s.begin(), s.end(), a.mutable_data());
            return a;
          },
          py::arg("users"), py::arg("windows"))
      .def(
          "evaluate",
          [](const Model& self, const Dataset& d, std::size_t threads) {
            py::gil_scoped_release release;
            return evaluate(ModelScorer<Real>(self.model), d, EvaluateOptions{threads, 256, false});
          },
          py::arg("dataset"), py::arg("threads") = 1)
      .def(
          "weights",
          [](const Model& self) {
            py::dict out;
            for (const auto& t : self.checkpoint.tensors) out[t.name.c_str()] = to_numpy(t.value);
            return out;
          });

  py::class_<MetricsReport>(m, "Metrics")
      .def_readonly("map", &MetricsReport::map)
      .def_readonly("users", &MetricsReport::users)
      .def_property_readonly("precision", [](const MetricsReport& r) { return r.precision; })
      .def_property_readonly("recall", [](const MetricsReport& r) { return r.recall; })
      .def("as_dict", &metrics_dict);

  m.def(
      "train",
      [](const Dataset& d, const py::dict& options, const std::string& dataset) {
        const RunConfig run = run_from_dict(options, dataset);
        TrainOutcome<Real> o = [&] {
          py::gil_scoped_release release;
          return train_model<Real>(d, run);
        }();
        Checkpoint ck = make_checkpoint(run, o.model, &o.optimizer, o.rng);
        return Model{run, std::move(o.model), std::move(o.epochs), std::move(ck)};
      },
      py::arg("dataset"), py::arg("options") = py::dict(), py::arg("kind") = "ml1m",
      "Train with the published defaults for `kind`, overridden by `options` (run config JSON keys).");

  m.def(
      "evaluate_poprec",
      [](const Dataset& d) { return evaluate(PopRec::fit(d), d); }, py::arg("dataset"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");

  py::register_exception<NumericError>(m, "NumericError");
  m.attr("real_is_double") = std::is_same_v<Real, double>;
}

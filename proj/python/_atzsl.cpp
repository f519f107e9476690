#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "atzsl/attacks.hpp"
#include "atzsl/dataset.hpp"
#include "atzsl/errors.hpp"
#include "atzsl/experiment.hpp"
#include "atzsl/relnet.hpp"
#include "atzsl/trainer.hpp"
#include "atzsl/zsleval.hpp"

namespace py = pybind11;
using namespace atzsl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

PrototypeSet to_protos(const Array& matrix, std::vector<int> ids) {
  PrototypeSet p{to_tensor(matrix), std::move(ids)};
  p.validate();
  return p;
}

}  // namespace

PYBIND11_MODULE(_atzsl, m) {
  m.doc() = "Adversarially trained zero-shot learning: relation network, attacks, training and evaluation";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  py::class_<SynthSpec>(m, "SynthSpec")
      .def(py::init<>())
      .def_readwrite("num_seen", &SynthSpec::num_seen)
      .def_readwrite("num_unseen", &SynthSpec::num_unseen)
      .def_readwrite("attr_dim", &SynthSpec::attr_dim)
      .def_readwrite("feature_dim", &SynthSpec::feature_dim)
      .def_readwrite("seen_samples", &SynthSpec::seen_samples)
      .def_readwrite("seen_test_fraction", &SynthSpec::seen_test_fraction)
      .def_readwrite("unseen_samples", &SynthSpec::unseen_samples)
      .def_readwrite("proto_lo", &SynthSpec::proto_lo)
      .def_readwrite("proto_hi", &SynthSpec::proto_hi)
      .def_readwrite("noise", &SynthSpec::noise)
      .def_readwrite("map_scale", &SynthSpec::map_scale)
      .def_readwrite("map_seed", &SynthSpec::map_seed)
      .def("validate", &SynthSpec::validate);

  py::class_<ZslDataset>(m, "ZslDataset")
      .def_property_readonly("features", [](const ZslDataset& d) { return to_array(d.features); })
      .def_property_readonly("prototypes", [](const ZslDataset& d) { return to_array(d.prototypes.matrix); })
      .def_property_readonly("class_ids", [](const ZslDataset& d) { return d.prototypes.class_ids; })
      .def_readonly("labels", &ZslDataset::labels)
      .def_readonly("seen_classes", &ZslDataset::seen_classes)
      .def_readonly("unseen_classes", &ZslDataset::unseen_classes)
      .def("train_rows", &ZslDataset::train_rows)
      .def("test_rows", &ZslDataset::test_rows, py::arg("classes"));

  m.def("generate_synthetic", &generate_synthetic, py::arg("spec"), py::arg("seed"));
  m.def("with_scaled_prototypes", &with_scaled_prototypes, py::arg("dataset"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("directory"));
  m.def("load_dataset", &load_dataset, py::arg("features"), py::arg("prototypes"), py::arg("splits"));

  py::enum_<Combine>(m, "Combine").value("concat", Combine::kConcat).value("product", Combine::kProduct);

  py::class_<NetConfig>(m, "NetConfig")
      .def(py::init<>())
      .def_readwrite("input_dim", &NetConfig::input_dim)
      .def_readwrite("prototype_dim", &NetConfig::prototype_dim)
      .def_readwrite("feature_hidden", &NetConfig::feature_hidden)
      .def_readwrite("attr_hidden", &NetConfig::attr_hidden)
      .def_readwrite("embed_dim", &NetConfig::embed_dim)
      .def_readwrite("relation_hidden", &NetConfig::relation_hidden)
      .def_readwrite("temperature", &NetConfig::temperature)
      .def_readwrite("combine", &NetConfig::combine)
      .def("validate", &NetConfig::validate);

  py::class_<RelationNet>(m, "RelationNet")
      .def_readonly("config", &RelationNet::config)
      .def("__eq__", [](const RelationNet& a, const RelationNet& b) { return a == b; });

  m.def("init_params", &init_params, py::arg("config"), py::arg("seed"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("net"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def(
      "relation_scores",
      [](const RelationNet& net, const Array& x, const Array& protos) {
        return to_array(batch_relation_scores(net, to_tensor(x), to_tensor(protos)));
      },
      py::arg("net"), py::arg("x"), py::arg("prototypes"), "scores [B x C] for a batch of inputs");
  m.def(
      "class_probabilities",
      [](const Array& scores, double temperature) {
        const Tensor t = to_tensor(scores);
        if (t.rank() != 2) return to_array(class_probabilities(t, temperature));
        Tensor out(t.shape());
        for (std::size_t r = 0; r < t.rows(); ++r) {
          const auto row = t.row(r);
          const Tensor p = class_probabilities(Tensor::vector(std::vector<double>(row.begin(), row.end())), temperature);
          std::copy(p.data().begin(), p.data().end(), out.data().begin() + r * t.cols());
        }
        return to_array(out);
      },
      py::arg("scores"), py::arg("temperature") = 1.0, "softmax over the last axis");
  m.def(
      "predict",
      [](const RelationNet& net, const Array& x, const Array& protos, std::vector<int> ids) {
        return predict_batch(net, to_tensor(x), to_protos(protos, std::move(ids)));
      },
      py::arg("net"), py::arg("x"), py::arg("prototypes"), py::arg("class_ids"));

  m.def(
      "project_linf",
      [](const Array& x, const Array& ref, double rho) { return to_array(project_linf(to_tensor(x), to_tensor(ref), rho)); },
      py::arg("x"), py::arg("ref"), py::arg("rho"));
  m.def(
      "project_l2",
      [](const Array& x, const Array& ref, double rho) { return to_array(project_l2(to_tensor(x), to_tensor(ref), rho)); },
      py::arg("x"), py::arg("ref"), py::arg("rho"));

  py::enum_<TrainMode>(m, "TrainMode").value("images", TrainMode::kImages).value("attributes", TrainMode::kAttributes);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_static("image_defaults", &TrainConfig::image_defaults)
      .def_static("attribute_defaults", &TrainConfig::attribute_defaults)
      .def_readwrite("mode", &TrainConfig::mode)
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("temperature", &TrainConfig::temperature)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("base_lr", &TrainConfig::base_lr)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("max_iterations", &TrainConfig::max_iterations)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_property(
          "rho_range", [](const TrainConfig& c) { return std::make_pair(c.rho_dist.lo, c.rho_dist.hi); },
          [](TrainConfig& c, std::pair<double, double> r) {
            c.rho_dist.lo = r.first;
            c.rho_dist.hi = r.second;
          })
      .def_property(
          "rho_stddev", [](const TrainConfig& c) { return c.rho_dist.stddev; },
          [](TrainConfig& c, double s) { c.rho_dist.stddev = s; })
      .def_property(
          "attack_steps", [](const TrainConfig& c) { return c.attack.steps; },
          [](TrainConfig& c, std::size_t n) { c.attack.steps = n; })
      .def("validate", &TrainConfig::validate);

  py::class_<EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &EpochRecord::epoch)
      .def_readonly("lr", &EpochRecord::lr)
      .def_readonly("clean_loss", &EpochRecord::clean_loss)
      .def_readonly("adv_loss", &EpochRecord::adv_loss)
      .def_readonly("rhos", &EpochRecord::rhos);
  py::class_<TrainLog>(m, "TrainLog").def_readonly("epochs", &TrainLog::epochs).def("to_jsonl", &TrainLog::to_jsonl);
  py::class_<TrainResult>(m, "TrainResult").def_readonly("net", &TrainResult::net).def_readonly("log", &TrainResult::log);

  m.def("train", &train, py::arg("dataset"), py::arg("net_config"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("lr_schedule", &lr_schedule, py::arg("base_lr"), py::arg("epoch"), py::arg("factor") = 0.9,
        py::arg("period") = 10);

  py::class_<MetricsFragment>(m, "MetricsFragment")
      .def_readonly("scenario", &MetricsFragment::scenario)
      .def_readonly("acc_u", &MetricsFragment::acc_u)
      .def_readonly("acc_s", &MetricsFragment::acc_s)
      .def_readonly("h", &MetricsFragment::h)
      .def_readonly("t1", &MetricsFragment::t1)
      .def_readonly("clean_loss", &MetricsFragment::clean_loss)
      .def_readonly("attacked_loss", &MetricsFragment::attacked_loss)
      .def("headline", &MetricsFragment::headline);

  m.def(
      "evaluate",
      [](const RelationNet& net, const ZslDataset& ds, const std::string& scenario, std::uint64_t seed) {
        return evaluate(net, ds, parse_scenario(scenario), seed);
      },
      py::arg("net"), py::arg("dataset"), py::arg("scenario"), py::arg("seed") = 0,
      "scenario label, e.g. 'standard/clean' or 'generalized/visual/IFGSM/rho=2/N=9'");
  m.def(
      "per_class_top1",
      [](const std::vector<int>& p, const std::vector<int>& l, const std::vector<int>& c) {
        return per_class_top1(p, l, c);
      },
      py::arg("predictions"), py::arg("labels"), py::arg("classes"));
  m.def("harmonic_mean", &harmonic_mean, py::arg("a"), py::arg("b"));
  m.def("median_prototype_separation", [](const Array& protos) {
    const Tensor t = to_tensor(protos);
    std::vector<int> ids(t.rank() == 2 ? t.shape()[0] : 0);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    return median_prototype_separation(PrototypeSet{t, ids});
  });
}

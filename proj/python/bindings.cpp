// Copyright 2026 The BDI Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <memory>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bdi/bench.hpp"
#include "bdi/dataset.hpp"
#include "bdi/demo_session.hpp"
#include "bdi/disturbance_loop.hpp"
#include "bdi/errors.hpp"
#include "bdi/iomgp.hpp"
#include "bdi/sweep_env.hpp"

namespace py = pybind11;
using namespace bdi;

namespace {

// JSON crosses the boundary as text and is decoded by the json module.
py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

bench::ExperimentConfig experiment(const py::object& cfg) { return bench::config_from_json(from_py(cfg)); }

}  // namespace

PYBIND11_MODULE(_bdi, m) {
  m.doc() = "Mixture-of-GP imitation learning with Bayesian disturbance injection";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<CollectionError>(m, "CollectionError", PyExc_RuntimeError);
  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);

  py::class_<RoundSegmentedDataset>(m, "Dataset")
      .def(py::init<int, int>(), py::arg("state_dim"), py::arg("action_dim"))
      .def("append_round",
           py::overload_cast<const Matrix&, const Matrix&, double>(&RoundSegmentedDataset::append_round),
           py::arg("states"), py::arg("actions"), py::arg("variance"))
      .def_property_readonly("states", &RoundSegmentedDataset::states)
      .def_property_readonly("actions", &RoundSegmentedDataset::actions)
      .def_property_readonly("round_sizes", &RoundSegmentedDataset::round_sizes)
      .def_property_readonly("collection_variances", &RoundSegmentedDataset::collection_variances)
      .def_property_readonly("state_dim", &RoundSegmentedDataset::state_dim)
      .def_property_readonly("action_dim", &RoundSegmentedDataset::action_dim)
      .def("__len__", [](const RoundSegmentedDataset& d) { return d.size(); })
      .def("to_json", [](const RoundSegmentedDataset& d) { return to_py(dataset_to_json(d)); })
      .def_static("from_json", [](const py::object& o) { return dataset_from_json(from_py(o)); });

  py::class_<IomgpModel, std::shared_ptr<IomgpModel>>(m, "Model")
      .def_readonly("truncation", &IomgpModel::truncation)
      .def_readonly("elbo_trace", &IomgpModel::elbo_trace)
      .def_readonly("converged", &IomgpModel::converged)
      .def_readonly("data", &IomgpModel::data)
      .def_property_readonly("noise_variances", [](const IomgpModel& x) { return x.noise.variances; })
      .def_property_readonly("responsibilities", [](const IomgpModel& x) { return x.resp.r; })
      .def_property_readonly("mixture_weights", [](const IomgpModel& x) { return mixture_weights(x.stick); })
      .def_property_readonly("next_injection_variance",
                             [](const IomgpModel& x) { return demo::next_injection_variance(x); })
      .def("elbo", [](const IomgpModel& x) { return elbo(x); })
      .def(
          "predict_modes",
          [](const IomgpModel& x, const Vector& q) {
            py::list out;
            for (const auto& md : predict_modes(x, q)) {
              py::dict d;
              d["weight"] = md.weight;
              d["mean"] = md.mean;
              d["variance"] = md.variance;
              out.append(d);
            }
            return out;
          },
          py::arg("state"))
      .def(
          "select_action",
          [](const IomgpModel& x, const Vector& q, const std::string& policy) {
            return select_action(x, q, mode_policy_from_name(policy));
          },
          py::arg("state"), py::arg("policy") = "local")
      .def("to_json", [](const IomgpModel& x) { return to_py(model_to_json(x)); })
      .def_static("from_json",
                  [](const py::object& o) { return std::make_shared<IomgpModel>(model_from_json(from_py(o))); });

  m.def(
      "fit",
      [](const RoundSegmentedDataset& data, double initial_variance, std::vector<double> variances,
         const py::object& config) {
        if (variances.empty()) variances.assign(data.round_count(), initial_variance);
        const IomgpConfig cfg = iomgp_config_from_json(from_py(config));
        py::gil_scoped_release release;
        return std::make_shared<IomgpModel>(fit(data, NoiseSchedule{initial_variance, variances}, cfg));
      },
      py::arg("data"), py::arg("initial_variance"), py::arg("variances") = std::vector<double>{},
      py::arg("config") = py::none(),
      "Variational EM fit. `variances` defaults to initial_variance for every round.");

  py::class_<sweep::SweepWorld>(m, "World")
      .def_property_readonly("robot", [](const sweep::SweepWorld& w) { return Vector(w.robot); })
      .def_property_readonly("boxes",
                             [](const sweep::SweepWorld& w) {
                               py::list out;
                               for (const auto& b : w.boxes) out.append(py::make_tuple(Vector(b.pos), b.on_table));
                               return out;
                             })
      .def_readonly("t", &sweep::SweepWorld::t)
      .def_readonly("action_limit", &sweep::SweepWorld::action_limit)
      .def("score", &sweep::SweepWorld::score)
      .def("success", &sweep::SweepWorld::success)
      .def("observe", [](const sweep::SweepWorld& w) { return sweep::observe(w); })
      .def("step",
           [](const sweep::SweepWorld& w, const Vector& a) {
             if (a.size() != 2) throw InputError("action must have two entries");
             return sweep::step(w, sweep::Vec2(a(0), a(1))).world;
           },
           py::arg("action"));

  m.def(
      "reset",
      [](const py::object& env, double perturbation, std::uint64_t seed) {
        return sweep::reset(sweep::env_config_from_json(from_py(env)), perturbation, seed);
      },
      py::arg("env") = py::none(), py::arg("perturbation") = 0.0, py::arg("seed") = 0);

  m.def("default_config", []() { return to_py(bench::config_to_json(bench::ExperimentConfig{})); });

  m.def(
      "run_bdi",
      [](const std::string& method, const py::object& config, std::uint64_t seed) {
        const auto cfg = experiment(config);
        RunResult run;
        {
          py::gil_scoped_release release;
          PidSupervisor sup(cfg.env.n_boxes, cfg.gains);
          run = run_bdi(cfg.env, sup, method_from_name(method), cfg.injection, cfg.model, seed);
        }
        return py::make_tuple(std::make_shared<IomgpModel>(std::move(run.model)), to_py(trace_to_json(run.trace)));
      },
      py::arg("method"), py::arg("config") = py::none(), py::arg("seed") = 0,
      "Collect and fit for the configured number of rounds; returns (model, trace).");

  m.def(
      "evaluate_expert",
      [](const py::object& config, int trials) {
        const auto cfg = experiment(config);
        return to_py(bench::eval_to_json(bench::evaluate(
            cfg.env, bench::expert_policy(cfg.env.n_boxes, cfg.gains), trials, cfg.eval_seed, "EXPERT")));
      },
      py::arg("config") = py::none(), py::arg("trials") = 100);

  m.def(
      "evaluate_model",
      [](std::shared_ptr<IomgpModel> model, const py::object& config, int trials, std::uint64_t seed) {
        const auto cfg = experiment(config);
        py::gil_scoped_release release;
        const double expert =
            bench::evaluate(cfg.env, bench::expert_policy(cfg.env.n_boxes, cfg.gains), trials, cfg.eval_seed)
                .mean_score;
        const auto s = bench::evaluate(
            cfg.env, bench::model_policy(model, mode_policy_from_name(cfg.mode_policy), seed), trials,
            cfg.eval_seed, "MODEL", seed, expert);
        py::gil_scoped_acquire acquire;
        return to_py(bench::eval_to_json(s));
      },
      py::arg("model"), py::arg("config") = py::none(), py::arg("trials") = 100, py::arg("seed") = 0);

  py::class_<demo::SessionManager>(m, "SessionManager")
      .def(py::init([](const py::object& env, double sigma2, std::uint64_t seed) {
             return std::make_unique<demo::SessionManager>(sweep::env_config_from_json(from_py(env)), sigma2, seed);
           }),
           py::arg("env") = py::none(), py::arg("sigma2") = 0.0, py::arg("seed") = 0)
      .def("handle", [](demo::SessionManager& s, const py::object& req) { return to_py(s.handle(from_py(req))); })
      .def("tick_all", &demo::SessionManager::tick_all)
      .def("accepted", [](const demo::SessionManager& s) {
        py::list out;
        for (const auto& f : s.accepted()) out.append(to_py(f));
        return out;
      });
  m.def("dataset_from_fragments", [](const py::list& frags) {
    std::vector<nlohmann::json> v;
    for (const auto& f : frags) v.push_back(from_py(py::reinterpret_borrow<py::object>(f)));
    return demo::dataset_from_fragments(v);
  });
}

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tripsim/errors.hpp"
#include "tripsim/federation.hpp"
#include "tripsim/transport.hpp"

namespace py = pybind11;
using namespace tripsim;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mat to_mat(const Array& a, const char* what) {
  if (a.ndim() != 2) throw StructuralError(std::string(what) + ": expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Mat(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Mat& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.flat().begin(), m.flat().end(), out.mutable_data());
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  return config_from_json(text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text));
}

py::dict dataset_dict(const Dataset& d) {
  const std::size_t n = d.samples.size();
  Array tokens({n, d.tokens, d.dims});
  py::array_t<std::int64_t> labels(n), domains(n);
  double* out = tokens.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = d.samples[i];
    std::copy(s.tokens.flat().begin(), s.tokens.flat().end(), out + i * d.tokens * d.dims);
    labels.mutable_at(i) = static_cast<std::int64_t>(s.label);
    domains.mutable_at(i) = static_cast<std::int64_t>(s.domain);
  }
  py::dict r;
  r["tokens"] = tokens;
  r["labels"] = labels;
  r["domains"] = domains;
  r["anchors"] = to_array(d.anchors);
  return r;
}

}  // namespace

PYBIND11_MODULE(_tripsim, m) {
  m.doc() = "Native core of the tripsim federated prompt-routing simulator";

  m.def("hungarian", [](const Array& cost) { return hungarian(to_mat(cost, "cost")).perm; }, py::arg("cost"),
        "Minimum-cost assignment: entry i is the column given to row i.");
  m.def("brute_force", [](const Array& cost) { return brute_force(to_mat(cost, "cost")).perm; },
        py::arg("cost"));

  m.def(
      "cluster",
      [](const Array& tokens, std::size_t clusters, double alpha, std::uint64_t seed, bool capacity) {
        CapacityConfig cfg;
        cfg.clusters = clusters;
        cfg.alpha = alpha;
        cfg.capacity_enabled = capacity;
        Rng rng(seed);
        const ClusterResult r = cluster(to_mat(tokens, "tokens"), cfg, rng);
        std::vector<std::int64_t> assignment;
        for (std::size_t a : r.assignment) assignment.push_back(a == kDropped ? -1 : static_cast<std::int64_t>(a));
        py::dict d;
        d["assignment"] = assignment;
        d["sizes"] = r.sizes;
        d["dropped"] = r.dropped_count;
        d["capacity"] = r.capacity;
        d["centroids"] = to_array(r.centroids);
        d["iterations"] = r.iterations;
        return d;
      },
      py::arg("tokens"), py::arg("clusters"), py::arg("alpha") = 1.0, py::arg("seed") = 0,
      py::arg("capacity") = true, "Capacity-constrained k-means; dropped tokens are marked -1.");

  m.def(
      "init_keys",
      [](std::size_t count, std::size_t dims, const std::string& strategy, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(init_keys(count, dims, parse_key_strategy(strategy), rng).keys);
      },
      py::arg("count"), py::arg("dims"), py::arg("strategy") = "orthogonal", py::arg("seed") = 0);

  m.def("config_json", [](const std::string& text) { return to_json(parse_config(text)).dump(); },
        py::arg("config_json"), "Validate a JSON config and return it with every default filled in.");
  m.def("preset_json", [](const std::string& name) { return to_json(preset(name)).dump(); }, py::arg("name"));
  m.def(
      "comm_params",
      [](const std::string& text) {
        const ExperimentConfig c = parse_config(text);
        return std::make_pair(c.expert_payload(), c.key_payload());
      },
      py::arg("config_json"), "(parameters per round per client, one-time key parameters per client)");

  m.def(
      "generate",
      [](const std::string& text) { return dataset_dict(generate(parse_config(text).generator_config())); },
      py::arg("config_json"));

  m.def(
      "run_json",
      [](const std::string& text) {
        const ExperimentConfig c = parse_config(text);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run(c);
        }
        return report_json_text(r.report);
      },
      py::arg("config_json"), "Run one federated experiment and return report.json text.");
}

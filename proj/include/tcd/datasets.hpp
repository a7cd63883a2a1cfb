#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcd/graph.hpp"
#include "tcd/tensor.hpp"

namespace tcd {

/// One lagged linear dependency src -> dst (0-based series indices).
struct EdgeSpec {
  std::size_t src = 0;
  std::size_t dst = 0;
  double coefficient = 0.8;
  int lag = 1;

  bool operator==(const EdgeSpec&) const = default;
};

struct GeneratorSpec {
  std::string structure = "fork";  // diamond | mediator | v-structure | fork | lorenz96
  std::size_t length = 1000;       // L, output slots
  std::uint64_t seed = 0;
  double noise_std = 1.0;          // additive noise on non-root series
  std::vector<EdgeSpec> edges;     // empty: the structure's default table
  std::size_t warmup = 100;        // discarded leading slots of the linear systems

  // Lorenz 96
  std::size_t variables = 10;
  double forcing = 30.0;
  double dt = 0.01;
  std::size_t stride = 10;    // integration steps per output slot
  std::size_t burn_in = 1000; // integration steps discarded before recording

  std::vector<std::string> violations() const;
  void validate() const;

  bool operator==(const GeneratorSpec&) const = default;
};

struct DatasetBundle {
  Tensor series;  // [N, L]
  std::optional<CausalGraph> truth;
  std::vector<std::string> labels;  // one per series
  nlohmann::json provenance = nlohmann::json::object();
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(std::size_t step, const std::string& what)
      : std::runtime_error("integration blew up at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Structures `generate` understands.
const std::vector<std::string>& structure_names();

/// Series count of a linear structure (4 for diamond, 3 otherwise).
std::size_t structure_series(const std::string& structure);

/// Default (coefficient, lag) table of a linear structure.
std::vector<EdgeSpec> default_edges(const std::string& structure);

/// x_j(t) = sum over edges i->j of c * x_i(t - lag) + noise_std * e_j(t).
/// Series without parents are driven by unit-variance innovations.
DatasetBundle gen_basic(const GeneratorSpec& spec);

/// dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F, indices cyclic.
Tensor lorenz_deriv(const Tensor& x, double forcing);

/// One classical fourth-order Runge-Kutta step.
Tensor rk4_step(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double dt);

DatasetBundle gen_lorenz96(const GeneratorSpec& spec);

/// Dispatches on `spec.structure`; unknown names throw and list the valid ones.
DatasetBundle generate(const GeneratorSpec& spec);

/// Columns are series, rows are time slots. A first row with any
/// non-numeric cell is a header supplying the labels.
DatasetBundle load_csv(const std::filesystem::path& path);

/// Rows `src,dst[,delay]`, 1-based, optional header. `n` is the vertex count.
CausalGraph load_ground_truth(const std::filesystem::path& path, std::size_t n);

/// Writes data.csv, truth.csv (when present) and provenance.json into `dir`.
void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);

nlohmann::json generator_spec_to_json(const GeneratorSpec& spec);

}  // namespace tcd

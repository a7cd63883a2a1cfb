#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace tcd {

/// Directed edge src -> dst. Indices are 0-based in memory; every file
/// format in this project writes them 1-based.
struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::optional<int> delay;  // slots; absent when unknown
  double score = 0.0;

  bool operator==(const Edge&) const = default;
};

/// Temporal causal graph: at most one edge per ordered pair, self-loops
/// allowed, edges kept sorted by (dst, src).
class CausalGraph {
 public:
  CausalGraph() = default;
  explicit CausalGraph(std::size_t vertex_count) : n_(vertex_count) {}

  std::size_t vertex_count() const noexcept { return n_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  /// Throws std::invalid_argument on out-of-range endpoints, a negative
  /// delay, or a duplicate ordered pair.
  void add_edge(Edge edge);
  const Edge* find(std::size_t src, std::size_t dst) const;
  bool has_edge(std::size_t src, std::size_t dst) const { return find(src, dst) != nullptr; }

  /// Copy without self-loops.
  CausalGraph without_self_loops() const;

  bool operator==(const CausalGraph&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
};

/// {"n": N, "edges": [{"src", "dst", "delay", "score"}]}, 1-based, unknown
/// delays as null.
nlohmann::json graph_to_json(const CausalGraph& graph);
CausalGraph graph_from_json(const nlohmann::json& doc);

/// Graphviz digraph with delay as the edge label. `labels`, when given,
/// names the vertices; otherwise x1..xN.
std::string graph_to_dot(const CausalGraph& graph, std::span<const std::string> labels = {});

void save_graph_json(const CausalGraph& graph, const std::filesystem::path& path);
CausalGraph load_graph_json(const std::filesystem::path& path);

}  // namespace tcd

#include "tcd/graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tcd {

void CausalGraph::add_edge(Edge edge) {
  if (edge.src >= n_ || edge.dst >= n_) {
    throw std::invalid_argument("edge " + std::to_string(edge.src + 1) + "->" +
                                std::to_string(edge.dst + 1) + " outside a graph of " +
                                std::to_string(n_) + " vertices");
  }
  if (edge.delay && *edge.delay < 0) throw std::invalid_argument("edge delay must be >= 0");
  auto key = [](const Edge& e) { return std::pair(e.dst, e.src); };
  auto pos = std::lower_bound(edges_.begin(), edges_.end(), edge,
                              [&](const Edge& a, const Edge& b) { return key(a) < key(b); });
  if (pos != edges_.end() && key(*pos) == key(edge)) {
    throw std::invalid_argument("duplicate edge " + std::to_string(edge.src + 1) + "->" +
                                std::to_string(edge.dst + 1));
  }
  edges_.insert(pos, edge);
}

const Edge* CausalGraph::find(std::size_t src, std::size_t dst) const {
  for (const auto& e : edges_)
    if (e.src == src && e.dst == dst) return &e;
  return nullptr;
}

CausalGraph CausalGraph::without_self_loops() const {
  CausalGraph g(n_);
  for (const auto& e : edges_)
    if (e.src != e.dst) g.edges_.push_back(e);
  return g;
}

nlohmann::json graph_to_json(const CausalGraph& graph) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : graph.edges()) {
    nlohmann::json je;
    je["src"] = e.src + 1;
    je["dst"] = e.dst + 1;
    je["delay"] = e.delay ? nlohmann::json(*e.delay) : nlohmann::json(nullptr);
    je["score"] = e.score;
    edges.push_back(std::move(je));
  }
  return {{"n", graph.vertex_count()}, {"edges", std::move(edges)}};
}

CausalGraph graph_from_json(const nlohmann::json& doc) {
  CausalGraph g(doc.at("n").get<std::size_t>());
  for (const auto& je : doc.at("edges")) {
    const auto src = je.at("src").get<long long>();
    const auto dst = je.at("dst").get<long long>();
    if (src < 1 || dst < 1) throw std::invalid_argument("graph JSON indices are 1-based");
    Edge e;
    e.src = static_cast<std::size_t>(src - 1);
    e.dst = static_cast<std::size_t>(dst - 1);
    if (je.contains("delay") && !je["delay"].is_null()) e.delay = je["delay"].get<int>();
    if (je.contains("score")) e.score = je["score"].get<double>();
    g.add_edge(e);
  }
  return g;
}

std::string graph_to_dot(const CausalGraph& graph, std::span<const std::string> labels) {
  auto name = [&](std::size_t v) {
    return v < labels.size() ? labels[v] : "x" + std::to_string(v + 1);
  };
  std::ostringstream out;
  out << "digraph causal {\n";
  for (std::size_t v = 0; v < graph.vertex_count(); ++v) out << "  \"" << name(v) << "\";\n";
  for (const auto& e : graph.edges()) {
    out << "  \"" << name(e.src) << "\" -> \"" << name(e.dst) << "\" [label=\"";
    if (e.delay) {
      out << *e.delay;
    } else {
      out << '?';
    }
    out << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

void save_graph_json(const CausalGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << graph_to_json(graph).dump(2) << '\n';
}

CausalGraph load_graph_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return graph_from_json(nlohmann::json::parse(in));
}

}  // namespace tcd

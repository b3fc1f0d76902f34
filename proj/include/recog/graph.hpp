#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "recog/nn.hpp"
#include "recog/tensor.hpp"

namespace recog {

enum class NodeType { Vehicle, Map };

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;

  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

struct GraphOptions {
  /// Keep the target's self-loop in the edge list.
  bool target_self_loop = true;
};

/// Vehicles first (target at index 0), then at most one map node stored last.
/// Features carry a trailing one-hot: [0, 1] for vehicles, [1, 0] for the map.
struct HetGraph {
  std::size_t n_nodes = 0;
  std::vector<NodeType> node_type;
  Tensor node_features;  // [N x (d + 2)]
  std::vector<Edge> edges;
  std::size_t target_index = 0;
};

/// Edges: target -> every vehicle (including itself) and every node -> target.
HetGraph build_hetero_graph(const Tensor& vehicle_features, const Tensor& map_feature,
                            const GraphOptions& options = {});

/// Same edge rule over vehicle nodes only.
HetGraph build_vehicle_graph(const Tensor& vehicle_features, const GraphOptions& options = {});

/// Appends the one-hot node tag to each row.
Tensor tag_nodes(const Tensor& features, NodeType type);

/// Disjoint union of graphs with shifted edge indices.
struct BatchedGraph {
  Tensor node_features;
  std::vector<Edge> edges;
  std::vector<std::size_t> node_offsets;  // size graphs + 1
  std::vector<std::size_t> target_rows;

  std::size_t n_nodes() const { return node_offsets.back(); }
  std::size_t graph_count() const { return target_rows.size(); }
};

BatchedGraph batch_graphs(std::span<const HetGraph> graphs);

/// Per-destination message lists over in-edges plus a virtual self-loop,
/// sorted by (dst, src) with duplicates removed.
struct MessagePlan {
  std::size_t n_nodes = 0;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::vector<std::size_t> in_degree;  // over the edge list, self-loops excluded
};

MessagePlan plan_messages(std::size_t n_nodes, std::span<const Edge> edges);

enum class GnnKind { GCN, GAT };

std::string to_string(GnnKind kind);
GnnKind parse_gnn_kind(const std::string& text);

struct GraphLayer {
  GnnKind kind = GnnKind::GAT;
  Linear weight;                  // no bias
  std::vector<Tensor> attention;  // GAT only, one [2 * out / heads] vector per head

  static GraphLayer create(GnnKind kind, std::size_t in, std::size_t out, Rng& rng, std::size_t heads = 1);

  std::size_t heads() const { return attention.empty() ? 1 : attention.size(); }

  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// h_i' = LeakyReLU(sum_j W h_j / sqrt((d_i + 1)(d_j + 1))) over j in N_in(i) + {i}.
Tensor gcn_layer(const MessagePlan& plan, const Tensor& x, const Linear& w);

struct GatOutput {
  Tensor features;
  /// Attention per message of the plan, one tensor per head.
  std::vector<Tensor> attention;
};

/// e_ij = LeakyReLU(a^T [W h_i || W h_j]), alpha = softmax over N_in(i) + {i},
/// h_i' = LeakyReLU(sum_j alpha_ij W h_j). Heads split the output columns.
GatOutput gat_layer(const MessagePlan& plan, const Tensor& x, const GraphLayer& layer);

Tensor apply_graph_layer(const MessagePlan& plan, const Tensor& x, const GraphLayer& layer);

}  // namespace recog

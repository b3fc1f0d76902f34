#include "recog/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "recog/ops.hpp"

namespace recog {

namespace {

std::vector<Edge> star_edges(std::size_t n_vehicles, std::size_t n_nodes, const GraphOptions& options) {
  std::vector<Edge> edges;
  for (std::size_t j = 0; j < n_vehicles; ++j) {
    if (j == 0 && !options.target_self_loop) continue;
    edges.push_back({0, j});
  }
  for (std::size_t j = 1; j < n_nodes; ++j) edges.push_back({j, 0});
  return edges;
}

}  // namespace

Tensor tag_nodes(const Tensor& features, NodeType type) {
  if (features.rank() != 2) throw DimensionError("node features must be rank 2, got " + shape_str(features.shape()));
  std::vector<double> tag;
  for (std::size_t i = 0; i < features.dim(0); ++i) {
    tag.push_back(type == NodeType::Map ? 1.0 : 0.0);
    tag.push_back(type == NodeType::Map ? 0.0 : 1.0);
  }
  const Tensor parts[] = {features, Tensor({features.dim(0), 2}, std::move(tag))};
  return concat_cols(parts);
}

HetGraph build_hetero_graph(const Tensor& vehicle_features, const Tensor& map_feature, const GraphOptions& options) {
  if (!vehicle_features.defined() || vehicle_features.rank() != 2 || vehicle_features.dim(0) < 1) {
    throw ContractError("a heterogeneous graph needs the target and the map node (N >= 2)");
  }
  const std::size_t d = vehicle_features.dim(1);
  if (!map_feature.defined() || map_feature.numel() != d) {
    throw DimensionError(fmt::format("map feature has {} values, vehicle features have {}",
                                     map_feature.defined() ? map_feature.numel() : 0, d));
  }
  HetGraph g;
  const std::size_t nv = vehicle_features.dim(0);
  g.n_nodes = nv + 1;
  g.node_type.assign(nv, NodeType::Vehicle);
  g.node_type.push_back(NodeType::Map);
  const Tensor parts[] = {tag_nodes(vehicle_features, NodeType::Vehicle),
                          tag_nodes(reshape(map_feature, {1, d}), NodeType::Map)};
  g.node_features = concat_rows(parts);
  g.edges = star_edges(nv, g.n_nodes, options);
  return g;
}

HetGraph build_vehicle_graph(const Tensor& vehicle_features, const GraphOptions& options) {
  if (!vehicle_features.defined() || vehicle_features.rank() != 2 || vehicle_features.dim(0) < 1) {
    throw ContractError("a vehicle graph needs at least the target node");
  }
  HetGraph g;
  g.n_nodes = vehicle_features.dim(0);
  g.node_type.assign(g.n_nodes, NodeType::Vehicle);
  g.node_features = tag_nodes(vehicle_features, NodeType::Vehicle);
  g.edges = star_edges(g.n_nodes, g.n_nodes, options);
  return g;
}

BatchedGraph batch_graphs(std::span<const HetGraph> graphs) {
  if (graphs.empty()) throw ContractError("cannot batch an empty graph list");
  BatchedGraph b;
  std::vector<Tensor> features;
  b.node_offsets.push_back(0);
  for (const HetGraph& g : graphs) {
    const std::size_t off = b.node_offsets.back();
    for (const Edge& e : g.edges) b.edges.push_back({e.src + off, e.dst + off});
    b.target_rows.push_back(off + g.target_index);
    features.push_back(g.node_features);
    b.node_offsets.push_back(off + g.n_nodes);
  }
  b.node_features = graphs.size() == 1 ? graphs[0].node_features : concat_rows(features);
  return b;
}

MessagePlan plan_messages(std::size_t n_nodes, std::span<const Edge> edges) {
  MessagePlan plan;
  plan.n_nodes = n_nodes;
  plan.in_degree.assign(n_nodes, 0);
  std::vector<Edge> all;
  all.reserve(edges.size() + n_nodes);
  for (const Edge& e : edges) {
    if (e.src >= n_nodes || e.dst >= n_nodes) {
      throw std::out_of_range(fmt::format("edge ({}, {}) outside a {}-node graph", e.src, e.dst, n_nodes));
    }
    all.push_back({e.dst, e.src});  // sort key (dst, src)
  }
  for (std::size_t i = 0; i < n_nodes; ++i) all.push_back({i, i});
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  for (const Edge& e : all) {
    plan.dst.push_back(e.src);
    plan.src.push_back(e.dst);
    if (e.src != e.dst) ++plan.in_degree[e.src];
  }
  return plan;
}

std::string to_string(GnnKind kind) { return kind == GnnKind::GCN ? "GCN" : "GAT"; }

GnnKind parse_gnn_kind(const std::string& text) {
  if (text == "GCN" || text == "gcn") return GnnKind::GCN;
  if (text == "GAT" || text == "gat") return GnnKind::GAT;
  throw ContractError("unknown graph layer kind '" + text + "'");
}

GraphLayer GraphLayer::create(GnnKind kind, std::size_t in, std::size_t out, Rng& rng, std::size_t heads) {
  if (heads < 1 || out % heads != 0) {
    throw ContractError(fmt::format("{} output features cannot be split over {} heads", out, heads));
  }
  GraphLayer layer;
  layer.kind = kind;
  layer.weight = Linear::create(in, out, rng, false);
  if (kind == GnnKind::GAT) {
    for (std::size_t h = 0; h < heads; ++h) layer.attention.push_back(init_uniform({2 * (out / heads)}, out / heads, rng));
  }
  return layer;
}

void GraphLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  weight.collect(prefix, out);
  for (std::size_t h = 0; h < attention.size(); ++h) out.push_back({fmt::format("{}.attention{}", prefix, h), attention[h]});
}

Tensor gcn_layer(const MessagePlan& plan, const Tensor& x, const Linear& w) {
  if (x.rank() != 2 || x.dim(0) != plan.n_nodes) {
    throw DimensionError(fmt::format("graph has {} nodes, features are {}", plan.n_nodes, shape_str(x.shape())));
  }
  const Tensor wh = w(x);
  std::vector<double> coef(plan.src.size());
  for (std::size_t m = 0; m < plan.src.size(); ++m) {
    coef[m] = 1.0 / std::sqrt(static_cast<double>((plan.in_degree[plan.dst[m]] + 1) * (plan.in_degree[plan.src[m]] + 1)));
  }
  const Tensor messages = scale_rows(gather_rows(wh, plan.src), Tensor({plan.src.size()}, std::move(coef)));
  return leaky_relu(segment_sum(messages, plan.dst, plan.n_nodes), kLeakySlope);
}

GatOutput gat_layer(const MessagePlan& plan, const Tensor& x, const GraphLayer& layer) {
  if (x.rank() != 2 || x.dim(0) != plan.n_nodes) {
    throw DimensionError(fmt::format("graph has {} nodes, features are {}", plan.n_nodes, shape_str(x.shape())));
  }
  if (layer.attention.empty()) throw ContractError("GAT layer has no attention vectors");
  const Tensor wh = layer.weight(x);
  const std::size_t heads = layer.attention.size();
  const std::size_t dh = wh.dim(1) / heads;
  GatOutput out;
  std::vector<Tensor> head_outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor whh = heads == 1 ? wh : slice_cols(wh, h * dh, dh);
    const Tensor& a = layer.attention[h];
    const Tensor a_dst = reshape(slice_rows(a, 0, dh), {1, dh});
    const Tensor a_src = reshape(slice_rows(a, dh, dh), {1, dh});
    const Tensor s_dst = gather_rows(affine(whh, a_dst, Tensor()), plan.dst);
    const Tensor s_src = gather_rows(affine(whh, a_src, Tensor()), plan.src);
    const Tensor logits = reshape(leaky_relu(add(s_dst, s_src), kLeakySlope), {plan.src.size()});
    const Tensor alpha = segment_softmax(logits, plan.dst, plan.n_nodes);
    const Tensor agg = segment_sum(scale_rows(gather_rows(whh, plan.src), alpha), plan.dst, plan.n_nodes);
    head_outputs.push_back(agg);
    out.attention.push_back(alpha);
  }
  const Tensor joined = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
  out.features = leaky_relu(joined, kLeakySlope);
  return out;
}

Tensor apply_graph_layer(const MessagePlan& plan, const Tensor& x, const GraphLayer& layer) {
  return layer.kind == GnnKind::GCN ? gcn_layer(plan, x, layer.weight) : gat_layer(plan, x, layer).features;
}

}  // namespace recog

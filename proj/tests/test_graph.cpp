#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "recog/gradcheck.hpp"
#include "recog/graph.hpp"
#include "recog/ops.hpp"
#include "test_util.hpp"

using namespace recog;
using recog::testing::random_tensor;
using recog::testing::to_vec;

namespace {

std::set<std::pair<std::size_t, std::size_t>> edge_set(const std::vector<Edge>& edges) {
  std::set<std::pair<std::size_t, std::size_t>> s;
  for (const Edge& e : edges) s.insert({e.src, e.dst});
  return s;
}

double leaky(long double v) { return static_cast<double>(v >= 0 ? v : 0.1L * v); }

// Dense D^-1/2 (A + I) D^-1/2 X W^T followed by LeakyReLU.
std::vector<double> gcn_oracle(std::size_t n, const std::vector<Edge>& edges, const Tensor& x, const Tensor& w) {
  std::vector<std::vector<int>> adj(n, std::vector<int>(n, 0));
  for (const Edge& e : edges)
    if (e.src != e.dst) adj[e.dst][e.src] = 1;
  std::vector<long double> deg(n, 1.0L);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += adj[i][j];
  for (std::size_t i = 0; i < n; ++i) adj[i][i] = 1;
  const std::size_t din = x.dim(1), dout = w.dim(0);
  std::vector<double> out(n * dout);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < dout; ++o) {
      long double acc = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!adj[i][j]) continue;
        long double wh = 0;
        for (std::size_t k = 0; k < din; ++k) wh += static_cast<long double>(w[o * din + k]) * x[j * din + k];
        acc += wh / std::sqrt(deg[i] * deg[j]);
      }
      out[i * dout + o] = leaky(acc);
    }
  return out;
}

// Per-destination attention loop; returns features and per-(dst, src) weights.
std::vector<double> gat_oracle(std::size_t n, const std::vector<Edge>& edges, const Tensor& x, const GraphLayer& layer,
                               std::vector<std::vector<long double>>* alpha_out = nullptr) {
  const std::size_t din = x.dim(1), dout = layer.weight.out_features(), heads = layer.heads(), dh = dout / heads;
  std::vector<std::vector<long double>> wh(n, std::vector<long double>(dout, 0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t o = 0; o < dout; ++o)
      for (std::size_t k = 0; k < din; ++k) wh[j][o] += static_cast<long double>(layer.weight.weight[o * din + k]) * x[j * din + k];
  std::vector<double> out(n * dout);
  if (alpha_out) alpha_out->assign(n, std::vector<long double>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::size_t> nb{i};
    for (const Edge& e : edges)
      if (e.dst == i) nb.insert(e.src);
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor& a = layer.attention[h];
      std::vector<long double> logits;
      for (std::size_t j : nb) {
        long double s = 0;
        for (std::size_t k = 0; k < dh; ++k) s += a[k] * wh[i][h * dh + k] + a[dh + k] * wh[j][h * dh + k];
        logits.push_back(s >= 0 ? s : 0.1L * s);
      }
      const long double mx = *std::max_element(logits.begin(), logits.end());
      long double z = 0;
      for (long double& l : logits) z += (l = std::exp(l - mx));
      std::size_t idx = 0;
      std::vector<long double> acc(dh, 0);
      for (std::size_t j : nb) {
        const long double al = logits[idx++] / z;
        if (alpha_out && h == 0) (*alpha_out)[i][j] = al;
        for (std::size_t k = 0; k < dh; ++k) acc[k] += al * wh[j][h * dh + k];
      }
      for (std::size_t k = 0; k < dh; ++k) out[i * dout + h * dh + k] = leaky(acc[k]);
    }
  }
  return out;
}

std::vector<Edge> random_edges(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(0.35);
  std::vector<Edge> edges;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t d = 0; d < n; ++d)
      if (keep(rng)) edges.push_back({s, d});
  std::shuffle(edges.begin(), edges.end(), rng);
  return edges;
}

std::vector<ParamCoord> all_coords(std::span<const Tensor> params) {
  std::vector<ParamCoord> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].numel(); ++i) coords.push_back({p, i});
  return coords;
}

}  // namespace

TEST_CASE("build_hetero_graph edge examples") {
  std::mt19937_64 rng(1);
  const HetGraph g3 = build_hetero_graph(random_tensor({2, 4}, rng), random_tensor({4}, rng));
  CHECK(edge_set(g3.edges) == std::set<std::pair<std::size_t, std::size_t>>{{0, 0}, {0, 1}, {1, 0}, {2, 0}});
  CHECK(g3.edges.size() == 4);
  const HetGraph g2 = build_hetero_graph(random_tensor({1, 4}, rng), random_tensor({4}, rng));
  CHECK(edge_set(g2.edges) == std::set<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 0}});
  CHECK_THROWS_AS(build_hetero_graph(Tensor(), random_tensor({4}, rng)), ContractError);
  CHECK_THROWS_AS(build_hetero_graph(random_tensor({1, 4}, rng), random_tensor({3}, rng)), DimensionError);
}

TEST_CASE("edge set matches brute-force enumeration for N = 2..10") {
  std::mt19937_64 rng(2);
  for (std::size_t n = 2; n <= 10; ++n) {
    const Tensor vf = random_tensor({n - 1, 3}, rng);
    const Tensor mf = random_tensor({3}, rng);
    const HetGraph g = build_hetero_graph(vf, mf);
    std::set<std::pair<std::size_t, std::size_t>> brute;
    for (std::size_t j = 0; j < n - 1; ++j) brute.insert({0, j});
    for (std::size_t j = 0; j < n; ++j) brute.insert({j, 0});
    CHECK(edge_set(g.edges) == brute);
    CHECK(g.edges.size() == 2 * n - 2);
    CHECK(g.n_nodes == n);
    CHECK(g.node_type.back() == NodeType::Map);
    CHECK(g.node_features.shape() == Shape{n, 5});
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_map = i == n - 1;
      CHECK(g.node_features[i * 5 + 3] == (is_map ? 1.0 : 0.0));
      CHECK(g.node_features[i * 5 + 4] == (is_map ? 0.0 : 1.0));
      for (std::size_t k = 0; k < 3; ++k) CHECK(g.node_features[i * 5 + k] == (is_map ? mf[k] : vf[i * 3 + k]));
    }
    const HetGraph again = build_hetero_graph(vf, mf);
    CHECK(again.edges == g.edges);
    CHECK(build_hetero_graph(vf, mf, {false}).edges.size() == 2 * n - 3);
    CHECK(build_vehicle_graph(vf).edges.size() == 2 * (n - 1) - 1);
  }
}

TEST_CASE("message plan adds one self-loop per node") {
  const Edge edges[] = {{0, 0}, {0, 1}, {1, 0}, {2, 0}};
  const MessagePlan p = plan_messages(3, edges);
  CHECK(p.dst == std::vector<std::size_t>{0, 0, 0, 1, 1, 2});
  CHECK(p.src == std::vector<std::size_t>{0, 1, 2, 0, 1, 2});
  CHECK(p.in_degree == std::vector<std::size_t>{2, 1, 0});
  const Edge bad[] = {{0, 3}};
  CHECK_THROWS_AS(plan_messages(3, bad), std::out_of_range);
}

TEST_CASE("gcn_layer") {
  std::mt19937_64 rng(3);
  const Linear w = Linear::create(4, 3, rng, false);
  SUBCASE("isolated node transforms through its self-loop") {
    const Tensor x = random_tensor({1, 4}, rng);
    const std::vector<Edge> none;
    CHECK(to_vec(gcn_layer(plan_messages(1, none), x, w)) == to_vec(leaky_relu(w(x), 0.1)));
  }
  SUBCASE("zero features give zero output") {
    const Edge edges[] = {{0, 1}, {1, 0}};
    const Tensor out = gcn_layer(plan_messages(2, edges), Tensor::zeros({2, 4}), w);
    for (double v : out.data()) CHECK(v == 0.0);
  }
  SUBCASE("dense normalized-adjacency oracle") {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 2 + trial % 6;
      const auto edges = random_edges(n, rng);
      const Tensor x = random_tensor({n, 4}, rng);
      const auto got = to_vec(gcn_layer(plan_messages(n, edges), x, w));
      const auto want = gcn_oracle(n, edges, x, w.weight);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
    }
  }
  SUBCASE("gradient check") {
    GraphLayer layer = GraphLayer::create(GnnKind::GCN, 4, 3, rng);
    const auto edges = random_edges(5, rng);
    const MessagePlan plan = plan_messages(5, edges);
    const Tensor x = random_tensor({5, 4}, rng);
    const Tensor r = random_tensor({5, 3}, rng);
    const Tensor params[] = {layer.weight.weight};
    CHECK(finite_diff_check([&] { return sum(mul(apply_graph_layer(plan, x, layer), r)); }, params, all_coords(params)) <= 1e-4);
    CHECK(finite_diff_check([&](const Tensor& v) { return sum(mul(apply_graph_layer(plan, v, layer), r)); }, x) <= 1e-4);
  }
}

TEST_CASE("gat_layer") {
  std::mt19937_64 rng(4);
  SUBCASE("identical features split attention evenly") {
    const GraphLayer layer = GraphLayer::create(GnnKind::GAT, 3, 4, rng);
    const Tensor x({2, 3}, {0.2, -0.4, 0.9, 0.2, -0.4, 0.9});
    const Edge edges[] = {{1, 0}};
    const MessagePlan plan = plan_messages(2, edges);
    const GatOutput out = gat_layer(plan, x, layer);
    CHECK(out.attention[0][0] == 0.5);
    CHECK(out.attention[0][1] == 0.5);
  }
  SUBCASE("brute-force oracle and attention normalization") {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t heads = 1 + trial % 2;
      const GraphLayer layer = GraphLayer::create(GnnKind::GAT, 5, 4, rng, heads);
      const std::size_t n = 2 + trial % 7;
      const auto edges = random_edges(n, rng);
      const Tensor x = random_tensor({n, 5}, rng, -2, 2);
      const MessagePlan plan = plan_messages(n, edges);
      const GatOutput out = gat_layer(plan, x, layer);
      std::vector<std::vector<long double>> alpha;
      const auto want = gat_oracle(n, edges, x, layer, &alpha);
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(out.features[i] - want[i]) <= 1e-12);
      for (const Tensor& a : out.attention) {
        std::vector<double> row_sum(n, 0.0);
        for (std::size_t m = 0; m < plan.src.size(); ++m) row_sum[plan.dst[m]] += a[m];
        for (double s : row_sum) CHECK(std::abs(s - 1.0) <= 1e-6);
      }
      for (std::size_t m = 0; m < plan.src.size(); ++m)
        CHECK(std::abs(out.attention[0][m] - static_cast<double>(alpha[plan.dst[m]][plan.src[m]])) <= 1e-12);
    }
  }
  SUBCASE("gradient check") {
    const GraphLayer layer = GraphLayer::create(GnnKind::GAT, 4, 4, rng, 2);
    const auto edges = random_edges(5, rng);
    const MessagePlan plan = plan_messages(5, edges);
    const Tensor x = random_tensor({5, 4}, rng);
    const Tensor r = random_tensor({5, 4}, rng);
    const Tensor params[] = {layer.weight.weight, layer.attention[0], layer.attention[1]};
    CHECK(finite_diff_check([&] { return sum(mul(apply_graph_layer(plan, x, layer), r)); }, params, all_coords(params)) <= 1e-4);
    CHECK(finite_diff_check([&](const Tensor& v) { return sum(mul(apply_graph_layer(plan, v, layer), r)); }, x) <= 1e-4);
  }
  SUBCASE("head count must divide the output width") {
    CHECK_THROWS_AS(GraphLayer::create(GnnKind::GAT, 4, 5, rng, 2), ContractError);
  }
}

TEST_CASE("attention is invariant to a per-destination logit shift") {
  std::mt19937_64 rng(5);
  const std::vector<std::size_t> ids{0, 0, 1, 2, 2, 2, 1};
  const Tensor logits = random_tensor({7}, rng, -5, 5);
  std::vector<double> shifted = to_vec(logits);
  const double shift[] = {3.5, -120.0, 41.0};
  for (std::size_t i = 0; i < 7; ++i) shifted[i] += shift[ids[i]];
  const Tensor a = segment_softmax(logits, ids, 3);
  const Tensor b = segment_softmax(Tensor({7}, shifted), ids, 3);
  for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("batch_graphs") {
  std::mt19937_64 rng(6);
  const GraphLayer layer = GraphLayer::create(GnnKind::GAT, 6, 4, rng);
  std::vector<HetGraph> graphs;
  for (std::size_t nv : {1, 3, 2, 5}) graphs.push_back(build_hetero_graph(random_tensor({nv, 4}, rng), random_tensor({4}, rng)));

  SUBCASE("batch of one is the original graph") {
    const BatchedGraph b = batch_graphs(std::span(graphs).first(1));
    CHECK(b.edges == graphs[0].edges);
    CHECK(b.node_offsets == std::vector<std::size_t>{0, graphs[0].n_nodes});
    CHECK(b.target_rows == std::vector<std::size_t>{0});
  }
  SUBCASE("two copies give identical target rows") {
    const HetGraph two[] = {graphs[2], graphs[2]};
    const BatchedGraph b = batch_graphs(two);
    const Tensor out = apply_graph_layer(plan_messages(b.n_nodes(), b.edges), b.node_features, layer);
    for (std::size_t k = 0; k < 4; ++k) CHECK(out[b.target_rows[0] * 4 + k] == out[b.target_rows[1] * 4 + k]);
  }
  SUBCASE("batched layers equal per-graph layers") {
    const BatchedGraph b = batch_graphs(graphs);
    for (std::size_t g = 0; g + 1 < b.node_offsets.size(); ++g) CHECK(b.node_offsets[g] < b.node_offsets[g + 1]);
    for (const Edge& e : b.edges) {
      const auto graph_of = [&](std::size_t v) { return std::upper_bound(b.node_offsets.begin(), b.node_offsets.end(), v) - b.node_offsets.begin(); };
      CHECK(graph_of(e.src) == graph_of(e.dst));
    }
    for (GnnKind kind : {GnnKind::GAT, GnnKind::GCN}) {
      const GraphLayer l = kind == GnnKind::GAT ? layer : GraphLayer::create(GnnKind::GCN, 6, 4, rng);
      const Tensor batched = apply_graph_layer(plan_messages(b.n_nodes(), b.edges), b.node_features, l);
      for (std::size_t g = 0; g < graphs.size(); ++g) {
        const Tensor single = apply_graph_layer(plan_messages(graphs[g].n_nodes, graphs[g].edges), graphs[g].node_features, l);
        for (std::size_t i = 0; i < single.numel(); ++i) CHECK(std::abs(batched[b.node_offsets[g] * 4 + i] - single[i]) <= 1e-6);
      }
    }
  }
  SUBCASE("empty list") { CHECK_THROWS_AS(batch_graphs({}), ContractError); }
}

TEST_CASE("target output is invariant to neighbor order") {
  std::mt19937_64 rng(7);
  for (GnnKind kind : {GnnKind::GAT, GnnKind::GCN}) {
    const GraphLayer l1 = GraphLayer::create(kind, 6, 8, rng);
    const GraphLayer l2 = GraphLayer::create(kind, 8, 8, rng);
    const Tensor vf = random_tensor({6, 4}, rng);
    const Tensor mf = random_tensor({4}, rng);
    std::vector<std::size_t> order(6);
    std::iota(order.begin(), order.end(), 0);
    const auto run = [&](const Tensor& v) {
      const HetGraph g = build_hetero_graph(v, mf);
      const MessagePlan plan = plan_messages(g.n_nodes, g.edges);
      return to_vec(slice_rows(apply_graph_layer(plan, apply_graph_layer(plan, g.node_features, l1), l2), 0, 1));
    };
    const auto base = run(vf);
    for (int trial = 0; trial < 5; ++trial) {
      std::shuffle(order.begin() + 1, order.end(), rng);
      const auto permuted = run(gather_rows(vf, order));
      for (std::size_t k = 0; k < base.size(); ++k) CHECK(std::abs(base[k] - permuted[k]) <= 1e-9);
    }
  }
}

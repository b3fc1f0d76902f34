#include "recog/metrics.hpp"

#include <cmath>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "recog/tensor.hpp"

namespace recog {

namespace {

constexpr std::size_t kStepsPerSecond = 10;

void check_lengths(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  if (pred.size() != gt.size()) {
    throw ContractError(fmt::format("trajectory lengths differ: {} vs {}", pred.size(), gt.size()));
  }
  if (pred.empty()) throw ContractError("empty trajectory");
}

double mean_prefix(const std::vector<double>& v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i];
  return s / static_cast<double>(n);
}

}  // namespace

double de_tau(std::span<const Vec2> pred, std::span<const Vec2> gt, std::size_t tau) {
  check_lengths(pred, gt);
  if (tau < 1 || tau > pred.size()) {
    throw ContractError(fmt::format("tau {} outside [1, {}]", tau, pred.size()));
  }
  const Vec2 p = pred[tau - 1], g = gt[tau - 1];
  return std::hypot(p.x - g.x, p.y - g.y);
}

std::vector<double> displacement_errors(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  check_lengths(pred, gt);
  std::vector<double> de(pred.size());
  for (std::size_t t = 0; t < pred.size(); ++t) de[t] = std::hypot(pred[t].x - gt[t].x, pred[t].y - gt[t].y);
  return de;
}

double ade(std::span<const Vec2> pred, std::span<const Vec2> gt) {
  const auto de = displacement_errors(pred, gt);
  return mean_prefix(de, de.size());
}

double fde(std::span<const Vec2> pred, std::span<const Vec2> gt) { return de_tau(pred, gt, pred.size()); }

double SampleResult::ade() const { return mean_prefix(de, de.size()); }
double SampleResult::fde() const { return de.back(); }

SampleResult score_sample(std::span<const Vec2> pred, std::span<const Vec2> gt, int scene_id, std::string case_key) {
  return {scene_id, std::move(case_key), displacement_errors(pred, gt)};
}

std::vector<HorizonRow> aggregate(std::span<const SampleResult> results, GroupBy by, std::vector<std::string>* warnings) {
  if (results.empty()) throw ContractError("no results to aggregate");
  std::map<std::string, std::vector<const SampleResult*>> groups;
  for (const SampleResult& r : results) {
    groups[by == GroupBy::All ? std::string("all") : fmt::format("scene{}", r.scene_id)].push_back(&r);
  }
  std::vector<HorizonRow> rows;
  for (const auto& [name, members] : groups) {
    std::size_t steps = members.front()->de.size();
    for (const SampleResult* r : members) steps = std::min(steps, r->de.size());
    const int max_k = static_cast<int>(std::min<std::size_t>(steps / kStepsPerSecond, 5));
    if (max_k == 0) {
      if (warnings) warnings->push_back(fmt::format("group {} has a horizon under one second; omitted", name));
      continue;
    }
    for (int k = 1; k <= max_k; ++k) {
      const std::size_t n = static_cast<std::size_t>(k) * kStepsPerSecond;
      HorizonRow row{name, k, members.size(), 0.0, 0.0};
      for (const SampleResult* r : members) {
        row.ade += mean_prefix(r->de, n);
        row.de += r->de[n - 1];
      }
      row.ade /= static_cast<double>(members.size());
      row.de /= static_cast<double>(members.size());
      rows.push_back(row);
    }
  }
  return rows;
}

MetricsSummary summarize(std::span<const SampleResult> results) {
  if (results.empty()) throw ContractError("no results to summarize");
  MetricsSummary s;
  s.count = results.size();
  for (const SampleResult& r : results) {
    s.ade += r.ade();
    s.fde += r.fde();
  }
  s.ade /= static_cast<double>(s.count);
  s.fde /= static_cast<double>(s.count);
  s.horizons = aggregate(results, GroupBy::All);
  return s;
}

void write_horizon_csv(std::ostream& out, std::span<const HorizonRow> rows) {
  out << "group,seconds,count,ade,de\n";
  for (const HorizonRow& r : rows) out << fmt::format("{},{},{},{:.6f},{:.6f}\n", r.group, r.seconds, r.count, r.ade, r.de);
}

}  // namespace recog

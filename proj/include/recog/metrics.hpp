#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "recog/geometry.hpp"

namespace recog {

/// Euclidean error at step tau, 1-based. Throws ContractError when tau is
/// outside [1, T_f] or the lengths differ.
double de_tau(std::span<const Vec2> pred, std::span<const Vec2> gt, std::size_t tau);
/// Mean of de_tau over all steps.
double ade(std::span<const Vec2> pred, std::span<const Vec2> gt);
/// de_tau at the last step.
double fde(std::span<const Vec2> pred, std::span<const Vec2> gt);

/// Per-step errors of all steps.
std::vector<double> displacement_errors(std::span<const Vec2> pred, std::span<const Vec2> gt);

struct SampleResult {
  int scene_id = 0;
  std::string case_key;
  std::vector<double> de;  // per step

  double ade() const;
  double fde() const;
};

SampleResult score_sample(std::span<const Vec2> pred, std::span<const Vec2> gt, int scene_id = 0,
                          std::string case_key = {});

enum class GroupBy { All, Scene };

/// One group at one horizon: ADE over the first k seconds and DE at k seconds,
/// averaged over samples.
struct HorizonRow {
  std::string group;
  int seconds = 0;
  std::size_t count = 0;
  double ade = 0.0;
  double de = 0.0;
};

struct MetricsSummary {
  std::size_t count = 0;
  double ade = 0.0;
  double fde = 0.0;
  std::vector<HorizonRow> horizons;  // group "all"
};

/// Rows for every group and every whole second k with 10k <= T_f. Groups whose
/// horizon is shorter than one second are omitted and reported in `warnings`.
std::vector<HorizonRow> aggregate(std::span<const SampleResult> results, GroupBy by,
                                  std::vector<std::string>* warnings = nullptr);

MetricsSummary summarize(std::span<const SampleResult> results);

void write_horizon_csv(std::ostream& out, std::span<const HorizonRow> rows);

}  // namespace recog

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nightiq/manifest.hpp"
#include "nightiq/training.hpp"

namespace nightiq {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// q(x) = b1 (1/2 - 1/(1 + exp(b2 (x - b3)))) + b4 x + b5
using LogisticParams = std::array<double, 5>;
double logistic5(double x, const LogisticParams& b);

struct LogisticFit {
  LogisticParams params{};
  double plcc = 0.0;
  double rmse = 0.0;
  bool linear_fallback = false;  // every damped least-squares run diverged
  int iterations = 0;
};

struct CriteriaReport {
  double srcc = 0.0;
  double krcc = 0.0;
  double plcc = 0.0;
  double rmse = 0.0;
  int n = 0;
  LogisticParams logistic_params{};
  bool linear_fallback = false;
};

/// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> v);
double pearson(std::span<const double> a, std::span<const double> b);

/// Spearman: Pearson correlation of average ranks. n >= 3, neither vector constant.
double srcc(std::span<const double> pred, std::span<const double> mos);
/// Kendall tau-b.
double krcc(std::span<const double> pred, std::span<const double> mos);
/// Fits the 5-parameter logistic from pred to mos by damped least squares
/// (at most 500 iterations, tolerance 1e-10), then PLCC/RMSE of q(pred) vs mos.
/// n >= 6 and pred not constant.
LogisticFit plcc_rmse(std::span<const double> pred, std::span<const double> mos);

CriteriaReport evaluate_criteria(std::span<const double> pred, std::span<const double> mos);

// ---- folds ----

struct FoldPlan {
  int k = 5;
  std::map<std::string, int> assignments;  // content_id -> fold in 1..k

  [[nodiscard]] int fold_of(const std::string& content_id) const;
  /// Record indices whose content falls in `fold` (or outside it).
  [[nodiscard]] std::vector<std::size_t> indices_in(const DatasetManifest& m, int fold) const;
  [[nodiscard]] std::vector<std::size_t> indices_outside(const DatasetManifest& m, int fold) const;
};

/// Unique contents sorted, shuffled with the seed, dealt round-robin into k folds.
FoldPlan make_folds(const DatasetManifest& manifest, int k = 5, std::uint64_t seed = 0);

std::vector<SampleRecord> select_records(const DatasetManifest& m,
                                         std::span<const std::size_t> indices);

// ---- model evaluation ----

struct Predictions {
  std::vector<std::string> image_paths;
  std::vector<double> predicted;
  std::vector<double> mos;
};

Predictions predict_records(const Predictor& predictor, const std::vector<SampleRecord>& records);

struct FoldResult {
  int fold = 0;
  CriteriaReport report;
  Predictions predictions;
  std::vector<EpochLog> loss_log;
};

struct CrossvalResult {
  std::vector<FoldResult> folds;
  CriteriaReport mean;  // arithmetic mean of the per-fold criteria
};

/// Arithmetic mean of every criterion (n is summed).
CriteriaReport average_reports(std::span<const CriteriaReport> reports);

/// Trains on k-1 folds and tests on the held-out one, for every fold. Fold f
/// trains with seed config.seed + f.
CrossvalResult crossval(const DatasetManifest& manifest, const TrainConfig& config, int k = 5,
                        std::uint64_t fold_seed = 0, const TrainHooks& hooks = {});

// ---- rank-n ----

struct RankGroup {
  std::vector<double> predicted;
  std::vector<double> mos;
};

/// Fraction of groups whose best-MOS candidate is among the n highest predicted
/// scores. Ties (in MOS and in predictions) resolve to the lower index.
double rank_n_accuracy(std::span<const RankGroup> groups, int n);

/// Groups records by content_id (manifest order) for rank-n evaluation.
std::vector<RankGroup> group_by_content(const Predictions& predictions,
                                        const std::vector<SampleRecord>& records);

// ---- significance ----

enum class TTestDecision { kABetter, kBBetter, kIndistinguishable };
std::string to_string(TTestDecision d);

struct TTestResult {
  double statistic = 0.0;
  double p_value = 1.0;  // two-sided
  int dof = 0;
  TTestDecision decision = TTestDecision::kIndistinguishable;
};

/// Two-sample pooled-variance t-test at the given two-sided level.
TTestResult significance_ttest(std::span<const double> a, std::span<const double> b,
                               double alpha = 0.05);

// ---- reporting ----

std::string format_report_table(const CriteriaReport& mean,
                                std::span<const CriteriaReport> folds = {});
void write_report_csv(const std::filesystem::path& path, const CriteriaReport& mean,
                      std::span<const CriteriaReport> folds = {});
void write_scatter_csv(const std::filesystem::path& path, const Predictions& p);

}  // namespace nightiq

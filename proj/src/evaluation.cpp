#include "nightiq/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace nightiq {

namespace {

void require_pair(std::span<const double> a, std::span<const double> b, std::size_t min_n,
                  const char* what) {
  if (a.size() != b.size()) {
    throw MetricError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()) + ")");
  }
  if (a.size() < min_n) {
    throw MetricError(std::string(what) + ": needs at least " + std::to_string(min_n) +
                      " samples, got " + std::to_string(a.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw MetricError(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

void require_varying(std::span<const double> pred, std::span<const double> mos, const char* what) {
  if (is_constant(pred) || is_constant(mos)) {
    throw MetricError(std::string(what) + ": correlation undefined for a constant vector");
  }
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  return {slope, my - slope * mx};
}

double sse(std::span<const double> x, std::span<const double> y, const LogisticParams& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = logistic5(x[i], b) - y[i];
    s += r * r;
  }
  return s;
}

struct LmOutcome {
  LogisticParams params;
  double sse = 0.0;
  int iterations = 0;
  bool ok = false;
};

LmOutcome levenberg_marquardt(std::span<const double> x, std::span<const double> y,
                              LogisticParams b) {
  constexpr int kMaxIterations = 500;
  constexpr double kTolerance = 1e-10;
  const int n = static_cast<int>(x.size());
  double lambda = 1e-3;
  double cost = sse(x, y, b);
  LmOutcome out{b, cost, 0, std::isfinite(cost)};
  if (!out.ok) return out;

  Eigen::MatrixXd jac(n, 5);
  Eigen::VectorXd res(n);
  for (int it = 0; it < kMaxIterations; ++it) {
    out.iterations = it + 1;
    for (int i = 0; i < n; ++i) {
      const double z = b[1] * (x[i] - b[2]);
      const double s = 1.0 / (1.0 + std::exp(z));  // 1/(1+e^z)
      const double ds = -s * (1.0 - s);            // d s / d z
      jac(i, 0) = 0.5 - s;
      jac(i, 1) = -b[0] * ds * (x[i] - b[2]);
      jac(i, 2) = b[0] * ds * b[1];
      jac(i, 3) = x[i];
      jac(i, 4) = 1.0;
      res(i) = logistic5(x[i], b) - y[i];
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * res;
    bool improved = false;
    for (int attempt = 0; attempt < 30 && !improved; ++attempt) {
      Eigen::MatrixXd a = jtj;
      for (int d = 0; d < 5; ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Eigen::VectorXd step = a.ldlt().solve(-jtr);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      LogisticParams trial = b;
      for (int d = 0; d < 5; ++d) trial[d] += step(d);
      const double trial_cost = sse(x, y, trial);
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        const double decrease = cost - trial_cost;
        b = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        if (decrease <= kTolerance * std::max(cost, 1e-300) || step.norm() < kTolerance) {
          out.params = b;
          out.sse = cost;
          return out;
        }
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  out.params = b;
  out.sse = cost;
  out.ok = std::isfinite(cost);
  return out;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << v;
  return os.str();
}

}  // namespace

double logistic5(double x, const LogisticParams& b) {
  return b[0] * (0.5 - 1.0 / (1.0 + std::exp(b[1] * (x - b[2])))) + b[3] * x + b[4];
}

std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  require_pair(a, b, 2, "pearson");
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) throw MetricError("pearson: correlation undefined for a constant vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double srcc(std::span<const double> pred, std::span<const double> mos) {
  require_pair(pred, mos, 3, "srcc");
  require_varying(pred, mos, "srcc");
  const auto rp = average_ranks(pred);
  const auto rm = average_ranks(mos);
  return pearson(rp, rm);
}

double krcc(std::span<const double> pred, std::span<const double> mos) {
  require_pair(pred, mos, 3, "krcc");
  require_varying(pred, mos, "krcc");
  const std::size_t n = pred.size();
  long long concordant = 0;
  long long discordant = 0;
  long long tied_pred = 0;
  long long tied_mos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dp = pred[i] - pred[j];
      const double dm = mos[i] - mos[j];
      if (dp == 0 && dm == 0) continue;
      if (dp == 0) {
        ++tied_pred;
      } else if (dm == 0) {
        ++tied_mos;
      } else if ((dp > 0) == (dm > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n1 = static_cast<double>(concordant + discordant + tied_pred);
  const double n2 = static_cast<double>(concordant + discordant + tied_mos);
  return static_cast<double>(concordant - discordant) / std::sqrt(n1 * n2);
}

LogisticFit plcc_rmse(std::span<const double> pred, std::span<const double> mos) {
  require_pair(pred, mos, 6, "plcc_rmse");
  if (is_constant(pred)) throw MetricError("plcc_rmse: predictions are constant");

  const LinearFit line = fit_line(pred, mos);
  const double mx = mean_of(pred);
  double sx = 0.0;
  for (double v : pred) sx += (v - mx) * (v - mx);
  sx = std::sqrt(sx / static_cast<double>(pred.size()));
  const auto [ymin, ymax] = std::minmax_element(mos.begin(), mos.end());
  const double yrange = *ymax - *ymin;

  std::vector<LogisticParams> starts{{0.0, 1.0 / sx, mx, line.slope, line.intercept}};
  for (double sign : {1.0, -1.0}) {
    for (double sharp : {1.0, 4.0}) {
      starts.push_back({sign * yrange, sharp / sx, mx, 0.0, mean_of(mos)});
    }
  }

  LogisticFit fit;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    const LmOutcome o = levenberg_marquardt(pred, mos, s);
    if (o.ok && o.sse < best) {
      best = o.sse;
      fit.params = o.params;
      fit.iterations = o.iterations;
    }
  }
  if (!std::isfinite(best)) {
    fit.linear_fallback = true;
    fit.params = {0.0, 0.0, 0.0, line.slope, line.intercept};
  }

  std::vector<double> mapped(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) mapped[i] = logistic5(pred[i], fit.params);
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sq += (mapped[i] - mos[i]) * (mapped[i] - mos[i]);
  fit.rmse = std::sqrt(sq / static_cast<double>(pred.size()));
  fit.plcc = is_constant(mapped) || is_constant(mos) ? 0.0 : pearson(mapped, mos);
  return fit;
}

CriteriaReport evaluate_criteria(std::span<const double> pred, std::span<const double> mos) {
  CriteriaReport r;
  r.n = static_cast<int>(pred.size());
  r.srcc = srcc(pred, mos);
  r.krcc = krcc(pred, mos);
  const LogisticFit fit = plcc_rmse(pred, mos);
  r.plcc = fit.plcc;
  r.rmse = fit.rmse;
  r.logistic_params = fit.params;
  r.linear_fallback = fit.linear_fallback;
  return r;
}

// ---- folds ----

int FoldPlan::fold_of(const std::string& content_id) const {
  const auto it = assignments.find(content_id);
  if (it == assignments.end()) throw std::out_of_range("content '" + content_id + "' has no fold");
  return it->second;
}

std::vector<std::size_t> FoldPlan::indices_in(const DatasetManifest& m, int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (fold_of(m.records[i].content_id) == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::indices_outside(const DatasetManifest& m, int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (fold_of(m.records[i].content_id) != fold) out.push_back(i);
  }
  return out;
}

FoldPlan make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");
  std::set<std::string> unique;
  for (const auto& r : manifest.records) unique.insert(r.content_id);
  if (static_cast<int>(unique.size()) < k) {
    throw std::invalid_argument("make_folds: " + std::to_string(unique.size()) +
                                " contents cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<std::string> contents(unique.begin(), unique.end());
  Rng rng(seed);
  std::shuffle(contents.begin(), contents.end(), rng);
  FoldPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < contents.size(); ++i) {
    plan.assignments[contents[i]] = static_cast<int>(i % static_cast<std::size_t>(k)) + 1;
  }
  return plan;
}

std::vector<SampleRecord> select_records(const DatasetManifest& m,
                                         std::span<const std::size_t> indices) {
  std::vector<SampleRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(m.records.at(i));
  return out;
}

// ---- model evaluation ----

Predictions predict_records(const Predictor& predictor, const std::vector<SampleRecord>& records) {
  Predictions p;
  for (const auto& r : records) {
    p.image_paths.push_back(r.image_path);
    p.predicted.push_back(predictor.predict(std::filesystem::path(r.image_path)));
    p.mos.push_back(r.mos);
  }
  return p;
}

CriteriaReport average_reports(std::span<const CriteriaReport> reports) {
  if (reports.empty()) throw std::invalid_argument("average_reports: no reports");
  CriteriaReport m;
  const double k = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    m.srcc += r.srcc / k;
    m.krcc += r.krcc / k;
    m.plcc += r.plcc / k;
    m.rmse += r.rmse / k;
    m.n += r.n;
    m.linear_fallback = m.linear_fallback || r.linear_fallback;
  }
  return m;
}

CrossvalResult crossval(const DatasetManifest& manifest, const TrainConfig& config, int k,
                        std::uint64_t fold_seed, const TrainHooks& hooks) {
  const FoldPlan plan = make_folds(manifest, k, fold_seed);
  CrossvalResult result;
  std::vector<CriteriaReport> reports;
  for (int fold = 1; fold <= k; ++fold) {
    TrainConfig cfg = config;
    cfg.seed = config.seed + static_cast<std::uint64_t>(fold);
    const auto train_idx = plan.indices_outside(manifest, fold);
    const auto test_idx = plan.indices_in(manifest, fold);
    TrainResult trained = train(select_records(manifest, train_idx), cfg, hooks);
    const Predictor predictor(trained.checkpoint);
    FoldResult fr;
    fr.fold = fold;
    fr.predictions = predict_records(predictor, select_records(manifest, test_idx));
    fr.report = evaluate_criteria(fr.predictions.predicted, fr.predictions.mos);
    fr.loss_log = std::move(trained.log);
    reports.push_back(fr.report);
    result.folds.push_back(std::move(fr));
  }
  result.mean = average_reports(reports);
  return result;
}

// ---- rank-n ----

double rank_n_accuracy(std::span<const RankGroup> groups, int n) {
  if (groups.empty()) throw std::invalid_argument("rank_n_accuracy: no groups");
  if (n < 1) throw std::invalid_argument("rank_n_accuracy: n must be >= 1");
  int hits = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    if (grp.predicted.size() != grp.mos.size()) {
      throw std::invalid_argument("rank_n_accuracy: group " + std::to_string(g) +
                                  " has mismatched lengths");
    }
    if (static_cast<int>(grp.mos.size()) < n) {
      throw std::invalid_argument("rank_n_accuracy: group " + std::to_string(g) + " has " +
                                  std::to_string(grp.mos.size()) + " candidates, fewer than n = " +
                                  std::to_string(n));
    }
    const std::size_t best =
        static_cast<std::size_t>(std::max_element(grp.mos.begin(), grp.mos.end()) - grp.mos.begin());
    std::size_t position = 0;  // 0-based rank of `best` by descending prediction
    for (std::size_t j = 0; j < grp.predicted.size(); ++j) {
      if (grp.predicted[j] > grp.predicted[best] ||
          (grp.predicted[j] == grp.predicted[best] && j < best)) {
        ++position;
      }
    }
    if (static_cast<int>(position) < n) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(groups.size());
}

std::vector<RankGroup> group_by_content(const Predictions& predictions,
                                        const std::vector<SampleRecord>& records) {
  if (predictions.predicted.size() != records.size()) {
    throw std::invalid_argument("group_by_content: prediction/record count mismatch");
  }
  std::vector<std::string> order;
  std::map<std::string, RankGroup> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& id = records[i].content_id;
    if (!groups.contains(id)) order.push_back(id);
    groups[id].predicted.push_back(predictions.predicted[i]);
    groups[id].mos.push_back(records[i].mos);
  }
  std::vector<RankGroup> out;
  for (const auto& id : order) out.push_back(std::move(groups[id]));
  return out;
}

// ---- significance ----

std::string to_string(TTestDecision d) {
  switch (d) {
    case TTestDecision::kABetter:
      return "a_better";
    case TTestDecision::kBBetter:
      return "b_better";
    case TTestDecision::kIndistinguishable:
      return "indistinguishable";
  }
  return "indistinguishable";
}

TTestResult significance_ttest(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() < 2 || b.size() < 2) {
    throw std::invalid_argument("significance_ttest: each sample needs at least 2 values");
  }
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("significance_ttest: alpha in (0,1)");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double ssa = 0.0;
  double ssb = 0.0;
  for (double v : a) ssa += (v - ma) * (v - ma);
  for (double v : b) ssb += (v - mb) * (v - mb);
  TTestResult r;
  r.dof = static_cast<int>(a.size() + b.size()) - 2;
  const double pooled = (ssa + ssb) / r.dof;
  const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  if (se == 0.0) {
    if (ma == mb) return r;
    r.statistic = ma > mb ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    r.decision = ma > mb ? TTestDecision::kABetter : TTestDecision::kBBetter;
    return r;
  }
  r.statistic = (ma - mb) / se;
  const boost::math::students_t dist(r.dof);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic)));
  if (r.p_value < alpha) {
    r.decision = r.statistic > 0 ? TTestDecision::kABetter : TTestDecision::kBBetter;
  }
  return r;
}

// ---- reporting ----

std::string format_report_table(const CriteriaReport& mean, std::span<const CriteriaReport> folds) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "split" << std::right << std::setw(6) << "n" << std::setw(11)
     << "SRCC" << std::setw(11) << "KRCC" << std::setw(11) << "PLCC" << std::setw(11) << "RMSE"
     << '\n';
  auto row = [&os](const std::string& name, const CriteriaReport& r) {
    os << std::left << std::setw(8) << name << std::right << std::setw(6) << r.n << std::setw(11)
       << format_number(r.srcc) << std::setw(11) << format_number(r.krcc) << std::setw(11)
       << format_number(r.plcc) << std::setw(11) << format_number(r.rmse)
       << (r.linear_fallback ? "  (linear fit)" : "") << '\n';
  };
  for (std::size_t i = 0; i < folds.size(); ++i) row("fold" + std::to_string(i + 1), folds[i]);
  row(folds.empty() ? "all" : "mean", mean);
  return os.str();
}

void write_report_csv(const std::filesystem::path& path, const CriteriaReport& mean,
                      std::span<const CriteriaReport> folds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << std::setprecision(17);
  out << "split,n,srcc,krcc,plcc,rmse,b1,b2,b3,b4,b5,linear_fallback\n";
  auto row = [&out](const std::string& name, const CriteriaReport& r) {
    out << name << ',' << r.n << ',' << r.srcc << ',' << r.krcc << ',' << r.plcc << ',' << r.rmse;
    for (double b : r.logistic_params) out << ',' << b;
    out << ',' << (r.linear_fallback ? 1 : 0) << '\n';
  };
  for (std::size_t i = 0; i < folds.size(); ++i) row("fold" + std::to_string(i + 1), folds[i]);
  row(folds.empty() ? "all" : "mean", mean);
}

void write_scatter_csv(const std::filesystem::path& path, const Predictions& p) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scatter data " + path.string());
  out << std::setprecision(17) << "image_path,predicted,mos\n";
  for (std::size_t i = 0; i < p.predicted.size(); ++i) {
    out << p.image_paths[i] << ',' << p.predicted[i] << ',' << p.mos[i] << '\n';
  }
}

}  // namespace nightiq

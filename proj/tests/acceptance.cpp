// Acceptance checks: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "nightiq/eai.hpp"
#include "nightiq/evaluation.hpp"
#include "nightiq/synthetic.hpp"
#include "nightiq/training.hpp"
#include "support/oracles.hpp"

using namespace nightiq;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Collects failures with a short note each.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ += !ok;
  }
  [[nodiscard]] Outcome outcome(const std::string& summary) const {
    Outcome o{failed_ == 0, summary};
    if (failed_ > 0) {
      o.detail += " failed " + std::to_string(failed_) + "/" + std::to_string(total_) + ":";
      for (const auto& f : failures_) o.detail += " [" + f + "]";
    }
    return o;
  }

 private:
  int total_ = 0;
  int failed_ = 0;
  std::vector<std::string> failures_;
};

Tensor rand_t(Shape s, std::mt19937_64& rng) { return oracle::random_tensor(s, rng); }

Outcome ac1_gradients() {
  const auto t0 = Clock::now();
  Outcome o;
  int checked = 0, skipped = 0;
  for (const char* component : {"decomposition", "feature", "head", "total"}) {
    const auto r = gradcheck(component, 1);
    checked += r.coordinates_checked;
    skipped += r.coordinates_skipped;
    o.pass = o.pass && r.max_relative_error < 1e-3;
    o.detail += std::string(component) + "=" + fmt(r.max_relative_error) + " ";
  }
  const double elapsed = seconds_since(t0);
  const double skip_fraction = double(skipped) / (checked + skipped);
  o.pass = o.pass && elapsed < 120.0 && skip_fraction <= 0.3;
  o.detail += "skipped " + std::to_string(skipped) + "/" + std::to_string(checked + skipped) +
              " time " + fmt(elapsed) + "s";
  return o;
}

Outcome ac2_loss_identities() {
  Checks c;
  std::mt19937_64 rng(2);
  const PenaltyParams pen;
  const ColorLossParams col;
  const Shape s3{1, 3, 12, 12};
  const Shape s1{1, 1, 12, 12};

  // Analytic minima.
  const Tensor r = rand_t(s3, rng);
  const Tensor l = rand_t(s1, rng);
  Tensor rl(s3);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) rl.at(0, ch, y, x) = r.at(0, ch, y, x) * l.at(0, 0, y, x);
  const Tensor flat_l(s1, 0.4);
  const Tensor flat_r(s3, 0.6);
  c.expect(loss_reflection_consistency(r, r) == 0.0, "con_R(R,R)");
  c.expect(penalty_f(Tensor(s1, 0.0), pen) == 0.0, "f(0)");
  c.expect(loss_illum_consistency(flat_l, Tensor(s1, 0.9), pen) == 0.0, "con_L constants");
  c.expect(loss_illum_smoothness(flat_l, r, flat_l, r) == 0.0, "sm_L constant L");
  c.expect(loss_reflect_tv(flat_r, flat_r) == 0.0, "sm_R constants");
  c.expect(loss_reconstruction(rl, r, l, rl, r, l) == 0.0, "rec I=R*L");
  c.expect(loss_structure(r, r) == 0.0, "str(R,R)");
  c.expect(loss_color(r, r, col) == 0.0, "color(R,R)");
  c.expect(loss_mse(l, l) == 0.0, "mse(L,L)");
  const std::vector<double> q{0.1, 0.8, 0.5};
  c.expect(quality_loss(q, q) == 0.0, "quality(q,q)");

  // Non-negativity on random inputs.
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < 1000; ++i) {
    const Shape a3{1, 3, 11, 11};
    const Shape a1{1, 1, 11, 11};
    const Tensor rn = rand_t(a3, rng), re = rand_t(a3, rng), ln = rand_t(a1, rng), le = rand_t(a1, rng);
    const Tensor in = rand_t(a3, rng), ie = rand_t(a3, rng);
    const std::vector<double> p{u(rng), u(rng), u(rng)}, t{u(rng), u(rng), u(rng)};
    const double v[] = {loss_reflection_consistency(rn, re),
                        loss_illum_consistency(ln, le, pen),
                        loss_illum_smoothness(ln, rn, le, re),
                        loss_reflect_tv(rn, re),
                        loss_reconstruction(in, rn, ln, ie, re, le),
                        loss_structure(rn, re),
                        loss_color(rn, re, col),
                        loss_mse(ln, le),
                        quality_loss(p, t)};
    for (double x : v) c.expect(x >= 0.0 && std::isfinite(x), "random input " + std::to_string(i));
  }
  return c.outcome("10 identity cases, 9 terms x 1000 random inputs");
}

Outcome ac3_penalty() {
  Checks c;
  for (double cc : {0.05, 0.1, 0.2}) {
    const double step = 1e-4;
    c.expect(penalty_curve(0.0, cc) == 0.0, "f(0)");
    double best = -1, arg = 0;
    for (int i = 0; i <= 40000; ++i) {
      const double v = penalty_curve(i * step, cc);
      if (v > best) {
        best = v;
        arg = i * step;
      }
    }
    c.expect(std::abs(arg - cc) <= step + 1e-15, "argmax c=" + fmt(cc) + " at " + fmt(arg));
    for (int i = 1; i <= 40000; ++i) {
      const double m = cc + i * step;
      if (m > 4.0) break;
      const double v = penalty_curve(m, cc);
      const double prev = penalty_curve(m - step, cc);
      // Strict where representable; subnormal values may round to ties.
      const bool ok = prev >= std::numeric_limits<double>::min() ? v < prev : v <= prev;
      c.expect(ok, "monotone c=" + fmt(cc) + " at " + fmt(m));
    }
    c.expect(penalty_curve(10 * cc, cc) < 1e-6 * penalty_curve(cc, cc), "tail c=" + fmt(cc));
  }
  return c.outcome("c in {0.05, 0.1, 0.2}, grid step 1e-4");
}

Outcome ac4_camera_response() {
  Checks c;
  const CameraResponseParams p;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    c.expect(camera_response(v, 1.0, p) == v, "identity at " + fmt(v));
  }
  for (int k = 1; k <= 9; ++k) {
    double previous = k / 10.0;
    for (double ratio : {1.5, 2.4, 5.76}) {
      const double out = camera_response(k / 10.0, ratio, p);
      c.expect(out > previous, "I=" + fmt(k / 10.0) + " ratio=" + fmt(ratio));
      previous = out;
    }
  }
  return c.outcome("1000 random pixels, I in 0.1..0.9 x ratio {1.5, 2.4, 5.76}");
}

Outcome ac5_metric_oracles() {
  Checks c;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(3, 8);
  std::uniform_int_distribution<int> small(0, 4);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  int pairs = 0;
  while (pairs < 200) {
    const int n = len(rng);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = pairs % 3 == 0 ? small(rng) : u(rng);
      b[i] = pairs % 3 == 1 ? small(rng) : u(rng);
    }
    if (std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; }) ||
        std::all_of(b.begin(), b.end(), [&](double x) { return x == b[0]; }))
      continue;
    std::vector<double> e{std::abs(srcc(a, b) - oracle::srcc_brute(a, b)),
                          std::abs(krcc(a, b) - oracle::krcc_brute(a, b))};
    // RMSE follows the logistic fit, which needs six points.
    if (n >= 6) {
      const auto fit = plcc_rmse(a, b);
      std::vector<double> fitted;
      for (double x : a) fitted.push_back(logistic5(x, fit.params));
      e.push_back(std::abs(fit.rmse - oracle::rmse_brute(fitted, b)));
    }
    for (double x : e) {
      worst = std::max(worst, x);
      c.expect(x <= 1e-10, "pair " + std::to_string(pairs));
    }
    ++pairs;
  }
  const std::vector<double> pred{1, 2, 3, 5, 4};
  const std::vector<double> mos{1, 2, 3, 4, 5};
  const double s = srcc(pred, mos);
  const double k = krcc(pred, mos);
  c.expect(std::abs(s - 0.9) < 1e-15, "srcc example " + fmt(s));
  c.expect(std::abs(k - 0.8) < 1e-15, "krcc example " + fmt(k));
  return c.outcome("200 pairs, worst |diff| " + fmt(worst) + ", examples " + fmt(s) + " " + fmt(k));
}

Outcome ac6_logistic() {
  Checks c;
  std::vector<double> mos, affine, squared;
  for (int i = 1; i <= 9; ++i) {
    mos.push_back(i / 10.0);
    affine.push_back(2 * mos.back() + 0.1);
    squared.push_back(mos.back() * mos.back());
  }
  const auto a = plcc_rmse(affine, mos);
  const auto sq = plcc_rmse(squared, mos);
  c.expect(std::abs(a.plcc - 1.0) <= 1e-6, "affine plcc");
  c.expect(a.rmse < 1e-6, "affine rmse");
  c.expect(sq.plcc > 0.999, "squared plcc");
  return c.outcome("affine plcc " + fmt(a.plcc) + " rmse " + fmt(a.rmse) + ", squared plcc " +
                   fmt(sq.plcc));
}

Outcome ac7_bilinear() {
  Checks c;
  c.expect(kDescriptorLength == 4096, "length");
  ParameterStore store;
  Rng init(7);
  BilinearHead head(store, "head", init);
  std::mt19937_64 rng(7);
  FeaturePyramid pr, pl;
  for (int i = 0; i < 4; ++i) {
    pr.levels[i] = ag::Var::constant(rand_t(Shape{2, kPyramidWidths[i], 16 >> i, 16 >> i}, rng));
    pl.levels[i] = ag::Var::constant(rand_t(Shape{2, kPyramidWidths[i], 16 >> i, 16 >> i}, rng));
  }
  const auto out = head.fuse_and_predict(pr, pl);
  c.expect(out.descriptor.concatenated.shape().c == 4096, "descriptor length");
  double worst_norm = 0;
  for (const auto& scale : out.descriptor.per_scale) {
    for (int n = 0; n < 2; ++n) {
      double s = 0;
      for (int i = 0; i < 1024; ++i) s += std::pow(scale.value().at(n, i, 0, 0), 2);
      if (s > 0) {
        worst_norm = std::max(worst_norm, std::abs(std::sqrt(s) - 1.0));
        c.expect(std::abs(std::sqrt(s) - 1.0) <= 1e-10, "unit norm");
      }
    }
  }
  double worst_pool = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = oracle::random_tensor(Shape{1, 32, 2, 2}, rng, -1, 1);
    const Tensor b = oracle::random_tensor(Shape{1, 32, 2, 2}, rng, -1, 1);
    const auto got = bilinear_pool(a, b);
    const auto want = oracle::bilinear_pool_naive(a, b, 0);
    for (std::size_t i = 0; i < got.size(); ++i) {
      worst_pool = std::max(worst_pool, std::abs(got[i] - want[i]));
      c.expect(std::abs(got[i] - want[i]) <= 1e-10, "pool");
    }
  }
  return c.outcome("length 4096, norm dev " + fmt(worst_norm) + ", pool dev " + fmt(worst_pool));
}

struct SmokeRun {
  bool ok = false;
  std::string error;
  double first_total = 0, last_total = 0, srcc = 0, reconstruction = 0, mean_intensity = 0,
         seconds = 0;
};

// Overfit experiment: 16 synthetic 64x64 images, 200 optimization steps.
SmokeRun run_smoke(const std::filesystem::path& dir) {
  SmokeRun s;
  try {
    SyntheticCorpusOptions o;
    o.count = 16;
    o.size = {64, 64};
    o.seed = 0;
    const auto m = write_synthetic_corpus(dir, o);
    for (const auto& r : m.records)
      save_image(eai_cache_path(r.image_path), make_eai(load_image(r.image_path), {}));
    TrainConfig cfg;
    cfg.input_size = {64, 64};
    cfg.batch_size = 4;
    cfg.epochs = 200 * cfg.batch_size / o.count;
    cfg.learning_rate = 2e-3;
    cfg.seed = 1;
    int steps = 0;
    TrainHooks hooks;
    hooks.on_step = [&](int step, const EpochLog& l) {
      if (step == 1) s.first_total = l.total;
      s.last_total = l.total;
      steps = step;
    };
    const auto t0 = Clock::now();
    const auto trained = train(m.records, cfg, hooks);
    s.seconds = seconds_since(t0);
    if (steps != 200) throw std::runtime_error("ran " + std::to_string(steps) + " steps");

    const Predictor p(trained.checkpoint);
    const auto preds = predict_records(p, m.records);
    s.srcc = nightiq::srcc(preds.predicted, preds.mos);
    double rec = 0;
    double level = 0;
    for (const auto& r : m.records) {
      const auto img = load_image(r.image_path, cfg.input_size);
      const auto d = p.decompose(img);
      double sum = 0;
      double intensity = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x) {
            sum += std::abs(img.at(c, y, x) - d.reflectance.at(c, y, x) * d.illumination.at(0, y, x));
            intensity += img.at(c, y, x);
          }
      rec += sum / (3.0 * img.height() * img.width());
      level += intensity / (3.0 * img.height() * img.width());
    }
    s.reconstruction = rec / m.records.size();
    s.mean_intensity = level / m.records.size();
    s.ok = true;
  } catch (const std::exception& e) {
    s.error = e.what();
  }
  return s;
}

Outcome ac8_smoke(const SmokeRun& s) {
  if (!s.ok) return {false, "smoke run failed: " + s.error};
  const double drop = 1.0 - s.last_total / s.first_total;
  Outcome o;
  o.pass = drop >= 0.5 && s.srcc >= 0.9 && s.seconds < 600.0;
  o.detail = "loss " + fmt(s.first_total) + " -> " + fmt(s.last_total) + " (drop " +
             fmt(100 * drop) + "%), train srcc " + fmt(s.srcc) + ", " + fmt(s.seconds) + "s";
  return o;
}

Outcome ac9_reconstruction(const SmokeRun& s) {
  if (!s.ok) return {false, "smoke run failed: " + s.error};
  // R*L = 0 would score mean(I); reported so a degenerate decomposition is visible.
  return {s.reconstruction < 0.1, "mean |I - R*L| = " + fmt(s.reconstruction) +
                                      " (R*L = 0 would give " + fmt(s.mean_intensity) + ")"};
}

Outcome ac10_protocol(const std::filesystem::path& dir) {
  Checks c;
  // Folds partition the contents.
  DatasetManifest m;
  for (int content = 0; content < 13; ++content)
    for (int i = 0; i <= content % 3; ++i)
      m.records.push_back({"c" + std::to_string(content) + "_" + std::to_string(i), 0.5, 0.5,
                           "content_" + std::to_string(content), "", "t"});
  const auto plan = make_folds(m, 5, 11);
  std::set<std::string> contents;
  for (const auto& r : m.records) contents.insert(r.content_id);
  c.expect(plan.assignments.size() == contents.size(), "every content assigned");
  std::vector<int> hits(m.records.size(), 0);
  for (int f = 1; f <= 5; ++f) {
    std::set<std::string> in_fold;
    for (std::size_t i : plan.indices_in(m, f)) {
      ++hits[i];
      in_fold.insert(m.records[i].content_id);
    }
    for (std::size_t i : plan.indices_outside(m, f))
      c.expect(!in_fold.count(m.records[i].content_id), "content split across folds");
  }
  for (int h : hits) c.expect(h == 1, "image in exactly one fold");

  // Crossval tests every image exactly once.
  try {
    SyntheticCorpusOptions o;
    o.count = 12;
    o.size = {16, 16};
    const auto corpus = write_synthetic_corpus(dir, o);
    for (const auto& r : corpus.records)
      save_image(eai_cache_path(r.image_path), make_eai(load_image(r.image_path), {}));
    TrainConfig cfg;
    cfg.input_size = {16, 16};
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.learning_rate = 1e-3;
    const auto cv = crossval(corpus, cfg, 2, 3);
    std::map<std::string, int> tested;
    for (const auto& f : cv.folds)
      for (const auto& p : f.predictions.image_paths) ++tested[p];
    c.expect(tested.size() == corpus.records.size(), "crossval coverage");
    for (const auto& r : corpus.records) c.expect(tested[r.image_path] == 1, "tested once");
  } catch (const std::exception& e) {
    c.expect(false, std::string("crossval threw: ") + e.what());
  }

  // Rank-n accuracy.
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<RankGroup> groups(40);
  for (auto& g : groups)
    for (int i = 0; i < 15; ++i) {
      g.predicted.push_back(u(rng));
      g.mos.push_back(u(rng));
    }
  double previous = 0;
  for (int n = 1; n <= 15; ++n) {
    const double acc = rank_n_accuracy(groups, n);
    c.expect(acc >= previous, "rank-n monotone");
    previous = acc;
  }
  c.expect(previous == 1.0, "rank-n at group size");

  // Significance test.
  std::normal_distribution<double> plcc(0.85, 0.03);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(3 + trial % 4), b(3 + trial % 5);
    for (auto& x : a) x = plcc(rng);
    for (auto& x : b) x = plcc(rng) + (trial % 2 ? 0.05 : 0.0);
    const auto ab = significance_ttest(a, b);
    const auto ba = significance_ttest(b, a);
    c.expect(ab.statistic == -ba.statistic && ab.p_value == ba.p_value, "antisymmetric statistic");
    const bool mirrored =
        (ab.decision == TTestDecision::kABetter && ba.decision == TTestDecision::kBBetter) ||
        (ab.decision == TTestDecision::kBBetter && ba.decision == TTestDecision::kABetter) ||
        (ab.decision == TTestDecision::kIndistinguishable &&
         ba.decision == TTestDecision::kIndistinguishable);
    c.expect(mirrored, "antisymmetric decision");
    c.expect(significance_ttest(a, a).decision == TTestDecision::kIndistinguishable, "identical");
  }
  return c.outcome("folds, crossval coverage, rank-n, t-test");
}

Outcome ac11_determinism(const std::filesystem::path& dir) {
  try {
    SyntheticCorpusOptions o;
    o.count = 6;
    o.size = {32, 32};
    o.seed = 3;
    const auto m = write_synthetic_corpus(dir, o);
    for (const auto& r : m.records)
      save_image(eai_cache_path(r.image_path), make_eai(load_image(r.image_path), {}));
    TrainConfig cfg;
    cfg.input_size = {32, 32};
    cfg.batch_size = 4;
    cfg.epochs = 3;
    cfg.learning_rate = 1e-3;
    cfg.seed = 42;
    for (const char* run : {"a", "b"}) {
      const auto r = train(m.records, cfg);
      save_checkpoint(r.checkpoint, dir / (std::string(run) + ".ckpt"));
      write_loss_log(dir / (std::string(run) + ".csv"), r.log);
    }
    const bool same_ckpt = oracle::read_file(dir / "a.ckpt") == oracle::read_file(dir / "b.ckpt");
    const bool same_log = oracle::read_file(dir / "a.csv") == oracle::read_file(dir / "b.csv");
    return {same_ckpt && same_log, std::string("checkpoint ") + (same_ckpt ? "identical" : "differs") +
                                       ", loss log " + (same_log ? "identical" : "differs")};
  } catch (const std::exception& e) {
    return {false, std::string("threw: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  // Optional argument: a single criterion number to run.
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;
  auto wanted = [&](int n) { return only == 0 || only == n; };

  oracle::TempDir work("acceptance");
  bool all = true;
  auto report = [&](int n, const Outcome& o) {
    std::cout << "AC" << n << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    all = all && o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("threw: ") + e.what()};
    }
  };

  if (wanted(1)) report(1, guarded(ac1_gradients));
  if (wanted(2)) report(2, guarded(ac2_loss_identities));
  if (wanted(3)) report(3, guarded(ac3_penalty));
  if (wanted(4)) report(4, guarded(ac4_camera_response));
  if (wanted(5)) report(5, guarded(ac5_metric_oracles));
  if (wanted(6)) report(6, guarded(ac6_logistic));
  if (wanted(7)) report(7, guarded(ac7_bilinear));
  if (wanted(8) || wanted(9)) {
    const SmokeRun smoke = run_smoke(work.path() / "smoke");
    if (wanted(8)) report(8, ac8_smoke(smoke));
    if (wanted(9)) report(9, ac9_reconstruction(smoke));
  }
  if (wanted(10)) report(10, guarded([&] { return ac10_protocol(work.path() / "protocol"); }));
  if (wanted(11)) report(11, guarded([&] { return ac11_determinism(work.path() / "determinism"); }));
  return all ? 0 : 1;
}

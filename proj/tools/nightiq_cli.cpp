#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "nightiq/eai.hpp"
#include "nightiq/enhance.hpp"
#include "nightiq/evaluation.hpp"
#include "nightiq/plots.hpp"
#include "nightiq/training.hpp"

namespace fs = std::filesystem;
using namespace nightiq;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string input_size;
};

struct TrainOverrides {
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
};

TrainConfig resolve_config(const GlobalOptions& g, const TrainOverrides& o = {}) {
  TrainConfig cfg;
  if (!g.config_path.empty()) cfg = load_train_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.input_size.empty()) cfg.set("input_size", g.input_size);
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
  cfg.validate();
  return cfg;
}

std::vector<int> parse_folds(const std::string& text) {
  std::vector<int> folds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    folds.push_back(std::stoi(item));
  }
  if (folds.empty()) throw std::invalid_argument("--folds lists no fold ids");
  return folds;
}

std::pair<double, double> parse_range(const std::string& text, const char* flag) {
  const auto sep = text.find(':');
  if (sep == std::string::npos) {
    throw std::invalid_argument(std::string(flag) + " expects lo:hi, got '" + text + "'");
  }
  return {std::stod(text.substr(0, sep)), std::stod(text.substr(sep + 1))};
}

TrainHooks progress_hooks(int epochs) {
  TrainHooks hooks;
  hooks.on_epoch = [epochs](const EpochLog& e) {
    std::fprintf(stderr, "epoch %d/%d  idm %.5f  feat %.5f  quality %.5f  total %.5f\n", e.epoch,
                 epochs, e.idm, e.feat, e.quality, e.total);
  };
  return hooks;
}

void print_fit_outputs(const fs::path& out_dir, const Predictions& p, const CriteriaReport& r) {
  fs::create_directories(out_dir);
  write_report_csv(out_dir / "report.csv", r);
  write_scatter_csv(out_dir / "scatter.csv", p);
  render_scatter_png(out_dir / "scatter.png", p.predicted, p.mos, r.logistic_params);
  std::cout << format_report_table(r);
}

int run_prepare_eai(const std::string& manifest_path, const std::string& out_dir, bool force) {
  const DatasetManifest m = load_manifest(manifest_path);
  int written = 0;
  int skipped = 0;
  for (const auto& r : m.records) {
    const fs::path target = eai_cache_path(r.image_path, out_dir);
    if (!force && fs::exists(target)) {
      ++skipped;
      continue;
    }
    ImageTensor img;
    try {
      img = load_image(r.image_path);
    } catch (const std::exception& e) {
      std::cerr << "error: cannot read " << r.image_path << ": " << e.what() << '\n';
      return 1;
    }
    if (!target.parent_path().empty()) fs::create_directories(target.parent_path());
    save_image(target, make_eai(img, CameraResponseParams{}));
    ++written;
  }
  std::cout << "wrote " << written << " EAI file(s), skipped " << skipped << " existing\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nightiq: blind quality assessment of night-time images"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  GlobalOptions global;
  app.add_option("--config", global.config_path, "Training config file (key = value lines)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", global.seed, "RNG seed (overrides the config file; default 0)");
  app.add_option("--input-size", global.input_size,
                 "Network input size HxW, e.g. 64x64 (default 512x512 or config value)");

  // prepare-eai
  auto* prep = app.add_subcommand("prepare-eai", "Synthesize and cache exposure-adjusted images");
  std::string prep_manifest;
  std::string prep_out;
  bool prep_force = false;
  prep->add_option("--manifest", prep_manifest, "Dataset manifest CSV")->required();
  prep->add_option("--out-dir", prep_out, "EAI cache directory (default: next to each image)");
  prep->add_flag("--force", prep_force, "Rewrite existing cache files");

  // train
  auto* tr = app.add_subcommand("train", "Train on the selected folds of a manifest");
  std::string tr_manifest;
  std::string tr_folds;
  std::string tr_out = "model.ckpt";
  std::string tr_log = "loss_log.csv";
  int tr_k = 5;
  std::uint64_t tr_fold_seed = 0;
  TrainOverrides tr_over;
  tr->add_option("--manifest", tr_manifest, "Dataset manifest CSV")->required();
  tr->add_option("--folds", tr_folds, "Comma-separated training fold ids (default: all images)");
  tr->add_option("--k", tr_k, "Number of folds used to interpret --folds");
  tr->add_option("--fold-seed", tr_fold_seed, "Seed of the content-to-fold assignment");
  tr->add_option("--out", tr_out, "Checkpoint output path");
  tr->add_option("--log", tr_log, "Per-epoch loss log CSV");
  tr->add_option("--epochs", tr_over.epochs, "Override epochs (default 100 or config value)");
  tr->add_option("--batch-size", tr_over.batch_size, "Override batch size (default 16)");
  tr->add_option("--lr", tr_over.learning_rate, "Override learning rate (default 3e-5)");

  // predict
  auto* pr = app.add_subcommand("predict", "Score images with a trained checkpoint");
  std::string pr_ckpt;
  std::vector<std::string> pr_images;
  pr->add_option("--checkpoint", pr_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  pr->add_option("--image", pr_images, "Image path (repeatable)")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Compute SRCC/KRCC/PLCC/RMSE on a test manifest");
  std::string ev_ckpt;
  std::string ev_manifest;
  std::string ev_train;
  std::string ev_test;
  std::string ev_out = "eval_out";
  TrainOverrides ev_over;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint to evaluate (with --manifest)");
  ev->add_option("--manifest", ev_manifest, "Test manifest for --checkpoint");
  ev->add_option("--train", ev_train, "Cross-dataset mode: manifest to train on");
  ev->add_option("--test", ev_test, "Cross-dataset mode: manifest to test on");
  ev->add_option("--out-dir", ev_out, "Directory for report.csv, scatter.csv, scatter.png");
  ev->add_option("--epochs", ev_over.epochs, "Override epochs in cross-dataset mode");
  ev->add_option("--batch-size", ev_over.batch_size, "Override batch size in cross-dataset mode");
  ev->add_option("--lr", ev_over.learning_rate, "Override learning rate in cross-dataset mode");

  // crossval
  auto* cv = app.add_subcommand("crossval", "Content-disjoint k-fold cross-validation");
  std::string cv_manifest;
  std::string cv_out = "crossval_out";
  int cv_k = 5;
  std::uint64_t cv_fold_seed = 0;
  TrainOverrides cv_over;
  cv->add_option("--manifest", cv_manifest, "Dataset manifest CSV")->required();
  cv->add_option("--k", cv_k, "Number of folds");
  cv->add_option("--fold-seed", cv_fold_seed, "Seed of the content-to-fold assignment");
  cv->add_option("--out-dir", cv_out, "Directory for per-fold and averaged reports");
  cv->add_option("--epochs", cv_over.epochs, "Override epochs");
  cv->add_option("--batch-size", cv_over.batch_size, "Override batch size");
  cv->add_option("--lr", cv_over.learning_rate, "Override learning rate");

  // rank-acc
  auto* ra = app.add_subcommand("rank-acc", "Rank-n accuracy over groups sharing a content_id");
  std::string ra_ckpt;
  std::string ra_manifest;
  std::vector<int> ra_n{1, 2, 3};
  ra->add_option("--checkpoint", ra_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ra->add_option("--manifest", ra_manifest, "Manifest; each content_id forms one group")->required();
  ra->add_option("--n", ra_n, "Rank thresholds")->delimiter(',');

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Compare backprop with central finite differences");
  std::string gc_component = "total";
  int gc_coords = 3;
  gc->add_option("--component", gc_component, "decomposition, feature, head or total")
      ->check(CLI::IsMember({"decomposition", "feature", "head", "total"}));
  gc->add_option("--coords", gc_coords, "Sampled coordinates per parameter tensor");

  // decompose
  auto* de = app.add_subcommand("decompose", "Write reflectance and illumination maps");
  std::string de_ckpt;
  std::string de_image;
  std::string de_out = ".";
  de->add_option("--checkpoint", de_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  de->add_option("--image", de_image, "Input image")->required()->check(CLI::ExistingFile);
  de->add_option("--out-dir", de_out, "Output directory for <stem>.R.png and <stem>.L.png");

  // tune-demo
  auto* tu = app.add_subcommand("tune-demo", "Quality surface of an enhancer over (g, l)");
  std::string tu_ckpt;
  std::string tu_image;
  std::string tu_g = "0.2:1.0";
  std::string tu_l = "0:0.4";
  int tu_steps = 5;
  std::string tu_cmd;
  std::string tu_out = "tune_out";
  tu->add_option("--checkpoint", tu_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  tu->add_option("--image", tu_image, "Night-time input image")->required()->check(CLI::ExistingFile);
  tu->add_option("--g-range", tu_g, "g range lo:hi");
  tu->add_option("--l-range", tu_l, "l range lo:hi");
  tu->add_option("--steps", tu_steps, "Grid points per axis");
  tu->add_option("--enhancer-cmd", tu_cmd,
                 "External enhancer template using {g} {l} {in} {out} (default: built-in)");
  tu->add_option("--out-dir", tu_out, "Directory for surface.csv and heatmap.png");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prep->parsed()) return run_prepare_eai(prep_manifest, prep_out, prep_force);

    if (tr->parsed()) {
      const TrainConfig cfg = resolve_config(global, tr_over);
      const DatasetManifest m = load_manifest(tr_manifest);
      std::vector<SampleRecord> records;
      if (tr_folds.empty()) {
        records = m.records;
      } else {
        const FoldPlan plan = make_folds(m, tr_k, tr_fold_seed);
        for (int f : parse_folds(tr_folds)) {
          if (f < 1 || f > tr_k) throw std::invalid_argument("fold id out of range: " + std::to_string(f));
          const auto idx = plan.indices_in(m, f);
          const auto sel = select_records(m, idx);
          records.insert(records.end(), sel.begin(), sel.end());
        }
      }
      const TrainResult res = train(records, cfg, progress_hooks(cfg.epochs));
      save_checkpoint(res.checkpoint, tr_out);
      write_loss_log(tr_log, res.log);
      std::cout << "checkpoint " << tr_out << " (best epoch " << res.best_epoch << "), loss log "
                << tr_log << '\n';
      return 0;
    }

    if (pr->parsed()) {
      const Predictor predictor(load_checkpoint(pr_ckpt));
      std::cout << std::setprecision(8);
      for (const auto& img : pr_images) std::cout << img << ' ' << predictor.predict(fs::path(img)) << '\n';
      return 0;
    }

    if (ev->parsed()) {
      const bool single = !ev_ckpt.empty() || !ev_manifest.empty();
      const bool cross = !ev_train.empty() || !ev_test.empty();
      if (single == cross || (single && (ev_ckpt.empty() || ev_manifest.empty())) ||
          (cross && (ev_train.empty() || ev_test.empty()))) {
        throw std::invalid_argument("evaluate needs either --checkpoint with --manifest, or --train with --test");
      }
      ModelCheckpoint ck;
      std::vector<SampleRecord> test;
      if (single) {
        ck = load_checkpoint(ev_ckpt);
        test = load_manifest(ev_manifest).records;
      } else {
        const TrainConfig cfg = resolve_config(global, ev_over);
        ck = train(load_manifest(ev_train).records, cfg, progress_hooks(cfg.epochs)).checkpoint;
        test = load_manifest(ev_test).records;
      }
      const Predictor predictor(ck);
      const Predictions p = predict_records(predictor, test);
      print_fit_outputs(ev_out, p, evaluate_criteria(p.predicted, p.mos));
      return 0;
    }

    if (cv->parsed()) {
      const TrainConfig cfg = resolve_config(global, cv_over);
      const DatasetManifest m = load_manifest(cv_manifest);
      const CrossvalResult res = crossval(m, cfg, cv_k, cv_fold_seed, progress_hooks(cfg.epochs));
      fs::create_directories(cv_out);
      std::vector<CriteriaReport> reports;
      for (const auto& f : res.folds) {
        reports.push_back(f.report);
        const std::string tag = "fold" + std::to_string(f.fold);
        write_scatter_csv(fs::path(cv_out) / (tag + "_scatter.csv"), f.predictions);
        write_loss_log(fs::path(cv_out) / (tag + "_loss_log.csv"), f.loss_log);
      }
      write_report_csv(fs::path(cv_out) / "report.csv", res.mean, reports);
      std::cout << format_report_table(res.mean, reports);
      return 0;
    }

    if (ra->parsed()) {
      const Predictor predictor(load_checkpoint(ra_ckpt));
      const auto records = load_manifest(ra_manifest).records;
      const auto groups = group_by_content(predict_records(predictor, records), records);
      for (int n : ra_n) {
        std::cout << "rank-" << n << " " << std::setprecision(6) << rank_n_accuracy(groups, n) << '\n';
      }
      return 0;
    }

    if (gc->parsed()) {
      const std::uint64_t seed = global.seed.value_or(0);
      const GradcheckReport r = gradcheck(gc_component, seed, gc_coords);
      const bool pass = r.max_relative_error < 1e-3;
      std::cout << "component " << r.component << "\nstep " << r.step << "\nchecked "
                << r.coordinates_checked << "\nskipped " << r.coordinates_skipped
                << "\nmax_relative_error " << std::setprecision(6) << r.max_relative_error
                << "\nworst " << r.worst_parameter << '\n'
                << (pass ? "PASS" : "FAIL") << '\n';
      return pass ? 0 : 1;
    }

    if (de->parsed()) {
      const Predictor predictor(load_checkpoint(de_ckpt));
      const ImageTensor img = predictor.prepare(load_image(de_image));
      const DecompositionOutput d = predictor.decompose(img);
      fs::create_directories(de_out);
      const std::string stem = fs::path(de_image).stem().string();
      const fs::path rp = fs::path(de_out) / (stem + ".R.png");
      const fs::path lp = fs::path(de_out) / (stem + ".L.png");
      save_image(rp, d.reflectance);
      save_image(lp, d.illumination);
      std::cout << rp.string() << '\n' << lp.string() << '\n';
      return 0;
    }

    if (tu->parsed()) {
      const Predictor predictor(load_checkpoint(tu_ckpt));
      TuneGrid grid;
      std::tie(grid.g_min, grid.g_max) = parse_range(tu_g, "--g-range");
      std::tie(grid.l_min, grid.l_max) = parse_range(tu_l, "--l-range");
      grid.g_steps = tu_steps;
      grid.l_steps = tu_steps;
      std::unique_ptr<Enhancer> enhancer;
      if (tu_cmd.empty()) enhancer = std::make_unique<IlluminationGammaEnhancer>();
      else enhancer = std::make_unique<CommandEnhancer>(tu_cmd);
      const TuneSurface s =
          tune_surface(load_image(tu_image), *enhancer, grid,
                       [&predictor](const ImageTensor& im) { return predictor.predict(im); });
      fs::create_directories(tu_out);
      std::ofstream csv(fs::path(tu_out) / "surface.csv");
      csv << std::setprecision(10) << "g,l,score\n";
      for (std::size_t i = 0; i < s.g_values.size(); ++i)
        for (std::size_t j = 0; j < s.l_values.size(); ++j)
          csv << s.g_values[i] << ',' << s.l_values[j] << ',' << s.scores[i * s.l_values.size() + j] << '\n';
      render_heatmap_png(fs::path(tu_out) / "heatmap.png", s.scores,
                         static_cast<int>(s.g_values.size()), static_cast<int>(s.l_values.size()));
      std::cout << "argmax g=" << s.best_g << " l=" << s.best_l << " score=" << s.best_score << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

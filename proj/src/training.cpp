#include "nightiq/training.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace nightiq {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

ImageSize parse_size(const std::string& key, const std::string& v) {
  const auto sep = v.find_first_of("x,");
  if (sep == std::string::npos) {
    const int s = parse_int<int>(key, v);
    return {s, s};
  }
  return {parse_int<int>(key, trim(v.substr(0, sep))), parse_int<int>(key, trim(v.substr(sep + 1)))};
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Tensor stack(const std::vector<ImageTensor>& images) {
  const Shape s = images.front().tensor().shape();
  Tensor out(Shape{static_cast<int>(images.size()), s.c, s.h, s.w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& t = images[i].tensor();
    if (t.shape() != s) throw std::invalid_argument("batch images differ in shape");
    std::copy(t.data(), t.data() + t.size(), out.data() + i * s.size());
  }
  return out;
}

// One pass over [night; exposed] so both halves see the same normalization.
std::pair<DecompositionVars, DecompositionVars> decompose_pair(const DecompositionNet& net,
                                                              const ag::Var& night,
                                                              const ag::Var& exposed,
                                                              ag::NormMode mode) {
  const std::array<ag::Var, 2> parts{night, exposed};
  const DecompositionVars joint = net.forward(ag::concat_batch(parts), mode);
  const int n = night.shape().n;
  const int m = exposed.shape().n;
  return {{ag::slice_batch(joint.reflectance, 0, n), ag::slice_batch(joint.illumination, 0, n)},
          {ag::slice_batch(joint.reflectance, n, m), ag::slice_batch(joint.illumination, n, m)}};
}

}  // namespace

// ---- config ----

void TrainConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (input_size.height < 16 || input_size.width < 16 || input_size.height % 8 != 0 ||
      input_size.width % 8 != 0) {
    throw ConfigError("input_size must be >= 16 and divisible by 8");
  }
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) ||
      !(adam_eps > 0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
  if (!(penalty_c > 0)) throw ConfigError("penalty_c must be > 0");
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "lambda1") lambda1 = parse_double(key, value);
  else if (key == "lambda2") lambda2 = parse_double(key, value);
  else if (key == "lambda3") lambda3 = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_int<int>(key, value);
  else if (key == "epochs") epochs = parse_int<int>(key, value);
  else if (key == "learning_rate") learning_rate = parse_double(key, value);
  else if (key == "input_size") input_size = parse_size(key, value);
  else if (key == "seed") seed = parse_int<std::uint64_t>(key, value);
  else if (key == "adam_beta1") adam_beta1 = parse_double(key, value);
  else if (key == "adam_beta2") adam_beta2 = parse_double(key, value);
  else if (key == "adam_eps") adam_eps = parse_double(key, value);
  else if (key == "penalty_c") penalty_c = parse_double(key, value);
  else if (key == "eai_dir") eai_dir = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "lambda1 = " << format_double(lambda1) << '\n'
     << "lambda2 = " << format_double(lambda2) << '\n'
     << "lambda3 = " << format_double(lambda3) << '\n'
     << "batch_size = " << batch_size << '\n'
     << "epochs = " << epochs << '\n'
     << "learning_rate = " << format_double(learning_rate) << '\n'
     << "input_size = " << input_size.height << 'x' << input_size.width << '\n'
     << "seed = " << seed << '\n'
     << "adam_beta1 = " << format_double(adam_beta1) << '\n'
     << "adam_beta2 = " << format_double(adam_beta2) << '\n'
     << "adam_eps = " << format_double(adam_eps) << '\n'
     << "penalty_c = " << format_double(penalty_c) << '\n'
     << "eai_dir = " << eai_dir << '\n';
  return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text, TrainConfig base) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    base.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return base;
}

TrainConfig TrainConfig::from_text(const std::string& text) { return from_text(text, {}); }

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return TrainConfig::from_text(ss.str(), std::move(base));
}

// ---- model ----

QualityModel::QualityModel(std::uint64_t seed) : QualityModel(seed, Rng(seed)) {}

QualityModel::QualityModel(std::uint64_t /*seed*/, Rng rng)
    : decomposition_(store_, "decomposition", rng),
      encoder_r_(store_, "encoder_r", 3, rng),
      encoder_l_(store_, "encoder_l", 1, rng),
      decoder_r_(store_, "decoder_r", 3, rng),
      decoder_l_(store_, "decoder_l", 1, rng),
      head_(store_, "head", rng) {}

QualityModel::Forward QualityModel::forward(const ag::Var& night, ag::NormMode mode,
                                            bool reconstruct) const {
  return forward(decomposition_.forward(night, mode), mode, reconstruct);
}

QualityModel::Forward QualityModel::forward(DecompositionVars night, ag::NormMode mode,
                                            bool reconstruct) const {
  Forward f;
  f.night = std::move(night);
  f.reflectance_features = encoder_r_.encode(f.night.reflectance, mode);
  f.illumination_features = encoder_l_.encode(f.night.illumination, mode);
  if (reconstruct) {
    f.reflectance_reconstruction = decoder_r_.decode(f.reflectance_features.levels[3], mode);
    f.illumination_reconstruction = decoder_l_.decode(f.illumination_features.levels[3], mode);
  }
  f.head = head_.fuse_and_predict(f.reflectance_features, f.illumination_features);
  return f;
}

// ---- losses ----

double total_loss(double idm, double feat, double quality, const TrainConfig& config) {
  if (idm < 0 || feat < 0 || quality < 0) {
    throw std::domain_error("negative loss component (idm " + format_double(idm) + ", feat " +
                            format_double(feat) + ", quality " + format_double(quality) + ")");
  }
  return config.lambda1 * idm + config.lambda2 * feat + config.lambda3 * quality;
}

LossGraph build_loss(const QualityModel& model, const ag::Var& night, const ag::Var& exposed,
                     const ag::Var& mos, const TrainConfig& config, ag::NormMode mode) {
  auto [dn, e] = decompose_pair(model.decomposition(), night, exposed, mode);
  const QualityModel::Forward f = model.forward(std::move(dn), mode, true);
  LossGraph g;
  g.idm = decomposition_loss(night, exposed, f.night, e, PenaltyParams{config.penalty_c});
  g.feat = feature_loss(f.night.reflectance, f.reflectance_reconstruction, f.night.illumination,
                        f.illumination_reconstruction, ColorLossParams{});
  g.quality = quality_loss(f.head.score, mos);
  total_loss(g.idm.total.item(), g.feat.item(), g.quality.item(), config);
  g.total = config.lambda1 * g.idm.total + config.lambda2 * g.feat + config.lambda3 * g.quality;
  return g;
}

// ---- training ----

TrainResult train(const std::vector<SampleRecord>& records, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  if (records.empty()) throw std::invalid_argument("empty training split");
  std::vector<std::filesystem::path> eai_paths;
  eai_paths.reserve(records.size());
  for (const auto& r : records) {
    auto p = eai_cache_path(r.image_path, config.eai_dir);
    if (!std::filesystem::exists(p)) {
      throw std::runtime_error("missing EAI cache " + p.string() + " for " + r.image_path +
                               " (run prepare-eai)");
    }
    eai_paths.push_back(std::move(p));
  }

  QualityModel model(config.seed);
  Adam adam(model.store(), AdamOptions{config.learning_rate, config.adam_beta1, config.adam_beta2,
                                       config.adam_eps});
  Rng order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  double best_total = std::numeric_limits<double>::infinity();
  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochLog acc{epoch};
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<ImageTensor> night_imgs, eai_imgs;
      Tensor mos(Shape{static_cast<int>(end - begin), 1, 1, 1});
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t k = order[i];
        night_imgs.push_back(load_image(records[k].image_path, config.input_size));
        eai_imgs.push_back(load_image(eai_paths[k], config.input_size));
        mos.data()[i - begin] = records[k].mos;
      }
      const ag::Var night = ag::Var::constant(stack(night_imgs));
      const ag::Var exposed = ag::Var::constant(stack(eai_imgs));

      model.store().zero_grad();
      const LossGraph g = build_loss(model, night, exposed, ag::Var::constant(mos), config,
                                     ag::NormMode::kTrain);
      const EpochLog step_log{epoch, g.idm.total.item(), g.feat.item(), g.quality.item(),
                              g.total.item()};
      ag::backward(g.total);
      adam.step();
      ++step;

      const double w = static_cast<double>(end - begin) / static_cast<double>(order.size());
      acc.idm += w * step_log.idm;
      acc.feat += w * step_log.feat;
      acc.quality += w * step_log.quality;
      acc.total += w * step_log.total;
      if (hooks.on_step) hooks.on_step(step, step_log);
    }
    result.log.push_back(acc);
    if (hooks.on_epoch) hooks.on_epoch(acc);
    if (acc.total < best_total) {
      best_total = acc.total;
      result.best_epoch = epoch;
      result.checkpoint = make_checkpoint(model, config);
    }
  }
  return result;
}

void write_loss_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss log " + path.string());
  out << "epoch,idm,feat,quality,total\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.idm) << ',' << format_double(e.feat) << ','
        << format_double(e.quality) << ',' << format_double(e.total) << '\n';
  }
}

ModelCheckpoint make_checkpoint(const QualityModel& model, const TrainConfig& config) {
  ModelCheckpoint ck;
  ck.parameter_map = model.store().snapshot();
  ck.config_snapshot = config.to_text();
  ck.rng_seed = config.seed;
  return ck;
}

// ---- inference ----

Predictor::Predictor(const ModelCheckpoint& checkpoint)
    : config_(TrainConfig::from_text(checkpoint.config_snapshot)),
      model_(std::make_unique<QualityModel>(checkpoint.rng_seed)) {
  try {
    model_->store().restore(checkpoint.parameter_map);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint does not match the architecture: ") + e.what());
  }
}

ImageTensor Predictor::prepare(const ImageTensor& image) const {
  if (image.channels() != 3) throw ImageError("prediction expects an RGB image");
  if (image.height() == config_.input_size.height && image.width() == config_.input_size.width) {
    return image;
  }
  const ag::Var r = ag::resize_bilinear(ag::Var::constant(image.tensor()), config_.input_size.height,
                                        config_.input_size.width);
  return ImageTensor::clamped(r.value());
}

double Predictor::predict(const ImageTensor& image) const {
  ag::NoGradGuard guard;
  const ImageTensor x = prepare(image);
  const auto f = model_->forward(ag::Var::constant(x.tensor()), ag::NormMode::kEval, false);
  return f.head.score.item();
}

double Predictor::predict(const std::filesystem::path& image_path) const {
  return predict(load_image(image_path, config_.input_size));
}

DecompositionOutput Predictor::decompose(const ImageTensor& image) const {
  return nightiq::decompose(image, model_->decomposition());
}

double predict(const ModelCheckpoint& checkpoint, const std::filesystem::path& image_path) {
  return Predictor(checkpoint).predict(image_path);
}

// ---- gradient check ----

namespace {

Tensor uniform_tensor(Shape s, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = d(rng);
  return t;
}

}  // namespace

GradcheckReport gradcheck(const std::string& component, std::uint64_t seed,
                          int coordinates_per_tensor) {
  static const std::vector<std::string> kComponents{"decomposition", "feature", "head", "total"};
  if (std::find(kComponents.begin(), kComponents.end(), component) == kComponents.end()) {
    throw std::invalid_argument("unknown gradcheck component '" + component +
                                "' (expected decomposition, feature, head or total)");
  }
  constexpr int kBatch = 2;
  constexpr int kSide = 16;
  constexpr double kStep = 1e-4;
  constexpr double kConvergenceTolerance = 1e-4;

  QualityModel model(seed);
  Rng rng(seed + 1);
  const TrainConfig config;
  const auto mode = ag::NormMode::kTrainNoUpdate;

  const Tensor night_t = uniform_tensor(Shape{kBatch, 3, kSide, kSide}, 0.02, 0.5, rng);
  Tensor exposed_t = night_t;
  for (int n = 0; n < kBatch; ++n) {
    Tensor one(Shape{1, 3, kSide, kSide});
    std::copy(night_t.data() + n * one.size(), night_t.data() + (n + 1) * one.size(), one.data());
    const ImageTensor e = make_eai(ImageTensor::from_tensor(one), CameraResponseParams{});
    std::copy(e.tensor().data(), e.tensor().data() + one.size(), exposed_t.data() + n * one.size());
  }
  const Tensor mos_t = uniform_tensor(Shape{kBatch, 1, 1, 1}, 0.0, 1.0, rng);
  const Tensor r_t = uniform_tensor(Shape{kBatch, 3, kSide, kSide}, 0.0, 1.0, rng);
  const Tensor l_t = uniform_tensor(Shape{kBatch, 1, kSide, kSide}, 0.0, 1.0, rng);
  FeaturePyramid pr, pl;
  for (int i = 0; i < 4; ++i) {
    const int side = kSide >> i;
    pr.levels[i] = ag::Var::constant(
        uniform_tensor(Shape{kBatch, kPyramidWidths[i], side, side}, -1.0, 1.0, rng));
    pl.levels[i] = ag::Var::constant(
        uniform_tensor(Shape{kBatch, kPyramidWidths[i], side, side}, -1.0, 1.0, rng));
  }

  const ag::Var night = ag::Var::constant(night_t);
  const ag::Var exposed = ag::Var::constant(exposed_t);
  const ag::Var mos = ag::Var::constant(mos_t);
  const ag::Var r_in = ag::Var::constant(r_t);
  const ag::Var l_in = ag::Var::constant(l_t);

  std::vector<std::string> prefixes;
  std::function<ag::Var()> loss;
  if (component == "decomposition") {
    prefixes = {"decomposition."};
    loss = [&] {
      const auto [dn, de] = decompose_pair(model.decomposition(), night, exposed, mode);
      return decomposition_loss(night, exposed, dn, de, PenaltyParams{config.penalty_c}).total;
    };
  } else if (component == "feature") {
    prefixes = {"encoder_r.", "encoder_l.", "decoder_r.", "decoder_l."};
    loss = [&] {
      const auto fr = model.reflectance_encoder().encode(r_in, mode);
      const auto fl = model.illumination_encoder().encode(l_in, mode);
      const auto r_hat = model.reflectance_decoder().decode(fr.levels[3], mode);
      const auto l_hat = model.illumination_decoder().decode(fl.levels[3], mode);
      return feature_loss(r_in, r_hat, l_in, l_hat, ColorLossParams{});
    };
  } else if (component == "head") {
    prefixes = {"head."};
    loss = [&] { return quality_loss(model.head().fuse_and_predict(pr, pl).score, mos); };
  } else {
    prefixes = {""};
    loss = [&] { return build_loss(model, night, exposed, mos, config, mode).total; };
  }

  std::vector<std::pair<std::string, ag::Var>> params;
  for (const auto& [name, var] : model.store().parameters()) {
    for (const auto& p : prefixes) {
      if (name.rfind(p, 0) == 0) {
        params.emplace_back(name, var);
        break;
      }
    }
  }

  model.store().zero_grad();
  std::uint64_t base_fingerprint = 0;
  {
    ag::KinkProbe probe;
    ag::backward(loss());
    base_fingerprint = probe.fingerprint();
  }
  auto probe_loss = [&](std::uint64_t& fingerprint) {
    ag::NoGradGuard guard;
    ag::KinkProbe probe;
    const double v = loss().item();
    fingerprint = probe.fingerprint();
    return v;
  };

  GradcheckReport report;
  report.component = component;
  report.step = kStep;
  for (auto& [name, var] : params) {
    const std::size_t size = var.value().size();
    std::uniform_int_distribution<std::size_t> pick(0, size - 1);
    const int count = static_cast<int>(std::min<std::size_t>(size, coordinates_per_tensor));
    for (int k = 0; k < count; ++k) {
      const std::size_t idx = pick(rng);
      const double analytic = var.grad().empty() ? 0.0 : var.grad().data()[idx];
      double& w = var.value_mut().data()[idx];
      const double saved = w;
      std::uint64_t fp_plus = 0;
      std::uint64_t fp_minus = 0;
      w = saved + kStep;
      const double plus = probe_loss(fp_plus);
      w = saved - kStep;
      const double minus = probe_loss(fp_minus);
      w = saved;
      if (fp_plus != base_fingerprint || fp_minus != base_fingerprint) {
        ++report.coordinates_skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * kStep);
      // The half-step quotient must agree, otherwise the probe is outside the
      // range where the function is locally quadratic (e.g. sqrt near zero).
      std::uint64_t fp_unused = 0;
      w = saved + 0.5 * kStep;
      const double half_plus = probe_loss(fp_unused);
      w = saved - 0.5 * kStep;
      const double half_minus = probe_loss(fp_unused);
      w = saved;
      const double half = (half_plus - half_minus) / kStep;
      if (std::abs(numeric - half) >
          kConvergenceTolerance * std::max({std::abs(numeric), std::abs(half), 1e-6})) {
        ++report.coordinates_skipped;
        continue;
      }
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = name + "[" + std::to_string(idx) + "]";
      }
      ++report.coordinates_checked;
    }
  }
  return report;
}

}  // namespace nightiq

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

namespace oracle {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

Tensor conv2d_naive(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  const Shape s = x.shape();
  const int cout = weight.shape().n;
  const int k = weight.shape().h;
  const int pad = k / 2;
  Tensor out(Shape{s.n, cout, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int o = 0; o < cout; ++o)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int ci = 0; ci < s.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = y + ky - pad;
                const int sx = xx + kx - pad;
                if (sy < 0 || sy >= s.h || sx < 0 || sx >= s.w) continue;
                acc += weight.at(o, ci, ky, kx) * x.at(n, ci, sy, sx);
              }
          out.at(n, o, y, xx) = acc;
        }
  return out;
}

std::vector<double> bilinear_pool_naive(const Tensor& a, const Tensor& b, int sample) {
  const int ca = a.shape().c;
  const int cb = b.shape().c;
  const int h = a.shape().h;
  const int w = a.shape().w;
  std::vector<double> out(static_cast<std::size_t>(ca) * cb, 0.0);
  for (int j = 0; j < ca; ++j)
    for (int k = 0; k < cb; ++k) {
      double acc = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) acc += a.at(sample, j, y, x) * b.at(sample, k, y, x);
      out[static_cast<std::size_t>(j) * cb + k] = acc / (h * w);
    }
  return out;
}

Tensor filter_dense_replicate(const Tensor& x, const std::vector<double>& kernel, int side) {
  const Shape s = x.shape();
  const int r = side / 2;
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          double acc = 0.0;
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              const int sy = std::clamp(y + dy, 0, s.h - 1);
              const int sx = std::clamp(xx + dx, 0, s.w - 1);
              acc += kernel[static_cast<std::size_t>(dy + r) * side + (dx + r)] * x.at(n, c, sy, sx);
            }
          out.at(n, c, y, xx) = acc;
        }
  return out;
}

double ssim_naive(const Tensor& a, const Tensor& b) {
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  std::vector<double> w(kWin * kWin);
  double total = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - kWin / 2;
      const double dx = j - kWin / 2;
      w[i * kWin + j] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      total += w[i * kWin + j];
    }
  for (double& v : w) v /= total;

  const Shape s = a.shape();
  double sum = 0.0;
  int count = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y + kWin <= s.h; ++y)
        for (int x = 0; x + kWin <= s.w; ++x) {
          double ma = 0, mb = 0;
          for (int i = 0; i < kWin; ++i)
            for (int j = 0; j < kWin; ++j) {
              ma += w[i * kWin + j] * a.at(n, c, y + i, x + j);
              mb += w[i * kWin + j] * b.at(n, c, y + i, x + j);
            }
          double va = 0, vb = 0, cov = 0;
          for (int i = 0; i < kWin; ++i)
            for (int j = 0; j < kWin; ++j) {
              const double da = a.at(n, c, y + i, x + j) - ma;
              const double db = b.at(n, c, y + i, x + j) - mb;
              va += w[i * kWin + j] * da * da;
              vb += w[i * kWin + j] * db * db;
              cov += w[i * kWin + j] * da * db;
            }
          sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
          ++count;
        }
  return sum / count;
}

Tensor spatial_gradient_naive(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          const double v = x.at(n, c, y, xx);
          const double right = x.at(n, c, y, std::min(xx + 1, s.w - 1));
          const double down = x.at(n, c, std::min(y + 1, s.h - 1), xx);
          out.at(n, c, y, xx) = std::abs(right - v) + std::abs(down - v);
        }
  return out;
}

namespace {

std::vector<double> count_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double u : v) {
      if (u < v[i]) ++less;
      if (u == v[i]) ++equal;
    }
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

double pearson_brute(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double srcc_brute(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson_brute(count_ranks(a), count_ranks(b));
}

double krcc_brute(const std::vector<double>& a, const std::vector<double>& b) {
  double concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if ((da > 0) == (db > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  return (concordant - discordant) /
         std::sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b));
}

double rmse_brute(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / a.size());
}

double central_difference(const std::function<double(const std::vector<double>&)>& f,
                          std::vector<double> x, std::size_t i, double step) {
  const double x0 = x[i];
  x[i] = x0 + step;
  const double up = f(x);
  x[i] = x0 - step;
  const double down = f(x);
  return (up - down) / (2 * step);
}

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = std::filesystem::temp_directory_path() /
          ("nightiq_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace oracle

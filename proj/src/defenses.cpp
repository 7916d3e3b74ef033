#include "daash/defenses.hpp"

#include "daash/error.hpp"
#include "daash/io.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace daash {
namespace {

constexpr std::array<int, 64> kLuminance = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24,  40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35,  55,  64,
    81, 104, 113, 92, 49, 64, 78, 87,  103, 121, 120, 101, 72, 92, 95, 98,  112, 100, 103, 99};

void require_image(const Tensor& x, const char* what) {
  if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected (N, C, H, W), got " + to_string(x.shape()));
}

using Block = Eigen::Matrix<double, 8, 8>;

Block dct_matrix() {
  Block d;
  for (int k = 0; k < 8; ++k)
    for (int n = 0; n < 8; ++n) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      d(k, n) = a * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    }
  return d;
}

Block quant_table(int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  Block q;
  for (int i = 0; i < 64; ++i) q(i / 8, i % 8) = std::clamp((kLuminance[i] * scale + 50) / 100, 1, 255);
  return q;
}

double plane_tv(const double* u, Index h, Index w) {
  double tv = 0.0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (x + 1 < w) tv += std::abs(u[y * w + x + 1] - u[y * w + x]);
      if (y + 1 < h) tv += std::abs(u[(y + 1) * w + x] - u[y * w + x]);
    }
  return tv;
}

// Projected gradient on the dual of the ROF problem for one plane. The
// primal iterate with the lowest objective is kept, starting from u = x, so
// the result never has larger total variation than the input.
void tv_plane(const double* x, double* out, Index h, Index w, double lambda, int iters) {
  const Index n = h * w;
  std::vector<double> ph(static_cast<std::size_t>(n), 0.0), pv(static_cast<std::size_t>(n), 0.0), u(x, x + n);
  auto objective = [&](const std::vector<double>& v) {
    double fid = 0.0;
    for (Index i = 0; i < n; ++i) fid += 0.5 * (v[i] - x[i]) * (v[i] - x[i]);
    return fid + lambda * plane_tv(v.data(), h, w);
  };
  std::vector<double> best(x, x + n), clipped(static_cast<std::size_t>(n));
  double best_f = objective(best);
  constexpr double tau = 1.0 / 8.0;
  for (int it = 0; it < iters; ++it) {
    for (Index y = 0; y < h; ++y)
      for (Index c = 0; c < w; ++c) {
        const Index i = y * w + c;
        if (c + 1 < w) ph[i] = std::clamp(ph[i] + tau * (u[i + 1] - u[i]), -lambda, lambda);
        if (y + 1 < h) pv[i] = std::clamp(pv[i] + tau * (u[i + w] - u[i]), -lambda, lambda);
      }
    // u = x - D^T p
    for (Index y = 0; y < h; ++y)
      for (Index c = 0; c < w; ++c) {
        const Index i = y * w + c;
        double dt = 0.0;
        if (c + 1 < w) dt -= ph[i];
        if (c > 0) dt += ph[i - 1];
        if (y + 1 < h) dt -= pv[i];
        if (y > 0) dt += pv[i - w];
        u[i] = x[i] - dt;
      }
    for (Index i = 0; i < n; ++i) clipped[i] = std::clamp(u[i], 0.0, 1.0);
    const double f = objective(clipped);
    if (f < best_f) {
      best_f = f;
      best = clipped;
    }
  }
  std::copy(best.begin(), best.end(), out);
}

}  // namespace

std::string defense_name(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::Jpeg: return "jpeg";
    case DefenseKind::Tvm: return "tvm";
    case DefenseKind::BitDepth: return "bitdepth";
    case DefenseKind::Nlm: return "nlm";
    case DefenseKind::Ensemble: return "ensemble";
  }
  return "unknown";
}

DefenseKind parse_defense_kind(const std::string& name) {
  for (auto k : {DefenseKind::Jpeg, DefenseKind::Tvm, DefenseKind::BitDepth, DefenseKind::Nlm, DefenseKind::Ensemble})
    if (defense_name(k) == name) return k;
  throw ConfigError("unknown defense '" + name + "'");
}

void DefenseSpec::validate() const {
  if (jpeg_quality < 1 || jpeg_quality > 100) throw ConfigError("jpeg quality must lie in [1, 100]");
  if (!(tv_weight >= 0.0) || tv_iterations < 0) throw ConfigError("tvm weight and iterations must be non-negative");
  if (bits < 1 || bits > 8) throw ConfigError("bit depth must lie in [1, 8]");
  if (!(nlm_h > 0.0)) throw ConfigError("nlm strength h must be positive");
  if (nlm_patch < 1 || nlm_patch % 2 == 0 || nlm_search < 1 || nlm_search % 2 == 0) {
    throw ConfigError("nlm patch and search windows must be odd and positive");
  }
}

std::string serialize(const DefenseSpec& s, const std::string& p) {
  std::ostringstream os;
  os << p << "kind=" << defense_name(s.kind) << '\n'
     << p << "jpeg_quality=" << s.jpeg_quality << '\n'
     << p << "tv_weight=" << format_double(s.tv_weight) << '\n'
     << p << "tv_iterations=" << s.tv_iterations << '\n'
     << p << "bits=" << s.bits << '\n'
     << p << "nlm_h=" << format_double(s.nlm_h) << '\n'
     << p << "nlm_patch=" << s.nlm_patch << '\n'
     << p << "nlm_search=" << s.nlm_search << '\n';
  return os.str();
}

DefenseSpec parse_defense_spec(const std::map<std::string, std::string>& kv, const std::string& p, DefenseKind kind) {
  DefenseSpec s;
  s.kind = kind;
  auto integer = [&](const char* key, int& out) {
    if (auto it = kv.find(p + key); it != kv.end()) out = static_cast<int>(parse_int(it->second, p + key));
  };
  auto num = [&](const char* key, double& out) {
    if (auto it = kv.find(p + key); it != kv.end()) out = parse_double(it->second, p + key);
  };
  integer("jpeg_quality", s.jpeg_quality);
  num("tv_weight", s.tv_weight);
  integer("tv_iterations", s.tv_iterations);
  integer("bits", s.bits);
  num("nlm_h", s.nlm_h);
  integer("nlm_patch", s.nlm_patch);
  integer("nlm_search", s.nlm_search);
  s.validate();
  return s;
}

Tensor bit_depth_reduce(const Tensor& x, int bits) {
  const double levels = std::ldexp(1.0, bits) - 1.0;
  return Tensor(x.shape(), ((x.array() * levels).round() / levels).max(0.0).min(1.0));
}

Tensor jpeg_quantize(const Tensor& x, int quality) {
  require_image(x, "jpeg");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const Block d = dct_matrix();
  const Block q = quant_table(quality);
  Tensor out(x.shape());
  Block b;
  for (Index p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * h * w;
    for (Index by = 0; by < h; by += 8)
      for (Index bx = 0; bx < w; bx += 8) {
        // Edge replication for partial blocks.
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) {
            const Index yy = std::min(by + i, h - 1), xx = std::min(bx + j, w - 1);
            b(i, j) = 255.0 * src[yy * w + xx] - 128.0;
          }
        Block coef = d * b * d.transpose();
        coef = (coef.array() / q.array()).round() * q.array();
        b = d.transpose() * coef * d;
        for (int i = 0; i < 8 && by + i < h; ++i)
          for (int j = 0; j < 8 && bx + j < w; ++j)
            dst[(by + i) * w + bx + j] = std::clamp((b(i, j) + 128.0) / 255.0, 0.0, 1.0);
      }
  }
  return out;
}

Tensor tv_minimize(const Tensor& x, double weight, int iterations) {
  require_image(x, "tvm");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(x.shape());
  for (Index p = 0; p < planes; ++p) tv_plane(x.data() + p * h * w, out.data() + p * h * w, h, w, weight, iterations);
  return out;
}

Tensor nl_means(const Tensor& x, double h_strength, int patch, int search) {
  require_image(x, "nlm");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int pr = patch / 2, sr = search / 2;
  std::vector<double> kernel;
  double ksum = 0.0;
  for (int dy = -pr; dy <= pr; ++dy)
    for (int dx = -pr; dx <= pr; ++dx) {
      kernel.push_back(std::exp(-0.5 * (dy * dy + dx * dx)));
      ksum += kernel.back();
    }
  for (double& k : kernel) k /= ksum;
  auto reflect = [](Index i, Index n) {
    if (n == 1) return Index{0};
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  const double inv_h2 = 1.0 / (h_strength * h_strength);
  Tensor out(x.shape());
  for (Index p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    auto at = [&](Index y, Index c) { return src[reflect(y, h) * w + reflect(c, w)]; };
    for (Index y = 0; y < h; ++y)
      for (Index c = 0; c < w; ++c) {
        double wsum = 0.0, acc = 0.0;
        for (int sy = -sr; sy <= sr; ++sy)
          for (int sx = -sr; sx <= sr; ++sx) {
            double d2 = 0.0;
            std::size_t k = 0;
            for (int dy = -pr; dy <= pr; ++dy)
              for (int dx = -pr; dx <= pr; ++dx, ++k) {
                const double diff = at(y + dy, c + dx) - at(y + sy + dy, c + sx + dx);
                d2 += kernel[k] * diff * diff;
              }
            const double wt = std::exp(-d2 * inv_h2);
            wsum += wt;
            acc += wt * at(y + sy, c + sx);
          }
        out.data()[p * h * w + y * w + c] = std::clamp(acc / wsum, 0.0, 1.0);
      }
  }
  return out;
}

double total_variation(const Tensor& x) {
  require_image(x, "total_variation");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  double tv = 0.0;
  for (Index p = 0; p < planes; ++p) tv += plane_tv(x.data() + p * h * w, h, w);
  return tv;
}

Tensor apply_defense(const Tensor& x, const DefenseSpec& spec) {
  spec.validate();
  require_image(x, "defense");
  if (x.size() > 0 && (x.array().minCoeff() < 0.0 || x.array().maxCoeff() > 1.0)) {
    throw ConfigError("defense input must lie in [0, 1]");
  }
  switch (spec.kind) {
    case DefenseKind::BitDepth: return bit_depth_reduce(x, spec.bits);
    case DefenseKind::Jpeg: return jpeg_quantize(x, spec.jpeg_quality);
    case DefenseKind::Tvm: return tv_minimize(x, spec.tv_weight, spec.tv_iterations);
    case DefenseKind::Nlm: return nl_means(x, spec.nlm_h, spec.nlm_patch, spec.nlm_search);
    case DefenseKind::Ensemble: {
      Tensor y = bit_depth_reduce(x, spec.bits);
      y = jpeg_quantize(y, spec.jpeg_quality);
      y = tv_minimize(y, spec.tv_weight, spec.tv_iterations);
      return nl_means(y, spec.nlm_h, spec.nlm_patch, spec.nlm_search);
    }
  }
  throw ConfigError("unknown defense kind");
}

}  // namespace daash

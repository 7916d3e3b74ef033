#include "daash/attacks.hpp"

#include "daash/adam.hpp"
#include "daash/error.hpp"
#include "daash/io.hpp"
#include "daash/rng.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace daash {
namespace {

struct Named {
  AttackKind kind;
  const char* name;
};
constexpr Named kNames[] = {
    {AttackKind::None, "none"},     {AttackKind::Fgsm, "fgsm"},     {AttackKind::Bim, "bim"},
    {AttackKind::Pgd, "pgd"},       {AttackKind::MiFgsm, "mifgsm"}, {AttackKind::NiFgsm, "nifgsm"},
    {AttackKind::DiFgsm, "difgsm"}, {AttackKind::TiFgsm, "tifgsm"}, {AttackKind::CwL2, "cw_l2"},
};

Tensor gradient(const TrainedModel& model, const Tensor& x, std::span<const int> y, AttackKind kind) {
  try {
    Tensor g = loss_input_gradient(model, x, y).grad;
    if (!g.all_finite()) throw NumericError("non-finite gradient");
    return g;
  } catch (const NumericError& e) {
    throw NumericError(attack_name(kind) + ": " + e.what());
  }
}

Tensor sign_of(const Tensor& t) { return Tensor(t.shape(), t.array().sign()); }

// Divides each sample's gradient by its L1 norm.
Tensor l1_normalised(const Tensor& g) {
  Tensor out = g;
  const Index n = g.dim(0), rs = g.row_size();
  for (Index i = 0; i < n; ++i) {
    auto seg = out.array().segment(i * rs, rs);
    const double norm = seg.abs().sum();
    if (norm > 0.0) seg /= norm;
  }
  return out;
}

Tensor blur(const Tensor& g, int k) {
  if (k <= 1) return g;
  Graph gr;
  return gaussian_blur(gr.constant(g), k, static_cast<double>(k - 1) / 6.0).value();
}

// Random nearest-neighbour shrink followed by zero padding back to full
// size. src[i] is the flat input index feeding output i, or -1 for padding.
std::vector<Index> diversity_map(Rng& rng, Index c, Index h, Index w, double resize_min) {
  const Index side_h = h - static_cast<Index>(rng.below(static_cast<std::uint64_t>(h - std::ceil(resize_min * h)) + 1));
  const Index side_w = std::max<Index>(1, side_h * w / h);
  const Index top = static_cast<Index>(rng.below(static_cast<std::uint64_t>(h - side_h + 1)));
  const Index left = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w - side_w + 1)));
  std::vector<Index> src(static_cast<std::size_t>(c * h * w), -1);
  for (Index ch = 0; ch < c; ++ch)
    for (Index oy = top; oy < top + side_h; ++oy)
      for (Index ox = left; ox < left + side_w; ++ox) {
        const Index sy = (oy - top) * h / side_h;
        const Index sx = (ox - left) * w / side_w;
        src[static_cast<std::size_t>((ch * h + oy) * w + ox)] = (ch * h + sy) * w + sx;
      }
  return src;
}

Tensor diverse_gradient(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                        Rng& rng) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), rs = c * h * w;
  std::vector<std::vector<Index>> maps(static_cast<std::size_t>(n));
  Tensor transformed = x;
  for (Index i = 0; i < n; ++i) {
    if (rng.uniform() >= spec.diversity_prob) continue;
    auto& m = maps[static_cast<std::size_t>(i)];
    m = diversity_map(rng, c, h, w, spec.resize_min);
    for (Index k = 0; k < rs; ++k) {
      const Index s = m[static_cast<std::size_t>(k)];
      transformed[i * rs + k] = s < 0 ? 0.0 : x[i * rs + s];
    }
  }
  Tensor gt = gradient(model, transformed, y, spec.kind);
  Tensor g(x.shape(), 0.0);
  for (Index i = 0; i < n; ++i) {
    const auto& m = maps[static_cast<std::size_t>(i)];
    if (m.empty()) {
      g.array().segment(i * rs, rs) = gt.array().segment(i * rs, rs);
      continue;
    }
    for (Index k = 0; k < rs; ++k) {
      const Index s = m[static_cast<std::size_t>(k)];
      if (s >= 0) g[i * rs + s] += gt[i * rs + k];
    }
  }
  return g;
}

Tensor iterative_linf(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  Rng rng(spec.seed);
  Tensor adv = x;
  if (spec.kind == AttackKind::Pgd) {
    Tensor start = x;
    for (Index i = 0; i < start.size(); ++i) start[i] += rng.uniform(-spec.eps, spec.eps);
    adv = project_linf(start, x, spec.eps);
  }
  Tensor momentum(x.shape(), 0.0);
  const bool uses_momentum = spec.kind == AttackKind::MiFgsm || spec.kind == AttackKind::NiFgsm;
  for (int t = 0; t < spec.steps; ++t) {
    Tensor g;
    switch (spec.kind) {
      case AttackKind::NiFgsm: {
        Tensor look(x.shape(), adv.array() + spec.step_size * spec.decay * momentum.array());
        g = gradient(model, look, y, spec.kind);
        break;
      }
      case AttackKind::DiFgsm:
        g = diverse_gradient(model, adv, y, spec, rng);
        break;
      default:
        g = gradient(model, adv, y, spec.kind);
    }
    if (spec.kind == AttackKind::TiFgsm) g = blur(g, spec.kernel);
    if (uses_momentum) {
      momentum.array() = spec.decay * momentum.array() + l1_normalised(g).array();
      g = momentum;
    }
    Tensor step(x.shape(), adv.array() + spec.step_size * sign_of(g).array());
    adv = project_linf(step, x, spec.eps);
  }
  return adv;
}

}  // namespace

std::string attack_name(AttackKind kind) {
  for (const auto& n : kNames)
    if (n.kind == kind) return n.name;
  return "unknown";
}

AttackKind parse_attack_kind(const std::string& name) {
  for (const auto& n : kNames)
    if (name == n.name) return n.kind;
  throw ConfigError("unknown attack kind '" + name + "'");
}

bool is_linf(AttackKind kind) { return kind != AttackKind::CwL2; }

void AttackSpec::validate() const {
  const std::string n = attack_name(kind);
  if (n == "unknown") throw ConfigError("unknown attack kind");
  if (!(eps >= 0.0) || eps > 1.0) throw ConfigError(n + ": eps must lie in [0, 1]");
  if (steps < 0) throw ConfigError(n + ": steps must be non-negative");
  if (steps > 0 && kind != AttackKind::CwL2 && kind != AttackKind::Fgsm && kind != AttackKind::None &&
      !(step_size > 0.0)) {
    throw ConfigError(n + ": step_size must be positive");
  }
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError(n + ": kernel size must be odd");
  if (!(diversity_prob >= 0.0 && diversity_prob <= 1.0)) throw ConfigError(n + ": diversity probability outside [0, 1]");
  if (!(resize_min > 0.0 && resize_min <= 1.0)) throw ConfigError(n + ": resize_min outside (0, 1]");
  if (!(decay >= 0.0)) throw ConfigError(n + ": decay must be non-negative");
  if (kind == AttackKind::CwL2 && (!(cw_c > 0.0) || !(cw_lr > 0.0) || !(cw_kappa >= 0.0))) {
    throw ConfigError(n + ": c and lr must be positive, kappa non-negative");
  }
}

AttackSpec default_attack(AttackKind kind) {
  AttackSpec s;
  s.kind = kind;
  switch (kind) {
    case AttackKind::None: s.steps = 0; break;
    case AttackKind::Fgsm: s.steps = 1; s.step_size = s.eps; break;
    case AttackKind::CwL2: s.steps = 50; break;
    default: break;
  }
  return s;
}

std::vector<AttackSpec> default_pool() {
  std::vector<AttackSpec> pool;
  for (const auto& n : kNames) pool.push_back(default_attack(n.kind));
  return pool;
}

std::string serialize(const AttackSpec& s, const std::string& p) {
  std::ostringstream os;
  os << p << "kind=" << attack_name(s.kind) << '\n'
     << p << "eps=" << format_double(s.eps) << '\n'
     << p << "steps=" << s.steps << '\n'
     << p << "step_size=" << format_double(s.step_size) << '\n'
     << p << "decay=" << format_double(s.decay) << '\n'
     << p << "diversity_prob=" << format_double(s.diversity_prob) << '\n'
     << p << "resize_min=" << format_double(s.resize_min) << '\n'
     << p << "kernel=" << s.kernel << '\n'
     << p << "cw_c=" << format_double(s.cw_c) << '\n'
     << p << "cw_kappa=" << format_double(s.cw_kappa) << '\n'
     << p << "cw_lr=" << format_double(s.cw_lr) << '\n'
     << p << "seed=" << s.seed << '\n';
  return os.str();
}

AttackSpec parse_attack_spec(const std::map<std::string, std::string>& kv, const std::string& p) {
  auto kind_it = kv.find(p + "kind");
  if (kind_it == kv.end()) throw ConfigError("attack '" + p + "' has no kind");
  AttackSpec s = default_attack(parse_attack_kind(kind_it->second));
  auto num = [&](const char* key, double& out) {
    if (auto it = kv.find(p + key); it != kv.end()) out = parse_double(it->second, p + key);
  };
  auto integer = [&](const char* key, int& out) {
    if (auto it = kv.find(p + key); it != kv.end()) out = static_cast<int>(parse_int(it->second, p + key));
  };
  num("eps", s.eps);
  integer("steps", s.steps);
  num("step_size", s.step_size);
  num("decay", s.decay);
  num("diversity_prob", s.diversity_prob);
  num("resize_min", s.resize_min);
  integer("kernel", s.kernel);
  num("cw_c", s.cw_c);
  num("cw_kappa", s.cw_kappa);
  num("cw_lr", s.cw_lr);
  if (auto it = kv.find(p + "seed"); it != kv.end()) s.seed = std::stoull(it->second);
  s.validate();
  return s;
}

Tensor project_linf(const Tensor& candidate, const Tensor& origin, double eps) {
  require_same_shape(candidate, origin, "project_linf");
  Tensor out(candidate.shape(),
             candidate.array().max(origin.array() - eps).min(origin.array() + eps).max(0.0).min(1.0));
  return out;
}

Tensor run_base_attack(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  if (x.rank() != 4 || x.shape() != model.spec.input_shape(x.dim(0))) {
    throw ShapeError(attack_name(spec.kind) + ": input " + to_string(x.shape()) + " does not match the model");
  }
  if (x.dim(0) != static_cast<Index>(y.size())) throw ShapeError(attack_name(spec.kind) + ": label count mismatch");
  if (spec.kind == AttackKind::None || spec.steps == 0) return x;
  switch (spec.kind) {
    case AttackKind::Fgsm: {
      Tensor g = gradient(model, x, y, spec.kind);
      return Tensor(x.shape(), (x.array() + spec.eps * g.array().sign()).max(0.0).min(1.0));
    }
    case AttackKind::CwL2:
      return cw_l2(model, x, y, spec).images;
    default:
      return iterative_linf(model, x, y, spec);
  }
}

CwResult cw_l2(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  const Index n = x.dim(0), rs = x.row_size();
  const int classes = model.spec.classes;
  constexpr double kShrink = 1.0 - 1e-6;

  CwResult result;
  result.images = x;
  result.success.assign(static_cast<std::size_t>(n), false);
  result.margin.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  if (spec.steps == 0) return result;

  std::vector<Tensor> w{Tensor(x.shape(), ((2.0 * x.array() - 1.0) * kShrink).atanh())};
  AdamState adam = make_adam_state(w);
  std::vector<double> best_l2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  const Tensor target = one_hot(y, classes);

  for (int t = 0; t <= spec.steps; ++t) {
    Graph g;
    Var wv = g.variable(w[0]);
    Var adv = scale(add_scalar(tanh(wv), 1.0), 0.5);
    Var diff = sub(adv, g.constant(x));
    Var logits = forward(g, model, adv);
    const Tensor& z = logits.value();

    // Runner-up class at the current iterate defines the margin direction.
    Tensor mask = target;
    std::vector<double> margins(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const int yi = y[static_cast<std::size_t>(i)];
      Index other = -1;
      for (Index k = 0; k < classes; ++k)
        if (k != yi && (other < 0 || z[i * classes + k] > z[i * classes + other])) other = k;
      mask[i * classes + other] = -1.0;
      margins[static_cast<std::size_t>(i)] = z[i * classes + yi] - z[i * classes + other];
    }
    const Tensor& advv = adv.value();
    for (Index i = 0; i < n; ++i) {
      const auto si = static_cast<std::size_t>(i);
      const double l2 = (advv.array().segment(i * rs, rs) - x.array().segment(i * rs, rs)).square().sum();
      if (margins[si] < -spec.cw_kappa && l2 < best_l2[si]) {
        best_l2[si] = l2;
        result.success[si] = true;
        result.margin[si] = margins[si];
        result.images.array().segment(i * rs, rs) = advv.array().segment(i * rs, rs);
      } else if (!result.success[si] && t == spec.steps) {
        result.margin[si] = margins[si];
        result.images.array().segment(i * rs, rs) = advv.array().segment(i * rs, rs);
      }
    }
    if (t == spec.steps) break;

    Var margin = sum_last_axis(mul(logits, g.constant(mask)));
    Var loss = add(sum(mul(diff, diff)), scale(sum(relu(add_scalar(margin, spec.cw_kappa))), spec.cw_c));
    Gradients grads = g.backward(loss);
    if (!grads[wv].all_finite()) throw NumericError("cw_l2: non-finite gradient");
    adam_step(w, {grads[wv]}, adam, spec.cw_lr);
  }
  return result;
}

}  // namespace daash

#include "daash/daash.hpp"

#include "binary_io.hpp"
#include "daash/adam.hpp"
#include "daash/error.hpp"
#include "daash/io.hpp"
#include "daash/rng.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace daash {
namespace {

std::uint64_t stage_salt(std::uint64_t salt, Index stage) { return mix_seed(salt, static_cast<std::uint64_t>(stage)); }

Tensor clip01(Tensor t) {
  t.array() = t.array().max(0.0).min(1.0);
  return t;
}

void check_alpha(const AlphaMatrix& alpha, Index pool) {
  if (alpha.logits.rank() != 2 || alpha.stages() < 1) {
    throw ShapeError("alpha must be (stages, pool), got " + to_string(alpha.logits.shape()));
  }
  if (alpha.pool_size() != pool) {
    throw ShapeError("alpha has " + std::to_string(alpha.pool_size()) + " columns for a pool of " + std::to_string(pool));
  }
  require_finite(alpha.logits, "alpha");
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const Index n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index k = 0;
    logits.array().segment(i * c, c).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

void ssim_to_text(std::ostringstream& os, const SsimConfig& s) {
  os << "ssim.window=" << (s.window == SsimWindow::Sliding ? "sliding" : "global") << '\n'
     << "ssim.size=" << s.size << '\n'
     << "ssim.c1=" << format_double(s.c1) << '\n'
     << "ssim.c2=" << format_double(s.c2) << '\n'
     << "ssim.range=" << format_double(s.range) << '\n';
}

}  // namespace

AlphaMatrix::AlphaMatrix(Tensor t) : logits(std::move(t)) {
  if (logits.rank() != 2) throw ShapeError("alpha must be a matrix, got " + to_string(logits.shape()));
}

AlphaMatrix AlphaMatrix::zeros(Index stages, Index pool) { return AlphaMatrix(Tensor(Shape{stages, pool}, 0.0)); }

AlphaMatrix AlphaMatrix::saturated(Index stages, Index pool, Index index, double value) {
  if (index < 0 || index >= pool) throw ShapeError("saturated alpha: column out of range");
  AlphaMatrix a = zeros(stages, pool);
  for (Index j = 0; j < stages; ++j) a.logits[j * pool + index] = value;
  return a;
}

Eigen::VectorXd AlphaMatrix::row(Index stage) const {
  if (stage < 0 || stage >= stages()) throw ShapeError("alpha row out of range");
  return logits.array().segment(stage * pool_size(), pool_size()).matrix();
}

Eigen::VectorXd alpha_to_weights(const Eigen::VectorXd& row) {
  if (row.size() == 0) throw ShapeError("alpha row is empty");
  if (!row.allFinite()) throw NumericError("alpha row has non-finite entries");
  Eigen::VectorXd e = (row.array() - row.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Tensor combine_candidates(const CandidateSet& c, const Eigen::VectorXd& row) {
  if (c.images.empty()) throw ShapeError("combine_candidates: no candidates");
  if (row.size() != c.size()) {
    throw ShapeError("combine_candidates: " + std::to_string(row.size()) + " weights for " + std::to_string(c.size()) +
                     " candidates");
  }
  const Eigen::VectorXd w = alpha_to_weights(row);
  Tensor out(c.images[0].shape(), 0.0);
  for (Index i = 0; i < c.size(); ++i) {
    require_same_shape(out, c.images[static_cast<std::size_t>(i)], "combine_candidates");
    out.array() += w[i] * c.images[static_cast<std::size_t>(i)].array();
  }
  return out;
}

Var combine_candidates(Var row, const CandidateSet& c) {
  if (c.images.empty()) throw ShapeError("combine_candidates: no candidates");
  if (row.value().size() != c.size()) {
    throw ShapeError("combine_candidates: " + std::to_string(row.value().size()) + " weights for " +
                     std::to_string(c.size()) + " candidates");
  }
  const Tensor& first = c.images[0];
  Tensor stacked(Shape{c.size(), first.size()});
  for (Index i = 0; i < c.size(); ++i) {
    require_same_shape(first, c.images[static_cast<std::size_t>(i)], "combine_candidates");
    stacked.array().segment(i * first.size(), first.size()) = c.images[static_cast<std::size_t>(i)].array();
  }
  Graph& g = row.graph();
  Var w = softmax(reshape(row, {1, c.size()}));
  return reshape(matmul(w, g.constant(std::move(stacked))), first.shape());
}

CandidateSet generate_candidates(const TrainedModel& model, const Tensor& x, std::span<const int> y,
                                 const std::vector<AttackSpec>& pool, std::uint64_t salt) {
  if (pool.empty()) throw ConfigError("attack pool is empty");
  CandidateSet c;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    AttackSpec s = pool[i];
    s.seed = mix_seed(s.seed, mix_seed(salt, i));
    c.names.push_back(attack_name(s.kind));
    c.images.push_back(run_base_attack(model, x, y, s));
  }
  return c;
}

Tensor run_stage(const TrainedModel& model, const Tensor& x_in, std::span<const int> y,
                 const std::vector<AttackSpec>& pool, const Eigen::VectorXd& row, std::uint64_t salt) {
  if (x_in.size() > 0 && (x_in.array().minCoeff() < 0.0 || x_in.array().maxCoeff() > 1.0)) {
    throw ConfigError("run_stage: input pixels outside [0, 1]");
  }
  if (row.size() != static_cast<Index>(pool.size())) {
    throw ShapeError("run_stage: " + std::to_string(row.size()) + " logits for a pool of " + std::to_string(pool.size()));
  }
  return clip01(combine_candidates(generate_candidates(model, x_in, y, pool, salt), row));
}

namespace {

Tensor pipeline_impl(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AlphaMatrix& alpha,
                     const std::vector<AttackSpec>& pool, std::uint64_t salt, const CandidateSet* first) {
  check_alpha(alpha, static_cast<Index>(pool.size()));
  Tensor cur = x;
  for (Index j = 0; j < alpha.stages(); ++j) {
    if (j == 0 && first) {
      cur = clip01(combine_candidates(*first, alpha.row(0)));
    } else {
      cur = run_stage(model, cur, y, pool, alpha.row(j), stage_salt(salt, j));
    }
  }
  return cur;
}

}  // namespace

Tensor run_pipeline(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AlphaMatrix& alpha,
                    const std::vector<AttackSpec>& pool, std::uint64_t salt) {
  return pipeline_impl(model, x, y, alpha, pool, salt, nullptr);
}

MetaLossTerms meta_loss_terms(const TrainedModel& model, const Tensor& x, Var x_a, std::span<const int> y,
                              double lambda_asr, double lambda_ssim, const SsimConfig& cfg) {
  if (!(lambda_asr >= 0.0) || !(lambda_ssim >= 0.0)) throw ConfigError("meta_loss: lambdas must be non-negative");
  if (x.shape() != x_a.shape()) {
    throw ShapeError("meta_loss: clean " + to_string(x.shape()) + " vs adversarial " + to_string(x_a.shape()));
  }
  Graph& g = x_a.graph();
  MetaLossTerms t;
  t.logits = forward(g, model, x_a);
  Var probs = softmax(t.logits);
  t.true_class_prob = mean(sum_last_axis(mul(probs, g.constant(one_hot(y, model.spec.classes)))));
  t.similarity = ssim(g.constant(x), x_a, cfg);
  t.total = add(scale(t.true_class_prob, lambda_asr), scale(add_scalar(scale(t.similarity, -1.0), 1.0), lambda_ssim));
  return t;
}

Var meta_loss(const TrainedModel& model, const Tensor& x, Var x_a, std::span<const int> y, double lambda_asr,
              double lambda_ssim, const SsimConfig& cfg) {
  return meta_loss_terms(model, x, x_a, y, lambda_asr, lambda_ssim, cfg).total;
}

double meta_loss_value(const TrainedModel& model, const Tensor& x, const Tensor& x_a, std::span<const int> y,
                       double lambda_asr, double lambda_ssim, const SsimConfig& cfg) {
  Graph g;
  return meta_loss(model, x, g.constant(x_a), y, lambda_asr, lambda_ssim, cfg).value().item();
}

void SearchConfig::validate() const {
  if (stages < 1) throw ConfigError("search: need at least one stage");
  if (pool.empty()) throw ConfigError("search: attack pool is empty");
  if (epochs < 0) throw ConfigError("search: epochs must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("search: learning rate must be positive");
  if (!(lambda_asr >= 0.0) || !(lambda_ssim >= 0.0)) throw ConfigError("search: lambdas must be non-negative");
  if (batch_size < 1) throw ConfigError("search: batch size must be positive");
  for (const auto& a : pool) a.validate();
}

std::string serialize(const SearchConfig& c) {
  std::ostringstream os;
  os << "stages=" << c.stages << '\n'
     << "epochs=" << c.epochs << '\n'
     << "lr=" << format_double(c.lr) << '\n'
     << "lambda_asr=" << format_double(c.lambda_asr) << '\n'
     << "lambda_ssim=" << format_double(c.lambda_ssim) << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "seed=" << c.seed << '\n';
  ssim_to_text(os, c.ssim);
  os << "pool_size=" << c.pool.size() << '\n';
  for (std::size_t i = 0; i < c.pool.size(); ++i) os << serialize(c.pool[i], "pool." + std::to_string(i) + ".");
  return os.str();
}

SearchConfig parse_search_config(const std::string& text) {
  auto kv = parse_key_values(text);
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError("search config missing '" + k + "'");
    return it->second;
  };
  SearchConfig c;
  c.stages = static_cast<int>(parse_int(get("stages"), "stages"));
  c.epochs = static_cast<int>(parse_int(get("epochs"), "epochs"));
  c.lr = parse_double(get("lr"), "lr");
  c.lambda_asr = parse_double(get("lambda_asr"), "lambda_asr");
  c.lambda_ssim = parse_double(get("lambda_ssim"), "lambda_ssim");
  c.batch_size = parse_int(get("batch_size"), "batch_size");
  c.seed = std::stoull(get("seed"));
  const std::string& window = get("ssim.window");
  if (window != "sliding" && window != "global") throw ConfigError("unknown ssim window '" + window + "'");
  c.ssim.window = window == "sliding" ? SsimWindow::Sliding : SsimWindow::Global;
  c.ssim.size = parse_int(get("ssim.size"), "ssim.size");
  c.ssim.c1 = parse_double(get("ssim.c1"), "ssim.c1");
  c.ssim.c2 = parse_double(get("ssim.c2"), "ssim.c2");
  c.ssim.range = parse_double(get("ssim.range"), "ssim.range");
  const auto n = parse_int(get("pool_size"), "pool_size");
  c.pool.clear();
  for (long long i = 0; i < n; ++i) c.pool.push_back(parse_attack_spec(kv, "pool." + std::to_string(i) + "."));
  c.validate();
  return c;
}

MetaObjective meta_objective(const TrainedModel& model, const Tensor& x, std::span<const int> y,
                             const AlphaMatrix& alpha, const SearchConfig& cfg, std::uint64_t salt) {
  const Index pool = static_cast<Index>(cfg.pool.size());
  check_alpha(alpha, pool);
  const Index stages = alpha.stages();
  MetaObjective out;
  Graph g;
  Var a = g.variable(alpha.logits);
  Var cur = g.constant(x);
  for (Index j = 0; j < stages; ++j) {
    Tensor select(Shape{1, stages}, 0.0);
    select[j] = 1.0;
    Var row = matmul(g.constant(std::move(select)), a);

    const Tensor& in = cur.value();
    out.stage_inputs.push_back(in);
    CandidateSet cs = generate_candidates(model, in, y, cfg.pool, stage_salt(salt, j));
    Tensor deltas(Shape{pool, in.size()});
    for (Index i = 0; i < pool; ++i) {
      deltas.array().segment(i * in.size(), in.size()) = cs.images[static_cast<std::size_t>(i)].array() - in.array();
    }
    out.candidates.push_back(std::move(cs));
    Var step = reshape(matmul(softmax(row), g.constant(std::move(deltas))), in.shape());
    cur = clamp(add(cur, step), 0.0, 1.0);
  }
  MetaLossTerms t = meta_loss_terms(model, x, cur, y, cfg.lambda_asr, cfg.lambda_ssim, cfg.ssim);
  out.loss = t.total.value().item();
  out.ssim = t.similarity.value().item();
  const auto pred = argmax_rows(t.logits.value());
  Index flipped = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) flipped += pred[i] != y[i];
  out.asr = pred.empty() ? 0.0 : static_cast<double>(flipped) / static_cast<double>(pred.size());
  out.adversarial = cur.value();
  out.grad = g.backward(t.total)[a];
  return out;
}

AttackSequence search(const TrainedModel& model, const LabeledBatch& data, const SearchConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError("search: no data");
  const Index pool = static_cast<Index>(cfg.pool.size());

  AttackSequence seq;
  seq.config = cfg;
  Rng init(mix_seed(cfg.seed, "alpha-init"));
  AlphaMatrix alpha = AlphaMatrix::zeros(cfg.stages, pool);
  for (Index i = 0; i < alpha.logits.size(); ++i) alpha.logits[i] = init.uniform(-0.01, 0.01);
  seq.alpha = alpha;

  std::vector<Tensor> params{alpha.logits};
  AdamState adam = make_adam_state(params);
  Rng sampler(mix_seed(cfg.seed, "minibatch"));
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    const std::size_t take = std::min(order.size(), static_cast<std::size_t>(cfg.batch_size));
    if (take < order.size()) {
      for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + sampler.below(order.size() - i)]);
    }
    LabeledBatch mb = data.subset(std::span<const Index>(order.data(), take));

    alpha.logits = params[0];
    MetaObjective obj;
    try {
      obj = meta_objective(model, mb.images, mb.labels, alpha, cfg, mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    } catch (const NumericError& e) {
      std::ostringstream os;
      os << "search: non-finite value at epoch " << epoch << " (" << e.what() << "); alpha =";
      for (Index i = 0; i < alpha.logits.size(); ++i) os << ' ' << format_double(alpha.logits[i]);
      throw NumericError(os.str());
    }
    if (!std::isfinite(obj.loss) || !obj.grad.all_finite()) {
      std::ostringstream os;
      os << "search: non-finite loss at epoch " << epoch << "; alpha =";
      for (Index i = 0; i < alpha.logits.size(); ++i) os << ' ' << format_double(alpha.logits[i]);
      throw NumericError(os.str());
    }
    seq.curve.push_back({epoch, obj.loss, obj.asr, obj.ssim});
    if (obj.loss < best) {
      best = obj.loss;
      seq.alpha = alpha;
      seq.best_epoch = epoch;
    }
    adam_step(params, {obj.grad}, adam, cfg.lr);
  }
  return seq;
}

AlphaMatrix random_alpha(Index stages, Index pool, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  AlphaMatrix a = AlphaMatrix::zeros(stages, pool);
  for (Index i = 0; i < a.logits.size(); ++i) a.logits[i] = rng.uniform(lo, hi);
  return a;
}

Tensor generate_adversarial(const TrainedModel& model, const LabeledBatch& data, const AttackSequence& seq) {
  return generate_adversarial(model, data, seq, {});
}

std::vector<CandidateSet> first_stage_candidates(const TrainedModel& model, const LabeledBatch& data,
                                                 const SearchConfig& cfg) {
  const std::uint64_t base = mix_seed(cfg.seed, "evaluate");
  std::vector<CandidateSet> out;
  for (Index b = 0, chunk = 0; b < data.size(); b += cfg.batch_size, ++chunk) {
    LabeledBatch mb = data.slice(b, std::min(data.size(), b + cfg.batch_size));
    out.push_back(generate_candidates(model, mb.images, mb.labels, cfg.pool,
                                      stage_salt(mix_seed(base, static_cast<std::uint64_t>(chunk)), 0)));
  }
  return out;
}

Tensor generate_adversarial(const TrainedModel& model, const LabeledBatch& data, const AttackSequence& seq,
                            const std::vector<CandidateSet>& first_stage) {
  check_alpha(seq.alpha, static_cast<Index>(seq.config.pool.size()));
  const Index bs = seq.config.batch_size;
  if (bs < 1) throw ConfigError("batch size must be positive");
  const std::uint64_t base = mix_seed(seq.config.seed, "evaluate");
  const Index chunks = (data.size() + bs - 1) / bs;
  if (!first_stage.empty() && static_cast<Index>(first_stage.size()) != chunks) {
    throw ShapeError("cached first-stage candidates cover " + std::to_string(first_stage.size()) + " chunks, need " +
                     std::to_string(chunks));
  }
  std::vector<Tensor> parts;
  for (Index b = 0, chunk = 0; b < data.size(); b += bs, ++chunk) {
    LabeledBatch mb = data.slice(b, std::min(data.size(), b + bs));
    const CandidateSet* first = first_stage.empty() ? nullptr : &first_stage[static_cast<std::size_t>(chunk)];
    parts.push_back(pipeline_impl(model, mb.images, mb.labels, seq.alpha, seq.config.pool,
                                  mix_seed(base, static_cast<std::uint64_t>(chunk)), first));
  }
  return parts.empty() ? data.images : concat_rows(parts);
}

Tensor generate_adversarial(const TrainedModel& model, const LabeledBatch& data, const AttackSpec& attack,
                            Index batch_size, std::uint64_t salt) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  std::vector<Tensor> parts;
  for (Index b = 0, chunk = 0; b < data.size(); b += batch_size, ++chunk) {
    LabeledBatch mb = data.slice(b, std::min(data.size(), b + batch_size));
    AttackSpec s = attack;
    s.seed = mix_seed(attack.seed, mix_seed(salt, static_cast<std::uint64_t>(chunk)));
    parts.push_back(run_base_attack(model, mb.images, mb.labels, s));
  }
  return parts.empty() ? data.images : concat_rows(parts);
}

EvaluationSummary summarize(const TrainedModel& model, const LabeledBatch& data, const Tensor& adversarial,
                            const std::optional<DefenseSpec>& defense, const SsimConfig& cfg) {
  EvaluationSummary s;
  const Tensor judged = defense ? apply_defense(adversarial, *defense) : adversarial;
  s.outcome = assess_attack(model, data, adversarial, judged, cfg);
  s.asr = s.outcome.success_rate();
  s.ssim = s.outcome.mean_ssim();
  return s;
}

EvaluationSummary evaluate_sequence(const TrainedModel& model, const LabeledBatch& data, const AttackSequence& seq,
                                    const std::optional<DefenseSpec>& defense) {
  return summarize(model, data, generate_adversarial(model, data, seq), defense, seq.config.ssim);
}

std::string encode_sequence(const AttackSequence& seq) {
  detail::ByteWriter w;
  w.bytes("AFSQ1", 5);
  w.text(serialize(seq.config) + "best_epoch=" + std::to_string(seq.best_epoch) + '\n');
  w.u32(static_cast<std::uint32_t>(seq.alpha.stages()));
  w.u32(static_cast<std::uint32_t>(seq.alpha.pool_size()));
  for (Index i = 0; i < seq.alpha.logits.size(); ++i) w.f64(seq.alpha.logits[i]);
  w.u32(static_cast<std::uint32_t>(seq.curve.size()));
  for (const auto& p : seq.curve) {
    w.u32(static_cast<std::uint32_t>(p.epoch));
    w.f64(p.loss);
    w.f64(p.asr);
    w.f64(p.ssim);
  }
  return w.take();
}

AttackSequence decode_sequence(const std::string& bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic("AFSQ1");
  const std::string text = r.text();
  AttackSequence seq;
  seq.config = parse_search_config(text);
  auto kv = parse_key_values(text);
  if (auto it = kv.find("best_epoch"); it != kv.end()) seq.best_epoch = static_cast<int>(parse_int(it->second, "best_epoch"));
  const Index rows = r.u32(), cols = r.u32();
  if (rows != seq.config.stages || cols != static_cast<Index>(seq.config.pool.size())) {
    throw IoError("sequence alpha is " + std::to_string(rows) + "x" + std::to_string(cols) +
                  " but the config describes " + std::to_string(seq.config.stages) + "x" +
                  std::to_string(seq.config.pool.size()));
  }
  seq.alpha = AlphaMatrix::zeros(rows, cols);
  for (Index i = 0; i < seq.alpha.logits.size(); ++i) seq.alpha.logits[i] = r.f64();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    CurvePoint p;
    p.epoch = static_cast<int>(r.u32());
    p.loss = r.f64();
    p.asr = r.f64();
    p.ssim = r.f64();
    seq.curve.push_back(p);
  }
  if (!r.done()) throw IoError("trailing bytes in sequence file at offset " + std::to_string(r.offset()));
  return seq;
}

void save_sequence(const AttackSequence& seq, const std::filesystem::path& path) {
  write_file_atomic(path, encode_sequence(seq));
}

AttackSequence load_sequence(const std::filesystem::path& path) { return decode_sequence(read_file(path)); }

}  // namespace daash

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "daash/error.hpp"
#include "daash/harness.hpp"
#include "daash/io.hpp"
#include "daash/runtime.hpp"
#include "gradient_cases.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

using namespace daash;
using namespace daash::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::vector<AttackSpec> linf_pool() {
  std::vector<AttackSpec> pool;
  for (const auto& a : default_pool())
    if (is_linf(a.kind)) pool.push_back(a);
  return pool;
}

// Each criterion is isolated so an exception fails only that one.
template <typename F>
void guarded(int id, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    verdict(id, false, std::string("exception: ") + e.what());
  }
}

void criterion1() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_op;
  int instances = 0;
  for (const auto& c : gradient_cases()) {
    for (int i = 0; i < 50; ++i, ++instances) {
      const double err = c.run(i);
      if (!(err <= worst)) worst = err, worst_op = c.name;
    }
  }
  const double secs = seconds_since(t0);
  verdict(1, worst <= 1e-4 && secs < 60.0,
          std::to_string(instances) + " instances over " + std::to_string(gradient_cases().size()) +
              " ops, worst relative error " + fmt(worst) + " (" + worst_op + "), " + fmt(secs, 3) + " s");
}

void criterion2(const TrainedModel& model, const LabeledBatch& data) {
  Rng rng(2024);
  double sum_err = 0.0, min_w = 1.0;
  for (int r = 0; r < 1000; ++r) {
    Eigen::VectorXd row(9);
    const double spread = r % 5 == 0 ? 200.0 : 4.0;
    for (Index i = 0; i < 9; ++i) row[i] = rng.uniform(-spread, spread);
    const Eigen::VectorXd w = alpha_to_weights(row);
    sum_err = std::max(sum_err, std::abs(w.sum() - 1.0));
    min_w = std::min(min_w, w.minCoeff());
  }
  const auto pool = linf_pool();
  const double eps = pool.front().eps;
  bool contained = true;
  std::string dist;
  for (int n = 1; n <= 3; ++n) {
    double worst = 0.0;
    for (int d = 0; d < 3; ++d) {
      const AlphaMatrix a = random_alpha(n, static_cast<Index>(pool.size()), mix_seed(77, std::to_string(n * 10 + d)), -3, 3);
      const Tensor xa = run_pipeline(model, data.images, data.labels, a, pool, static_cast<std::uint64_t>(d));
      worst = std::max(worst, max_abs_diff(xa, data.images));
    }
    contained = contained && worst <= n * eps + 1e-12;
    dist += " N=" + std::to_string(n) + ":" + fmt(worst / eps, 6) + "eps";
  }
  verdict(2, sum_err <= 1e-12 && min_w > 0.0 && contained,
          "max |sum w - 1| " + fmt(sum_err) + ", min weight " + fmt(min_w) + ", max l-inf distance" + dist);
}

void criterion3(const TrainedModel& model, const LabeledBatch& data) {
  const auto pool = default_pool();
  double worst = 0.0, asr = 0.0;
  for (int n = 1; n <= 3; ++n) {
    AttackSequence s;
    s.config.stages = n;
    s.alpha = AlphaMatrix::saturated(n, static_cast<Index>(pool.size()), 0);
    const Tensor xa = generate_adversarial(model, data, s);
    worst = std::max(worst, max_abs_diff(xa, data.images));
    asr = std::max(asr, attack_success_rate(model, data, xa));
  }
  verdict(3, worst <= 1e-12 && asr == 0.0,
          "max |x_a - x| " + fmt(worst) + ", ASR " + fmt(asr) + " on " + std::to_string(data.size()) + " samples, N=1..3");
}

void criterion4(const TrainedModel& model, const LabeledBatch& data) {
  AttackSpec bim = default_attack(AttackKind::Bim);
  bim.steps = 1;
  bim.step_size = bim.eps;
  const bool same = run_base_attack(model, data.images, data.labels, bim) ==
                    run_base_attack(model, data.images, data.labels, default_attack(AttackKind::Fgsm));
  bool identity = true;
  for (AttackSpec s : linf_pool()) {
    s.eps = 0.0;
    if (s.kind == AttackKind::Fgsm) s.step_size = 0.0;
    identity = identity && run_base_attack(model, data.images, data.labels, s) == data.images;
  }
  int flagged = 0, honest = 0;
  for (double kappa : {0.0, 0.5, 2.0}) {
    AttackSpec cw = default_attack(AttackKind::CwL2);
    cw.cw_kappa = kappa;
    const CwResult r = cw_l2(model, data.images, data.labels, cw);
    const Tensor logits = predict(model, r.images);
    const Index c = model.spec.classes;
    for (Index n = 0; n < data.size(); ++n) {
      if (!r.success[static_cast<std::size_t>(n)]) continue;
      const int y = data.labels[static_cast<std::size_t>(n)];
      double other = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < c; ++k)
        if (k != y) other = std::max(other, logits[n * c + k]);
      ++flagged;
      honest += logits[n * c + y] - other < -kappa;
    }
  }
  verdict(4, same && identity && flagged > 0 && honest == flagged,
          std::string("bim==fgsm ") + (same ? "yes" : "no") + ", eps=0 identity " + (identity ? "yes" : "no") +
              ", cw margin below -kappa on " + std::to_string(honest) + "/" + std::to_string(flagged) +
              " flagged samples");
}

ExperimentConfig base_config(const fs::path& out) {
  ExperimentConfig c;
  c.seed = 1;
  c.out_dir = out;
  c.search.stages = 1;
  c.search.epochs = 80;
  c.search.lr = 0.2;
  c.search.batch_size = 32;
  c.search_samples = 256;
  c.eval_samples = 512;
  c.random_draws = 100;
  return c;
}

double parse_cell(const ReportTable& t, const std::string& row, const std::string& col) {
  return std::stod(t.at(row, col));
}

void robust_criteria(const fs::path& out, std::ostream& log) {
  ExperimentConfig c = base_config(out);
  c.model_seeds = {0};
  c.train_standard = false;
  c.search_model = "at-0";

  double asr_n1 = 0.0;
  guarded(5, [&] {
    const auto t0 = Clock::now();
    const ReportTable train = cmd_train(c, log);
    cmd_search(c, "at-0", log);
    const ReportTable r = cmd_ablate(c, AblateMode::RandomAlpha, "at-0", std::nullopt, log);
    const double secs = seconds_since(t0);
    asr_n1 = parse_cell(r, "trained", "ASR");
    const double random = parse_cell(r, "random", "ASR");
    const auto samples = evaluation_set(c, load_model(Workspace{out}.model("at-0"))).size();
    const AttackSequence seq = load_sequence(Workspace{out}.sequence("at-0"));
    Index top = 0;
    const Eigen::VectorXd w = alpha_to_weights(seq.alpha.row(0));
    w.maxCoeff(&top);
    verdict(5, asr_n1 - random >= 10.0 && secs < 900.0,
            "PGD-AT model (clean " + train.at("at-0", "clean_accuracy") + ", robust " +
                train.at("at-0", "robust_accuracy") + "), " + std::to_string(samples) + " samples: trained " +
                fmt(asr_n1) + "% vs random mean " + fmt(random) + "% over " + std::to_string(c.random_draws) +
                " draws (gap " + fmt(asr_n1 - random) + " pp), dominant weight " +
                attack_name(seq.config.pool[static_cast<std::size_t>(top)].kind) + " " + fmt(w[top]) + ", " +
                fmt(secs, 3) + " s");
  });

  guarded(6, [&] {
    ExperimentConfig s = c;
    s.ablate_stages = {2};
    const ReportTable t = cmd_ablate(s, AblateMode::Stages, "at-0", std::nullopt, log);
    const double asr_n2 = parse_cell(t, "2", "Base");
    verdict(6, asr_n2 > asr_n1,
            "PGD-AT model, T=" + std::to_string(c.search.epochs) + ": ASR N=1 " + fmt(asr_n1) + "%, N=2 " +
                fmt(asr_n2) + "%");
  });
}

void standard_criteria(const fs::path& out, std::ostream& log) {
  ExperimentConfig c = base_config(out);
  c.model_seeds = {0, 1};
  c.train_adversarial = false;
  c.search_model = "std-0";
  c.search.epochs = 100;
  c.transfer_models = {"std-0", "std-1"};
  DefenseSpec jpeg;
  jpeg.kind = DefenseKind::Jpeg;
  jpeg.jpeg_quality = 75;
  c.defenses = {jpeg};

  try {
    cmd_train(c, log);
  } catch (const std::exception& e) {
    for (int id : {7, 8, 9, 2, 3, 4}) verdict(id, false, std::string("training failed: ") + e.what());
    return;
  }

  guarded(7, [&] {
    const AttackSequence s = cmd_search(c, "std-0", log);
    const CurvePoint& first = s.curve.front();
    const CurvePoint& last = s.curve.back();
    const CurvePoint& best = s.curve[static_cast<std::size_t>(s.best_epoch - 1)];
    verdict(7, s.curve.size() == 100 && best.loss < first.loss && last.asr >= first.asr,
            "standard model, T=" + std::to_string(s.curve.size()) + ": L_total epoch 1 " + fmt(first.loss) +
                ", best (epoch " + std::to_string(s.best_epoch) + ") " + fmt(best.loss) + "; ASR epoch 1 " +
                fmt(first.asr) + ", final " + fmt(last.asr));
  });

  guarded(8, [&] {
    const ReportTable t = cmd_ablate(c, AblateMode::Transfer, "std-0", std::nullopt, log);
    const double src = parse_cell(t, "std-0", "std-0"), dst = parse_cell(t, "std-0", "std-1");
    verdict(8, src > 0.0 && dst >= 0.8 * src,
            "sequence from std-0: " + fmt(src) + "% on std-0, " + fmt(dst) + "% on std-1 (retained " +
                fmt(src > 0 ? 100.0 * dst / src : 0.0) + "%)");
  });

  const TrainedModel model = load_model(Workspace{out}.model("std-0"));
  const LabeledBatch eval = evaluation_set(c, model);

  guarded(9, [&] {
    const ReportTable t = cmd_evaluate(c, "std-0", std::nullopt, log);
    int ok = 0, total = 0;
    std::string worst;
    for (const auto& a : c.search.pool) {
      const std::string name = attack_name(a.kind);
      ++total;
      const double base = parse_cell(t, name, "Base"), defended = parse_cell(t, name, "jpeg");
      if (defended <= base) ++ok;
      else worst += " " + name + "(" + fmt(defended) + ">" + fmt(base) + ")";
    }
    const Tensor adv = generate_adversarial(model, eval.slice(0, 64), default_attack(AttackKind::Pgd), 32, 3);
    const Tensor once = bit_depth_reduce(adv, 4);
    const bool idempotent = bit_depth_reduce(once, 4) == once;
    bool in_range = true;
    for (DefenseKind k : {DefenseKind::Jpeg, DefenseKind::Tvm, DefenseKind::BitDepth, DefenseKind::Nlm,
                          DefenseKind::Ensemble}) {
      DefenseSpec d;
      d.kind = k;
      const Tensor y = apply_defense(adv, d);
      in_range = in_range && y.array().minCoeff() >= 0.0 && y.array().maxCoeff() <= 1.0;
    }
    DefenseSpec e;
    e.kind = DefenseKind::Ensemble;
    const Tensor manual = nl_means(tv_minimize(jpeg_quantize(bit_depth_reduce(adv, e.bits), e.jpeg_quality),
                                               e.tv_weight, e.tv_iterations),
                                   e.nlm_h, e.nlm_patch, e.nlm_search);
    const bool ordered = apply_defense(adv, e) == manual && apply_defense(adv, e) == apply_defense(adv, e);
    verdict(9, ok == total && idempotent && in_range && ordered,
            "JPEG(75) ASR <= Base for " + std::to_string(ok) + "/" + std::to_string(total) + " attacks" + worst +
                ", bitdepth idempotent " + (idempotent ? "yes" : "no") + ", [0,1] kept " + (in_range ? "yes" : "no") +
                ", ensemble order reproducible " + (ordered ? "yes" : "no"));
  });

  const LabeledBatch small = eval.slice(0, 64);
  guarded(2, [&] { criterion2(model, small.slice(0, 16)); });
  guarded(3, [&] { criterion3(model, eval); });
  guarded(4, [&] { criterion4(model, small); });
}

const char* kTiny = R"(seed = 9
[dataset]
height = 12
width = 12
train_size = 200
test_size = 48
[model]
epochs = 2
seeds = 0, 1
[adversarial]
steps = 2
[pool]
attacks = none, fgsm, pgd, difgsm, cw_l2
[attack.pgd]
steps = 2
[attack.difgsm]
steps = 2
[attack.cw_l2]
steps = 3
[search]
model = std-0
stages = 2
epochs = 3
batch_size = 16
samples = 32
[evaluate]
samples = 32
defenses = jpeg, tvm, ensemble
[ablate]
stages = 1, 2
random_draws = 2
)";

void criterion10(const fs::path& root) {
  std::ostringstream log;
  auto run = [&](const fs::path& out) {
    ExperimentConfig c = parse_experiment_config(kTiny);
    c.out_dir = out;
    cmd_train(c, log);
    for (const auto& id : c.model_ids()) cmd_search(c, id, log);
    cmd_evaluate(c, "std-0", std::nullopt, log);
    for (auto m : {AblateMode::Stages, AblateMode::RandomAlpha, AblateMode::Transfer})
      cmd_ablate(c, m, "std-0", std::nullopt, log);
  };
  const fs::path a = root / "det-a", b = root / "det-b";
  run(a);
  run(b);
  int files = 0, identical = 0, round_trips = 0, exact = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = b / fs::relative(e.path(), a);
    const std::string bytes = read_file(e.path());
    identical += fs::exists(other) && read_file(other) == bytes;
    if (e.path().extension() == ".afrg") {
      ++round_trips;
      exact += encode_model(decode_model(bytes)) == bytes;
    } else if (e.path().extension() == ".afsq") {
      ++round_trips;
      exact += encode_sequence(decode_sequence(bytes)) == bytes;
    }
  }
  verdict(10, files > 0 && identical == files && round_trips > 0 && exact == round_trips,
          std::to_string(identical) + "/" + std::to_string(files) + " files bit-identical across reruns, " +
              std::to_string(exact) + "/" + std::to_string(round_trips) + " AFRG1/AFSQ1 round trips exact");
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "daash-acceptance";
  fs::remove_all(root);
  std::ostringstream log;
  const auto t0 = Clock::now();

  guarded(1, criterion1);
  guarded(10, [&] { criterion10(root); });
  robust_criteria(root / "robust", log);
  standard_criteria(root / "standard", log);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt(seconds_since(t0), 4) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}

#include "daash/harness.hpp"

#include "daash/error.hpp"
#include "daash/io.hpp"
#include "daash/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace daash {
namespace {

std::string percent(double fraction) { return format_double(100.0 * fraction); }

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

TrainedModel load_trained(const ExperimentConfig& cfg, const std::string& id) {
  const auto ids = cfg.model_ids();
  if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
    throw ConfigError("model '" + id + "' is not configured");
  }
  const auto path = Workspace{cfg.out_dir}.model(id);
  if (!std::filesystem::exists(path)) throw IoError("model file not found: " + path.string() + " (run train first)");
  TrainedModel m = load_model(path);
  if (m.spec.input_shape(1) != cfg.model.input_shape(1) || m.spec.classes != cfg.model.classes) {
    throw ConfigError("model file " + path.string() + " does not match the configured dataset");
  }
  return m;
}

AttackSequence load_or_default_sequence(const ExperimentConfig& cfg, const std::string& id,
                                        const std::optional<std::filesystem::path>& sequence) {
  const auto path = sequence ? *sequence : Workspace{cfg.out_dir}.sequence(id);
  if (!std::filesystem::exists(path)) throw IoError("sequence file not found: " + path.string() + " (run search first)");
  return load_sequence(path);
}

std::vector<std::pair<std::string, EvaluationSummary>> score_defenses(const ExperimentConfig& cfg,
                                                                      const TrainedModel& model,
                                                                      const LabeledBatch& data, const Tensor& adv,
                                                                      const SsimConfig& ssim) {
  std::vector<std::pair<std::string, EvaluationSummary>> out;
  out.emplace_back("none", summarize(model, data, adv, std::nullopt, ssim));
  for (const auto& d : cfg.defenses) out.emplace_back(defense_name(d.kind), summarize(model, data, adv, d, ssim));
  return out;
}

std::vector<std::string> wide_columns(const ExperimentConfig& cfg, const std::string& key) {
  std::vector<std::string> cols{key, "Base"};
  for (const auto& d : cfg.defenses) cols.push_back(defense_name(d.kind));
  cols.push_back("Avg");
  cols.push_back("SSIM");
  return cols;
}

std::vector<std::string> wide_row(const std::string& key,
                                  const std::vector<std::pair<std::string, EvaluationSummary>>& scores) {
  std::vector<std::string> row{key};
  double sum = 0.0;
  for (const auto& [name, s] : scores) {
    row.push_back(percent(s.asr));
    sum += 100.0 * s.asr;
  }
  row.push_back(format_double(sum / static_cast<double>(scores.size())));
  row.push_back(format_double(scores.front().second.ssim_scaled()));
  return row;
}

nlohmann::json outcome_json(const AttackOutcome& o) {
  nlohmann::json records = nlohmann::json::array();
  for (std::size_t i = 0; i < o.label.size(); ++i) {
    records.push_back({{"index", i},
                       {"label", o.label[i]},
                       {"predicted_clean", o.predicted_before[i]},
                       {"predicted_adversarial", o.predicted_after[i]},
                       {"success", static_cast<bool>(o.success[i])},
                       {"ssim", o.ssim[i]}});
  }
  return records;
}

void write_table(const Workspace& ws, const std::string& name, const ReportTable& t, std::ostream& log) {
  write_file_atomic(ws.report(name), t.to_csv());
  log << "wrote " << ws.report(name).string() << '\n';
}

std::string curve_csv(const AttackSequence& seq) {
  std::string out = "epoch,L_total,ASR,SSIM\n";
  for (const auto& p : seq.curve) {
    out += std::to_string(p.epoch) + ',' + format_double(p.loss) + ',' + format_double(p.asr) + ',' +
           format_double(p.ssim) + '\n';
  }
  return out;
}

AttackSequence run_search(const ExperimentConfig& cfg, const TrainedModel& model, const LabeledBatch& data,
                          const SearchConfig& sc, const std::string& seq_id, std::ostream& log) {
  log << "search " << seq_id << ": N=" << sc.stages << " T=" << sc.epochs << " on " << data.size()
      << " samples\n";
  AttackSequence seq = search(model, data, sc);
  const Workspace ws{cfg.out_dir};
  save_sequence(seq, ws.sequence(seq_id));
  write_file_atomic(ws.curve(seq_id), curve_csv(seq));
  if (!seq.curve.empty()) {
    const auto& first = seq.curve.front();
    const auto& last = seq.curve.back();
    log << "  epoch 1: L=" << first.loss << " ASR=" << first.asr << " SSIM=" << first.ssim << "; epoch "
        << last.epoch << ": L=" << last.loss << " ASR=" << last.asr << " SSIM=" << last.ssim << "; best epoch "
        << seq.best_epoch << '\n';
  }
  log << "wrote " << ws.sequence(seq_id).string() << '\n';
  return seq;
}

ReportTable ablate_stages(const ExperimentConfig& cfg, const std::string& model_id, std::ostream& log) {
  const TrainedModel model = load_trained(cfg, model_id);
  const LabeledBatch train = search_set(cfg, model);
  const LabeledBatch test = evaluation_set(cfg, model);
  ReportTable t;
  t.columns = wide_columns(cfg, "stages");
  for (int n : cfg.ablate_stages) {
    const SearchConfig sc = cfg.search_config(n);
    AttackSequence seq = run_search(cfg, model, train, sc, model_id + "-n" + std::to_string(n), log);
    const Tensor adv = generate_adversarial(model, test, seq);
    t.add_row(wide_row(std::to_string(n), score_defenses(cfg, model, test, adv, sc.ssim)));
    log << "  N=" << n << " Base ASR " << t.rows.back()[1] << "%\n";
  }
  write_table(Workspace{cfg.out_dir}, "ablate-stages-" + model_id + ".csv", t, log);
  return t;
}

ReportTable ablate_random(const ExperimentConfig& cfg, const std::string& model_id,
                          const std::optional<std::filesystem::path>& sequence, std::ostream& log) {
  const TrainedModel model = load_trained(cfg, model_id);
  const LabeledBatch test = evaluation_set(cfg, model);
  const AttackSequence trained = load_or_default_sequence(cfg, model_id, sequence);
  const auto cache = first_stage_candidates(model, test, trained.config);
  const EvaluationSummary base =
      summarize(model, test, generate_adversarial(model, test, trained, cache), std::nullopt, trained.config.ssim);

  ReportTable draws;
  draws.columns = {"draw", "ASR", "SSIM"};
  std::vector<double> asr, ssim;
  const std::uint64_t root = mix_seed(cfg.seed, "random-alpha");
  for (int d = 0; d < cfg.random_draws; ++d) {
    AttackSequence rs = trained;
    rs.alpha = random_alpha(trained.alpha.stages(), trained.alpha.pool_size(),
                            mix_seed(root, static_cast<std::uint64_t>(d)), cfg.random_lo, cfg.random_hi);
    const EvaluationSummary s =
        summarize(model, test, generate_adversarial(model, test, rs, cache), std::nullopt, trained.config.ssim);
    asr.push_back(100.0 * s.asr);
    ssim.push_back(s.ssim_scaled());
    draws.add_row({std::to_string(d + 1), percent(s.asr), format_double(s.ssim_scaled())});
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  auto stddev = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / v.size());
  };
  ReportTable t;
  t.columns = {"variant", "ASR", "ASR_std", "SSIM", "draws"};
  t.add_row({"trained", percent(base.asr), "0", format_double(base.ssim_scaled()), "1"});
  t.add_row({"random", format_double(mean(asr)), format_double(stddev(asr)), format_double(mean(ssim)),
             std::to_string(cfg.random_draws)});
  log << "trained ASR " << t.rows[0][1] << "%, random mean ASR " << t.rows[1][1] << "% over " << cfg.random_draws
      << " draws\n";
  const Workspace ws{cfg.out_dir};
  write_table(ws, "ablate-random-alpha-" + model_id + ".csv", t, log);
  write_table(ws, "ablate-random-alpha-" + model_id + "-draws.csv", draws, log);
  return t;
}

ReportTable ablate_transfer(const ExperimentConfig& cfg, std::ostream& log) {
  const std::vector<std::string> ids = cfg.transfer_models.empty() ? cfg.model_ids() : cfg.transfer_models;
  const Workspace ws{cfg.out_dir};
  std::vector<TrainedModel> models;
  std::vector<LabeledBatch> sets;
  std::vector<std::string> sources;
  std::vector<AttackSequence> seqs;
  for (const auto& id : ids) {
    models.push_back(load_trained(cfg, id));
    sets.push_back(evaluation_set(cfg, models.back()));
    if (std::filesystem::exists(ws.sequence(id))) {
      sources.push_back(id);
      seqs.push_back(load_sequence(ws.sequence(id)));
    }
  }
  if (sources.empty()) throw IoError("no sequence files under " + (ws.root / "sequences").string() + " (run search first)");
  ReportTable t;
  t.columns = {"trained\\tested"};
  t.columns.insert(t.columns.end(), ids.begin(), ids.end());
  for (std::size_t s = 0; s < sources.size(); ++s) {
    std::vector<std::string> row{sources[s]};
    for (std::size_t m = 0; m < ids.size(); ++m) {
      const EvaluationSummary e = evaluate_sequence(models[m], sets[m], seqs[s]);
      row.push_back(percent(e.asr));
      log << "  " << sources[s] << " -> " << ids[m] << ": " << row.back() << "%\n";
    }
    t.add_row(std::move(row));
  }
  write_table(ws, "ablate-transfer.csv", t, log);
  return t;
}

}  // namespace

void ReportTable::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) {
    throw ShapeError("report row has " + std::to_string(row.size()) + " cells for " + std::to_string(columns.size()) +
                     " columns");
  }
  rows.push_back(std::move(row));
}

std::string ReportTable::to_csv() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(cells[i]);
    }
    out += '\n';
  };
  line(columns);
  for (const auto& r : rows) line(r);
  return out;
}

const std::string& ReportTable::at(const std::string& row_key, const std::string& column) const {
  const auto c = std::find(columns.begin(), columns.end(), column);
  if (c == columns.end()) throw ConfigError("report has no column '" + column + "'");
  for (const auto& r : rows) {
    if (r.front() == row_key) return r[static_cast<std::size_t>(c - columns.begin())];
  }
  throw ConfigError("report has no row '" + row_key + "'");
}

AblateMode parse_ablate_mode(const std::string& name) {
  if (name == "stages") return AblateMode::Stages;
  if (name == "random-alpha") return AblateMode::RandomAlpha;
  if (name == "transfer") return AblateMode::Transfer;
  throw ConfigError("unknown ablation mode '" + name + "' (stages | random-alpha | transfer)");
}

std::string ablate_mode_name(AblateMode mode) {
  switch (mode) {
    case AblateMode::Stages: return "stages";
    case AblateMode::RandomAlpha: return "random-alpha";
    case AblateMode::Transfer: return "transfer";
  }
  return "?";
}

LabeledBatch evaluation_set(const ExperimentConfig& cfg, const TrainedModel& model) {
  const Dataset d = load(cfg.dataset_source());
  return filter_correct(model, d.test.slice(0, std::min(cfg.eval_samples, d.test.size())));
}

LabeledBatch search_set(const ExperimentConfig& cfg, const TrainedModel& model) {
  const Dataset d = load(cfg.dataset_source());
  return filter_correct(model, d.train.slice(0, std::min(cfg.search_samples, d.train.size())));
}

ReportTable cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Dataset data = load(cfg.dataset_source());
  const LabeledBatch test = data.test.slice(0, std::min(cfg.eval_samples, data.test.size()));
  AttackSpec probe = default_attack(AttackKind::Pgd);
  probe.eps = cfg.adversarial_pgd.eps;
  probe.seed = mix_seed(cfg.seed, "robust-accuracy");
  const Workspace ws{cfg.out_dir};
  ReportTable t;
  t.columns = {"model", "adversarial", "train_accuracy", "clean_accuracy", "robust_accuracy"};
  for (const auto& id : cfg.model_ids()) {
    const bool adversarial = id.starts_with("at-");
    const TrainConfig tc = cfg.train_config(id);
    log << "train " << id << " (" << (adversarial ? "pgd-at" : "standard") << ", " << tc.epochs << " epochs)\n";
    const TrainedModel m = adversarial ? adversarial_train(data.train, cfg.model, tc, cfg.adversarial_pgd)
                                       : train_classifier(data.train, cfg.model, tc);
    save_model(m, ws.model(id));
    const double clean = accuracy(m, test);
    const Tensor adv = generate_adversarial(m, test, probe, cfg.search.batch_size, probe.seed);
    const double robust = accuracy(m, LabeledBatch{adv, test.labels});
    t.add_row({id, adversarial ? "1" : "0", format_double(m.info.clean_accuracy), format_double(clean),
               format_double(robust)});
    log << "  clean accuracy " << clean << ", pgd robust accuracy " << robust << '\n';
  }
  write_table(ws, "train.csv", t, log);
  return t;
}

AttackSequence cmd_search(const ExperimentConfig& cfg, const std::string& model_id, std::ostream& log) {
  cfg.validate();
  const TrainedModel model = load_trained(cfg, model_id);
  return run_search(cfg, model, search_set(cfg, model), cfg.search_config(), model_id, log);
}

ReportTable cmd_evaluate(const ExperimentConfig& cfg, const std::string& model_id,
                         const std::optional<std::filesystem::path>& sequence, std::ostream& log) {
  cfg.validate();
  const TrainedModel model = load_trained(cfg, model_id);
  const AttackSequence seq = load_or_default_sequence(cfg, model_id, sequence);
  const LabeledBatch data = evaluation_set(cfg, model);
  if (data.size() == 0) throw ConfigError("no correctly classified evaluation samples");
  log << "evaluate " << model_id << " on " << data.size() << " correctly classified samples\n";

  const Workspace ws{cfg.out_dir};
  const std::string json_name = "evaluate-" + model_id + ".json";
  ReportTable wide, long_form;
  wide.columns = wide_columns(cfg, "attack");
  long_form.columns = {"attack", "defense", "ASR", "SSIM", "samples"};
  nlohmann::json doc = {{"model", model_id}, {"samples", data.size()}, {"results", nlohmann::json::array()}};

  auto record = [&](const std::string& name, const Tensor& adv) {
    const auto scores = score_defenses(cfg, model, data, adv, seq.config.ssim);
    wide.add_row(wide_row(name, scores));
    for (const auto& [defense, s] : scores) {
      long_form.add_row({name, defense, percent(s.asr), format_double(s.ssim_scaled()), json_name});
      doc["results"].push_back({{"attack", name},
                                {"defense", defense},
                                {"asr", 100.0 * s.asr},
                                {"ssim", s.ssim_scaled()},
                                {"records", outcome_json(s.outcome)}});
    }
    log << "  " << name << ": Base " << wide.rows.back()[1] << "%, Avg " << wide.rows.back()[wide.columns.size() - 2]
        << "%\n";
  };
  for (const auto& attack : seq.config.pool) {
    record(attack_name(attack.kind),
           generate_adversarial(model, data, attack, seq.config.batch_size, cfg.baseline_salt()));
  }
  record("daash", generate_adversarial(model, data, seq));

  write_table(ws, "evaluate-" + model_id + ".csv", wide, log);
  write_table(ws, "evaluate-" + model_id + "-long.csv", long_form, log);
  write_file_atomic(ws.report(json_name), doc.dump(1) + '\n');
  return wide;
}

ReportTable cmd_ablate(const ExperimentConfig& cfg, AblateMode mode, const std::string& model_id,
                       const std::optional<std::filesystem::path>& sequence, std::ostream& log) {
  cfg.validate();
  switch (mode) {
    case AblateMode::Stages: return ablate_stages(cfg, model_id, log);
    case AblateMode::RandomAlpha: return ablate_random(cfg, model_id, sequence, log);
    case AblateMode::Transfer: return ablate_transfer(cfg, log);
  }
  throw ConfigError("unknown ablation mode");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e)) return 4;
  return 1;
}

}  // namespace daash

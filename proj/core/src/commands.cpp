#include "latentguard/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "latentguard/dataset.hpp"
#include "latentguard/gcg.hpp"
#include "latentguard/rng.hpp"
#include "latentguard/trainer.hpp"

namespace lg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void require_file(const std::string& path, const char* producer) {
  if (!fs::exists(path))
    throw std::runtime_error("missing artifact '" + path + "' (run `guard " +
                             std::string(producer) + "` first)");
}

std::vector<PromptRecord> load_pipeline_dataset(const RunConfig& cfg) {
  require_file(cfg.paths.resolved_data_dir() + "/copro.train.jsonl", "gen-data");
  return load_dataset(cfg.paths.resolved_data_dir());
}

// mean-pooled encodings of the blacklist, for the raw-cosine baseline
std::vector<std::vector<double>> concept_means(const ToyEncoder& encoder,
                                               const std::vector<ConceptRef>& concepts) {
  std::vector<std::vector<double>> out;
  out.reserve(concepts.size());
  for (const auto& c : concepts) out.push_back(encoder.encode(c.text).mean_pooled());
  return out;
}

double rawcosine_min_distance(const ToyEncoder& encoder, const std::string& prompt,
                              const std::vector<std::vector<double>>& means) {
  const std::vector<double> p = encoder.encode(prompt).mean_pooled();
  double np = 0.0;
  for (double v : p) np += v * v;
  np = std::max(std::sqrt(np), 1e-12);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : means) {
    double dot = 0.0, nq = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      dot += p[i] * q[i];
      nq += q[i] * q[i];
    }
    best = std::min(best, 1.0 - dot / (np * std::max(std::sqrt(nq), 1e-12)));
  }
  return best;
}

std::vector<ConceptRef> subset_concepts(std::vector<ConceptRef> all, double fraction,
                                        std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw std::runtime_error("ccheck fraction must lie in (0, 1]");
  Rng rng(seed);
  rng.shuffle(all);
  const std::size_t keep =
      std::max<std::size_t>(1, std::size_t(std::ceil(fraction * double(all.size()))));
  all.resize(std::min(keep, all.size()));
  return all;
}

CellMetrics score_cell(const ConceptIndex& index, const ToyEncoder& encoder,
                       const std::vector<ConceptRef>& concepts,
                       const std::vector<std::vector<double>>& means,
                       const std::vector<const PromptRecord*>& records, double gamma,
                       const std::string& dist, const std::string& var,
                       const std::string& roc_path, ScoredSet& pooled) {
  CellMetrics m;
  m.distribution = dist;
  m.variant = var;
  m.n_records = std::int64_t(records.size());

  ScoredSet s, raw;
  std::vector<bool> truth_unsafe(records.size(), true), flagged(records.size());
  std::vector<std::string> top_ids(records.size()), truth_ids(records.size());
  std::size_t blacklist_correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const PromptRecord& r = *records[i];
    const GuardVerdict vu = classify(index, encoder, r.unsafe_prompt);
    const GuardVerdict vs = classify(index, encoder, r.safe_prompt);
    s.push(vu.min_distance, true);
    s.push(vs.min_distance, false);
    pooled.push(vu.min_distance, true);
    pooled.push(vs.min_distance, false);
    flagged[i] = vu.min_distance < gamma;
    top_ids[i] = vu.top_concept_id;
    truth_ids[i] = r.concept_id;
    blacklist_correct += baseline_blacklist_hit(r.unsafe_prompt, concepts) ? 1 : 0;
    blacklist_correct += baseline_blacklist_hit(r.safe_prompt, concepts) ? 0 : 1;
    raw.push(rawcosine_min_distance(encoder, r.unsafe_prompt, means), true);
    raw.push(rawcosine_min_distance(encoder, r.safe_prompt, means), false);
  }
  m.auc = roc_auc(s);
  m.accuracy = accuracy_at(s, gamma);
  m.fine_grained = fine_grained_accuracy(truth_unsafe, flagged, top_ids, truth_ids);
  m.baseline_blacklist_accuracy = double(blacklist_correct) / double(2 * records.size());
  m.baseline_rawcosine_auc = roc_auc(raw);
  write_roc_csv(roc_path, roc_points(s));
  return m;
}

double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : (xs[n / 2 - 1] + xs[n / 2]) / 2.0;
}

double p90_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return xs[std::min(xs.size() - 1, std::size_t(0.9 * double(xs.size())))];
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const ToyEncoder encoder(cfg.encoder_config());
  const std::vector<PromptRecord> records = generate_synthetic(cfg.data, encoder);
  validate_records(records);
  fs::create_directories(cfg.paths.resolved_data_dir());
  save_dataset(cfg.paths.resolved_data_dir(), records);
  print_split_stats(log, split_stats(records));
  log << "dataset written to " << cfg.paths.resolved_data_dir() << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const std::vector<PromptRecord> records = load_pipeline_dataset(cfg);
  const ToyEncoder encoder(cfg.encoder_config());
  const TrainResult result = train(cfg.model, cfg.train, records, encoder, &log);
  fs::create_directories(cfg.paths.out_dir);
  save_checkpoint(cfg.paths.resolved_checkpoint(), result.params);
  write_loss_csv(cfg.paths.resolved_loss_csv(), result.loss_trace);
  log << "checkpoint written to " << cfg.paths.resolved_checkpoint() << ", final loss "
      << result.loss_trace.back() << "\n";
}

void cmd_gcg(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  std::vector<PromptRecord> records = load_pipeline_dataset(cfg);
  // regenerating is idempotent: prior attack records are replaced
  records.erase(std::remove_if(records.begin(), records.end(),
                               [](const PromptRecord& r) {
                                 return r.variant == Variant::adversarial;
                               }),
                records.end());
  const ToyEncoder encoder(cfg.encoder_config());
  // the attacker searches the encoder's whole vocabulary, not just corpus words
  const AttackVocab vocab = token_space_vocab(encoder, derive_seed(cfg.gcg.seed, 9001));
  const AdversarialBuild built = make_adversarial_variant(records, encoder, vocab, cfg.gcg);
  for (const auto& f : built.failures) log << "attack failed, skipping record " << f << "\n";
  if (built.records.empty()) throw std::runtime_error("no adversarial records were produced");

  double mean_loss = 0.0;
  for (const auto& r : built.records) mean_loss += r.gcg_loss.value_or(0.0);
  mean_loss /= double(built.records.size());
  records.insert(records.end(), built.records.begin(), built.records.end());
  validate_records(records);
  save_dataset(cfg.paths.resolved_data_dir(), records);
  log << built.records.size() << " adversarial records (mean attack loss " << mean_loss
      << "), dataset rewritten\n";
}

double cmd_calibrate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const std::vector<PromptRecord> records = load_pipeline_dataset(cfg);
  require_file(cfg.paths.resolved_checkpoint(), "train");
  const EmbeddingMapParams params = load_checkpoint(cfg.paths.resolved_checkpoint());
  const ToyEncoder encoder(cfg.encoder_config());
  const std::vector<ConceptRef> concepts = distinct_concepts(records, Distribution::id);

  ConceptIndex index = build_index<float>(params, concepts, encoder, 1.0);  // placeholder gamma
  ScoredSet s;
  std::size_t n_val = 0;
  for (const auto& r : records) {
    if (r.split != Split::val || r.distribution != Distribution::id) continue;
    ++n_val;
    s.push(classify(index, encoder, r.unsafe_prompt).min_distance, true);
    s.push(classify(index, encoder, r.safe_prompt).min_distance, false);
  }
  if (n_val == 0) throw std::runtime_error("no ID validation records to calibrate on");
  ThresholdChoice choice = tune_threshold(s);
  // a sentinel can win only on degenerate validation sets; indices require a
  // usable cosine-distance threshold, so pin it inside (0, 2)
  if (!(choice.gamma > 0.0 && choice.gamma < 2.0)) {
    const double pinned = std::min(std::max(choice.gamma, 1e-9), 2.0 - 1e-9);
    log << "tuned gamma " << choice.gamma << " is outside (0, 2), pinning to " << pinned << "\n";
    choice.gamma = pinned;
  }
  index.gamma = choice.gamma;
  fs::create_directories(cfg.paths.out_dir);
  save_index(cfg.paths.resolved_index(), index);
  log << "gamma " << choice.gamma << " (validation accuracy " << choice.accuracy << " over "
      << n_val << " records), index written to " << cfg.paths.resolved_index() << "\n";
  return choice.gamma;
}

const CellMetrics& EvalReport::cell(const std::string& distribution,
                                    const std::string& variant) const {
  for (const auto& c : cells)
    if (c.distribution == distribution && c.variant == variant) return c;
  throw std::runtime_error("no metrics cell " + distribution + "/" + variant);
}

EvalReport cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log) {
  cfg.validate();
  const std::vector<PromptRecord> records = load_pipeline_dataset(cfg);
  require_file(cfg.paths.resolved_checkpoint(), "train");
  require_file(cfg.paths.resolved_index(), "calibrate");
  const EmbeddingMapParams params = load_checkpoint(cfg.paths.resolved_checkpoint());
  const ToyEncoder encoder(cfg.encoder_config());
  const double gamma = load_index(cfg.paths.resolved_index()).gamma;

  EvalReport report;
  report.gamma = gamma;
  report.ccheck_fraction = opt.ccheck_fraction;

  const std::string dir = cfg.paths.resolved_metrics_dir();
  fs::create_directories(dir);

  for (const Distribution dist : {Distribution::id, Distribution::ood}) {
    const std::string dist_name = dist == Distribution::id ? "ID" : "OOD";
    std::vector<ConceptRef> concepts = subset_concepts(
        distinct_concepts(records, dist), opt.ccheck_fraction,
        derive_seed(opt.subset_seed, dist == Distribution::id ? 0 : 1));
    if (dist == Distribution::id)
      report.id_blacklist_size = std::int64_t(concepts.size());
    else
      report.ood_blacklist_size = std::int64_t(concepts.size());

    const ConceptIndex index = build_index<float>(params, concepts, encoder, gamma);
    const auto means = concept_means(encoder, concepts);

    ScoredSet pooled;
    for (const Variant var : {Variant::explicit_, Variant::synonym, Variant::adversarial}) {
      std::vector<const PromptRecord*> cell_records;
      for (const auto& r : records)
        if (r.split == Split::test && r.distribution == dist && r.variant == var)
          cell_records.push_back(&r);
      if (cell_records.empty())
        throw std::runtime_error("no test records for cell " + dist_name + "/" + to_string(var) +
                                 (var == Variant::adversarial ? " (run `guard gcg` first)" : ""));
      const std::string roc_path = dir + "/roc." + dist_name + "." + to_string(var) + ".csv";
      report.cells.push_back(score_cell(index, encoder, concepts, means, cell_records, gamma,
                                        dist_name, to_string(var), roc_path, pooled));
      const CellMetrics& m = report.cells.back();
      log << dist_name << "/" << to_string(var) << ": n " << m.n_records << ", auc " << m.auc
          << ", accuracy " << m.accuracy << ", fine-grained " << m.fine_grained << "\n";
    }
    const double pooled_acc = accuracy_at(pooled, gamma);
    (dist == Distribution::id ? report.id_pooled_accuracy : report.ood_pooled_accuracy) =
        pooled_acc;
    log << dist_name << " pooled accuracy " << pooled_acc << "\n";
  }

  json j;
  j["gamma"] = report.gamma;
  j["ccheck_fraction"] = report.ccheck_fraction;
  j["id_blacklist_size"] = report.id_blacklist_size;
  j["ood_blacklist_size"] = report.ood_blacklist_size;
  j["pooled"] = {{"ID", report.id_pooled_accuracy}, {"OOD", report.ood_pooled_accuracy}};
  j["cells"] = json::array();
  for (const auto& c : report.cells)
    j["cells"].push_back({{"distribution", c.distribution},
                          {"variant", c.variant},
                          {"n_records", c.n_records},
                          {"auc", c.auc},
                          {"accuracy", c.accuracy},
                          {"fine_grained", c.fine_grained},
                          {"baseline_blacklist_accuracy", c.baseline_blacklist_accuracy},
                          {"baseline_rawcosine_auc", c.baseline_rawcosine_auc}});
  const std::string metrics_path = dir + "/" + opt.metrics_name;
  std::ofstream out(metrics_path);
  if (!out) throw std::runtime_error("cannot open '" + metrics_path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed while writing '" + metrics_path + "'");
  log << "metrics written to " << metrics_path << "\n";
  return report;
}

std::vector<BenchRow> cmd_bench(const RunConfig& cfg, const BenchOptions& opt, std::ostream& out,
                                std::ostream& log) {
  cfg.validate();
  if (opt.repeats < 1 || opt.batch_sizes.empty() || opt.n_check_values.empty())
    throw std::runtime_error("bench needs repeats >= 1 and non-empty grids");
  const ToyEncoder encoder(cfg.encoder_config());
  EmbeddingMapParams params;
  if (fs::exists(cfg.paths.resolved_checkpoint())) {
    params = load_checkpoint(cfg.paths.resolved_checkpoint());
    log << "benchmarking checkpoint " << cfg.paths.resolved_checkpoint() << "\n";
  } else {
    params = init_params(cfg.model);
    log << "no checkpoint found, benchmarking freshly initialized weights\n";
  }

  const int n_max = *std::max_element(opt.n_check_values.begin(), opt.n_check_values.end());
  Rng rng(derive_seed(cfg.seeds.data, 303));
  const char* cons = "bcdfghjklmnpqrstvwz";
  const char* vowels = "aeiou";
  auto mint_word = [&rng, cons, vowels]() {
    std::string w;
    for (int i = 0; i < 3; ++i) {
      w.push_back(cons[rng.below(19)]);
      w.push_back(vowels[rng.below(5)]);
    }
    return w;
  };
  std::vector<ConceptRef> pool;
  for (int i = 0; i < n_max; ++i)
    pool.push_back({"bench-" + std::to_string(i), mint_word()});

  std::vector<EncodedText> prompts;
  for (int i = 0; i < 32; ++i) {
    std::string p;
    for (int w = 0; w < 10; ++w) {
      if (w) p.push_back(' ');
      p += mint_word();
    }
    prompts.push_back(encoder.encode(p));
  }

  out << "batch,n_check,median_us_per_prompt,p90_us_per_prompt,index_bytes,analytic_bytes\n";
  std::vector<BenchRow> rows;
  for (const int n_check : opt.n_check_values) {
    if (n_check < 1 || n_check > n_max) throw std::runtime_error("bad n_check value");
    const std::vector<ConceptRef> concepts(pool.begin(), pool.begin() + n_check);
    const ConceptIndex index = build_index<float>(params, concepts, encoder, 0.5);
    for (const int batch : opt.batch_sizes) {
      if (batch < 1) throw std::runtime_error("bad batch size");
      double sink = 0.0;
      for (int w = 0; w < 3; ++w) sink += score_prompt(index, prompts[0]).front();
      std::vector<double> per_prompt_us;
      std::size_t cursor = 0;
      for (int r = 0; r < opt.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int b = 0; b < batch; ++b) {
          sink += score_prompt(index, prompts[cursor % prompts.size()]).front();
          ++cursor;
        }
        const auto t1 = std::chrono::steady_clock::now();
        per_prompt_us.push_back(
            double(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()) /
            1000.0 / double(batch));
      }
      if (!std::isfinite(sink)) throw std::runtime_error("benchmark produced non-finite scores");
      BenchRow row;
      row.batch = batch;
      row.n_check = n_check;
      row.median_us_per_prompt = median_of(per_prompt_us);
      row.p90_us_per_prompt = p90_of(per_prompt_us);
      row.index_bytes = index.memory_bytes();
      row.analytic_bytes = index.analytic_bytes();
      rows.push_back(row);
      out << row.batch << "," << row.n_check << "," << row.median_us_per_prompt << ","
          << row.p90_us_per_prompt << "," << row.index_bytes << "," << row.analytic_bytes << "\n";
    }
  }
  return rows;
}

}  // namespace lg

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "latentguard/config.hpp"
#include "latentguard/index.hpp"
#include "latentguard/metrics.hpp"

namespace lg {

// Subcommand bodies. Each throws std::runtime_error with a descriptive message
// on bad inputs or missing upstream artifacts; the CLI turns that into a
// nonzero exit.

// Writes copro.{train,val,test}.jsonl under paths.data_dir and prints the
// split table.
void cmd_gen_data(const RunConfig& cfg, std::ostream& log);

// Trains on the ID train split, writes the checkpoint and the loss CSV.
void cmd_train(const RunConfig& cfg, std::ostream& log);

// Replaces any previous adversarial records: every explicit test record gets a
// GCG-optimized sibling with the concept swapped for attack tokens.
void cmd_gcg(const RunConfig& cfg, std::ostream& log);

// Tunes gamma for best accuracy on the pooled ID validation records and saves
// the serving index (ID blacklist) with that gamma baked in.
double cmd_calibrate(const RunConfig& cfg, std::ostream& log);

struct EvalOptions {
  double ccheck_fraction = 1.0;     // seeded nested subset of each blacklist
  std::uint64_t subset_seed = 17;
  std::string metrics_name = "metrics.json";
};

struct CellMetrics {
  std::string distribution;  // "ID" | "OOD"
  std::string variant;       // "explicit" | "synonym" | "adversarial"
  std::int64_t n_records = 0;
  double auc = 0.0;
  double accuracy = 0.0;      // at the calibrated gamma
  double fine_grained = 0.0;  // flagged and attributed to the true concept
  double baseline_blacklist_accuracy = 0.0;
  double baseline_rawcosine_auc = 0.0;
};

struct EvalReport {
  double gamma = 0.0;
  double ccheck_fraction = 1.0;
  std::int64_t id_blacklist_size = 0;
  std::int64_t ood_blacklist_size = 0;
  std::vector<CellMetrics> cells;  // exactly 6: ID/OOD x explicit/synonym/adversarial
  double id_pooled_accuracy = 0.0;
  double ood_pooled_accuracy = 0.0;

  const CellMetrics& cell(const std::string& distribution, const std::string& variant) const;
};

// Scores the six test cells against the calibrated index, writes
// <metrics_dir>/<metrics_name> plus one roc.<dist>.<variant>.csv per cell.
EvalReport cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log);

struct BenchOptions {
  std::vector<int> batch_sizes = {1, 8, 32};
  std::vector<int> n_check_values = {64, 256, 578};
  int repeats = 100;  // timed runs per cell, after warmup
};

struct BenchRow {
  int batch = 0;
  int n_check = 0;
  double median_us_per_prompt = 0.0;
  double p90_us_per_prompt = 0.0;
  std::int64_t index_bytes = 0;
  std::int64_t analytic_bytes = 0;
};

// Scoring-only latency (prompts are pre-encoded) and index size per
// (batch, N_check) cell; blacklists are padded with minted pseudo-concepts.
// Writes CSV rows to `out`.
std::vector<BenchRow> cmd_bench(const RunConfig& cfg, const BenchOptions& opt, std::ostream& out,
                                std::ostream& log);

}  // namespace lg

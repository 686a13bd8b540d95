#pragma once

#include <cstdint>
#include <string>

#include "latentguard/dataset.hpp"
#include "latentguard/encoder.hpp"
#include "latentguard/gcg.hpp"
#include "latentguard/model.hpp"
#include "latentguard/trainer.hpp"

namespace lg {

// Every random choice in the pipeline flows from these three streams. The
// GUARD_SEED environment variable, when set, rederives all of them.
struct SeedsConfig {
  std::uint64_t data = 1;
  std::uint64_t model = 2;
  std::uint64_t train = 3;
};

// Empty strings mean "derive from out_dir" (see resolved accessors).
struct PathsConfig {
  std::string out_dir = "artifacts";
  std::string data_dir;     // <out_dir>/data
  std::string checkpoint;   // <out_dir>/model.lge
  std::string index;        // <out_dir>/index.lge
  std::string loss_csv;     // <out_dir>/loss.csv
  std::string metrics_dir;  // <out_dir>/metrics

  std::string resolved_data_dir() const;
  std::string resolved_checkpoint() const;
  std::string resolved_index() const;
  std::string resolved_loss_csv() const;
  std::string resolved_metrics_dir() const;
};

struct RunConfig {
  EmbeddingMapConfig model;  // defaults shrunk for CPU runs, see default_run_config
  TrainConfig train;
  SynthConfig data;
  GcgConfig gcg;
  SeedsConfig seeds;
  PathsConfig paths;

  // Seeds are pushed into the sections at load time: data.seed <- seeds.data,
  // model.seed <- seeds.model, train.seed <- seeds.train, and the encoder and
  // gcg streams derive from seeds.data.
  void apply_seeds();
  EncoderConfig encoder_config() const;
  void validate() const;
};

// heads=4, head_dim=16, d_text=64 model; everything else is the section
// defaults. Seeds already applied.
RunConfig default_run_config();

// Strict JSON: unknown keys anywhere are an error, sections are optional and
// default when absent. GUARD_SEED, if set, replaces the seeds section.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

std::string run_config_json(const RunConfig& cfg);
void save_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace lg

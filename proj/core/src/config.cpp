#include "latentguard/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "latentguard/rng.hpp"

namespace lg {

namespace {

using nlohmann::json;

// strict object walker: every key must be consumed exactly once
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::runtime_error("config section '" + where_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;  // keep default
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw std::runtime_error("config key '" + where_ + "." + key + "' has the wrong type");
    }
    seen_.push_back(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool known = false;
      for (const auto& k : seen_)
        if (k == it.key()) known = true;
      if (!known)
        throw std::runtime_error("unknown config key '" + where_ + "." + it.key() + "'");
    }
  }

  const json& raw() const { return j_; }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

std::string join_path(const std::string& dir, const char* leaf) {
  if (dir.empty()) return leaf;
  return dir.back() == '/' ? dir + leaf : dir + "/" + leaf;
}

}  // namespace

std::string PathsConfig::resolved_data_dir() const {
  return data_dir.empty() ? join_path(out_dir, "data") : data_dir;
}
std::string PathsConfig::resolved_checkpoint() const {
  return checkpoint.empty() ? join_path(out_dir, "model.lge") : checkpoint;
}
std::string PathsConfig::resolved_index() const {
  return index.empty() ? join_path(out_dir, "index.lge") : index;
}
std::string PathsConfig::resolved_loss_csv() const {
  return loss_csv.empty() ? join_path(out_dir, "loss.csv") : loss_csv;
}
std::string PathsConfig::resolved_metrics_dir() const {
  return metrics_dir.empty() ? join_path(out_dir, "metrics") : metrics_dir;
}

void RunConfig::apply_seeds() {
  data.seed = seeds.data;
  model.seed = seeds.model;
  train.seed = seeds.train;
  gcg.seed = derive_seed(seeds.data, 202);
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig e;
  e.seed = derive_seed(seeds.data, 101);
  e.d_text = model.d_text;
  return e;
}

void RunConfig::validate() const {
  model.validate();
  gcg.validate();
  if (train.batch_size <= 0 || train.iterations <= 0)
    throw std::runtime_error("train.batch_size and train.iterations must be positive");
  if (train.lr <= 0.0 || train.temperature <= 0.0)
    throw std::runtime_error("train.lr and train.temperature must be positive");
  if (train.weight_decay < 0.0) throw std::runtime_error("train.weight_decay must be >= 0");
  if (data.n_id_concepts <= 0 || data.n_ood_concepts <= 0)
    throw std::runtime_error("data concept counts must be positive");
  if (data.alias_plant_prob < 0.0 || data.alias_plant_prob > 1.0)
    throw std::runtime_error("data.alias_plant_prob must lie in [0, 1]");
  if (data.alias_candidates < 1) throw std::runtime_error("data.alias_candidates must be positive");
  if (paths.out_dir.empty()) throw std::runtime_error("paths.out_dir must not be empty");
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.model.heads = 4;
  cfg.model.head_dim = 16;
  cfg.model.d_text = 64;
  // joint-space width balances two pressures: wide enough that 64 blacklist
  // anchors stay spread out (min-distance needs headroom), narrow enough that
  // unseen concepts keep a usable share of the trained projections' signal
  cfg.model.d_out = 48;
  cfg.apply_seeds();
  return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
  json root_json;
  try {
    root_json = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig cfg = default_run_config();
  ObjectReader root(root_json, "config");

  if (auto it = root_json.find("model"); it != root_json.end()) {
    ObjectReader r(*it, "model");
    r.get("heads", cfg.model.heads);
    r.get("head_dim", cfg.model.head_dim);
    r.get("d_text", cfg.model.d_text);
    r.get("d_out", cfg.model.d_out);
    r.finish();
  }
  if (auto it = root_json.find("train"); it != root_json.end()) {
    ObjectReader r(*it, "train");
    r.get("batch_size", cfg.train.batch_size);
    r.get("iterations", cfg.train.iterations);
    r.get("lr", cfg.train.lr);
    r.get("weight_decay", cfg.train.weight_decay);
    r.get("temperature", cfg.train.temperature);
    r.get("safe_negatives", cfg.train.safe_negatives);
    r.finish();
  }
  if (auto it = root_json.find("data"); it != root_json.end()) {
    ObjectReader r(*it, "data");
    r.get("n_id_concepts", cfg.data.n_id_concepts);
    r.get("n_ood_concepts", cfg.data.n_ood_concepts);
    r.get("train_per_concept", cfg.data.train_per_concept);
    r.get("val_per_concept", cfg.data.val_per_concept);
    r.get("test_per_concept", cfg.data.test_per_concept);
    r.get("template_pool_size", cfg.data.template_pool_size);
    r.get("filler_vocab", cfg.data.filler_vocab);
    r.get("min_template_words", cfg.data.min_template_words);
    r.get("max_template_words", cfg.data.max_template_words);
    r.get("alias_plant_prob", cfg.data.alias_plant_prob);
    r.get("alias_candidates", cfg.data.alias_candidates);
    r.finish();
  }
  if (auto it = root_json.find("gcg"); it != root_json.end()) {
    ObjectReader r(*it, "gcg");
    r.get("n_adv_tokens", cfg.gcg.n_adv_tokens);
    r.get("iterations", cfg.gcg.iterations);
    r.get("candidate_batch", cfg.gcg.candidate_batch);
    r.get("top_k", cfg.gcg.top_k);
    r.get("synonym_filter_size", cfg.gcg.synonym_filter_size);
    r.get("use_filter", cfg.gcg.use_filter);
    r.finish();
  }
  if (auto it = root_json.find("seeds"); it != root_json.end()) {
    ObjectReader r(*it, "seeds");
    r.get("data", cfg.seeds.data);
    r.get("model", cfg.seeds.model);
    r.get("train", cfg.seeds.train);
    r.finish();
  }
  if (auto it = root_json.find("paths"); it != root_json.end()) {
    ObjectReader r(*it, "paths");
    r.get("out_dir", cfg.paths.out_dir);
    r.get("data_dir", cfg.paths.data_dir);
    r.get("checkpoint", cfg.paths.checkpoint);
    r.get("index", cfg.paths.index);
    r.get("loss_csv", cfg.paths.loss_csv);
    r.get("metrics_dir", cfg.paths.metrics_dir);
    r.finish();
  }
  for (auto it = root_json.begin(); it != root_json.end(); ++it) {
    const std::string& k = it.key();
    if (k != "model" && k != "train" && k != "data" && k != "gcg" && k != "seeds" && k != "paths")
      throw std::runtime_error("unknown config key 'config." + k + "'");
  }

  if (const char* env = std::getenv("GUARD_SEED")) {
    std::uint64_t g = 0;
    try {
      std::size_t used = 0;
      g = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::runtime_error("GUARD_SEED must be an unsigned integer, got '" + std::string(env) +
                               "'");
    }
    cfg.seeds.data = derive_seed(g, 1);
    cfg.seeds.model = derive_seed(g, 2);
    cfg.seeds.train = derive_seed(g, 3);
  }

  cfg.apply_seeds();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) {
  json j;
  j["model"] = {{"heads", cfg.model.heads},
                {"head_dim", cfg.model.head_dim},
                {"d_text", cfg.model.d_text},
                {"d_out", cfg.model.d_out}};
  j["train"] = {{"batch_size", cfg.train.batch_size}, {"iterations", cfg.train.iterations},
                {"lr", cfg.train.lr},                 {"weight_decay", cfg.train.weight_decay},
                {"temperature", cfg.train.temperature}, {"safe_negatives", cfg.train.safe_negatives}};
  j["data"] = {{"n_id_concepts", cfg.data.n_id_concepts},
               {"n_ood_concepts", cfg.data.n_ood_concepts},
               {"train_per_concept", cfg.data.train_per_concept},
               {"val_per_concept", cfg.data.val_per_concept},
               {"test_per_concept", cfg.data.test_per_concept},
               {"template_pool_size", cfg.data.template_pool_size},
               {"filler_vocab", cfg.data.filler_vocab},
               {"min_template_words", cfg.data.min_template_words},
               {"max_template_words", cfg.data.max_template_words},
               {"alias_plant_prob", cfg.data.alias_plant_prob},
               {"alias_candidates", cfg.data.alias_candidates}};
  j["gcg"] = {{"n_adv_tokens", cfg.gcg.n_adv_tokens},
              {"iterations", cfg.gcg.iterations},
              {"candidate_batch", cfg.gcg.candidate_batch},
              {"top_k", cfg.gcg.top_k},
              {"synonym_filter_size", cfg.gcg.synonym_filter_size},
              {"use_filter", cfg.gcg.use_filter}};
  j["seeds"] = {{"data", cfg.seeds.data}, {"model", cfg.seeds.model}, {"train", cfg.seeds.train}};
  j["paths"] = {{"out_dir", cfg.paths.out_dir},     {"data_dir", cfg.paths.data_dir},
                {"checkpoint", cfg.paths.checkpoint}, {"index", cfg.paths.index},
                {"loss_csv", cfg.paths.loss_csv},   {"metrics_dir", cfg.paths.metrics_dir}};
  return j.dump(2) + "\n";
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << run_config_json(cfg);
  if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

}  // namespace lg

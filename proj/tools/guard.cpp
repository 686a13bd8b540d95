#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI/CLI.hpp>

#include "latentguard/commands.hpp"
#include "latentguard/config.hpp"
#include "latentguard/service.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", opts.out_dir, "artifact directory (overrides paths.out_dir)");
}

// the parse path also applies the GUARD_SEED override, so route through it
// even when no file was given
lg::RunConfig resolve_config(const CommonOpts& opts) {
  lg::RunConfig cfg = opts.config_path.empty() ? lg::parse_run_config("{}")
                                               : lg::load_run_config(opts.config_path);
  if (!opts.out_dir.empty()) cfg.paths.out_dir = opts.out_dir;
  return cfg;
}

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const auto comma = csv.find(',', pos);
    const std::string tok = csv.substr(pos, comma == std::string::npos ? csv.npos : comma - pos);
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw std::runtime_error(std::string("bad ") + what + " list entry '" + tok + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw std::runtime_error(std::string(what) + " list is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent guard: prompt safety screening against a concept blacklist"};
  app.require_subcommand(1);

  int exit_code = 0;
  auto guarded = [&exit_code](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      exit_code = 1;
    }
  };

  // gen-data
  {
    auto* cmd = app.add_subcommand("gen-data", "generate the synthetic prompt dataset");
    auto opts = std::make_shared<CommonOpts>();
    auto id_concepts = std::make_shared<int>(0);
    auto ood_concepts = std::make_shared<int>(0);
    auto plant = std::make_shared<double>(-1.0);
    add_common(cmd, *opts);
    cmd->add_option("--id-concepts", *id_concepts, "in-distribution concept count");
    cmd->add_option("--ood-concepts", *ood_concepts, "held-out concept count");
    cmd->add_option("--alias-plant-prob", *plant,
                    "chance an explicit train record also emits its alias");
    cmd->callback([=, &exit_code, &guarded] {
      guarded([&] {
        lg::RunConfig cfg = resolve_config(*opts);
        if (*id_concepts > 0) cfg.data.n_id_concepts = *id_concepts;
        if (*ood_concepts > 0) cfg.data.n_ood_concepts = *ood_concepts;
        if (*plant >= 0.0) cfg.data.alias_plant_prob = *plant;
        lg::cmd_gen_data(cfg, std::cout);
      });
    });
  }

  // train
  {
    auto* cmd = app.add_subcommand("train", "train the embedding map on the ID train split");
    auto opts = std::make_shared<CommonOpts>();
    auto iterations = std::make_shared<int>(0);
    auto batch = std::make_shared<int>(0);
    auto lr = std::make_shared<double>(0.0);
    auto heads = std::make_shared<int>(0);
    auto head_dim = std::make_shared<int>(0);
    auto no_safe_neg = std::make_shared<bool>(false);
    add_common(cmd, *opts);
    cmd->add_option("--iterations", *iterations, "optimizer steps");
    cmd->add_option("--batch-size", *batch, "concepts per batch");
    cmd->add_option("--lr", *lr, "AdamW learning rate");
    cmd->add_option("--heads", *heads, "attention heads");
    cmd->add_option("--head-dim", *head_dim, "per-head width");
    cmd->add_flag("--no-safe-negatives", *no_safe_neg, "drop safe prompts from the negative set");
    cmd->callback([=, &exit_code, &guarded] {
      guarded([&] {
        lg::RunConfig cfg = resolve_config(*opts);
        if (*iterations > 0) cfg.train.iterations = *iterations;
        if (*batch > 0) cfg.train.batch_size = *batch;
        if (*lr > 0.0) cfg.train.lr = *lr;
        if (*heads > 0) cfg.model.heads = *heads;
        if (*head_dim > 0) cfg.model.head_dim = *head_dim;
        if (*no_safe_neg) cfg.train.safe_negatives = false;
        lg::cmd_train(cfg, std::cout);
      });
    });
  }

  // gcg
  {
    auto* cmd = app.add_subcommand("gcg", "attach GCG adversarial variants to the test split");
    auto opts = std::make_shared<CommonOpts>();
    auto adv_tokens = std::make_shared<int>(0);
    auto iters = std::make_shared<int>(0);
    auto no_filter = std::make_shared<bool>(false);
    add_common(cmd, *opts);
    cmd->add_option("--adv-tokens", *adv_tokens, "optimized token count per attack");
    cmd->add_option("--gcg-iterations", *iters, "coordinate steps per attack");
    cmd->add_flag("--no-filter", *no_filter, "skip the near-synonym exclusion filter");
    cmd->callback([=, &exit_code, &guarded] {
      guarded([&] {
        lg::RunConfig cfg = resolve_config(*opts);
        if (*adv_tokens > 0) cfg.gcg.n_adv_tokens = *adv_tokens;
        if (*iters > 0) cfg.gcg.iterations = *iters;
        if (*no_filter) cfg.gcg.use_filter = false;
        lg::cmd_gcg(cfg, std::cout);
      });
    });
  }

  // calibrate
  {
    auto* cmd = app.add_subcommand("calibrate", "tune gamma on validation data, write the index");
    auto opts = std::make_shared<CommonOpts>();
    add_common(cmd, *opts);
    cmd->callback([=, &exit_code, &guarded] {
      guarded([&] { lg::cmd_calibrate(resolve_config(*opts), std::cout); });
    });
  }

  // eval
  {
    auto* cmd = app.add_subcommand("eval", "score the six test cells, write metrics.json");
    auto opts = std::make_shared<CommonOpts>();
    auto fraction = std::make_shared<double>(1.0);
    auto subset_seed = std::make_shared<std::uint64_t>(17);
    auto metrics_name = std::make_shared<std::string>("metrics.json");
    add_common(cmd, *opts);
    cmd->add_option("--ccheck-fraction", *fraction,
                    "seeded fraction of each blacklist to keep, in (0, 1]");
    cmd->add_option("--subset-seed", *subset_seed, "seed for the blacklist subset");
    cmd->add_option("--metrics-name", *metrics_name, "metrics file name inside metrics_dir");
    cmd->callback([=, &exit_code, &guarded] {
      guarded([&] {
        lg::EvalOptions opt;
        opt.ccheck_fraction = *fraction;
        opt.subset_seed = *subset_seed;
        opt.metrics_name = *metrics_name;
        lg::cmd_eval(resolve_config(*opts), opt, std::cout);
      });
    });
  }

  // bench
  {
    auto* cmd = app.add_subcommand("bench", "latency/memory cells over batch and blacklist size");
    auto opts = std::make_shared<CommonOpts>();
    auto batches = std::make_shared<std::string>("1,8,32");
    auto n_checks = std::make_shared<std::string>("64,256,578");
    auto repeats = std::make_shared<int>(100);
    add_common(cmd, *opts);
    cmd->add_option("--batches", *batches, "comma-separated batch sizes");
    cmd->add_option("--n-check", *n_checks, "comma-separated blacklist sizes");
    cmd->add_option("--repeats", *repeats, "timed runs per cell");
    cmd->callback([=, &exit_code, &guarded] {
      guarded([&] {
        lg::BenchOptions opt;
        opt.batch_sizes = parse_int_list(*batches, "batch");
        opt.n_check_values = parse_int_list(*n_checks, "n_check");
        opt.repeats = *repeats;
        lg::cmd_bench(resolve_config(*opts), opt, std::cout, std::cerr);
      });
    });
  }

  // serve
  {
    auto* cmd = app.add_subcommand("serve", "answer guard requests as JSON lines");
    auto opts = std::make_shared<CommonOpts>();
    auto transport = std::make_shared<std::string>("stdio");
    auto port = std::make_shared<int>(0);
    auto index_path = std::make_shared<std::string>();
    add_common(cmd, *opts);
    cmd->add_option("--transport", *transport, "stdio or tcp")
        ->check(CLI::IsMember({"stdio", "tcp"}));
    cmd->add_option("--port", *port, "tcp port (0 picks one)");
    cmd->add_option("--index", *index_path, "index file (overrides paths.index)");
    cmd->callback([=, &exit_code, &guarded] {
      guarded([&] {
        lg::RunConfig cfg = resolve_config(*opts);
        if (!index_path->empty()) cfg.paths.index = *index_path;
        const lg::ConceptIndex index = lg::load_index(cfg.paths.resolved_index());
        lg::EncoderConfig enc_cfg = index.encoder_cfg;
        const lg::ToyEncoder encoder(enc_cfg);
        exit_code = lg::run_service(index, encoder, *transport, *port, std::cerr);
      });
    });
  }

  // print-config
  {
    auto* cmd = app.add_subcommand("print-config", "dump the resolved configuration as JSON");
    auto opts = std::make_shared<CommonOpts>();
    add_common(cmd, *opts);
    cmd->callback([=, &exit_code, &guarded] {
      guarded([&] { std::cout << lg::run_config_json(resolve_config(*opts)); });
    });
  }

  CLI11_PARSE(app, argc, argv);
  return exit_code;
}

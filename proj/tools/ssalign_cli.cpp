// ssalign: generate synthetic benchmarks, train, evaluate and ablate.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssalign/dataio.hpp"
#include "ssalign/errors.hpp"
#include "ssalign/model.hpp"
#include "ssalign/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ssalign;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

const CLI::Validator kAtLeastOne(
    [](std::string& v) -> std::string {
      try {
        if (std::stod(v) >= 1.0) return {};
      } catch (const std::exception&) {
      }
      return "must be at least 1, got " + v;
    },
    ">=1");

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json without_timing(json record) {
  record.erase("seconds");
  return record;
}

struct GenerateOptions {
  BenchmarkSpec spec;
  std::string out;
};

struct DataOptions {
  std::string data_dir;
  std::string source;
  std::string target;
  std::string test;

  void resolve() {
    if (!data_dir.empty()) {
      const fs::path d(data_dir);
      if (source.empty()) source = (d / "source.json").string();
      if (target.empty()) target = (d / "target_train.json").string();
      if (test.empty() && fs::exists(d / "target_test.json")) test = (d / "target_test.json").string();
    }
    if (source.empty() || target.empty()) {
      throw CLI::ValidationError("data", "need --data or both --source and --target");
    }
  }
};

struct Datasets {
  DomainDataset source, target, test;
};

Datasets load(const DataOptions& d) {
  Datasets out;
  out.source = load_manifest(d.source);
  out.target = load_manifest(d.target);
  if (!d.test.empty()) out.test = load_manifest(d.test);
  return out;
}

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data", d.data_dir, "directory written by `generate`");
  cmd->add_option("--source", d.source, "source manifest");
  cmd->add_option("--target", d.target, "target training manifest");
  cmd->add_option("--test", d.test, "target test manifest");
}

struct TrainFlags {
  bool no_ssa = false, no_attention = false, no_proto = false, no_cross = false, no_sn_dist = false;
  std::string stat_metric = "mmd";
};

void add_train_options(CLI::App* cmd, TrainConfig& c, TrainFlags& f) {
  cmd->add_option("--lambda-sem", c.lambda_sem)->capture_default_str();
  cmd->add_option("--lambda-stat", c.lambda_stat)->capture_default_str();
  cmd->add_option("--lambda-p", c.lambda_p)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--alpha-v", c.alpha_v)->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--m", c.m, "snippet length")->capture_default_str()->check(kAtLeastOne);
  cmd->add_option("--mhat", c.min_gap, "minimum gap between target snippet starts")->capture_default_str();
  cmd->add_option("--r", c.r, "snippets per target video")->capture_default_str()->check(kAtLeastOne);
  cmd->add_option("--e-warmup", c.warmup_epochs)->capture_default_str();
  cmd->add_option("--stat-metric", f.stat_metric)
      ->capture_default_str()
      ->check(CLI::IsMember({"mmd", "coral", "none"}));
  cmd->add_option("--epochs", c.epochs)->capture_default_str()->check(kAtLeastOne);
  cmd->add_option("--lr", c.lr)->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--momentum", c.momentum)->capture_default_str();
  cmd->add_option("--weight-decay", c.weight_decay)->capture_default_str();
  cmd->add_option("--hidden", c.hidden)->capture_default_str()->check(kAtLeastOne);
  cmd->add_option("--embed", c.embed)->capture_default_str()->check(kAtLeastOne);
  cmd->add_option("--source-batch", c.source_per_batch)->capture_default_str()->check(kAtLeastOne);
  cmd->add_option("--target-batch", c.target_per_batch)->capture_default_str()->check(kAtLeastOne);
  cmd->add_option("--seed", c.seed)->capture_default_str();
  cmd->add_flag("--no-ssa", f.no_ssa, "fixed snippets instead of stochastic sampling");
  cmd->add_flag("--no-attention", f.no_attention);
  cmd->add_flag("--no-proto", f.no_proto);
  cmd->add_flag("--no-cross", f.no_cross);
  cmd->add_flag("--no-sn-dist", f.no_sn_dist);
}

TrainConfig resolve(TrainConfig c, const TrainFlags& f) {
  c.stat_metric = parse_stat_metric(f.stat_metric);
  c.enable_sn_stat = c.stat_metric != StatMetric::kNone;
  c.enable_ssa = !f.no_ssa;
  c.enable_attention = !f.no_attention;
  c.enable_proto = !f.no_proto;
  c.enable_cross = !f.no_cross;
  c.enable_sn_dist = !f.no_sn_dist;
  return c;
}

int cmd_generate(const GenerateOptions& o) {
  const auto bm = generate_synthetic_benchmark(o.spec);
  const fs::path out(o.out);
  fs::create_directories(out);
  for (const auto* ds : {&bm.source, &bm.target_train, &bm.target_test}) {
    const auto manifest = write_dataset(*ds, out);
    std::cout << ds->name << ": " << ds->size() << " videos -> " << manifest.string() << '\n';
  }
  const auto& s = o.spec;
  write_json(out / "generate.json", {{"classes", s.num_classes},
                                     {"dim", s.feature_dim},
                                     {"n_source", s.n_source},
                                     {"k_shot", s.k_shot},
                                     {"n_test", s.n_test},
                                     {"frames", s.frames_per_video},
                                     {"rotation", s.shift.rotation_angle},
                                     {"bias", s.shift.bias_scale},
                                     {"noise", s.shift.noise_std},
                                     {"seed", s.shift.seed}});
  return kExitOk;
}

int cmd_train(const DataOptions& d, const TrainConfig& config, const std::string& out_dir, bool quiet) {
  const auto data = load(d);
  config.validate(data.source, data.target);

  json metrics;
  metrics["config"] = to_json(config);
  metrics["data"] = {{"source", d.source}, {"target", d.target}, {"test", d.test}};
  metrics["epochs"] = json::array();
  const auto result = train(data.source, data.target, data.test, config, [&](const EpochRecord& r) {
    metrics["epochs"].push_back(to_json(r));
    if (!quiet) {
      std::printf("epoch %3zu  total %.4f  pred %.4f  proto %.4f  cross %.4f  dist %.4f  stat %.4f", r.epoch,
                  r.total, r.l_pred, r.l_proto, r.l_cross, r.l_sn_dist, r.l_sn_stat);
      if (r.test_accuracy >= 0.0) std::printf("  acc %.4f", r.test_accuracy);
      std::printf("\n");
      std::fflush(stdout);
    }
  });

  const fs::path out(out_dir);
  fs::create_directories(out);
  save_checkpoint(result.params, out / "checkpoint.fsvm");
  json summary = {{"epochs", result.log.epochs.size()}};
  if (!result.log.epochs.empty()) {
    summary["final"] = without_timing(to_json(result.log.epochs.back()));
  }
  if (!data.test.videos.empty()) summary["final_target_top1"] = top1_accuracy(result.params, data.test);
  metrics["summary"] = summary;
  write_json(out / "metrics.json", metrics);
  if (summary.contains("final_target_top1")) {
    std::printf("final target top-1: %.4f\n", summary["final_target_top1"].get<double>());
  }
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& metrics_path) {
  const auto params = load_checkpoint(checkpoint);
  const auto ds = load_manifest(manifest);
  if (ds.feature_dim != params.dims.feature_dim) {
    throw DimensionError("checkpoint expects feature dim " + std::to_string(params.dims.feature_dim) +
                         " but dataset has " + std::to_string(ds.feature_dim));
  }
  if (ds.num_classes != params.dims.classes) {
    throw DimensionError("checkpoint has " + std::to_string(params.dims.classes) + " classes but dataset has " +
                         std::to_string(ds.num_classes));
  }
  const double acc = top1_accuracy(params, ds);
  std::printf("%.6f\n", acc);
  if (!metrics_path.empty()) {
    write_json(metrics_path, {{"checkpoint", checkpoint}, {"manifest", manifest}, {"top1", acc}});
  }
  return kExitOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw CLI::ValidationError("--seeds", "empty entry in seed list");
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw CLI::ValidationError("--seeds", "not an integer: " + item);
    seeds.push_back(v);
  }
  if (seeds.empty()) throw CLI::ValidationError("--seeds", "need at least one seed");
  return seeds;
}

int cmd_ablate(const DataOptions& d, const TrainConfig& base, const std::string& seeds_arg,
               const std::vector<std::string>& row_names, const std::string& out_path) {
  const auto seeds = parse_seeds(seeds_arg);
  const auto data = load(d);
  if (data.test.videos.empty()) throw ConfigError("ablate needs a target test manifest");

  auto canonical = canonical_ablation_rows(base);
  std::vector<AblationRow> rows;
  if (row_names.empty()) {
    rows = canonical;
  } else {
    for (const auto& name : row_names) {
      bool found = false;
      for (const auto& row : canonical) {
        if (row.name == name) {
          rows.push_back(row);
          found = true;
        }
      }
      if (!found) throw CLI::ValidationError("--rows", "unknown row " + name);
    }
  }
  for (const auto& row : rows) row.config.validate(data.source, data.target);

  const auto results = run_ablation(data.source, data.target, data.test, rows, seeds);
  std::printf("%-14s", "row");
  for (auto s : seeds) std::printf("  seed %-6llu", static_cast<unsigned long long>(s));
  std::printf("  %8s\n", "mean");
  json table = json::array();
  for (const auto& r : results) {
    std::printf("%-14s", r.name.c_str());
    for (double a : r.accuracies) std::printf("  %11.4f", a);
    std::printf("  %8.4f\n", r.mean);
    table.push_back({{"row", r.name}, {"seeds", r.seeds}, {"accuracies", r.accuracies}, {"mean", r.mean}});
  }
  if (!out_path.empty()) write_json(out_path, {{"base_config", to_json(base)}, {"rows", table}});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssalign: few-shot video domain adaptation with snippet alignment"};
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "write a synthetic cross-domain benchmark");
  generate->add_option("--classes", gen.spec.num_classes)->capture_default_str()->check(kAtLeastOne);
  generate->add_option("--dim", gen.spec.feature_dim)->capture_default_str()->check(kAtLeastOne);
  generate->add_option("--k-shot", gen.spec.k_shot)->capture_default_str()->check(kAtLeastOne);
  generate->add_option("--n-source", gen.spec.n_source)->capture_default_str()->check(kAtLeastOne);
  generate->add_option("--n-test", gen.spec.n_test)->capture_default_str()->check(kAtLeastOne);
  generate->add_option("--frames", gen.spec.frames_per_video)->capture_default_str()->check(kAtLeastOne);
  gen.spec.shift.rotation_angle = 0.8;
  gen.spec.shift.noise_std = 0.3;
  generate->add_option("--rotation", gen.spec.shift.rotation_angle, "radians")->capture_default_str();
  generate->add_option("--bias", gen.spec.shift.bias_scale)->capture_default_str()->check(CLI::NonNegativeNumber);
  generate->add_option("--noise", gen.spec.shift.noise_std)->capture_default_str()->check(CLI::NonNegativeNumber);
  generate->add_option("--seed", gen.spec.shift.seed)->capture_default_str();
  generate->add_option("--out", gen.out)->required();

  DataOptions train_data;
  TrainConfig train_config;
  TrainFlags train_flags;
  std::string train_out;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + metrics");
  add_data_options(train_cmd, train_data);
  add_train_options(train_cmd, train_config, train_flags);
  train_cmd->add_option("--out", train_out)->required();
  train_cmd->add_flag("--quiet", quiet, "no per-epoch output");

  std::string checkpoint, manifest, eval_metrics;
  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--metrics", eval_metrics, "also write the result here");

  DataOptions ablate_data;
  TrainConfig ablate_config;
  TrainFlags ablate_flags;
  std::string seeds = "1,2,3,4,5", ablate_out;
  std::vector<std::string> rows;
  auto* ablate = app.add_subcommand("ablate", "train canonical ablation rows over several seeds");
  add_data_options(ablate, ablate_data);
  add_train_options(ablate, ablate_config, ablate_flags);
  ablate->add_option("--seeds", seeds, "comma-separated")->capture_default_str();
  ablate->add_option("--rows", rows, "subset of: full no-ssa pred-only no-attention");
  ablate->add_option("--out", ablate_out, "JSON table output");

  try {
    app.parse(argc, argv);
    if (generate->parsed()) return cmd_generate(gen);
    if (train_cmd->parsed()) {
      train_data.resolve();
      return cmd_train(train_data, resolve(train_config, train_flags), train_out, quiet);
    }
    if (eval->parsed()) return cmd_eval(checkpoint, manifest, eval_metrics);
    if (ablate->parsed()) {
      ablate_data.resolve();
      return cmd_ablate(ablate_data, resolve(ablate_config, ablate_flags), seeds, rows, ablate_out);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

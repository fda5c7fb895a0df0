#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vdet/harness.hpp"

namespace {

using vdet::harness::RunConfig;

struct Flags {
  std::string config, out, checkpoint, split = "test", fusion;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve(const Flags& f, std::optional<RunConfig> base = std::nullopt) {
  RunConfig cfg = base ? *base : (f.config.empty() ? RunConfig{} : RunConfig::load(f.config));
  if (f.seed) cfg.seed = *f.seed;
  if (!f.fusion.empty()) cfg.detector.fusion = vdet::detection::parse_fusion_mode(f.fusion);
  cfg.validate();
  return cfg;
}

void print_metrics(const nlohmann::ordered_json& report) {
  const auto& m = report["metrics"];
  std::printf("mAP@0.5 %.4f  avg sensitivity %.4f  (TP %lld, FP %lld, FN %lld)\n", m["map_iou_0.5"].get<double>(),
              m["average_sensitivity"].get<double>(), m["true_positives"].get<long long>(),
              m["false_positives"].get<long long>(), m["false_negatives"].get<long long>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vdet: view-disentangled slice-context lesion detector"};
  app.set_version_flag("--version", vdet::harness::version_string());
  app.require_subcommand(1);
  Flags f;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "override the configured seed");
  };

  auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
  add_common(gen);
  gen->add_option("--out", f.out, "dataset directory (default: paths.data_dir)");

  auto* train = app.add_subcommand("train", "train a detector on the train split");
  add_common(train);
  train->add_option("--out", f.out, "run directory for checkpoints and the loss log")->required();
  train->add_option("--checkpoint", f.checkpoint, "resume from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--fusion", f.fusion, "inter-slice fusion")->check(CLI::IsMember({"none", "p3d", "c3d", "vdformer"}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval);
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", f.split, "dataset split")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", f.out, "directory for report.json and detections.jsonl")->required();
  eval->add_option("--fusion", f.fusion, "inter-slice fusion")->check(CLI::IsMember({"none", "p3d", "c3d", "vdformer"}));

  auto* bench = app.add_subcommand("bench", "attention cost table (full 3D vs view-disentangled)");
  add_common(bench);
  bench->add_option("--out", f.out, "directory for cost.csv and cost.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const RunConfig cfg = resolve(f);
      const std::string out = f.out.empty() ? cfg.data_dir : f.out;
      const auto manifest = vdet::harness::cmd_gen(cfg, out);
      for (const auto& [split, vols] : manifest["splits"].items()) std::printf("%s: %zu volumes\n", split.c_str(), vols.size());
    } else if (train->parsed()) {
      const RunConfig cfg = resolve(f);
      vdet::harness::TrainOptions opts;
      opts.out_dir = f.out;
      if (!f.checkpoint.empty()) opts.resume_from = f.checkpoint;
      opts.on_step = [](const nlohmann::json& rec) {
        const auto step = rec["step"].get<long long>();
        if (step % 100 == 0) {
          std::printf("epoch %d step %lld loss %.5f\n", rec["epoch"].get<int>(), step, rec["loss"].get<double>());
          std::fflush(stdout);
        }
      };
      const auto r = vdet::harness::cmd_train(cfg, opts);
      std::printf("%lld steps, final loss %.5f, checkpoint %s\n", static_cast<long long>(r.steps), r.last_loss,
                  r.last_checkpoint.string().c_str());
    } else if (eval->parsed()) {
      std::optional<RunConfig> cfg;
      if (!f.config.empty() || f.seed || !f.fusion.empty()) {
        cfg = resolve(f, f.config.empty() ? std::optional(vdet::harness::checkpoint_config(f.checkpoint)) : std::nullopt);
      }
      const auto out = vdet::harness::cmd_eval(f.checkpoint, f.split, f.out, cfg ? &*cfg : nullptr);
      print_metrics(out.report);
    } else if (bench->parsed()) {
      const RunConfig cfg = resolve(f);
      const auto rows = vdet::harness::cmd_bench(cfg, f.out, vdet::cost::default_grid());
      std::printf("%zu rows written to %s\n", rows.size(), f.out.c_str());
    }
  } catch (const vdet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const vdet::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

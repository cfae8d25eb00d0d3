// Command-line driver for the staged one-shot pipeline.

#include <cmath>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "oneshot/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string seed;
  bool deterministic = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (flat key = value file)");
  app->add_option("--out", c.out, "Artifact directory (overrides `out`)");
  app->add_option("--seed", c.seed, "Master seed (overrides `seed`)");
  app->add_flag("--deterministic", c.deterministic, "Single-threaded, reproducible execution");
  app->add_option("--set", c.overrides, "Extra key=value override; repeatable");
}

oneshot::ExperimentConfig build_config(const Common& c) {
  auto cfg = c.config.empty() ? oneshot::ExperimentConfig{} : oneshot::load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw oneshot::InvalidArgument("--set expects key=value, got '" + kv + "'");
    oneshot::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.seed.empty()) oneshot::set_config_value(cfg, "seed", c.seed);
  if (c.deterministic) cfg.deterministic = true;
  return cfg;
}

void print_summary(const oneshot::ExperimentReport& r) {
  std::printf("%-22s %9s %12s\n", "method", "accuracy", "distillates");
  for (const auto& m : r.methods) std::printf("%-22s %8.2f%% %12zu\n", m.method.c_str(), 100 * m.accuracy, m.distillates);
  if (!r.privacy.empty()) {
    std::printf("\n%-10s %7s %10s %10s\n", "privacy", "param", "PSNR(dB)", "SSIM");
    for (const auto& p : r.privacy) std::printf("%-10s %7.3g %10.2f %10.2f\n", p.mode.c_str(), p.param, p.mean_psnr, p.mean_ssim);
  }
  std::printf("\npayload/client %.0f B, model %llu B, ratio %.4f\n", r.cost.mean_payload_bytes,
              static_cast<unsigned long long>(r.cost.model_bytes), r.cost.ratio);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oneshot: one-shot federated learning via distiller-distillate communication"};
  app.require_subcommand(1);
  Common common;

  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"partition", "Split the corpus into client shards"},
      {"train-local", "Train local models and the server-side autoencoder"},
      {"coreset", "Select each client's Core-Set"},
      {"perturb", "Fourier amplitude perturbation of Core-Sets"},
      {"synthesize", "Optimize latent distillates (all methods)"},
      {"serve-train", "Aggregate distillates and train global models"},
      {"evaluate", "Score global models on the test split"},
      {"privacy-report", "PSNR/SSIM of reconstructions against Core-Sets"},
      {"report", "Emit report.json, TSV tables and SVG plots"},
  };
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, common);
    stage_cmds.emplace_back(sub, name);
  }

  auto* run = app.add_subcommand("run", "Full pipeline (or a single stage with --stage)");
  add_common(run, common);
  std::string only_stage;
  run->add_option("--stage", only_stage, "Run just this stage");

  auto* show = app.add_subcommand("show-config", "Print the resolved config");
  add_common(show, common);

  auto* corpus = app.add_subcommand("make-corpus", "Write the procedural shapes corpus");
  std::string corpus_out, corpus_format = "tree";
  oneshot::ShapesCorpusSpec cspec;
  corpus->add_option("--out", corpus_out, "Destination directory or archive file")->required();
  corpus->add_option("--per-class", cspec.per_class, "Images per class");
  corpus->add_option("--side", cspec.side, "Image side length");
  corpus->add_option("--seed", cspec.seed, "Generator seed");
  corpus->add_option("--format", corpus_format, "tree or archive")->check(CLI::IsMember({"tree", "archive"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (corpus->parsed()) {
      const auto c = oneshot::generate_shapes_corpus(cspec);
      if (corpus_format == "tree") {
        oneshot::write_corpus_tree(c, corpus_out);
      } else {
        oneshot::write_corpus_archive(c, corpus_out);
      }
      std::printf("wrote %zu images in %zu classes to %s\n", c.images.size(), c.num_classes(), corpus_out.c_str());
      return 0;
    }
    const auto cfg = build_config(common);
    if (show->parsed()) {
      std::cout << oneshot::config_to_text(cfg);
      return 0;
    }
    if (run->parsed()) {
      if (!only_stage.empty()) {
        oneshot::run_stage(cfg, only_stage);
        return 0;
      }
      for (const auto& s : oneshot::stage_names()) {
        std::fprintf(stderr, "[oneshot] stage %s\n", s.c_str());
        oneshot::run_stage(cfg, s);
      }
      print_summary(oneshot::collect_report(cfg.out_dir));
      return 0;
    }
    for (const auto& [sub, name] : stage_cmds) {
      if (!sub->parsed()) continue;
      oneshot::run_stage(cfg, name);
      if (name == "report") print_summary(oneshot::collect_report(cfg.out_dir));
    }
  } catch (const oneshot::Error& e) {
    std::fprintf(stderr, "oneshot: %s\n", e.what());
    return 1;
  }
  return 0;
}

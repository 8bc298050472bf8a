// convest: conversion-probability estimation under delayed feedback.

#include <CLI11.hpp>

#include "convest/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Conversion-probability estimation under delayed feedback"};
  app.require_subcommand(1);

  int workers = 0;
  app.add_option("--workers", workers,
                 "replicate-level worker threads (0 = hardware parallelism)")
      ->envname("CONVEST_WORKERS");

  convest::SimulateCommand sim;
  auto* s = app.add_subcommand("simulate", "run a simulation study from a config file");
  s->add_option("--config", sim.config_path, "study config file")->required();
  s->add_option("--out", sim.out_dir, "output directory")->required();
  s->add_option("--replicates", sim.replicates_override, "override the replicate count");
  s->add_option("--seed", sim.seed_override, "override the master seed");

  convest::FitCommand fit;
  auto* f = app.add_subcommand("fit", "fit one estimator on a Criteo-format log");
  f->add_option("--data", fit.data_path, "Criteo-format TSV")->required();
  f->add_option("--estimator", fit.estimator,
                "naive | oracle | bias-adjusted-e | bias-adjusted-w | dfm")
      ->required();
  f->add_option("--t", fit.t_days, "analysis time in days")->required();
  f->add_option("--window", fit.window_days, "conversion window in days");
  f->add_option("--out", fit.out_dir, "output directory")->required();
  f->add_option("--int-cols", fit.integer_columns, "integer columns to use");
  f->add_option("--cat-cols", fit.categorical_columns, "categorical columns to use");
  f->add_option("--min-count", fit.min_count, "token count threshold");
  f->add_option("--level", fit.confidence_level, "confidence level");

  convest::EvaluateCommand ev;
  auto* e = app.add_subcommand("evaluate", "aggregate raw results into a report");
  e->add_option("--results", ev.results_dirs, "one or more results directories")
      ->required();
  e->add_option("--out", ev.out_dir, "output directory")->required();

  convest::SplitCommand sp;
  auto* p = app.add_subcommand("split", "repeated-split NLL protocol");
  p->add_option("--data", sp.data_path, "Criteo-format TSV")->required();
  p->add_option("--fraction", sp.train_fraction, "training fraction");
  p->add_option("--repeats", sp.repeats, "number of random splits");
  p->add_option("--seed", sp.seed, "split seed");
  p->add_option("--estimator", sp.estimator, "estimator to fit per split");
  p->add_option("--t", sp.t_days, "analysis time in days");
  p->add_option("--window", sp.window_days, "conversion window in days");
  p->add_option("--out", sp.out_dir, "output directory")->required();
  p->add_option("--int-cols", sp.integer_columns, "integer columns to use");
  p->add_option("--cat-cols", sp.categorical_columns, "categorical columns to use");
  p->add_option("--min-count", sp.min_count, "token count threshold");

  CLI11_PARSE(app, argc, argv);

  if (s->parsed()) {
    sim.workers = workers;
    return convest::cmd_simulate(sim);
  }
  if (f->parsed()) return convest::cmd_fit(fit);
  if (e->parsed()) return convest::cmd_evaluate(ev);
  if (p->parsed()) return convest::cmd_split(sp);
  return convest::kExitConfig;
}

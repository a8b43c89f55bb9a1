#include "commands.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include "refit/checkpoint.hpp"
#include "refit/error.hpp"
#include "refit/eval.hpp"
#include "refit/exec.hpp"

namespace refit::app {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

fs::path prepare_output(const Json& cfg) {
  const fs::path dir = cfg.at("output_dir").get<std::string>();
  fs::create_directories(dir);
  write_text(dir / "resolved_config.json", cfg.dump(2) + "\n");
  return dir;
}

void write_manifest(const fs::path& dir, const std::string& command, const Json& cfg, const Seeds& seeds,
                    Json extra) {
  Json m;
  m["command"] = command;
  m["format_version"] = 1;
  m["seeds"] = seeds_json(seeds);
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  m["config"] = cfg;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Checkpoint require_checkpoint(const Json& cfg) {
  const auto path = cfg.at("checkpoint").get<std::string>();
  if (path.empty()) throw ConfigError("a pre-trained checkpoint is required (--checkpoint)");
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

int cmd_synth(const Json& cfg) {
  const auto seeds = derive_seeds(cfg);
  if (cfg.at("data").at("source") != "synthetic") throw ConfigError("synth requires data.source = synthetic");
  const auto m = load_data(cfg, seeds);
  const auto dir = prepare_output(cfg);
  data::save_csr_binary(m, dir / "data.csr");
  write_manifest(dir, "synth", cfg, seeds,
                 {{"artifacts", {"data.csr"}},
                  {"num_users", m.num_users},
                  {"num_items", m.num_items},
                  {"nnz", m.nnz()}});
  std::cout << "wrote " << (dir / "data.csr").string() << " (" << m.num_users << " users, " << m.num_items
            << " items, " << m.nnz() << " interactions)\n";
  return kOk;
}

int cmd_pretrain(const Json& cfg) {
  const auto seeds = derive_seeds(cfg);
  std::vector<std::string> notes;
  const auto m = load_data(cfg, seeds, &notes);
  const auto split = split_data(m, cfg, seeds);
  const auto sched = schedule_from(cfg);
  const auto init = diffusion::Denoiser::initialized(architecture_from(cfg, m.num_items), seeds.init);
  const auto pc = pretrain_from(cfg, seeds);
  const auto dir = prepare_output(cfg);
  const auto rep = diffusion::pretrain(init, split, sched, pc);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';

  Checkpoint best{rep.best, sched.steps, sched.beta_start, sched.beta_end, rep.optimizer};
  Checkpoint last{rep.final_model, sched.steps, sched.beta_start, sched.beta_end, rep.optimizer};
  save_checkpoint(best, dir / "pretrained.ckpt");
  save_checkpoint(last, dir / "final.ckpt");
  write_text(dir / "loss_curve.csv", diffusion::loss_curve_csv(rep));
  notes.insert(notes.end(), rep.warnings.begin(), rep.warnings.end());
  write_manifest(dir, "pretrain", cfg, seeds,
                 {{"artifacts", {"pretrained.ckpt", "final.ckpt", "loss_curve.csv"}},
                  {"best_epoch", rep.best_epoch},
                  {"best_val_ndcg@10", rep.best_val_ndcg10},
                  {"flagged_users", split.flagged_users.size()},
                  {"warnings", notes}});
  std::cout << "pretrained " << rep.loss_curve.size() << " epochs; best epoch " << rep.best_epoch
            << " (val NDCG@10 " << rep.best_val_ndcg10 << ")\n";
  return kOk;
}

namespace {

struct JobResult {
  finetune::FinetuneReport report;
  bool diverged = false;
};

JobResult finetune_job(const Checkpoint& ck, const data::DataSplit& split, const data::SimilarityIndex& index,
                       const finetune::FinetuneConfig& fc, bool resume, const fs::path& dir, const Json& cfg,
                       const Seeds& seeds) {
  fs::create_directories(dir);
  const auto sched = ck.schedule();
  std::optional<OptimizerState> state;
  if (resume) state = ck.optimizer;
  JobResult jr{finetune::run_finetune(ck.model, {&split, &index}, sched, fc, state), false};
  const auto& rep = jr.report;
  jr.diverged = rep.aborted;
  save_checkpoint({rep.best, sched.steps, sched.beta_start, sched.beta_end, rep.optimizer}, dir / "best.ckpt");
  save_checkpoint({rep.final_model, sched.steps, sched.beta_start, sched.beta_end, rep.optimizer}, dir / "final.ckpt");
  write_text(dir / "curves.csv", finetune::curves_csv(rep));
  write_text(dir / "timing.csv", finetune::timing_csv(rep));
  Json artifacts = {"best.ckpt", "final.ckpt", "curves.csv", "timing.csv"};
  if (fc.trace_rewards) {
    write_text(dir / "reward_trace.csv", finetune::reward_trace_csv(rep));
    artifacts.push_back("reward_trace.csv");
  }
  write_manifest(dir, "finetune", cfg, seeds,
                 {{"artifacts", artifacts},
                  {"method", finetune::method_name(fc.method)},
                  {"alpha", fc.reward_cfg.alpha},
                  {"iterations_run", rep.curve.back().iteration},
                  {"best_iteration", rep.best_iteration},
                  {"best_val_ndcg@10", rep.best_val_ndcg10},
                  {"early_stopped", rep.early_stopped},
                  {"aborted", rep.aborted},
                  {"abort_reason", rep.abort_reason},
                  {"warnings", rep.warnings}});
  return jr;
}

}  // namespace

int cmd_finetune(const Json& cfg) {
  const auto seeds = derive_seeds(cfg);
  const auto ck = require_checkpoint(cfg);
  const auto m = load_data(cfg, seeds);
  if (m.num_items != ck.model.num_items()) throw DataError("checkpoint item count does not match the data");
  const auto split = split_data(m, cfg, seeds);
  auto fc = finetune_from(cfg, seeds);
  const bool resume = cfg.at("finetune").at("resume_optimizer").get<bool>();
  const auto index = data::build_similarity_index(split.train, fc.reward_cfg.d, fc.exec);
  const auto dir = prepare_output(cfg);

  const auto alphas = cfg.at("finetune").at("alphas").get<std::vector<double>>();
  if (alphas.empty()) {
    const auto jr = finetune_job(ck, split, index, fc, resume, dir, cfg, seeds);
    for (const auto& w : jr.report.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << finetune::method_name(fc.method) << ": " << jr.report.curve.back().iteration
              << " iterations, best val NDCG@10 " << jr.report.best_val_ndcg10 << " at iteration "
              << jr.report.best_iteration << '\n';
    if (jr.diverged) {
      std::cerr << "numerical divergence: " << jr.report.abort_reason << '\n';
      return kDiverged;
    }
    return kOk;
  }

  std::ostringstream table;
  table << "alpha,final_mean_reward,best_val_ndcg@10,val_recall@10,val_ndcg@10,best_iteration\n";
  bool diverged = false;
  Json jobs = Json::array();
  for (double a : alphas) {
    auto job = fc;
    job.reward_cfg.alpha = a;
    const std::string name = "alpha_" + fmt(a);
    const auto jr = finetune_job(ck, split, index, job, resume, dir / name, cfg, seeds);
    diverged = diverged || jr.diverged;
    const auto& last = jr.report.curve.back();
    const auto k10 = static_cast<std::size_t>(std::find(fc.ns.begin(), fc.ns.end(), 10) - fc.ns.begin());
    table << fmt(a) << ',' << fmt(last.mean_reward) << ',' << fmt(jr.report.best_val_ndcg10) << ',';
    if (last.evaluated && k10 < fc.ns.size()) table << fmt(last.val_recall[k10]) << ',' << fmt(last.val_ndcg[k10]);
    else table << ',';
    table << ',' << jr.report.best_iteration << '\n';
    jobs.push_back(name);
  }
  write_text(dir / "comparison.csv", table.str());
  write_manifest(dir, "finetune-sweep", cfg, seeds, {{"artifacts", {"comparison.csv"}}, {"jobs", jobs}});
  std::cout << table.str();
  return diverged ? kDiverged : kOk;
}

int cmd_eval(const Json& cfg) {
  const auto seeds = derive_seeds(cfg);
  const auto ck = require_checkpoint(cfg);
  const auto m = load_data(cfg, seeds);
  if (m.num_items != ck.model.num_items()) throw DataError("checkpoint item count does not match the data");
  const auto split = split_data(m, cfg, seeds);
  const auto which = cfg.at("eval").at("split").get<std::string>();
  if (which != "test" && which != "val") throw ConfigError("eval.split must be 'test' or 'val'");
  const auto ns = eval_ns(cfg);
  const auto dir = prepare_output(cfg);
  const auto rep = eval::evaluate(ck.model, ck.schedule(), split.train, which == "test" ? split.test : split.val, ns,
                                  seeds.eval);
  write_text(dir / "metrics.json", eval::to_json(rep));
  write_text(dir / "metrics.csv", eval::to_csv(rep));
  write_manifest(dir, "eval", cfg, seeds, {{"artifacts", {"metrics.json", "metrics.csv"}}, {"split", which}});
  std::cout << eval::to_csv(rep);
  return kOk;
}

int cmd_bench(const Json& cfg) {
  const auto seeds = derive_seeds(cfg);
  const auto sc = bench_from(cfg, seeds);
  const auto dir = prepare_output(cfg);
  const auto rep = eval::scaling_benchmark(sc);
  write_text(dir / "scaling.json", eval::to_json(rep));
  write_text(dir / "scaling.csv", eval::to_csv(rep));
  write_manifest(dir, "bench", cfg, seeds, {{"artifacts", {"scaling.json", "scaling.csv"}}});
  std::cout << eval::to_csv(rep) << "fit: slope " << rep.slope << " s/unit, R^2 " << rep.r2 << '\n';
  return kOk;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Diffusion recommender pre-training and RL fine-tuning"};
  app.require_subcommand(1);
  std::string config_file, out_dir, checkpoint;
  std::vector<std::string> overrides;
  int threads = -1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "JSON config file (defaults for every unset key)");
    sub->add_option("-s,--set", overrides, "override a config key: section.key=value");
    sub->add_option("-o,--out", out_dir, "output directory (sets output_dir)");
    sub->add_option("-j,--threads", threads, "worker threads (0: runtime default)");
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* pre = app.add_subcommand("pretrain", "pre-train the denoiser with the ELBO objective");
  auto* fine = app.add_subcommand("finetune", "fine-tune a pre-trained checkpoint (REINFORCE, ELBO or RWR)");
  auto* ev = app.add_subcommand("eval", "full-ranking Recall@N / NDCG@N of a checkpoint");
  auto* bench = app.add_subcommand("bench", "per-iteration fine-tuning cost versus dataset size");
  for (auto* s : {synth, pre, fine, ev, bench}) add_common(s);
  for (auto* s : {fine, ev}) s->add_option("--checkpoint", checkpoint, "checkpoint file (sets checkpoint)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigOrData;
  }

  try {
    if (!out_dir.empty()) overrides.push_back("output_dir=" + Json(out_dir).dump());
    if (!checkpoint.empty()) overrides.push_back("checkpoint=" + Json(fs::absolute(checkpoint).string()).dump());
    if (threads >= 0) overrides.push_back("threads=" + std::to_string(threads));
    Json cfg = resolve_config(config_file, overrides);
    // Absolute paths keep the resolved snapshot replayable from any directory.
    if (auto& p = cfg["data"]["path"]; !p.get<std::string>().empty()) p = fs::absolute(p.get<std::string>()).string();
    if (auto& p = cfg["checkpoint"]; !p.get<std::string>().empty()) p = fs::absolute(p.get<std::string>()).string();
    set_num_threads(cfg.at("threads").get<int>());

    if (*synth) return cmd_synth(cfg);
    if (*pre) return cmd_pretrain(cfg);
    if (*fine) return cmd_finetune(cfg);
    if (*ev) return cmd_eval(cfg);
    return cmd_bench(cfg);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return kConfigOrData;
  } catch (const DataError& e) {
    std::cerr << e.what() << '\n';
    return kConfigOrData;
  } catch (const NumericalError& e) {
    std::cerr << e.what() << '\n';
    return kDiverged;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigOrData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace refit::app

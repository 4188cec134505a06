#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tgl/error.hpp"
#include "tgl/runner.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "flat key=value config file");
    cmd->add_option("-s,--set", opts.sets, "config override key=value (repeatable)");
    cmd->add_option("-t,--threads", opts.threads, "worker threads (never changes results)");
}

tgl::ExperimentConfig build_config(const CommonOpts& opts) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : opts.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw tgl::ConfigError("--set expects key=value: " + s);
        overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    tgl::ExperimentConfig cfg = tgl::load_config(opts.config_path, overrides);
    if (opts.threads > 0) cfg.threads = opts.threads;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy temporal-grounding post-training lab"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string out_dir = "run";
    std::string pool_path, holdout_path, checkpoint_path, scored_path, out_file, selection_path;
    std::vector<std::string> metrics_paths;
    bool resume = false;
    int n_samples = 10000;
    int n_boot = 500;
    double z_threshold = 3.0;
    double target_miou = 0.6;

    auto* gen = app.add_subcommand("gen", "generate train/holdout instance pools");
    add_common(gen, opts);
    gen->add_option("-o,--out", out_dir, "output directory");

    auto* train = app.add_subcommand("train", "run the configured trainer");
    add_common(train, opts);
    train->add_option("-o,--out", out_dir, "output directory");
    train->add_option("--pool", pool_path, "training pool JSONL")->required();
    train->add_option("--holdout", holdout_path, "holdout pool JSONL")->required();
    train->add_option("--selection", selection_path, "train only on these ids");
    train->add_flag("--resume", resume, "resume from the run's last checkpoint");

    auto* eval = app.add_subcommand("eval", "greedy-decode evaluation of a checkpoint");
    add_common(eval, opts);
    eval->add_option("--checkpoint", checkpoint_path, "policy checkpoint")->required();
    eval->add_option("--pool", pool_path, "pool JSONL")->required();
    eval->add_option("-o,--out", out_file, "report JSON path");

    auto* score = app.add_subcommand("score", "score a pool: teacher reliability + student disagreement");
    add_common(score, opts);
    score->add_option("--checkpoint", checkpoint_path, "student checkpoint")->required();
    score->add_option("--pool", pool_path, "pool JSONL")->required();
    score->add_option("-o,--out", out_file, "scored CSV path")->required();

    auto* select = app.add_subcommand("select", "select k samples from a scored CSV");
    add_common(select, opts);
    select->add_option("--scored", scored_path, "scored CSV")->required();
    select->add_option("-o,--out", out_file, "selection id list path")->required();

    auto* analyze = app.add_subcommand("analyze", "variance and KL-identity analyses");
    analyze->fallthrough();
    add_common(analyze, opts);
    auto* variance = analyze->add_subcommand("variance", "gradient variance of both estimators");
    variance->add_option("--checkpoint", checkpoint_path, "frozen policy checkpoint");
    variance->add_option("--pool", pool_path, "pool JSONL")->required();
    variance->add_option("-n,--samples", n_samples, "estimates per estimator");
    variance->add_option("--boot", n_boot, "bootstrap resamples");
    variance->add_option("-o,--out", out_dir, "output directory");
    auto* klcheck = analyze->add_subcommand("kl-check", "reverse-KL gradient identity check");
    klcheck->add_option("--checkpoint", checkpoint_path, "policy checkpoint");
    klcheck->add_option("--pool", pool_path, "pool JSONL")->required();
    klcheck->add_option("-n,--samples", n_samples, "Monte-Carlo samples");
    klcheck->add_option("--z-threshold", z_threshold, "max |z| accepted");
    klcheck->add_option("-o,--out", out_file, "report JSON path");
    analyze->require_subcommand(1);

    auto* compare = app.add_subcommand("compare", "tokens/wallclock to reach a target mIoU");
    add_common(compare, opts);
    compare->add_option("--metrics", metrics_paths, "metrics JSONL files")->required();
    compare->add_option("--target", target_miou, "target held-out mean IoU");
    compare->add_option("-o,--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        const tgl::ExperimentConfig cfg = build_config(opts);
        if (gen->parsed()) {
            const auto out = tgl::run_gen(cfg, out_dir);
            std::cout << "wrote " << out.train_path << " and " << out.holdout_path << "\n";
        } else if (train->parsed()) {
            const auto out =
                tgl::run_train(cfg, pool_path, holdout_path, out_dir, resume, selection_path);
            std::cout << tgl::eval_report_table(out.final_eval);
            std::cout << "metrics: " << out.metrics_path << "\n";
        } else if (eval->parsed()) {
            const auto report = tgl::run_eval(cfg, checkpoint_path, pool_path, out_file);
            std::cout << tgl::eval_report_table(report);
        } else if (score->parsed()) {
            tgl::run_score(cfg, checkpoint_path, pool_path, out_file);
            std::cout << "wrote " << out_file << "\n";
        } else if (select->parsed()) {
            const auto ids = tgl::run_select(cfg, scored_path, out_file);
            std::cout << "selected " << ids.size() << " ids -> " << out_file << "\n";
        } else if (analyze->parsed()) {
            if (variance->parsed()) {
                const auto out = tgl::run_variance(cfg, checkpoint_path, pool_path, n_samples,
                                                   n_boot, out_dir);
                std::printf("trace_cov grpo=%.6g opd=%.6g (opd below grpo at 95%%: %s)\n",
                            out.grpo.trace_cov, out.opd.trace_cov,
                            out.dominance.a_below_b ? "yes" : "no");
            } else {
                const auto report = tgl::run_kl_check(cfg, checkpoint_path, pool_path, n_samples,
                                                      z_threshold, out_file);
                std::printf("kl=%.6g max|z|=%.3f\n", report.kl, report.max_abs_z);
            }
        } else if (compare->parsed()) {
            const auto rows = tgl::run_compare(metrics_paths, target_miou, out_dir);
            std::cout << tgl::budget_rows_table(rows, target_miou);
        }
    } catch (const tgl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tgl::CheckError& e) {
        std::cerr << "check failed: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

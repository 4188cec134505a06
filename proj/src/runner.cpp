#include "tgl/runner.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>
#include <variant>

#include "tgl/error.hpp"
#include "tgl/grpo.hpp"
#include "tgl/offpolicy.hpp"
#include "tgl/opd.hpp"

namespace tgl {

namespace fs = std::filesystem;

std::shared_ptr<const Policy> make_teacher(const ExperimentConfig& cfg) {
    if (cfg.teacher.kind == "oracle") {
        return std::make_shared<OracleTeacher>(OracleTeacherConfig{
            cfg.teacher.sharpness, cfg.teacher.corruption_rate, cfg.teacher.seed});
    }
    if (cfg.teacher.checkpoint.empty()) {
        throw ConfigError("teacher.kind=checkpoint requires teacher.checkpoint");
    }
    return std::make_shared<SoftmaxPolicy>(load_checkpoint(cfg.teacher.checkpoint).params);
}

PolicyParams make_initial_params(const ExperimentConfig& cfg) {
    if (!cfg.init_checkpoint.empty()) return load_checkpoint(cfg.init_checkpoint).params;
    PolicyShape shape{cfg.env.n_symbols, vocab::kSize, cfg.policy_d};
    Rng rng = derive_rng(cfg.seed, Stream::param_init);
    return make_random_params(shape, rng, cfg.policy_init_scale);
}

GenOutcome run_gen(const ExperimentConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::string hash = config_hash(cfg);

    auto build = [&](int count, uint64_t pool_tag, const char* prefix) {
        std::vector<GroundingInstance> pool(count);
        for (int i = 0; i < count; ++i) {
            Rng rng = derive_rng(cfg.seed, Stream::pool_gen, pool_tag, static_cast<uint64_t>(i));
            pool[i] = generate_instance(rng.next_u64(), cfg.env);
            char id[32];
            std::snprintf(id, sizeof(id), "%s-%06d", prefix, i);
            pool[i].id = id;
        }
        return pool;
    };
    const auto train = build(cfg.pool_train_size, 0, "tr");
    const auto holdout = build(cfg.holdout_size, 1, "ho");

    std::set<std::string> ids;
    for (const auto& inst : train) ids.insert(inst.id);
    for (const auto& inst : holdout) {
        if (!ids.insert(inst.id).second) throw ConfigError("pool id collision: " + inst.id);
    }

    GenOutcome out{out_dir + "/train.jsonl", out_dir + "/holdout.jsonl"};
    write_pool(out.train_path, train, hash);
    write_pool(out.holdout_path, holdout, hash);
    write_file(out_dir + "/config.txt", config_to_text(cfg));
    std::vector<std::string> files{"train.jsonl", "holdout.jsonl", "config.txt"};
    if (cfg.gt_jitter > 0) {
        write_pool(out_dir + "/train_blurred.jsonl", jitter_pool(train, cfg.gt_jitter), hash);
        files.push_back("train_blurred.jsonl");
    }
    write_manifest(out_dir, hash, files);
    return out;
}

// --- Training --------------------------------------------------------------------

namespace {

using TrainerVariant = std::variant<GrpoTrainer, OpdTrainer, OffPolicyTrainer>;

TrainerVariant make_trainer(const ExperimentConfig& cfg, PolicyParams initial,
                            std::shared_ptr<const Policy> teacher) {
    switch (cfg.algo) {
        case Algo::grpo: {
            GrpoConfig gc = cfg.grpo;
            gc.max_len = cfg.max_len;
            return TrainerVariant{std::in_place_type<GrpoTrainer>, std::move(initial), gc,
                                  cfg.seed};
        }
        case Algo::opd: {
            OpdConfig oc = cfg.opd;
            oc.max_len = cfg.max_len;
            return TrainerVariant{std::in_place_type<OpdTrainer>, std::move(initial),
                                  std::move(teacher), oc, cfg.seed};
        }
        case Algo::oprkd:
        case Algo::opfkd: {
            OffPolicyConfig oc = cfg.offpolicy;
            oc.variant =
                cfg.algo == Algo::oprkd ? OffPolicyVariant::oprkd : OffPolicyVariant::opfkd;
            return TrainerVariant{std::in_place_type<OffPolicyTrainer>, std::move(initial),
                                  std::move(teacher), oc};
        }
    }
    throw ConfigError("unknown algo");
}

MetricsRecord trainer_step(TrainerVariant& t, std::span<const GroundingInstance* const> slice,
                           int threads) {
    return std::visit([&](auto& tr) { return tr.step(slice, threads); }, t);
}

const PolicyParams& trainer_params(const TrainerVariant& t) {
    return std::visit([](const auto& tr) -> const PolicyParams& { return tr.params(); }, t);
}

long long trainer_steps_done(const TrainerVariant& t) {
    return std::visit([](const auto& tr) { return tr.steps_done(); }, t);
}

void trainer_restore(TrainerVariant& t, const PolicyParams& params, long long step,
                     long long tokens) {
    std::visit(
        [&](auto& tr) {
            using T = std::decay_t<decltype(tr)>;
            tr.mutable_params() = params;
            tr.set_steps_done(step);
            if constexpr (!std::is_same_v<T, OffPolicyTrainer>) {
                tr.set_tokens_cum(tokens);
                tr.reset_old();
            }
        },
        t);
}

long long trainer_tokens_cum(const TrainerVariant& t) {
    return std::visit(
        [](const auto& tr) -> long long {
            using T = std::decay_t<decltype(tr)>;
            if constexpr (std::is_same_v<T, OffPolicyTrainer>) {
                return 0;
            } else {
                return tr.tokens_cum();
            }
        },
        t);
}

// Stateless batch schedule: slices are a pure function of the step index, so
// interrupted runs resume on the exact same data order.
struct BatchSchedule {
    const std::vector<const GroundingInstance*>& pool;
    int batch_size;
    uint64_t seed;
    uint64_t pool_tag;

    long long batches_per_epoch() const {
        return std::max<long long>(1, static_cast<long long>(pool.size()) / batch_size);
    }

    std::vector<const GroundingInstance*> slice_for(long long step) const {
        const long long epoch = (step - 1) / batches_per_epoch();
        const long long slot = (step - 1) % batches_per_epoch();
        std::vector<const GroundingInstance*> order(pool);
        Rng rng = derive_rng(seed, Stream::epoch_shuffle, static_cast<uint64_t>(epoch), pool_tag);
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.next_int(static_cast<int>(i))]);
        }
        const size_t lo = static_cast<size_t>(slot) * batch_size;
        const size_t hi = std::min(order.size(), lo + batch_size);
        return {order.begin() + lo, order.begin() + hi};
    }
};

std::vector<const GroundingInstance*> pool_ptrs(std::span<const GroundingInstance> pool) {
    std::vector<const GroundingInstance*> ptrs(pool.size());
    for (size_t i = 0; i < pool.size(); ++i) ptrs[i] = &pool[i];
    return ptrs;
}

}  // namespace

TrainOutcome run_train(const ExperimentConfig& cfg, const std::string& train_pool_path,
                       const std::string& holdout_path, const std::string& out_dir,
                       bool resume, const std::string& selection_path,
                       long long stop_after_steps) {
    fs::create_directories(out_dir);
    const std::string hash = config_hash(cfg);
    const auto train_pool = read_pool(train_pool_path);
    const auto holdout = read_pool(holdout_path);
    if (train_pool.empty() || holdout.empty()) throw ConfigError("empty pool");

    // A selection restricts training to the listed ids, in file order.
    std::vector<const GroundingInstance*> active = pool_ptrs(train_pool);
    if (!selection_path.empty()) {
        std::istringstream ids(read_file(selection_path));
        std::vector<const GroundingInstance*> chosen;
        std::string id;
        while (std::getline(ids, id)) {
            if (id.empty() || id[0] == '#') continue;
            auto it = std::find_if(active.begin(), active.end(),
                                   [&](const GroundingInstance* p) { return p->id == id; });
            if (it == active.end()) throw ConfigError("selection id not in pool: " + id);
            chosen.push_back(*it);
        }
        if (chosen.empty()) throw ConfigError("selection file is empty: " + selection_path);
        active = std::move(chosen);
    }

    const bool needs_teacher = cfg.algo != Algo::grpo || cfg.curriculum_enabled;
    std::shared_ptr<const Policy> teacher = needs_teacher ? make_teacher(cfg) : nullptr;

    TrainOutcome outcome;
    outcome.metrics_path = out_dir + "/metrics.jsonl";
    outcome.checkpoint_path = out_dir + "/last.ckpt";

    TrainerVariant trainer = make_trainer(cfg, make_initial_params(cfg), teacher);
    double wallclock_cum = 0.0;

    if (resume && fs::exists(outcome.checkpoint_path)) {
        const Checkpoint ckpt = load_checkpoint(outcome.checkpoint_path);
        trainer_restore(trainer, ckpt.params, ckpt.step, ckpt.tokens_cum);
    } else {
        write_file(outcome.metrics_path,
                   metrics_header_line(hash, algo_name(cfg.algo), cfg.seed) + "\n");
        write_file(out_dir + "/config.txt", config_to_text(cfg));
    }

    std::vector<std::string> produced{"metrics.jsonl", "config.txt", "last.ckpt"};

    auto eval_and_log = [&](long long step) {
        const EvalReport report = greedy_eval(trainer_params(trainer), holdout, cfg.max_len,
                                              cfg.thresholds, cfg.threads);
        append_file(outcome.metrics_path,
                    eval_record_line(step, algo_name(cfg.algo), trainer_tokens_cum(trainer),
                                     wallclock_cum, report) +
                        "\n");
        outcome.evals.push_back(EvalPoint{step, trainer_tokens_cum(trainer), wallclock_cum,
                                          report.mean_iou});
        save_checkpoint(outcome.checkpoint_path, trainer_params(trainer), hash, step,
                        trainer_tokens_cum(trainer));
        outcome.final_eval = report;
        return report;
    };

    if (cfg.curriculum_enabled) {
        if (!teacher) throw ConfigError("curriculum requires a teacher");
        if (resume) throw ConfigError("resume is not supported for curriculum runs");
        CurriculumConfig cc = cfg.curriculum;
        cc.max_len = cfg.max_len;
        RoundHooks hooks;
        hooks.student = [&]() { return trainer_params(trainer); };
        hooks.train = [&](std::span<const GroundingInstance* const> selection, int round) {
            std::vector<const GroundingInstance*> sel(selection.begin(), selection.end());
            BatchSchedule round_sched{sel, std::min<int>(cfg.batch_size, sel.size()), cfg.seed,
                                      static_cast<uint64_t>(round)};
            for (long long s = 0; s < cfg.curriculum_round_steps; ++s) {
                const auto slice = round_sched.slice_for(s + 1);
                const MetricsRecord rec = trainer_step(trainer, slice, cfg.threads);
                wallclock_cum += rec.wallclock_ms;
                append_file(outcome.metrics_path, train_record_line(rec) + "\n");
            }
        };
        hooks.on_round = [&](const RoundResult& rr) {
            std::ostringstream ids;
            ids << "# config_hash=" << hash << "\n";
            for (const auto& id : rr.selected_ids) ids << id << "\n";
            const std::string sel_name = "selection_round" + std::to_string(rr.round) + ".ids";
            write_file(out_dir + "/" + sel_name, ids.str());
            produced.push_back(sel_name);
            const std::string ck_name = "round" + std::to_string(rr.round) + ".ckpt";
            save_checkpoint(out_dir + "/" + ck_name, trainer_params(trainer), hash,
                            trainer_steps_done(trainer), trainer_tokens_cum(trainer));
            produced.push_back(ck_name);
            append_file(outcome.metrics_path,
                        eval_record_line(trainer_steps_done(trainer), algo_name(cfg.algo),
                                         trainer_tokens_cum(trainer), wallclock_cum,
                                         rr.holdout_report) +
                            "\n");
            outcome.evals.push_back(EvalPoint{trainer_steps_done(trainer),
                                              trainer_tokens_cum(trainer), wallclock_cum,
                                              rr.holdout_report.mean_iou});
        };
        outcome.rounds = run_rounds(*teacher, train_pool, holdout, cc, hooks, cfg.seed,
                                    cfg.thresholds, cfg.threads);
        outcome.final_eval = outcome.rounds.back().holdout_report;
        save_checkpoint(outcome.checkpoint_path, trainer_params(trainer), hash,
                        trainer_steps_done(trainer), trainer_tokens_cum(trainer));
    } else {
        BatchSchedule sched{active, std::min<int>(cfg.batch_size, active.size()), cfg.seed, 0};
        const long long last_step = stop_after_steps > 0
                                        ? std::min(cfg.train_steps, stop_after_steps)
                                        : cfg.train_steps;
        for (long long step = trainer_steps_done(trainer) + 1; step <= last_step; ++step) {
            const auto slice = sched.slice_for(step);
            const MetricsRecord rec = trainer_step(trainer, slice, cfg.threads);
            wallclock_cum += rec.wallclock_ms;
            append_file(outcome.metrics_path, train_record_line(rec) + "\n");
            if (cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.train_steps)) {
                eval_and_log(step);
            }
        }
        if (outcome.evals.empty() && stop_after_steps > 0) {
            // Interrupted before any eval fired: still leave a resumable checkpoint.
            save_checkpoint(outcome.checkpoint_path, trainer_params(trainer), hash,
                            trainer_steps_done(trainer), trainer_tokens_cum(trainer));
        }
        if (outcome.evals.empty()) eval_and_log(trainer_steps_done(trainer));
    }

    outcome.final_params = trainer_params(trainer);
    write_manifest(out_dir, hash, produced);
    return outcome;
}

EvalReport run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    const std::string& pool_path, const std::string& out_json) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const auto pool = read_pool(pool_path);
    const EvalReport report =
        greedy_eval(ckpt.params, pool, cfg.max_len, cfg.thresholds, cfg.threads);
    if (!out_json.empty()) {
        write_file(out_json, eval_report_to_json(report, config_hash(cfg)) + "\n");
    }
    return report;
}

std::string run_score(const ExperimentConfig& cfg, const std::string& student_checkpoint,
                      const std::string& pool_path, const std::string& out_csv) {
    const Checkpoint ckpt = load_checkpoint(student_checkpoint);
    const auto pool = read_pool(pool_path);
    const auto teacher = make_teacher(cfg);
    CurriculumConfig cc = cfg.curriculum;
    cc.max_len = cfg.max_len;
    const auto scored = score_pool(ckpt.params, *teacher, pool, cc, cfg.seed, 0, cfg.threads);
    const std::string csv = scored_to_csv(scored, config_hash(cfg));
    if (!out_csv.empty()) write_file(out_csv, csv);
    return csv;
}

std::vector<std::string> run_select(const ExperimentConfig& cfg, const std::string& scored_csv,
                                    const std::string& out_ids) {
    const auto scored = scored_from_csv(read_file(scored_csv));
    const auto reliable = filter_reliable(scored);
    CurriculumConfig cc = cfg.curriculum;
    Rng rng = derive_rng(cfg.seed, Stream::curriculum, 0, 0, 99);
    const auto selected = select_samples(reliable, cc, rng);
    std::vector<std::string> ids;
    std::ostringstream os;
    os << "# config_hash=" << config_hash(cfg) << "\n";
    for (const auto& s : selected) {
        ids.push_back(s.id);
        os << s.id << "\n";
    }
    if (!out_ids.empty()) write_file(out_ids, os.str());
    return ids;
}

VarianceOutcome run_variance(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                             const std::string& pool_path, int n_samples, int n_boot,
                             const std::string& out_dir) {
    fs::create_directories(out_dir);
    const PolicyParams params = checkpoint_path.empty()
                                    ? make_initial_params(cfg)
                                    : load_checkpoint(checkpoint_path).params;
    const auto pool = read_pool(pool_path);
    if (pool.empty()) throw ConfigError("empty pool");
    const auto teacher = make_teacher(cfg);

    VarianceContext ctx;
    ctx.teacher = teacher.get();
    ctx.reward = cfg.grpo.reward;
    ctx.group_size = cfg.grpo.group_size;
    ctx.max_len = cfg.max_len;

    VarianceOutcome out;
    GradientSamples samples_grpo, samples_opd;
    out.grpo = measure_variance(EstimatorKind::grpo, params, ctx, pool[0], n_samples, cfg.seed,
                                cfg.threads, &samples_grpo);
    out.opd = measure_variance(EstimatorKind::opd, params, ctx, pool[0], n_samples, cfg.seed,
                               cfg.threads, &samples_opd);
    out.dominance =
        bootstrap_trace_dominance(samples_opd, samples_grpo, n_boot, cfg.seed, cfg.threads);

    const std::string hash = config_hash(cfg);
    write_file(out_dir + "/variance_grpo.json",
               variance_report_to_json(out.grpo, nullptr, hash) + "\n");
    write_file(out_dir + "/variance_opd.json",
               variance_report_to_json(out.opd, &out.dominance, hash) + "\n");
    std::ostringstream csv;
    csv << "coord,var_grpo,var_opd\n";
    for (size_t c = 0; c < out.grpo.per_coord_var.size(); ++c) {
        csv << c << ',' << out.grpo.per_coord_var[c] << ',' << out.opd.per_coord_var[c] << "\n";
    }
    write_file(out_dir + "/variance.csv", csv.str());
    write_manifest(out_dir, hash, {"variance_grpo.json", "variance_opd.json", "variance.csv"});
    return out;
}

KlIdentityReport run_kl_check(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                              const std::string& pool_path, int n_samples, double z_threshold,
                              const std::string& out_json) {
    const PolicyParams params = checkpoint_path.empty()
                                    ? make_initial_params(cfg)
                                    : load_checkpoint(checkpoint_path).params;
    const auto pool = read_pool(pool_path);
    if (pool.empty()) throw ConfigError("empty pool");
    const auto teacher = make_teacher(cfg);

    PolicyState state{&pool[0], {}};
    const KlIdentityReport report =
        kl_identity_check(params, *teacher, state, n_samples, cfg.seed);

    if (!out_json.empty()) {
        std::ostringstream os;
        os << "{\n  \"config_hash\": \"" << config_hash(cfg) << "\",\n"
           << "  \"n_samples\": " << n_samples << ",\n"
           << "  \"kl\": " << report.kl << ",\n"
           << "  \"max_abs_z\": " << report.max_abs_z << ",\n"
           << "  \"z_threshold\": " << z_threshold << "\n}\n";
        write_file(out_json, os.str());
    }
    if (report.max_abs_z > z_threshold) {
        throw CheckError("kl identity check failed: max |z| = " +
                         std::to_string(report.max_abs_z));
    }
    return report;
}

std::vector<BudgetRow> run_compare(const std::vector<std::string>& metrics_paths,
                                   double target_miou, const std::string& out_dir) {
    if (metrics_paths.empty()) throw ConfigError("compare: no metrics files given");
    std::map<std::string, std::vector<EvalPoint>> streams;
    std::string hash;
    for (const auto& path : metrics_paths) {
        MetricsStream s = parse_metrics_file(path);
        if (s.evals.empty()) throw ConfigError("metrics stream has no eval records: " + path);
        std::string name = s.algo.empty() ? path : s.algo;
        while (streams.count(name)) name += "'";  // duplicate algos stay distinct
        streams[name] = std::move(s.evals);
        if (hash.empty()) hash = s.config_hash;
    }
    const auto rows = budget_compare(streams, target_miou);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file(out_dir + "/budget.json", budget_rows_to_json(rows, target_miou, hash) + "\n");
        write_file(out_dir + "/budget.csv", budget_rows_csv(rows));
    }
    return rows;
}

}  // namespace tgl

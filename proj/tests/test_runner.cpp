#include <filesystem>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "tgl/error.hpp"
#include "tgl/io.hpp"
#include "tgl/runner.hpp"

using namespace tgl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.seed = 5;
    cfg.pool_train_size = 48;
    cfg.holdout_size = 16;
    cfg.train_steps = 40;
    cfg.batch_size = 16;
    cfg.eval_every = 20;
    cfg.algo = Algo::opfkd;
    cfg.offpolicy.learning_rate = 0.2;
    cfg.teacher.sharpness = 10.0;
    return cfg;
}

}  // namespace

TEST_CASE("config: text round-trip, overrides, stable hash") {
    ExperimentConfig cfg;
    const std::string text = config_to_text(cfg);
    const ExperimentConfig back = parse_config_text(text);
    CHECK(config_to_text(back) == text);
    CHECK(config_hash(back) == config_hash(cfg));

    apply_override(cfg, "algo", "grpo");
    apply_override(cfg, "grpo.beta", "0.02");
    apply_override(cfg, "eval.thresholds", "0.25,0.5");
    CHECK(cfg.algo == Algo::grpo);
    CHECK(cfg.grpo.beta == 0.02);
    CHECK(cfg.thresholds == std::vector<double>{0.25, 0.5});
    CHECK(config_hash(cfg) != config_hash(ExperimentConfig{}));

    CHECK_THROWS_AS(apply_override(cfg, "no.such.key", "1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "algo", "sft"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("not a kv line"), ConfigError);

    // threads never contributes to the run identity
    ExperimentConfig t1 = ExperimentConfig{}, t4 = ExperimentConfig{};
    t1.threads = 1;
    t4.threads = 4;
    CHECK(config_hash(t1) == config_hash(t4));
}

TEST_CASE("gen: deterministic files, disjoint ids, sizes, jitter copy") {
    ExperimentConfig cfg = small_config();
    cfg.gt_jitter = 3;
    TempDir dir_a("tgl_gen_a"), dir_b("tgl_gen_b");
    run_gen(cfg, dir_a.path.string());
    run_gen(cfg, dir_b.path.string());

    CHECK(read_file(dir_a / "train.jsonl") == read_file(dir_b / "train.jsonl"));
    CHECK(read_file(dir_a / "holdout.jsonl") == read_file(dir_b / "holdout.jsonl"));
    CHECK(read_file(dir_a / "train_blurred.jsonl") == read_file(dir_b / "train_blurred.jsonl"));

    const auto train = read_pool(dir_a / "train.jsonl");
    const auto holdout = read_pool(dir_a / "holdout.jsonl");
    const auto blurred = read_pool(dir_a / "train_blurred.jsonl");
    CHECK(train.size() == 48);
    CHECK(holdout.size() == 16);
    CHECK(blurred.size() == 48);
    for (const auto& h : holdout) {
        for (const auto& t : train) CHECK(h.id != t.id);
    }
    for (size_t i = 0; i < train.size(); ++i) {
        CHECK(blurred[i].id == train[i].id);
        CHECK(blurred[i].context == train[i].context);
        CHECK(blurred[i].gt != train[i].gt);
    }
    CHECK(read_file(dir_a / "MANIFEST.json").find(config_hash(cfg)) != std::string::npos);
}

TEST_CASE("train: metrics stream, checkpoint, config hash embedding") {
    ExperimentConfig cfg = small_config();
    TempDir dir("tgl_train");
    const auto gen = run_gen(cfg, dir.path.string());
    const auto out = run_train(cfg, gen.train_path, gen.holdout_path, dir / "run");

    const auto stream = parse_metrics_file(out.metrics_path);
    CHECK(stream.algo == "opfkd");
    CHECK(stream.config_hash == config_hash(cfg));
    CHECK(stream.n_train_records == 40);
    CHECK(stream.evals.size() == 2);  // steps 20 and 40

    const auto ckpt = load_checkpoint(out.checkpoint_path);
    CHECK(ckpt.step == 40);
    CHECK(ckpt.config_hash == config_hash(cfg));
    CHECK(ckpt.params.data == out.final_params.data);
    CHECK(out.final_eval.n_instances == 16);
}

TEST_CASE("train: byte-identical metrics across runs and thread counts") {
    ExperimentConfig cfg = small_config();
    cfg.algo = Algo::grpo;
    cfg.grpo.learning_rate = 0.05;
    TempDir dir("tgl_det");
    const auto gen = run_gen(cfg, dir.path.string());

    ExperimentConfig cfg4 = cfg;
    cfg4.threads = 4;
    const auto a = run_train(cfg, gen.train_path, gen.holdout_path, dir / "a");
    const auto b = run_train(cfg, gen.train_path, gen.holdout_path, dir / "b");
    const auto c = run_train(cfg4, gen.train_path, gen.holdout_path, dir / "c");

    const auto norm = [](const std::string& p) { return strip_wallclock(read_file(p)); };
    CHECK(norm(a.metrics_path) == norm(b.metrics_path));
    CHECK(norm(a.metrics_path) == norm(c.metrics_path));
    CHECK(read_file(a.checkpoint_path) == read_file(c.checkpoint_path));
}

TEST_CASE("train: interrupt and resume reproduces the uninterrupted run") {
    ExperimentConfig cfg = small_config();
    cfg.algo = Algo::opd;
    cfg.opd.learning_rate = 0.02;
    TempDir dir("tgl_resume");
    const auto gen = run_gen(cfg, dir.path.string());

    const auto full = run_train(cfg, gen.train_path, gen.holdout_path, dir / "full");

    run_train(cfg, gen.train_path, gen.holdout_path, dir / "halved", false, "",
              /*stop_after_steps=*/20);
    const auto resumed =
        run_train(cfg, gen.train_path, gen.holdout_path, dir / "halved", /*resume=*/true);

    CHECK(resumed.final_params.data == full.final_params.data);
    CHECK(read_file(resumed.checkpoint_path) == read_file(full.checkpoint_path));
    const auto norm = [](const std::string& p) { return strip_wallclock(read_file(p)); };
    CHECK(norm(resumed.metrics_path) == norm(full.metrics_path));
}

TEST_CASE("eval: oracle-quality checkpoint vs untrained babble") {
    ExperimentConfig cfg = small_config();
    TempDir dir("tgl_eval");
    const auto gen = run_gen(cfg, dir.path.string());
    const auto holdout = read_pool(gen.holdout_path);

    // The oracle teacher itself greedy-decodes the ground truth.
    OracleTeacher oracle({50.0, 0.0, 0});
    const auto perfect = greedy_eval(oracle, holdout, cfg.max_len, cfg.thresholds, 2);
    CHECK(perfect.mean_iou >= 0.999);

    // An untrained policy almost never decodes.
    const auto zero = make_zero_params(PolicyShape{cfg.env.n_symbols, vocab::kSize, 8});
    save_checkpoint(dir / "zero.ckpt", zero, "x", 0);
    const auto report = run_eval(cfg, dir / "zero.ckpt", gen.holdout_path, dir / "eval.json");
    CHECK(report.mean_iou < 0.1);
    CHECK(read_file(dir / "eval.json").find("\"mean_iou\"") != std::string::npos);

    CHECK_THROWS_AS(run_eval(cfg, dir / "missing.ckpt", gen.holdout_path, ""), ConfigError);
}

TEST_CASE("score -> select -> train consumes the selection without re-scoring") {
    ExperimentConfig cfg = small_config();
    cfg.algo = Algo::opd;
    cfg.curriculum.k_select = 10;
    TempDir dir("tgl_pipe");
    const auto gen = run_gen(cfg, dir.path.string());

    // A student checkpoint to score with.
    Rng prng = derive_rng(cfg.seed, Stream::param_init);
    const auto student = make_random_params(PolicyShape{cfg.env.n_symbols, vocab::kSize, 8},
                                            prng, cfg.policy_init_scale);
    save_checkpoint(dir / "student.ckpt", student, config_hash(cfg), 0);

    run_score(cfg, dir / "student.ckpt", gen.train_path, dir / "scored.csv");
    const auto scored = scored_from_csv(read_file(dir / "scored.csv"));
    CHECK(scored.size() == 48);

    const auto ids = run_select(cfg, dir / "scored.csv", dir / "selection.ids");
    CHECK(ids.size() == 10);
    std::set<std::string> reliable_ids;
    for (const auto& s : scored) {
        if (s.reliable) reliable_ids.insert(s.id);
    }
    for (const auto& id : ids) CHECK(reliable_ids.count(id) == 1);

    ExperimentConfig tcfg = cfg;
    tcfg.train_steps = 10;
    tcfg.eval_every = 10;
    const auto out = run_train(tcfg, gen.train_path, gen.holdout_path, dir / "run", false,
                               dir / "selection.ids");
    CHECK(parse_metrics_file(out.metrics_path).n_train_records == 10);

    // Selecting everything with topk is the identity on the reliable pool.
    ExperimentConfig allcfg = cfg;
    allcfg.curriculum.k_select = static_cast<int>(reliable_ids.size());
    const auto all_ids = run_select(allcfg, dir / "scored.csv", dir / "all.ids");
    CHECK(all_ids.size() == reliable_ids.size());
}

TEST_CASE("train: a saved policy checkpoint serves as the teacher") {
    ExperimentConfig cfg = small_config();
    TempDir dir("tgl_ckpt_teacher");
    const auto gen = run_gen(cfg, dir.path.string());

    // Stand-in for a post-trained snapshot.
    Rng prng = derive_rng(9, Stream::param_init);
    const auto snapshot = make_random_params(PolicyShape{cfg.env.n_symbols, vocab::kSize, 8},
                                             prng, 0.5);
    save_checkpoint(dir / "teacher.ckpt", snapshot, "t", 100);

    ExperimentConfig ocfg = cfg;
    ocfg.algo = Algo::opd;
    ocfg.train_steps = 10;
    ocfg.eval_every = 10;
    ocfg.teacher.kind = "checkpoint";
    ocfg.teacher.checkpoint = dir / "teacher.ckpt";
    const auto out = run_train(ocfg, gen.train_path, gen.holdout_path, dir / "run");
    CHECK(parse_metrics_file(out.metrics_path).n_train_records == 10);

    ExperimentConfig bad = ocfg;
    bad.teacher.checkpoint = "";
    CHECK_THROWS_AS(run_train(bad, gen.train_path, gen.holdout_path, dir / "run2"), ConfigError);
}

TEST_CASE("train: curriculum rounds through the runner") {
    ExperimentConfig cfg = small_config();
    cfg.algo = Algo::opd;
    cfg.opd.learning_rate = 0.02;
    cfg.curriculum_enabled = true;
    cfg.curriculum.k_select = 12;
    cfg.curriculum.rounds = 2;
    cfg.curriculum_round_steps = 15;
    TempDir dir("tgl_curr");
    const auto gen = run_gen(cfg, dir.path.string());
    const auto out = run_train(cfg, gen.train_path, gen.holdout_path, dir / "run");

    REQUIRE(out.rounds.size() == 2);
    CHECK(out.rounds[0].selected_ids.size() == 12);
    CHECK(fs::exists(dir.path / "run" / "selection_round1.ids"));
    CHECK(fs::exists(dir.path / "run" / "round2.ckpt"));
    const auto stream = parse_metrics_file(out.metrics_path);
    CHECK(stream.n_train_records == 30);
    CHECK(stream.evals.size() == 2);
    const std::string sel = read_file(dir / "run" + std::string("/selection_round1.ids"));
    CHECK(sel.find("# config_hash=" + config_hash(cfg)) == 0);

    CHECK_THROWS_AS(run_train(cfg, gen.train_path, gen.holdout_path, dir / "run", true),
                    ConfigError);
}

TEST_CASE("analyze + compare: files, exit semantics, budget table") {
    ExperimentConfig cfg = small_config();
    cfg.algo = Algo::opd;
    cfg.train_steps = 60;
    cfg.eval_every = 15;
    cfg.opd.learning_rate = 0.05;
    TempDir dir("tgl_an");
    const auto gen = run_gen(cfg, dir.path.string());

    const auto kl = run_kl_check(cfg, "", gen.train_path, 20000, 4.0, dir / "kl.json");
    CHECK(kl.max_abs_z >= 0.0);
    CHECK(read_file(dir / "kl.json").find("max_abs_z") != std::string::npos);
    // An impossible threshold raises the check failure (CLI exit code 3).
    CHECK_THROWS_AS(run_kl_check(cfg, "", gen.train_path, 20000, 1e-9, ""), CheckError);

    const auto var = run_variance(cfg, "", gen.train_path, 1024, 100, dir.path.string());
    CHECK(var.grpo.n_samples == 1024);
    CHECK(read_file(dir / "variance.csv").find("coord,var_grpo,var_opd") == 0);

    const auto opd_run = run_train(cfg, gen.train_path, gen.holdout_path, dir / "opd");
    ExperimentConfig gcfg = cfg;
    gcfg.algo = Algo::grpo;
    const auto grpo_run = run_train(gcfg, gen.train_path, gen.holdout_path, dir / "grpo");
    const auto rows = run_compare({opd_run.metrics_path, grpo_run.metrics_path}, 2.0,
                                  dir / "cmp");
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) CHECK_FALSE(row.reached);  // target 2.0 is unreachable
    CHECK(read_file(dir / "cmp" + std::string("/budget.json")).find("target_miou") !=
          std::string::npos);
}

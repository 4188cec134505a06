#include <algorithm>
#include <cmath>
#include <memory>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "tgl/curriculum.hpp"
#include "tgl/error.hpp"
#include "tgl/offpolicy.hpp"
#include "tgl/opd.hpp"

using namespace tgl;

namespace {

const EnvConfig kEnv{20, 4, 3, 6};

std::vector<ScoredSample> scored_fixture(std::span<const double> deltas) {
    std::vector<ScoredSample> out(deltas.size());
    for (size_t i = 0; i < deltas.size(); ++i) {
        out[i].id = "s-" + std::to_string(i);
        out[i].delta = deltas[i];
        out[i].disagreement = deltas[i] < 0 ? 0.0 : deltas[i];
        out[i].reliable = true;
    }
    return out;
}

std::vector<double> deltas_of(std::span<const ScoredSample> s) {
    std::vector<double> out;
    for (const auto& x : s) out.push_back(x.delta);
    return out;
}

}  // namespace

TEST_CASE("teacher_reliability: clean vs corrupted oracles") {
    OracleTeacher clean({50.0, 0.0, 0});
    Rng rng(1);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto inst = generate_instance(seed, kEnv);
        const auto res = teacher_reliability(clean, inst, 4, 0.5, rng, 8);
        CHECK(res.mean_iou >= 0.999);
        CHECK(res.reliable);
    }

    OracleTeacher corrupt({50.0, 1.0, 0});
    int unreliable = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto inst = generate_instance(seed, kEnv);
        const auto res = teacher_reliability(corrupt, inst, 4, 0.5, rng, 8);
        if (!res.reliable) ++unreliable;
        CHECK(res.mean_iou < 0.5);
    }
    CHECK(unreliable == 20);

    const auto inst = generate_instance(0, kEnv);
    Rng r1(7), r2(7);
    const auto a = teacher_reliability(clean, inst, 1, 0.5, r1, 8);
    const auto b = teacher_reliability(clean, inst, 1, 0.5, r2, 8);
    CHECK(a.mean_iou == b.mean_iou);
    CHECK_THROWS_AS(teacher_reliability(clean, inst, 0, 0.5, rng, 8), ConfigError);
}

TEST_CASE("disagreement_score: zero at self, monotone in teacher sharpness") {
    const auto inst = generate_instance(2, kEnv);
    const auto params = test::random_params(3);
    SoftmaxPolicy self_teacher(params);
    Rng rng(5);
    CHECK(disagreement_score(params, self_teacher, inst, rng, 8) < 1e-10);

    const auto uniform = make_zero_params(PolicyShape{kEnv.n_symbols, vocab::kSize, 8});
    double prev = -1.0;
    for (double sharp : {1.0, 10.0, 50.0}) {
        OracleTeacher teacher({sharp, 0.0, 0});
        Rng r(42);
        const double d = disagreement_score(uniform, teacher, inst, r, 8);
        CHECK(d >= 0.0);
        CHECK(d > prev);
        prev = d;
    }
}

TEST_CASE("score_pool: deterministic, reliable fraction tracks corruption") {
    std::vector<GroundingInstance> pool;
    for (int i = 0; i < 1000; ++i) {
        Rng r = derive_rng(3, Stream::pool_gen, 0, i);
        pool.push_back(generate_instance(r.next_u64(), kEnv));
        pool.back().id = "p-" + std::to_string(i);
    }
    const auto student = test::random_params(6);
    OracleTeacher teacher({50.0, 0.3, 9});
    CurriculumConfig cfg;

    const auto a = score_pool(student, teacher, pool, cfg, 17, 1, 4);
    const auto b = score_pool(student, teacher, pool, cfg, 17, 1, 1);
    REQUIRE(a.size() == pool.size());
    int reliable = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].teacher_iou == b[i].teacher_iou);
        CHECK(a[i].student_iou == b[i].student_iou);
        CHECK(a[i].disagreement == b[i].disagreement);
        CHECK(a[i].reliable == b[i].reliable);
        CHECK(a[i].delta == a[i].teacher_iou - a[i].student_iou);
        reliable += a[i].reliable;
    }
    CHECK(reliable >= 650);
    CHECK(reliable <= 750);
}

TEST_CASE("sample_dsus: the worked example and endpoint properties") {
    const std::vector<double> d5{0.9, 0.7, 0.5, 0.3, 0.1};
    const auto scored = scored_fixture(d5);
    const auto picked = sample_dsus(scored, 3);
    REQUIRE(picked.size() == 3);
    // 1-based ranks {1, 3, 5} of the delta-descending order.
    CHECK(picked[0].delta == 0.9);
    CHECK(picked[1].delta == 0.5);
    CHECK(picked[2].delta == 0.1);

    const auto all = sample_dsus(scored, 5);
    CHECK(deltas_of(all) == std::vector<double>{0.9, 0.7, 0.5, 0.3, 0.1});

    Rng rng(11);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> deltas(3 + rng.next_int(20));
        for (double& v : deltas) v = rng.next_range(-1.0, 1.0);
        const auto pool = scored_fixture(deltas);
        const int k = 2 + rng.next_int(static_cast<int>(deltas.size()) - 1);
        const auto sel = sample_dsus(pool, k);
        std::sort(deltas.begin(), deltas.end());
        CHECK(sel.front().delta == deltas.back());   // max delta first
        CHECK(sel.back().delta == deltas.front());   // min delta last
    }

    CHECK_THROWS_AS(sample_dsus(scored, 1), ConfigError);
    CHECK_THROWS_AS(sample_dsus(scored, 6), ConfigError);
}

TEST_CASE("sample_topk: worked example and partition property") {
    const std::vector<double> d4{0.1, 0.9, 0.5, 0.7};
    const auto scored = scored_fixture(d4);
    const auto picked = sample_topk(scored, 2);
    CHECK(deltas_of(picked) == std::vector<double>{0.9, 0.7});
    CHECK(sample_topk(scored, 4).size() == 4);

    Rng rng(12);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> deltas(2 + rng.next_int(30));
        for (double& v : deltas) v = rng.next_range(-1.0, 1.0);
        const auto pool = scored_fixture(deltas);
        const int k = 1 + rng.next_int(static_cast<int>(deltas.size()));
        const auto sel = sample_topk(pool, k);
        std::set<std::string> chosen;
        double min_sel = 2.0;
        for (const auto& s : sel) {
            chosen.insert(s.id);
            min_sel = std::min(min_sel, s.delta);
        }
        CHECK(chosen.size() == sel.size());
        for (const auto& s : pool) {
            if (!chosen.count(s.id)) CHECK(s.delta <= min_sel);
        }
    }
    CHECK_THROWS_AS(sample_topk(scored, 5), ConfigError);
}

TEST_CASE("bbds allocations: worked example and the balance property") {
    CHECK(bbds_allocations(7, 5) == std::vector<int>{2, 2, 1, 1, 1});
    Rng rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        const int buckets = 1 + rng.next_int(9);
        const int k = rng.next_int(100);
        const auto alloc = bbds_allocations(k, buckets);
        int total = 0;
        for (int b = 0; b < buckets; ++b) {
            total += alloc[b];
            CHECK(std::abs(alloc[b] - static_cast<double>(k) / buckets) <= 1.0);
        }
        CHECK(total == k);
    }
}

TEST_CASE("sample_bbds: per-bucket picks, degenerate range, shortfall rollover") {
    // Five buckets each holding one sample across [0.0, 1.0].
    const std::vector<double> spread{0.05, 0.25, 0.45, 0.65, 0.85};
    const auto scored = scored_fixture(spread);
    auto sel = sample_bbds(scored, 5, 5);
    REQUIRE(sel.size() == 5);
    const auto picked_deltas = deltas_of(sel);
    std::set<double> seen(picked_deltas.begin(), picked_deltas.end());
    CHECK(seen.size() == 5);

    // All-equal deltas: tie-break (id ascending) order, first k.
    const std::vector<double> equal(6, 0.4);
    const auto deg = sample_bbds(scored_fixture(equal), 3, 5);
    REQUIRE(deg.size() == 3);
    CHECK(deg[0].id == "s-0");
    CHECK(deg[1].id == "s-1");
    CHECK(deg[2].id == "s-2");

    // Sparse buckets force redistribution but never change the total.
    const std::vector<double> skew{0.0, 0.01, 0.02, 0.9, 0.91, 0.92, 0.93, 0.94};
    const auto roll = sample_bbds(scored_fixture(skew), 6, 5);
    CHECK(roll.size() == 6);
    std::set<std::string> ids;
    for (const auto& s : roll) ids.insert(s.id);
    CHECK(ids.size() == 6);
}

TEST_CASE("gaussian weights: worked examples") {
    const std::vector<double> deltas{0.9, 0.5};
    const auto p = gaussian_weights(deltas, 0.9, 0.2);
    CHECK(p[0] == doctest::Approx(0.8808).epsilon(2e-4));
    CHECK(p[1] == doctest::Approx(0.1192).epsilon(2e-3));

    const std::vector<double> ious{0.3, 0.7};
    const auto pd = gaussian_weights(ious, 0.3, 0.2);
    CHECK(pd[0] == doctest::Approx(0.8808).epsilon(2e-4));
    CHECK(pd[1] == doctest::Approx(0.1192).epsilon(2e-3));

    Rng rng(14);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> xs(1 + rng.next_int(40));
        for (double& v : xs) v = rng.next_unit();
        const auto w = gaussian_weights(xs, 0.4, 0.3);
        double sum = 0.0;
        for (double v : w) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }

    const std::vector<double> same(7, 0.5);
    for (double v : gaussian_weights(same, 0.9, 0.2)) {
        CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    }
}

TEST_CASE("sample_gwds: exhaustion and single-draw frequencies (chi-squared)") {
    const std::vector<double> d5{0.95, 0.8, 0.6, 0.4, 0.2};
    const auto scored = scored_fixture(d5);
    Rng rng(15);
    const auto all = sample_gwds(scored, 5, 0.9, 0.2, rng);
    CHECK(all.size() == 5);

    const auto probs = gaussian_weights(d5, 0.9, 0.2);
    std::vector<long long> counts(5, 0);
    for (int i = 0; i < 10000; ++i) {
        Rng r = derive_rng(99, Stream::curriculum, i, 0, 0);
        const auto one = sample_gwds(scored, 1, 0.9, 0.2, r);
        for (int j = 0; j < 5; ++j) {
            if (one[0].delta == d5[j]) ++counts[j];
        }
    }
    // df = 4, critical value at p = 0.01
    CHECK(test::chi2_stat(counts, probs) < 13.277);
}

TEST_CASE("difficulty_gaussian_sample: selection mechanics") {
    const std::vector<double> ious{0.1, 0.3, 0.5, 0.7, 0.9};
    Rng rng(16);
    const auto idx = difficulty_gaussian_sample(ious, 3, {0.3, 0.2}, rng);
    CHECK(idx.size() == 3);
    std::set<int> unique(idx.begin(), idx.end());
    CHECK(unique.size() == 3);
    CHECK_THROWS_AS(difficulty_gaussian_sample(ious, 6, {0.3, 0.2}, rng), ConfigError);
}

TEST_CASE("no unreliable sample ever reaches a strategy's output") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> deltas(10 + rng.next_int(30));
        for (double& v : deltas) v = rng.next_range(-1.0, 1.0);
        auto pool = scored_fixture(deltas);
        std::set<std::string> unreliable_ids;
        for (auto& s : pool) {
            if (rng.next_unit() < 0.4) {
                s.reliable = false;
                unreliable_ids.insert(s.id);
            }
        }
        const auto reliable = filter_reliable(pool);
        if (reliable.size() < 3) continue;
        const int k = 2 + rng.next_int(static_cast<int>(reliable.size()) - 2);
        Rng sel_rng(rng.next_u64());
        for (auto strategy : {SelectionStrategy::dsus, SelectionStrategy::topk,
                              SelectionStrategy::bbds, SelectionStrategy::gwds}) {
            CurriculumConfig cfg;
            cfg.strategy = strategy;
            cfg.k_select = k;
            const auto sel = select_samples(reliable, cfg, sel_rng);
            CHECK(static_cast<int>(sel.size()) == k);
            std::set<std::string> ids;
            for (const auto& s : sel) {
                CHECK(unreliable_ids.count(s.id) == 0);
                ids.insert(s.id);
            }
            CHECK(ids.size() == sel.size());
        }
    }
}

TEST_CASE("run_rounds: one round is score-select-train-eval; shortfall errors") {
    std::vector<GroundingInstance> pool;
    for (int i = 0; i < 24; ++i) {
        Rng r = derive_rng(4, Stream::pool_gen, 0, i);
        pool.push_back(generate_instance(r.next_u64(), kEnv));
        pool.back().id = "p-" + std::to_string(i);
    }
    std::vector<GroundingInstance> holdout(pool.begin(), pool.begin() + 8);

    auto teacher = std::make_shared<OracleTeacher>(OracleTeacherConfig{20.0, 0.0, 0});
    PolicyParams student = test::random_params(18);
    OpdConfig ocfg;
    ocfg.learning_rate = 0.02;
    OpdTrainer trainer(student, teacher, ocfg, 19);

    CurriculumConfig cfg;
    cfg.k_select = 6;
    cfg.rounds = 1;
    int train_calls = 0;
    RoundHooks hooks;
    hooks.student = [&]() { return trainer.params(); };
    hooks.train = [&](std::span<const GroundingInstance* const> sel, int) {
        ++train_calls;
        std::vector<const GroundingInstance*> slice(sel.begin(), sel.end());
        trainer.step(slice, 1);
    };
    std::vector<double> thr{0.5};
    const auto rounds = run_rounds(*teacher, pool, holdout, cfg, hooks, 7, thr, 1);
    REQUIRE(rounds.size() == 1);
    CHECK(train_calls == 1);
    CHECK(rounds[0].selected_ids.size() == 6);
    CHECK(rounds[0].holdout_report.n_instances == 8);
    CHECK(rounds[0].reliable_count == 24);

    // A fully corrupted teacher leaves no reliable samples: shortfall error.
    OracleTeacher bad({50.0, 1.0, 0});
    CHECK_THROWS_WITH_AS(run_rounds(bad, pool, holdout, cfg, hooks, 7, thr, 1),
                         doctest::Contains("shortfall"), ConfigError);
}

TEST_CASE("run_rounds: selection adapts as the student evolves") {
    std::vector<GroundingInstance> pool;
    for (int i = 0; i < 48; ++i) {
        Rng r = derive_rng(5, Stream::pool_gen, 0, i);
        pool.push_back(generate_instance(r.next_u64(), kEnv));
        pool.back().id = "p-" + std::to_string(i);
    }
    std::vector<GroundingInstance> holdout(pool.begin(), pool.begin() + 8);

    auto teacher = std::make_shared<OracleTeacher>(OracleTeacherConfig{10.0, 0.0, 0});
    // A student with varying per-instance quality, so deltas are not all ties:
    // a short supervised warmup toward blurred annotations.
    PolicyParams student = test::random_params(20, {}, 0.1);
    {
        const auto blurred = jitter_pool(pool, 3);
        std::vector<const GroundingInstance*> bslice;
        for (const auto& b : blurred) bslice.push_back(&b);
        OffPolicyTrainer warm(student, teacher, {OffPolicyVariant::opfkd, 0.2});
        for (int s = 0; s < 800; ++s) warm.step(bslice, 1);
        student = warm.params();
    }
    OpdConfig ocfg;
    ocfg.learning_rate = 0.02;
    OpdTrainer trainer(student, teacher, ocfg, 21);

    CurriculumConfig cfg;
    cfg.k_select = 16;
    cfg.rounds = 2;
    RoundHooks hooks;
    hooks.student = [&]() { return trainer.params(); };
    hooks.train = [&](std::span<const GroundingInstance* const> sel, int) {
        std::vector<const GroundingInstance*> slice(sel.begin(), sel.end());
        for (int s = 0; s < 200; ++s) trainer.step(slice, 1);
    };
    std::vector<double> thr{0.5};
    const auto rounds = run_rounds(*teacher, pool, holdout, cfg, hooks, 8, thr, 1);
    REQUIRE(rounds.size() == 2);
    CHECK(rounds[0].selected_ids != rounds[1].selected_ids);
}

TEST_CASE("scored CSV: exact round-trip and the select pipeline") {
    Rng rng(22);
    std::vector<double> deltas(12);
    for (double& v : deltas) v = rng.next_range(-1.0, 1.0);
    auto pool = scored_fixture(deltas);
    pool[3].reliable = false;
    pool[7].reliable = false;
    for (auto& s : pool) {
        s.teacher_iou = rng.next_unit();
        s.student_iou = rng.next_unit();
        s.delta = s.teacher_iou - s.student_iou;
        s.disagreement = rng.next_unit() * 5;
    }

    const std::string csv = scored_to_csv(pool, "deadbeefdeadbeef");
    CHECK(csv.find("# config_hash=deadbeefdeadbeef") == 0);
    CHECK(csv.find("id,teacher_iou,student_iou,delta,disagreement,reliable") != std::string::npos);

    const auto back = scored_from_csv(csv);
    REQUIRE(back.size() == pool.size());
    for (size_t i = 0; i < pool.size(); ++i) {
        CHECK(back[i].id == pool[i].id);
        CHECK(back[i].teacher_iou == pool[i].teacher_iou);  // %.17g survives bit-exactly
        CHECK(back[i].student_iou == pool[i].student_iou);
        CHECK(back[i].delta == pool[i].delta);
        CHECK(back[i].disagreement == pool[i].disagreement);
        CHECK(back[i].reliable == pool[i].reliable);
    }
}

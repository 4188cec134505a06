// Compares the serial reference path (threads = 1) against the OpenMP path on
// the data-parallel kernels, and checks that both produce identical bytes.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <memory>
#include <vector>

#include "tgl/analysis.hpp"
#include "tgl/curriculum.hpp"
#include "tgl/grpo.hpp"
#include "tgl/opd.hpp"
#include "tgl/parallel.hpp"
#include "tgl/policy.hpp"

using namespace tgl;

namespace {

double time_ms(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

struct Row {
    const char* kernel;
    double serial_ms;
    double parallel_ms;
    bool identical;
};

}  // namespace

int main() {
    const int threads = hardware_threads();
    std::printf("OpenMP threads: %d\n\n", threads);

    EnvConfig env{20, 4, 3, 6};
    std::vector<GroundingInstance> pool(512);
    for (int i = 0; i < 512; ++i) {
        Rng r = derive_rng(1, Stream::pool_gen, 0, i);
        pool[i] = generate_instance(r.next_u64(), env);
        pool[i].id = "tr-" + std::to_string(i);
    }
    std::vector<const GroundingInstance*> ptrs;
    for (auto& p : pool) ptrs.push_back(&p);
    std::vector<const GroundingInstance*> batch(ptrs.begin(), ptrs.begin() + 64);

    Rng prng = derive_rng(1, Stream::param_init);
    const PolicyParams params = make_random_params(PolicyShape{4, vocab::kSize, 8}, prng, 0.5);
    auto teacher = std::make_shared<OracleTeacher>(OracleTeacherConfig{10.0, 0.0, 0});
    std::vector<Row> rows;

    {  // one GRPO step over a 64-instance batch, G=8
        GrpoConfig cfg;
        auto run = [&](int t) {
            GrpoTrainer trainer(params, cfg, 7);
            trainer.step(batch, t);
            return trainer.params().data;
        };
        std::vector<double> serial_out, parallel_out;
        const double ts = time_ms([&] { serial_out = run(1); });
        const double tp = time_ms([&] { parallel_out = run(threads); });
        rows.push_back({"grpo step (64 x G=8)", ts, tp, serial_out == parallel_out});
    }
    {  // one OPD step over a 64-instance batch
        OpdConfig cfg;
        auto run = [&](int t) {
            OpdTrainer trainer(params, teacher, cfg, 7);
            trainer.step(batch, t);
            return trainer.params().data;
        };
        std::vector<double> serial_out, parallel_out;
        const double ts = time_ms([&] { serial_out = run(1); });
        const double tp = time_ms([&] { parallel_out = run(threads); });
        rows.push_back({"opd step (64 x 1)", ts, tp, serial_out == parallel_out});
    }
    {  // reliability/disagreement scoring of the full pool
        CurriculumConfig cfg;
        std::vector<ScoredSample> serial_out, parallel_out;
        const double ts =
            time_ms([&] { serial_out = score_pool(params, *teacher, pool, cfg, 5, 1, 1); });
        const double tp = time_ms(
            [&] { parallel_out = score_pool(params, *teacher, pool, cfg, 5, 1, threads); });
        bool same = serial_out.size() == parallel_out.size();
        for (size_t i = 0; same && i < serial_out.size(); ++i) {
            same = serial_out[i].id == parallel_out[i].id &&
                   serial_out[i].delta == parallel_out[i].delta &&
                   serial_out[i].disagreement == parallel_out[i].disagreement;
        }
        rows.push_back({"score_pool (512)", ts, tp, same});
    }
    {  // gradient-variance sampling
        VarianceContext ctx;
        ctx.teacher = teacher.get();
        VarianceReport serial_rep, parallel_rep;
        const double ts = time_ms([&] {
            serial_rep = measure_variance(EstimatorKind::opd, params, ctx, pool[0], 20000, 9, 1);
        });
        const double tp = time_ms([&] {
            parallel_rep =
                measure_variance(EstimatorKind::opd, params, ctx, pool[0], 20000, 9, threads);
        });
        rows.push_back({"variance (20k estimates)", ts, tp,
                        serial_rep.trace_cov == parallel_rep.trace_cov &&
                            serial_rep.per_coord_var == parallel_rep.per_coord_var});
    }
    {  // greedy evaluation sweep
        std::vector<double> thr{0.3, 0.5, 0.7};
        EvalReport serial_rep, parallel_rep;
        const double ts = time_ms([&] {
            for (int rep = 0; rep < 8; ++rep) serial_rep = greedy_eval(params, pool, 8, thr, 1);
        });
        const double tp = time_ms([&] {
            for (int rep = 0; rep < 8; ++rep) {
                parallel_rep = greedy_eval(params, pool, 8, thr, threads);
            }
        });
        rows.push_back({"greedy_eval (8 x 512)", ts, tp,
                        serial_rep.mean_iou == parallel_rep.mean_iou});
    }

    std::printf("%-28s %10s %10s %9s %10s\n", "kernel", "serial ms", "omp ms", "speedup",
                "identical");
    bool all_identical = true;
    for (const auto& row : rows) {
        std::printf("%-28s %10.2f %10.2f %8.2fx %10s\n", row.kernel, row.serial_ms,
                    row.parallel_ms, row.serial_ms / row.parallel_ms,
                    row.identical ? "yes" : "NO");
        all_identical = all_identical && row.identical;
    }
    return all_identical ? 0 : 1;
}

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gsd/harness.hpp"
#include "gsd/io.hpp"
#include "gsd/models.hpp"

using namespace gsd;

TEST_CASE("check_proposition1") {
    const Proposition1Report r = check_proposition1(10000, 128, 1);
    REQUIRE(r.max_abs_error <= 1e-12);
    REQUIRE(r.trials == 10000);
    REQUIRE(r.seed == 1);

    // p = q instances give exactly zero on both sides
    RngStream rng(8);
    for (int t = 0; t < 50; ++t) {
        const Pmf p = random_pmf(32, rng);
        REQUIRE(expected_accept_sd(p, p) == Catch::Approx(1.0).margin(1e-15));
        REQUIRE(tv_distance(p, p) == 0.0);
    }
}

TEST_CASE("check_theorem1") {
    const Theorem1Report r = check_theorem1(10000, 128, 2);
    REQUIRE(r.max_violation <= 1e-12);
}

TEST_CASE("test_sequence_exactness") {
    const MarkovTableModel target = make_markov_model(4, 0.5, 33);
    const std::vector<TokenId> prompt{0};

    SECTION("SJD passes the joint-law gate") {
        DecodeConfig cfg;
        cfg.method = Method::SJD;
        cfg.draft_len = 3;
        cfg.max_len = 4;
        const ExactnessReport report = test_sequence_exactness(
            target, nullptr, cfg, nullptr, nullptr, prompt, 30000, 91);
        REQUIRE(report.passed);
        REQUIRE(report.passed == (report.tv_empirical <= report.threshold));
        REQUIRE(report.mode == "joint");
        REQUIRE(report.seed == 91);
    }

    SECTION("SD with a sigma=0 draft sits at the sampling-noise floor") {
        const PerturbedDraftModel draft = make_perturbed_draft(target, 0.0, 4);
        DecodeConfig cfg;
        cfg.method = Method::SD;
        cfg.draft_len = 2;
        cfg.max_len = 4;
        const ExactnessReport report = test_sequence_exactness(
            target, &draft, cfg, nullptr, nullptr, prompt, 30000, 92);
        REQUIRE(report.passed);
    }

    SECTION("a large lossy parameter fails the gate and the report records it") {
        DecodeConfig cfg;
        cfg.method = Method::LossyAmplify;
        cfg.amplify_k = 8.0;
        cfg.draft_len = 3;
        cfg.max_len = 4;
        const ExactnessReport report = test_sequence_exactness(
            target, nullptr, cfg, nullptr, nullptr, prompt, 30000, 93);
        REQUIRE_FALSE(report.passed);
        REQUIRE(report.tv_empirical > report.threshold);
    }

    SECTION("grouped decoding may diverge; the report records the measurement either way") {
        DecodeConfig cfg;
        cfg.method = Method::GSD;
        cfg.group_size = 8;
        cfg.draft_len = 3;
        cfg.max_len = 4;
        const MarkovTableModel diffuse = make_markov_model(8, 1.0, 44);
        const ClusterStrategy strategy = ClusterStrategy::expert_window(8);
        const ExactnessReport report = test_sequence_exactness(
            diffuse, nullptr, cfg, &strategy, nullptr, prompt, 30000, 95);
        REQUIRE(report.method == "gsd");
        REQUIRE(report.tv_empirical >= 0.0);
        REQUIRE(report.passed == (report.tv_empirical <= report.threshold));
    }

    SECTION("oversized joint state space is rejected toward marginal mode") {
        DecodeConfig cfg;
        cfg.method = Method::SJD;
        cfg.max_len = 40;
        REQUIRE_THROWS_WITH(test_sequence_exactness(target, nullptr, cfg, nullptr, nullptr,
                                                    prompt, 100, 94),
                            Catch::Matchers::ContainsSubstring("Marginal"));
        const ExactnessReport report =
            test_sequence_exactness(target, nullptr, cfg, nullptr, nullptr, prompt, 2000, 94,
                                    ExactnessMode::Marginal, 0.05);
        REQUIRE(report.mode == "marginal");
        REQUIRE(report.length == 39);
    }
}

TEST_CASE("measure_accept_uplift") {
    DecodeConfig cfg;
    cfg.top_k = 26;
    cfg.seed = 5;
    const std::vector<TokenId> prompt{0};

    SECTION("G=1 gives zero uplift everywhere") {
        const MarkovTableModel target = make_markov_model(64, 1.0, 7);
        const PerturbedDraftModel draft = make_perturbed_draft(target, 0.5, 8);
        const UpliftReport r =
            measure_accept_uplift(target, draft, ClusterStrategy::expert_window(1), nullptr, 32,
                                  cfg, prompt);
        for (double u : r.per_position) REQUIRE(std::abs(u) <= 1e-15);
    }

    SECTION("p-sorted windows give positive mean uplift on the high-entropy toy") {
        const MarkovTableModel target = make_markov_model(256, 1.0, 9);
        const PerturbedDraftModel draft = make_perturbed_draft(target, 0.5, 10);
        const UpliftReport r =
            measure_accept_uplift(target, draft, ClusterStrategy::expert_window(8), nullptr, 64,
                                  cfg, prompt);
        INFO("overall mean uplift " << r.overall_mean);
        REQUIRE(r.overall_mean > 0.0);
    }

    SECTION("fixed disjoint partitions give non-negative uplift at every position") {
        const MarkovTableModel target = make_markov_model(64, 1.0, 11);
        const PerturbedDraftModel draft = make_perturbed_draft(target, 0.5, 12);
        const EmbeddingTable emb = make_embeddings(64, 16, 13);
        const Partition partition = static_partition(emb, 8, 14);
        const UpliftReport r = measure_accept_uplift(
            target, draft, ClusterStrategy::static_embedding(partition), nullptr, 64, cfg, prompt);
        for (double u : r.per_position) REQUIRE(u >= -1e-12);
    }
}

TEST_CASE("diagnose_positions") {
    DecodeConfig cfg;
    cfg.seed = 3;
    const std::vector<TokenId> prompt{0};

    SECTION("point-mass rows show top1_p of 1 and zero TV at sigma=0") {
        const MarkovTableModel target = make_markov_model(16, 0.0, 21);
        const PerturbedDraftModel draft = make_perturbed_draft(target, 0.0, 22);
        cfg.top_k = 1;  // exact point masses after truncation
        const auto rows = diagnose_positions(target, draft, ClusterStrategy::expert_window(4),
                                             nullptr, 24, cfg, prompt);
        for (const DiagnosticRow& r : rows) {
            REQUIRE(r.top1_p == 1.0);
            REQUIRE(r.tv == 0.0);
            REQUIRE(r.sd_accept == Catch::Approx(1.0).margin(1e-12));
        }
    }

    SECTION("sigma=0 means zero TV at every position") {
        const MarkovTableModel target = make_markov_model(32, 0.7, 23);
        const PerturbedDraftModel draft = make_perturbed_draft(target, 0.0, 24);
        cfg.top_k = 0;
        const auto rows = diagnose_positions(target, draft, ClusterStrategy::expert_window(4),
                                             nullptr, 24, cfg, prompt);
        for (const DiagnosticRow& r : rows) REQUIRE(r.tv == 0.0);
    }

    SECTION("the diffuse-disagreement pattern: small top-1, high TV") {
        const MarkovTableModel target = make_markov_model(256, 1.0, 25);
        const PerturbedDraftModel draft = make_perturbed_draft(target, 0.5, 26);
        cfg.top_k = 26;
        const auto rows = diagnose_positions(target, draft, ClusterStrategy::expert_window(8),
                                             nullptr, 64, cfg, prompt);
        double mean_top1 = 0.0, mean_tv = 0.0;
        for (const DiagnosticRow& r : rows) {
            mean_top1 += r.top1_p;
            mean_tv += r.tv;
        }
        mean_top1 /= static_cast<double>(rows.size());
        mean_tv /= static_cast<double>(rows.size());
        INFO("mean top1_p=" << mean_top1 << " mean tv=" << mean_tv);
        REQUIRE(mean_top1 <= 0.1);
        REQUIRE(mean_tv >= 0.3);
    }
}

TEST_CASE("run_sweep") {
    SweepPlan plan;
    plan.vocab = 64;
    plan.entropy_mix = 1.0;
    plan.model_seed = 31;
    plan.draft_len = 8;
    plan.top_k = 0;
    plan.max_len = 65;
    plan.fidelity_len = 0;
    plan.methods = {SweepMethodSpec{Method::SJD},
                    SweepMethodSpec{Method::GSD, 1},
                    SweepMethodSpec{Method::GSD, 4},
                    SweepMethodSpec{Method::GSD, 16},
                    SweepMethodSpec{Method::GSD, 64}};

    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 0; s < 40; ++s) seeds.push_back(s);

    SECTION("mean NFE decreases weakly in G on the high-entropy toy") {
        const auto rows = run_sweep(plan, seeds, 4);
        REQUIRE(rows.size() == 5);
        const double sjd_nfe = rows[0].mean_nfe;
        REQUIRE(rows[1].mean_nfe == Catch::Approx(sjd_nfe).margin(1e-12));  // G=1 == SJD
        double prev = 1e18;
        for (size_t i = 1; i < rows.size(); ++i) {
            REQUIRE(rows[i].mean_nfe <= prev + 1e-9);
            prev = rows[i].mean_nfe;
        }
    }

    SECTION("aggregation is invariant under seed permutation and job count") {
        const auto rows_a = run_sweep(plan, seeds, 1);
        std::vector<std::uint64_t> shuffled = seeds;
        std::reverse(shuffled.begin(), shuffled.end());
        std::swap(shuffled[3], shuffled[17]);
        const auto rows_b = run_sweep(plan, shuffled, 5);
        REQUIRE(rows_a.size() == rows_b.size());
        for (size_t i = 0; i < rows_a.size(); ++i) {
            REQUIRE(rows_a[i].mean_nfe == rows_b[i].mean_nfe);
            REQUIRE(rows_a[i].mean_accept_rate == rows_b[i].mean_accept_rate);
        }
    }

    SECTION("single-config single-seed grid emits exactly one row") {
        SweepPlan tiny = plan;
        tiny.methods = {SweepMethodSpec{Method::SJD}};
        const std::vector<std::uint64_t> one{7};
        std::vector<SweepSeedRow> raw;
        const auto rows = run_sweep(tiny, one, 1, &raw);
        REQUIRE(rows.size() == 1);
        REQUIRE(raw.size() == 1);
        REQUIRE(rows[0].seeds_used == 1);
    }

    SECTION("invalid rows are reported and the sweep continues") {
        SweepPlan bad = plan;
        bad.methods = {SweepMethodSpec{Method::SJD},
                       SweepMethodSpec{Method::LossyAmplify, 1, 0.5},  // k < 1 rejected
                       SweepMethodSpec{Method::GSD, 4}};
        std::vector<std::string> errors;
        const auto rows = run_sweep(bad, seeds, 2, nullptr, &errors);
        REQUIRE(rows.size() == 2);
        REQUIRE(errors.size() == 1);
    }

    SECTION("fidelity axis: lossy rows diverge, lossless rows do not") {
        SweepPlan fid = plan;
        fid.vocab = 16;
        fid.entropy_mix = 0.6;
        fid.max_len = 17;
        fid.draft_len = 6;
        fid.fidelity_len = 3;
        fid.fidelity_trials = 40000;
        fid.methods = {SweepMethodSpec{Method::SJD},
                       SweepMethodSpec{Method::LossyAmplify, 1, 4.0}};
        const auto rows = run_sweep(fid, seeds, 4);
        REQUIRE(rows.size() == 2);
        INFO("sjd tv=" << rows[0].mean_tv << " amplify tv=" << rows[1].mean_tv);
        REQUIRE(rows[0].mean_tv < rows[1].mean_tv);
    }
}

TEST_CASE("report serialization carries the fields reviewers read") {
    const Proposition1Report p = check_proposition1(10, 8, 3);
    const json j = to_json(p);
    REQUIRE(j.at("seed").get<std::uint64_t>() == 3);
    REQUIRE(j.contains("max_abs_error"));

    SweepRow row;
    row.method = "gsd";
    row.group_size = 8;
    row.vocab = 64;
    row.mean_nfe = 12.5;
    row.seeds_used = 40;
    const std::string csv = sweep_summary_csv({row});
    REQUIRE(csv.find("method,G,delta,d,sigma,V,mean_nfe,mean_accept_rate,mean_tv,seeds_used") == 0);
    REQUIRE(csv.find("gsd,8,") != std::string::npos);
}

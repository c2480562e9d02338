#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gsd/engines.hpp"
#include "gsd/models.hpp"
#include "gsd/pmf.hpp"
#include "gsd/rng.hpp"
#include "gsd/verify.hpp"

namespace gsd {

// ---------------------------------------------------------------------------
// Random instance generators (shared by checkers and property tests)
// ---------------------------------------------------------------------------

/// Dirichlet(1) draw: normalized i.i.d. exponentials.
inline Pmf random_pmf(int vocab, RngStream& rng) {
    for (;;) {
        std::vector<double> w(static_cast<size_t>(vocab));
        double sum = 0.0;
        for (double& v : w) {
            v = -std::log1p(-rng.uniform());
            sum += v;
        }
        if (sum <= 0.0) continue;
        for (double& v : w) v /= sum;
        return Pmf(std::move(w));
    }
}

/// Random disjoint cover: K ~ U[1, V] clusters, each seeded with one token so
/// none is empty, remaining tokens assigned uniformly.
inline Partition random_partition(int vocab, RngStream& rng) {
    const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(vocab)));
    std::vector<int> ids(static_cast<size_t>(vocab));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = vocab - 1; i > 0; --i) {
        std::swap(ids[static_cast<size_t>(i)],
                  ids[rng.uniform_int(static_cast<std::uint32_t>(i + 1))]);
    }
    std::vector<std::int32_t> assign(static_cast<size_t>(vocab), 0);
    for (int c = 0; c < k; ++c) assign[static_cast<size_t>(ids[static_cast<size_t>(c)])] = c;
    for (int i = k; i < vocab; ++i) {
        assign[static_cast<size_t>(ids[static_cast<size_t>(i)])] =
            static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint32_t>(k)));
    }
    return Partition(std::move(assign), k);
}

namespace detail {

template <class Fn>
void parallel_for(long n, int jobs, Fn&& fn) {
    if (jobs <= 1 || n < 2) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = static_cast<int>(std::min<long>(jobs, n));
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> failures(static_cast<size_t>(workers));
    threads.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                const long lo = n * w / workers;
                const long hi = n * (w + 1) / workers;
                for (long i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                failures[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (const std::exception_ptr& e : failures) {
        if (e) std::rethrow_exception(e);
    }
}

/// Sums in a canonical order so aggregation is invariant under any
/// permutation of the inputs.
inline double permutation_invariant_mean(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc / static_cast<double>(values.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// One-step exactness: analytic emission law of a verification kernel
// ---------------------------------------------------------------------------

using AcceptKernel = std::function<double(const Pmf&, const Pmf&, TokenId)>;

namespace kernels {

inline AcceptKernel sd() {
    return [](const Pmf& p, const Pmf& q, TokenId x) { return sd_accept_prob(p, q, x); };
}

inline AcceptKernel gsd(ClusterStrategy strategy, const DistanceMatrix* dist) {
    return [strategy = std::move(strategy), dist](const Pmf& p, const Pmf& q, TokenId x) {
        return gsd_accept_prob(p, q, x, strategy, dist);
    };
}

inline AcceptKernel amplify(double k) {
    return [criterion = LossyCriterion::amplify(k)](const Pmf& p, const Pmf& q, TokenId x) {
        return lossy_accept_prob(p, q, x, criterion);
    };
}

inline AcceptKernel addition(double eps) {
    return [criterion = LossyCriterion::addition(eps)](const Pmf& p, const Pmf& q, TokenId x) {
        return lossy_accept_prob(p, q, x, criterion);
    };
}

}  // namespace kernels

/// Exact one-position emission law of a verification kernel:
/// P(emit x) = q(x) a(x) + (sum_y q(y)(1 - a(y))) residual(x).
inline std::vector<double> onestep_emission_law(const Pmf& p, const Pmf& q,
                                                const AcceptKernel& kernel) {
    const int vocab = p.size();
    if (q.size() != vocab) throw std::invalid_argument("onestep_emission_law: length mismatch");
    std::vector<double> law(static_cast<size_t>(vocab), 0.0);
    double reject_mass = 0.0;
    for (int x = 0; x < vocab; ++x) {
        if (q[x] <= 0.0) continue;  // never drafted
        const double a = kernel(p, q, x);
        law[static_cast<size_t>(x)] += q[x] * a;
        reject_mass += q[x] * (1.0 - a);
    }
    if (reject_mass > 0.0) {
        const Pmf res = residual(p, q);
        for (int x = 0; x < vocab; ++x) law[static_cast<size_t>(x)] += reject_mass * res[x];
    }
    return law;
}

/// max_x |law(x) - p(x)|; zero (to rounding) exactly for lossless kernels.
inline double onestep_exactness_error(const Pmf& p, const Pmf& q, const AcceptKernel& kernel) {
    const std::vector<double> law = onestep_emission_law(p, q, kernel);
    double err = 0.0;
    for (int x = 0; x < p.size(); ++x) {
        err = std::max(err, std::abs(law[static_cast<size_t>(x)] - p[x]));
    }
    return err;
}

// ---------------------------------------------------------------------------
// Identity checkers
// ---------------------------------------------------------------------------

struct Proposition1Report {
    long trials = 0;
    int vocab = 0;
    std::uint64_t seed = 0;
    double max_abs_error = 0.0;
};

/// |sum_x min(p,q) - (1 - TV(p,q))| over random pairs; the two sides are
/// computed by independent code paths.
inline Proposition1Report check_proposition1(long trials, int vocab, std::uint64_t seed) {
    Proposition1Report report{trials, vocab, seed, 0.0};
    RngStream rng(derive_seed(seed, 0x70726f7031ULL));
    for (long t = 0; t < trials; ++t) {
        const Pmf p = random_pmf(vocab, rng);
        const Pmf q = random_pmf(vocab, rng);
        const double err = std::abs(expected_accept_sd(p, q) - (1.0 - tv_distance(p, q)));
        report.max_abs_error = std::max(report.max_abs_error, err);
    }
    return report;
}

struct Theorem1Report {
    long trials = 0;
    int vocab = 0;
    std::uint64_t seed = 0;
    double max_violation = 0.0;  // max of TV(p', q') - TV(p, q); <= 0 means never violated
};

/// Data-processing inequality TV(p', q') <= TV(p, q) over random
/// (p, q, Partition) triples.
inline Theorem1Report check_theorem1(long trials, int vocab, std::uint64_t seed) {
    Theorem1Report report{trials, vocab, seed, -1.0};
    RngStream rng(derive_seed(seed, 0x74686d31ULL));
    for (long t = 0; t < trials; ++t) {
        const Pmf p = random_pmf(vocab, rng);
        const Pmf q = random_pmf(vocab, rng);
        const Partition partition = random_partition(vocab, rng);
        const double grouped_tv = tv_distance(grouped_mass(p, partition), grouped_mass(q, partition));
        report.max_violation = std::max(report.max_violation, grouped_tv - tv_distance(p, q));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Sequence-distribution exactness (Monte Carlo against the vanilla law)
// ---------------------------------------------------------------------------

enum class ExactnessMode { Joint, Marginal };

struct ExactnessReport {
    std::string method;
    int vocab = 0;
    int length = 0;
    long trials = 0;
    double tv_empirical = 0.0;
    double threshold = 0.0;
    bool passed = false;
    std::uint64_t seed = 0;
    std::string mode;
};

/// Monte Carlo TV noise scale is ~1/sqrt(trials); the stated 0.02 gate at
/// 1e5 trials is rescaled accordingly for other trial counts.
inline double exactness_threshold(long trials) {
    return 0.02 * std::sqrt(100000.0 / static_cast<double>(trials));
}

namespace detail {

inline long joint_cells(int vocab, int length) {
    long cells = 1;
    for (int i = 0; i < length; ++i) {
        cells *= vocab;
        if (cells > 4096) return -1;
    }
    return cells;
}

struct TrialSampler {
    const ModelInterface* target;
    const ModelInterface* draft;
    const DecodeConfig* cfg;
    const ClusterStrategy* strategy;
    const DistanceMatrix* dist;
    std::span<const TokenId> prompt;

    DecodeTrace run(std::uint64_t trial_seed) const {
        DecodeConfig c = *cfg;
        c.seed = trial_seed;
        return run_decode(*target, draft, c, strategy, dist, prompt);
    }
};

inline std::vector<long> joint_histogram(const TrialSampler& sampler, long trials,
                                         std::uint64_t master_seed, std::uint64_t stream_offset,
                                         long cells, int vocab, size_t prompt_len, int jobs) {
    std::vector<int> outcomes(static_cast<size_t>(trials));
    parallel_for(trials, jobs, [&](long t) {
        const DecodeTrace trace =
            sampler.run(derive_seed(master_seed, stream_offset + static_cast<std::uint64_t>(t)));
        long idx = 0;
        for (size_t i = prompt_len; i < trace.sequence.size(); ++i) {
            idx = idx * vocab + trace.sequence[i];
        }
        outcomes[static_cast<size_t>(t)] = static_cast<int>(idx);
    });
    std::vector<long> hist(static_cast<size_t>(cells), 0);
    for (int o : outcomes) ++hist[static_cast<size_t>(o)];
    return hist;
}

inline double histogram_tv(const std::vector<long>& a, const std::vector<long>& b, long n_a,
                           long n_b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        acc += std::abs(static_cast<double>(a[i]) / static_cast<double>(n_a) -
                        static_cast<double>(b[i]) / static_cast<double>(n_b));
    }
    return 0.5 * acc;
}

}  // namespace detail

/// Estimates the TV between a method's output sequence distribution and the
/// vanilla law on the same model. Joint mode builds the full histogram over
/// V^length outcomes and requires V^length <= 4096; Marginal mode averages
/// per-position TVs and scales to any length.
inline ExactnessReport test_sequence_exactness(
    const ModelInterface& target, const ModelInterface* draft, const DecodeConfig& cfg,
    const ClusterStrategy* strategy, const DistanceMatrix* dist, std::span<const TokenId> prompt,
    long trials, std::uint64_t seed, ExactnessMode mode = ExactnessMode::Joint,
    double threshold = -1.0, int jobs = 1) {
    if (trials < 1) throw std::invalid_argument("test_sequence_exactness: trials must be >= 1");
    const int vocab = target.vocab_size();
    const int length = cfg.max_len - static_cast<int>(prompt.size());
    if (length < 1) throw std::invalid_argument("test_sequence_exactness: nothing to generate");
    if (threshold < 0.0) threshold = exactness_threshold(trials);

    ExactnessReport report;
    report.method = to_string(cfg.method);
    report.vocab = vocab;
    report.length = length;
    report.trials = trials;
    report.threshold = threshold;
    report.seed = seed;
    report.mode = mode == ExactnessMode::Joint ? "joint" : "marginal";

    detail::TrialSampler method_sampler{&target, draft, &cfg, strategy, dist, prompt};
    DecodeConfig vanilla_cfg = cfg;
    vanilla_cfg.method = Method::Vanilla;
    detail::TrialSampler vanilla_sampler{&target, nullptr, &vanilla_cfg, nullptr, nullptr, prompt};

    if (mode == ExactnessMode::Joint) {
        const long cells = detail::joint_cells(vocab, length);
        if (cells < 0) {
            throw std::invalid_argument(
                "test_sequence_exactness: V^length exceeds 4096 cells; use Marginal mode");
        }
        const auto method_hist = detail::joint_histogram(method_sampler, trials, seed, 0, cells,
                                                         vocab, prompt.size(), jobs);
        const auto vanilla_hist = detail::joint_histogram(
            vanilla_sampler, trials, seed, static_cast<std::uint64_t>(trials), cells, vocab,
            prompt.size(), jobs);
        report.tv_empirical = detail::histogram_tv(method_hist, vanilla_hist, trials, trials);
    } else {
        std::vector<std::vector<long>> m_hist(static_cast<size_t>(length),
                                              std::vector<long>(static_cast<size_t>(vocab), 0));
        std::vector<std::vector<long>> v_hist = m_hist;
        std::vector<TokenId> m_tokens(static_cast<size_t>(trials) * static_cast<size_t>(length));
        std::vector<TokenId> v_tokens(m_tokens.size());
        detail::parallel_for(trials, jobs, [&](long t) {
            const DecodeTrace mt =
                method_sampler.run(derive_seed(seed, static_cast<std::uint64_t>(t)));
            const DecodeTrace vt = vanilla_sampler.run(
                derive_seed(seed, static_cast<std::uint64_t>(trials + t)));
            for (int i = 0; i < length; ++i) {
                m_tokens[static_cast<size_t>(t) * static_cast<size_t>(length) + static_cast<size_t>(i)] =
                    mt.sequence[prompt.size() + static_cast<size_t>(i)];
                v_tokens[static_cast<size_t>(t) * static_cast<size_t>(length) + static_cast<size_t>(i)] =
                    vt.sequence[prompt.size() + static_cast<size_t>(i)];
            }
        });
        for (long t = 0; t < trials; ++t) {
            for (int i = 0; i < length; ++i) {
                ++m_hist[static_cast<size_t>(i)][static_cast<size_t>(
                    m_tokens[static_cast<size_t>(t) * static_cast<size_t>(length) + static_cast<size_t>(i)])];
                ++v_hist[static_cast<size_t>(i)][static_cast<size_t>(
                    v_tokens[static_cast<size_t>(t) * static_cast<size_t>(length) + static_cast<size_t>(i)])];
            }
        }
        double acc = 0.0;
        for (int i = 0; i < length; ++i) {
            acc += detail::histogram_tv(m_hist[static_cast<size_t>(i)],
                                        v_hist[static_cast<size_t>(i)], trials, trials);
        }
        report.tv_empirical = acc / length;
    }
    report.passed = report.tv_empirical <= report.threshold;
    return report;
}

// ---------------------------------------------------------------------------
// Acceptance-probability uplift (exact per-position expectations)
// ---------------------------------------------------------------------------

struct UpliftReport {
    std::vector<double> per_position;  // E_{x~q}[grouped accept - sd accept] at each step
    double overall_mean = 0.0;
    std::uint64_t seed = 0;
};

/// Walks `positions` steps of a target-sampled trajectory; at each step
/// computes the exact expectation over x ~ q of the grouped-minus-standard
/// acceptance probability.
inline UpliftReport measure_accept_uplift(const ModelInterface& target,
                                          const ModelInterface& draft,
                                          const ClusterStrategy& strategy,
                                          const DistanceMatrix* dist, int positions,
                                          const DecodeConfig& cfg,
                                          std::span<const TokenId> prompt) {
    detail::check_prompt(prompt, target.vocab_size());
    const int top_k = effective_top_k(cfg, target.vocab_size());
    RngStream rng(derive_seed(cfg.seed, 0x75706c696674ULL));

    UpliftReport report;
    report.seed = cfg.seed;
    std::vector<TokenId> context(prompt.begin(), prompt.end());
    for (int step = 0; step < positions; ++step) {
        const Pmf p = pmf_from_logits(target.forward(context, {}).front(), top_k, cfg.temperature);
        const Pmf q = pmf_from_logits(draft.forward(context, {}).front(), top_k, cfg.temperature);
        double uplift = 0.0;
        for (TokenId x = 0; x < p.size(); ++x) {
            if (q[x] <= 0.0) continue;
            uplift += q[x] * (gsd_accept_prob(p, q, x, strategy, dist) - sd_accept_prob(p, q, x));
        }
        report.per_position.push_back(uplift);
        context.push_back(sample(p, rng));
    }
    report.overall_mean = report.per_position.empty()
                              ? 0.0
                              : std::accumulate(report.per_position.begin(),
                                                report.per_position.end(), 0.0) /
                                    static_cast<double>(report.per_position.size());
    return report;
}

// ---------------------------------------------------------------------------
// Per-position diagnostics (top-1 levels, TV, expected acceptance)
// ---------------------------------------------------------------------------

struct DiagnosticRow {
    int position = 0;
    double top1_p = 0.0;
    double top1_q = 0.0;
    double tv = 0.0;
    double sd_accept = 0.0;   // expected: sum_x min(p, q)
    double gsd_accept = 0.0;  // expected: E_{x~q} min(1, p'(C(x))/q'(C(x)))
};

inline std::vector<DiagnosticRow> diagnose_positions(const ModelInterface& target,
                                                     const ModelInterface& draft,
                                                     const ClusterStrategy& strategy,
                                                     const DistanceMatrix* dist, int positions,
                                                     const DecodeConfig& cfg,
                                                     std::span<const TokenId> prompt) {
    detail::check_prompt(prompt, target.vocab_size());
    const int top_k = effective_top_k(cfg, target.vocab_size());
    RngStream rng(derive_seed(cfg.seed, 0x646961676eULL));

    std::vector<DiagnosticRow> rows;
    rows.reserve(static_cast<size_t>(positions));
    std::vector<TokenId> context(prompt.begin(), prompt.end());
    for (int step = 0; step < positions; ++step) {
        const Pmf p = pmf_from_logits(target.forward(context, {}).front(), top_k, cfg.temperature);
        const Pmf q = pmf_from_logits(draft.forward(context, {}).front(), top_k, cfg.temperature);
        DiagnosticRow row;
        row.position = step;
        row.top1_p = p.top1_prob();
        row.top1_q = q.top1_prob();
        row.tv = tv_distance(p, q);
        row.sd_accept = expected_accept_sd(p, q);
        double grouped = 0.0;
        for (TokenId x = 0; x < p.size(); ++x) {
            if (q[x] <= 0.0) continue;
            grouped += q[x] * gsd_accept_prob(p, q, x, strategy, dist);
        }
        row.gsd_accept = grouped;
        rows.push_back(row);
        context.push_back(sample(p, rng));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Pareto / trend sweeps
// ---------------------------------------------------------------------------

struct SweepMethodSpec {
    Method method = Method::SJD;
    int group_size = 1;        // GSD
    double amplify_k = 2.0;    // LossyAmplify
    double addition_eps = 0.1; // LossyAddition
};

struct SweepPlan {
    // model
    int vocab = 64;
    double entropy_mix = 0.5;
    std::uint64_t model_seed = 1;
    int embed_dim = 16;
    double sigma = 0.5;  // SD draft-noise scale; the draft seed derives from model_seed
    // decode
    int draft_len = 8;
    int top_k = 0;
    double temperature = 1.0;
    int max_len = 64;
    std::vector<TokenId> prompt = {0};
    double prob_threshold = 0.15;
    double embed_threshold = 2.0;
    // fidelity axis: Monte Carlo joint TV to vanilla over a short prefix
    int fidelity_len = 0;  // 0 disables
    long fidelity_trials = 100000;
    std::uint64_t fidelity_seed = 0x66696465;

    std::vector<SweepMethodSpec> methods;
};

struct SweepRow {
    std::string method;
    int group_size = 0;
    double delta = 0.0;
    double dist_cap = 0.0;
    double sigma = 0.0;
    int vocab = 0;
    double mean_nfe = 0.0;
    double mean_accept_rate = 0.0;
    double mean_tv = 0.0;
    long seeds_used = 0;
};

struct SweepSeedRow {
    std::uint64_t seed = 0;
    SweepRow row;
};

namespace detail {

inline DecodeConfig sweep_config(const SweepPlan& plan, const SweepMethodSpec& spec) {
    DecodeConfig cfg;
    cfg.method = spec.method;
    cfg.draft_len = plan.draft_len;
    cfg.max_len = plan.max_len;
    cfg.top_k = plan.top_k;
    cfg.temperature = plan.temperature;
    cfg.group_size = spec.group_size;
    cfg.prob_threshold = plan.prob_threshold;
    cfg.embed_threshold = plan.embed_threshold;
    cfg.amplify_k = spec.amplify_k;
    cfg.addition_eps = spec.addition_eps;
    return cfg;
}

}  // namespace detail

/// Runs every method spec over the seed list; aggregates mean NFE, mean
/// acceptance rate and (when fidelity_len > 0) the Monte Carlo sequence TV to
/// vanilla over a fidelity_len prefix. Per-method failures are reported in
/// `errors` and the sweep continues.
inline std::vector<SweepRow> run_sweep(const SweepPlan& plan,
                                       std::span<const std::uint64_t> seeds, int jobs = 1,
                                       std::vector<SweepSeedRow>* raw_rows = nullptr,
                                       std::vector<std::string>* errors = nullptr) {
    if (plan.methods.empty()) throw std::invalid_argument("run_sweep: empty method grid");
    if (seeds.empty()) throw std::invalid_argument("run_sweep: empty seed list");

    const MarkovTableModel target = make_markov_model(plan.vocab, plan.entropy_mix, plan.model_seed);
    const PerturbedDraftModel draft =
        make_perturbed_draft(target, plan.sigma, derive_seed(plan.model_seed, 0x5344ULL));
    const EmbeddingTable embeddings =
        make_embeddings(plan.vocab, plan.embed_dim, derive_seed(plan.model_seed, 0x454dULL));
    const DistanceMatrix dist = distance_matrix(embeddings);

    // shared fidelity reference: the vanilla joint histogram over the prefix
    std::vector<long> vanilla_hist;
    long fid_cells = 0;
    DecodeConfig fid_vanilla_cfg;
    if (plan.fidelity_len > 0) {
        fid_cells = detail::joint_cells(plan.vocab, plan.fidelity_len);
        if (fid_cells < 0) {
            throw std::invalid_argument("run_sweep: fidelity_len joint exceeds 4096 cells");
        }
        fid_vanilla_cfg = detail::sweep_config(plan, SweepMethodSpec{Method::Vanilla});
        fid_vanilla_cfg.max_len = static_cast<int>(plan.prompt.size()) + plan.fidelity_len;
        detail::TrialSampler sampler{&target, nullptr, &fid_vanilla_cfg, nullptr, nullptr,
                                     plan.prompt};
        vanilla_hist = detail::joint_histogram(
            sampler, plan.fidelity_trials, plan.fidelity_seed,
            static_cast<std::uint64_t>(plan.fidelity_trials), fid_cells, plan.vocab,
            plan.prompt.size(), jobs);
    }

    std::vector<SweepRow> rows;
    for (const SweepMethodSpec& spec : plan.methods) {
        try {
            const DecodeConfig cfg = detail::sweep_config(plan, spec);
            const ClusterStrategy strategy = strategy_from_config(cfg, /*have_distances=*/true);
            const ModelInterface* draft_ptr = spec.method == Method::SD ? &draft : nullptr;

            std::vector<double> nfes(seeds.size());
            std::vector<double> accepts(seeds.size());
            detail::parallel_for(static_cast<long>(seeds.size()), jobs, [&](long i) {
                DecodeConfig run_cfg = cfg;
                run_cfg.seed = seeds[static_cast<size_t>(i)];
                const DecodeTrace trace =
                    run_decode(target, draft_ptr, run_cfg, &strategy, &dist, plan.prompt);
                nfes[static_cast<size_t>(i)] = static_cast<double>(trace.nfe_target);
                accepts[static_cast<size_t>(i)] = trace.accept_rate();
            });

            SweepRow row;
            row.method = to_string(spec.method);
            row.group_size = spec.method == Method::GSD ? spec.group_size : 0;
            row.delta = spec.method == Method::GSD ? plan.prob_threshold
                        : spec.method == Method::LossyAddition ? spec.addition_eps
                                                               : 0.0;
            row.dist_cap = spec.method == Method::GSD ? plan.embed_threshold
                           : spec.method == Method::LossyAmplify ? spec.amplify_k
                                                                 : 0.0;
            row.sigma = spec.method == Method::SD ? plan.sigma : 0.0;
            row.vocab = plan.vocab;
            row.mean_nfe = detail::permutation_invariant_mean(nfes);
            row.mean_accept_rate = detail::permutation_invariant_mean(accepts);
            row.seeds_used = static_cast<long>(seeds.size());

            if (plan.fidelity_len > 0) {
                DecodeConfig fid_cfg = cfg;
                fid_cfg.max_len = static_cast<int>(plan.prompt.size()) + plan.fidelity_len;
                detail::TrialSampler sampler{&target, draft_ptr, &fid_cfg, &strategy, &dist,
                                             plan.prompt};
                const auto hist = detail::joint_histogram(sampler, plan.fidelity_trials,
                                                          plan.fidelity_seed, 0, fid_cells,
                                                          plan.vocab, plan.prompt.size(), jobs);
                row.mean_tv = detail::histogram_tv(hist, vanilla_hist, plan.fidelity_trials,
                                                   plan.fidelity_trials);
            }

            if (raw_rows) {
                for (size_t i = 0; i < seeds.size(); ++i) {
                    SweepRow per_seed = row;
                    per_seed.mean_nfe = nfes[i];
                    per_seed.mean_accept_rate = accepts[i];
                    per_seed.seeds_used = 1;
                    raw_rows->push_back(SweepSeedRow{seeds[i], per_seed});
                }
            }
            rows.push_back(std::move(row));
        } catch (const std::exception& e) {
            if (errors) errors->push_back(to_string(spec.method) + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace gsd

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gsd/pmf.hpp"
#include "gsd/rng.hpp"
#include "gsd/verify.hpp"

namespace gsd {

/// Abstract autoregressive model. One call stands for one parallel forward
/// pass: given a context and a block of candidate tokens, it returns
/// candidates.size() + 1 logits rows, where row j is the next-token
/// distribution at position context.size() + j conditioned on the context
/// plus candidates[0..j). Implementations must be pure: identical inputs
/// yield identical logits.
class ModelInterface {
public:
    virtual ~ModelInterface() = default;
    virtual int vocab_size() const = 0;
    virtual std::vector<Logits> forward(std::span<const TokenId> context,
                                        std::span<const TokenId> candidates) const = 0;
};

enum class Method { Vanilla, SD, Jacobi, SJD, GSD, LossyAmplify, LossyAddition };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::Vanilla: return "vanilla";
        case Method::SD: return "sd";
        case Method::Jacobi: return "jacobi";
        case Method::SJD: return "sjd";
        case Method::GSD: return "gsd";
        case Method::LossyAmplify: return "amplify";
        case Method::LossyAddition: return "addition";
    }
    return "unknown";
}

inline Method method_from_string(const std::string& name) {
    if (name == "vanilla") return Method::Vanilla;
    if (name == "sd") return Method::SD;
    if (name == "jacobi") return Method::Jacobi;
    if (name == "sjd") return Method::SJD;
    if (name == "gsd") return Method::GSD;
    if (name == "amplify") return Method::LossyAmplify;
    if (name == "addition") return Method::LossyAddition;
    throw std::invalid_argument("unknown method name: " + name);
}

struct DecodeConfig {
    Method method = Method::Vanilla;
    int draft_len = 16;        // L
    int max_len = 256;         // N, total sequence cap including the prompt
    int top_k = 0;             // 0 means the full vocabulary
    double temperature = 1.0;  // tau
    int group_size = 8;            // G
    double prob_threshold = 0.15;  // delta
    double embed_threshold = 2.0;  // d; 2 is the cosine-distance maximum, i.e. no filtering
    double amplify_k = 2.0;
    double addition_eps = 0.1;
    std::uint64_t seed = 0;
};

inline int effective_top_k(const DecodeConfig& cfg, int vocab) {
    return cfg.top_k <= 0 ? vocab : std::min(cfg.top_k, vocab);
}

/// Rolling draft state of the Jacobi-style loops: candidate tokens plus the
/// pmfs they were drawn from, shifted after each verification.
struct DraftBuffer {
    std::vector<TokenId> tokens;
    std::vector<Pmf> q_pmfs;
};

struct PositionDiag {
    double top1_p = 0.0;
    double top1_q = 0.0;
    double tv = 0.0;
    double sd_accept_prob = 0.0;
    double gsd_accept_prob = 0.0;
};

struct DecodeTrace {
    std::vector<TokenId> sequence;
    std::int64_t nfe_target = 0;
    std::int64_t nfe_draft = 0;
    int outer_iterations = 0;
    std::vector<PositionDiag> per_position;          // one row per verified committed slot
    std::vector<int> per_iteration_accept_counts;    // committed draft acceptances per iteration
    std::int64_t drafts_scanned = 0;
    std::int64_t drafts_accepted = 0;

    double accept_rate() const {
        return drafts_scanned > 0 ? static_cast<double>(drafts_accepted) / drafts_scanned : 1.0;
    }
};

namespace detail {

inline void check_prompt(std::span<const TokenId> prompt, int vocab) {
    if (prompt.empty()) throw std::invalid_argument("decode: prompt must be non-empty");
    for (TokenId t : prompt) {
        if (t < 0 || t >= vocab) throw std::invalid_argument("decode: prompt token out of range");
    }
}

/// Commits one verification outcome into the trace: appends tokens up to the
/// length cap, records acceptance counts and per-slot diagnostics for the
/// scanned draft slots (bonus tokens carry no draft to diagnose).
inline void commit_outcome(DecodeTrace& trace, const DecodeConfig& cfg, const VerifyOutcome& out,
                           std::span<const TokenId> drafts, std::span<const Pmf> p_pmfs,
                           std::span<const Pmf> q_pmfs, bool grouped) {
    const int room = cfg.max_len - static_cast<int>(trace.sequence.size());
    const int commit_n = std::min(static_cast<int>(out.committed.size()), room);
    const int scanned = out.accepted_count + (out.correction_emitted ? 1 : 0);

    trace.drafts_scanned += scanned;
    trace.drafts_accepted += out.accepted_count;
    trace.per_iteration_accept_counts.push_back(std::min(out.accepted_count, commit_n));

    for (int j = 0; j < commit_n; ++j) {
        trace.sequence.push_back(out.committed[static_cast<size_t>(j)]);
        if (j < scanned) {
            PositionDiag diag;
            diag.top1_p = p_pmfs[static_cast<size_t>(j)].top1_prob();
            diag.top1_q = q_pmfs[static_cast<size_t>(j)].top1_prob();
            diag.tv = tv_distance(p_pmfs[static_cast<size_t>(j)], q_pmfs[static_cast<size_t>(j)]);
            diag.sd_accept_prob = sd_accept_prob(p_pmfs[static_cast<size_t>(j)],
                                                 q_pmfs[static_cast<size_t>(j)],
                                                 drafts[static_cast<size_t>(j)]);
            diag.gsd_accept_prob =
                grouped ? out.accept_probs[static_cast<size_t>(j)] : diag.sd_accept_prob;
            trace.per_position.push_back(diag);
        }
    }
}

/// Speculative Jacobi loop shared by SJD, GSD and the lossy baselines.
///
/// Each outer iteration draws every slot's candidate from its draft pmf
/// (fresh slots use the uniform Rand-init law, surviving slots the target
/// pmfs carried from the previous pass), runs one parallel target forward
/// over the L+1 positions, verifies, commits, and shifts the surviving
/// suffix of target pmfs down to become the next iteration's draft pmfs.
template <class VerifyFn>
DecodeTrace speculative_jacobi_loop(const ModelInterface& target, const DecodeConfig& cfg,
                                    VerifyFn&& verify, bool grouped,
                                    std::span<const TokenId> prompt) {
    const int vocab = target.vocab_size();
    check_prompt(prompt, vocab);
    if (cfg.draft_len < 1) throw std::invalid_argument("decode: draft_len must be >= 1");

    DecodeTrace trace;
    trace.sequence.assign(prompt.begin(), prompt.end());
    RngStream rng(cfg.seed);
    const int len = cfg.draft_len;
    const int top_k = effective_top_k(cfg, vocab);

    DraftBuffer buffer;
    buffer.tokens.resize(static_cast<size_t>(len));

    while (static_cast<int>(trace.sequence.size()) < cfg.max_len) {
        while (static_cast<int>(buffer.q_pmfs.size()) < len) {
            buffer.q_pmfs.push_back(Pmf::uniform(vocab));  // Rand-init law for fresh slots
        }
        for (int j = 0; j < len; ++j) {
            buffer.tokens[static_cast<size_t>(j)] = sample(buffer.q_pmfs[static_cast<size_t>(j)], rng);
        }

        const std::vector<Logits> rows = target.forward(trace.sequence, buffer.tokens);
        ++trace.nfe_target;
        ++trace.outer_iterations;

        std::vector<Pmf> p_pmfs;
        p_pmfs.reserve(rows.size());
        for (const Logits& row : rows) p_pmfs.push_back(pmf_from_logits(row, top_k, cfg.temperature));

        const VerifyOutcome out = verify(buffer.tokens, p_pmfs, buffer.q_pmfs, rng);
        commit_outcome(trace, cfg, out, buffer.tokens, p_pmfs, buffer.q_pmfs, grouped);

        // draft update: q_{0:L-c} <- p_{c:L}
        const int committed = static_cast<int>(out.committed.size());
        std::vector<Pmf> carried;
        for (int j = 0; committed + j < len; ++j) {
            carried.push_back(std::move(p_pmfs[static_cast<size_t>(committed + j)]));
        }
        buffer.q_pmfs = std::move(carried);
    }
    return trace;
}

}  // namespace detail

/// Reference baseline: one target forward per generated token.
inline DecodeTrace decode_vanilla(const ModelInterface& model, const DecodeConfig& cfg,
                                  std::span<const TokenId> prompt) {
    const int vocab = model.vocab_size();
    detail::check_prompt(prompt, vocab);

    DecodeTrace trace;
    trace.sequence.assign(prompt.begin(), prompt.end());
    RngStream rng(cfg.seed);
    const int top_k = effective_top_k(cfg, vocab);

    while (static_cast<int>(trace.sequence.size()) < cfg.max_len) {
        const std::vector<Logits> rows = model.forward(trace.sequence, {});
        ++trace.nfe_target;
        ++trace.outer_iterations;
        const Pmf pmf = pmf_from_logits(rows.front(), top_k, cfg.temperature);
        trace.sequence.push_back(sample(pmf, rng));
    }
    return trace;
}

/// Two-model speculative decoding: L sequential draft forwards, one parallel
/// target forward over L+1 positions, exact verification.
inline DecodeTrace decode_sd(const ModelInterface& target, const ModelInterface& draft,
                             const DecodeConfig& cfg, std::span<const TokenId> prompt) {
    const int vocab = target.vocab_size();
    if (draft.vocab_size() != vocab) {
        throw std::invalid_argument("decode_sd: draft and target vocabularies differ");
    }
    detail::check_prompt(prompt, vocab);
    if (cfg.draft_len < 1) throw std::invalid_argument("decode: draft_len must be >= 1");

    DecodeTrace trace;
    trace.sequence.assign(prompt.begin(), prompt.end());
    RngStream rng(cfg.seed);
    const int len = cfg.draft_len;
    const int top_k = effective_top_k(cfg, vocab);

    std::vector<TokenId> extended;
    while (static_cast<int>(trace.sequence.size()) < cfg.max_len) {
        std::vector<TokenId> drafts;
        std::vector<Pmf> q_pmfs;
        drafts.reserve(static_cast<size_t>(len));
        q_pmfs.reserve(static_cast<size_t>(len));
        extended.assign(trace.sequence.begin(), trace.sequence.end());
        for (int j = 0; j < len; ++j) {
            const std::vector<Logits> row = draft.forward(extended, {});
            ++trace.nfe_draft;
            q_pmfs.push_back(pmf_from_logits(row.front(), top_k, cfg.temperature));
            drafts.push_back(sample(q_pmfs.back(), rng));
            extended.push_back(drafts.back());
        }

        const std::vector<Logits> rows = target.forward(trace.sequence, drafts);
        ++trace.nfe_target;
        ++trace.outer_iterations;
        std::vector<Pmf> p_pmfs;
        p_pmfs.reserve(rows.size());
        for (const Logits& row : rows) p_pmfs.push_back(pmf_from_logits(row, top_k, cfg.temperature));

        const VerifyOutcome out = verify_sd(drafts, p_pmfs, q_pmfs, rng);
        detail::commit_outcome(trace, cfg, out, drafts, p_pmfs, q_pmfs, /*grouped=*/false);
    }
    return trace;
}

/// Deterministic Jacobi fixed-point baseline. Candidates are replaced by the
/// argmax of their pmfs each pass; the committed block is the longest
/// unchanged prefix plus the first updated token, whose context is fully
/// committed by then.
inline DecodeTrace decode_jacobi(const ModelInterface& target, const DecodeConfig& cfg,
                                 std::span<const TokenId> prompt) {
    const int vocab = target.vocab_size();
    detail::check_prompt(prompt, vocab);
    if (cfg.draft_len < 1) throw std::invalid_argument("decode: draft_len must be >= 1");

    DecodeTrace trace;
    trace.sequence.assign(prompt.begin(), prompt.end());
    const int len = cfg.draft_len;
    const int top_k = effective_top_k(cfg, vocab);

    std::vector<TokenId> candidates(static_cast<size_t>(len), 0);
    std::vector<TokenId> updated(static_cast<size_t>(len), 0);

    while (static_cast<int>(trace.sequence.size()) < cfg.max_len) {
        const std::vector<Logits> rows = target.forward(trace.sequence, candidates);
        ++trace.nfe_target;
        ++trace.outer_iterations;

        std::vector<Pmf> pmfs;
        pmfs.reserve(rows.size());
        for (const Logits& row : rows) pmfs.push_back(pmf_from_logits(row, top_k, cfg.temperature));
        for (int j = 0; j < len; ++j) updated[static_cast<size_t>(j)] = pmfs[static_cast<size_t>(j)].top1();

        int unchanged = 0;
        while (unchanged < len &&
               updated[static_cast<size_t>(unchanged)] == candidates[static_cast<size_t>(unchanged)]) {
            ++unchanged;
        }
        const int room = cfg.max_len - static_cast<int>(trace.sequence.size());
        const int commit_n = std::min({unchanged + 1, len, room});
        for (int j = 0; j < commit_n; ++j) trace.sequence.push_back(updated[static_cast<size_t>(j)]);
        trace.per_iteration_accept_counts.push_back(commit_n);
        trace.drafts_scanned += len;
        trace.drafts_accepted += std::min(unchanged, commit_n);

        // shift the updated suffix down; refill the tail from the final row's argmax
        const TokenId refill = pmfs[static_cast<size_t>(len)].top1();
        for (int j = 0; j + commit_n < len; ++j) {
            candidates[static_cast<size_t>(j)] = updated[static_cast<size_t>(j + commit_n)];
        }
        for (int j = len - commit_n; j < len; ++j) candidates[static_cast<size_t>(j)] = refill;
    }
    return trace;
}

/// Speculative Jacobi decoding: drafting and verification share one parallel
/// forward; draft pmfs are the previous pass's target pmfs.
inline DecodeTrace decode_sjd(const ModelInterface& target, const DecodeConfig& cfg,
                              std::span<const TokenId> prompt) {
    return detail::speculative_jacobi_loop(
        target, cfg,
        [](std::span<const TokenId> drafts, std::span<const Pmf> p, std::span<const Pmf> q,
           RngStream& rng) { return verify_sd(drafts, p, q, rng); },
        /*grouped=*/false, prompt);
}

/// Grouped speculative decoding: the SJD loop with grouped verification.
inline DecodeTrace decode_gsd(const ModelInterface& target, const DecodeConfig& cfg,
                              const ClusterStrategy& strategy, const DistanceMatrix* dist,
                              std::span<const TokenId> prompt) {
    return detail::speculative_jacobi_loop(
        target, cfg,
        [&](std::span<const TokenId> drafts, std::span<const Pmf> p, std::span<const Pmf> q,
            RngStream& rng) { return verify_gsd(drafts, p, q, strategy, dist, rng); },
        /*grouped=*/true, prompt);
}

/// SJD loop with a naive lossy acceptance criterion.
inline DecodeTrace decode_lossy(const ModelInterface& target, const DecodeConfig& cfg,
                                const LossyCriterion& criterion, std::span<const TokenId> prompt) {
    return detail::speculative_jacobi_loop(
        target, cfg,
        [&](std::span<const TokenId> drafts, std::span<const Pmf> p, std::span<const Pmf> q,
            RngStream& rng) { return verify_lossy(drafts, p, q, criterion, rng); },
        /*grouped=*/false, prompt);
}

/// Builds the GSD strategy implied by a config: the probability-sorted window
/// with delta/distance filters when a distance matrix is available, the plain
/// window otherwise.
inline ClusterStrategy strategy_from_config(const DecodeConfig& cfg, bool have_distances) {
    if (have_distances) {
        return ClusterStrategy::expert_window_filtered(cfg.group_size, cfg.prob_threshold,
                                                       cfg.embed_threshold);
    }
    return ClusterStrategy::expert_window(cfg.group_size);
}

/// Dispatches on cfg.method. `draft` is required for SD; `strategy`/`dist`
/// apply to GSD (a null strategy falls back to strategy_from_config).
inline DecodeTrace run_decode(const ModelInterface& target, const ModelInterface* draft,
                              const DecodeConfig& cfg, const ClusterStrategy* strategy,
                              const DistanceMatrix* dist, std::span<const TokenId> prompt) {
    switch (cfg.method) {
        case Method::Vanilla: return decode_vanilla(target, cfg, prompt);
        case Method::SD:
            if (!draft) throw std::invalid_argument("run_decode: SD needs a draft model");
            return decode_sd(target, *draft, cfg, prompt);
        case Method::Jacobi: return decode_jacobi(target, cfg, prompt);
        case Method::SJD: return decode_sjd(target, cfg, prompt);
        case Method::GSD: {
            const ClusterStrategy s =
                strategy ? *strategy : strategy_from_config(cfg, dist != nullptr);
            return decode_gsd(target, cfg, s, dist, prompt);
        }
        case Method::LossyAmplify:
            return decode_lossy(target, cfg, LossyCriterion::amplify(cfg.amplify_k), prompt);
        case Method::LossyAddition:
            return decode_lossy(target, cfg, LossyCriterion::addition(cfg.addition_eps), prompt);
    }
    throw std::invalid_argument("run_decode: unknown method");
}

}  // namespace gsd

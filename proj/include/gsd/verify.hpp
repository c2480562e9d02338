#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gsd/pmf.hpp"
#include "gsd/rng.hpp"

namespace gsd {

/// Symmetric V x V matrix of pairwise token-embedding distances, zero diagonal.
struct DistanceMatrix {
    int vocab = 0;
    std::vector<double> values;  // row-major

    double at(TokenId a, TokenId b) const {
        return values[static_cast<size_t>(a) * static_cast<size_t>(vocab) +
                      static_cast<size_t>(b)];
    }
};

enum class ClusterKind {
    StaticEmbedding,             // precomputed partition of the vocabulary
    DraftSortedWindow,           // window in q-sorted order
    ExpertSortedWindow,          // window in p-sorted order
    ExpertSortedWindowFiltered,  // p-sorted window with delta / distance filters
};

struct ClusterStrategy {
    ClusterKind kind = ClusterKind::ExpertSortedWindow;
    int group_size = 1;           // G
    double prob_threshold = 0.0;  // delta; Filtered kind only
    double embed_threshold = 0.0; // d; Filtered kind only
    std::optional<Partition> static_partition;  // StaticEmbedding kind only

    static ClusterStrategy expert_window(int g) {
        return ClusterStrategy{ClusterKind::ExpertSortedWindow, g, 0.0, 0.0, std::nullopt};
    }
    static ClusterStrategy expert_window_filtered(int g, double delta, double dist_cap) {
        return ClusterStrategy{ClusterKind::ExpertSortedWindowFiltered, g, delta, dist_cap,
                               std::nullopt};
    }
    static ClusterStrategy draft_window(int g) {
        return ClusterStrategy{ClusterKind::DraftSortedWindow, g, 0.0, 0.0, std::nullopt};
    }
    static ClusterStrategy static_embedding(Partition partition) {
        return ClusterStrategy{ClusterKind::StaticEmbedding, 1, 0.0, 0.0, std::move(partition)};
    }
};

/// The group of tokens whose summed mass stands in for the draft token.
struct ClusterWindow {
    std::vector<TokenId> member_ids;
    TokenId anchor = 0;  // the draft token; always a member
};

/// One verification step: the accept/reject coin plus the correction token
/// sampled on rejection.
struct AcceptDecision {
    bool accepted = false;
    double accept_prob = 0.0;
    std::optional<TokenId> resampled;  // present iff !accepted
};

/// Result of one parallel verification pass over a draft block.
struct VerifyOutcome {
    int accepted_count = 0;             // draft tokens accepted before the stop
    std::vector<TokenId> committed;     // accepted prefix plus correction or bonus
    bool correction_emitted = false;
    bool bonus_emitted = false;
    std::vector<double> accept_probs;   // acceptance probability at each scanned slot
};

/// min(1, num/den) with the zero-denominator limit convention:
/// num > 0 gives 1, num == 0 gives 0.
inline double ratio_accept_prob(double num, double den) {
    if (den <= 0.0) return num > 0.0 ? 1.0 : 0.0;
    const double r = num / den;
    return r >= 1.0 ? 1.0 : r;
}

/**
 * Builds the cluster C(draft) for one verification step.
 *
 * Sorted-window kinds rank all tokens by descending probability (p for the
 * expert kinds, q for the draft kind; ties toward the lower TokenId), locate
 * the draft token's rank idx by identity, and take the G ranks starting at
 * idx - G/2, clamped to the array bounds without wrap-around; near the
 * extremes the window is smaller than G. The filtered kind then drops any
 * member y != draft with |p(y) - p(draft)| > prob_threshold or
 * dist(draft, y) > embed_threshold; the draft token itself is never dropped.
 *
 * StaticEmbedding returns the draft token's precomputed cluster.
 */
inline ClusterWindow build_cluster(const Pmf& p, const Pmf& q, TokenId draft,
                                   const ClusterStrategy& strategy,
                                   const DistanceMatrix* dist) {
    const int vocab = p.size();
    if (draft < 0 || draft >= vocab) throw std::invalid_argument("build_cluster: draft out of range");

    ClusterWindow window;
    window.anchor = draft;

    if (strategy.kind == ClusterKind::StaticEmbedding) {
        if (!strategy.static_partition) {
            throw std::invalid_argument("build_cluster: StaticEmbedding without a partition");
        }
        const Partition& part = *strategy.static_partition;
        if (part.size() != vocab) throw std::invalid_argument("build_cluster: partition size mismatch");
        const std::int32_t cluster = part.cluster_of(draft);
        for (int i = 0; i < vocab; ++i) {
            if (part.cluster_of(i) == cluster) window.member_ids.push_back(i);
        }
        return window;
    }

    if (strategy.group_size < 1) throw std::invalid_argument("build_cluster: group_size must be >= 1");

    const Pmf& key = strategy.kind == ClusterKind::DraftSortedWindow ? q : p;
    if (key.size() != vocab) throw std::invalid_argument("build_cluster: pmf length mismatch");

    std::vector<int> order(static_cast<size_t>(vocab));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (key[a] != key[b]) return key[a] > key[b];
        return a < b;
    });
    int idx = 0;
    for (int r = 0; r < vocab; ++r) {
        if (order[static_cast<size_t>(r)] == draft) {
            idx = r;
            break;
        }
    }

    const int g = strategy.group_size;
    const int lo = std::max(0, idx - g / 2);
    const int hi = std::min(vocab, idx - g / 2 + g);
    for (int r = lo; r < hi; ++r) {
        const TokenId y = order[static_cast<size_t>(r)];
        if (strategy.kind == ClusterKind::ExpertSortedWindowFiltered && y != draft) {
            if (std::abs(p[y] - p[draft]) > strategy.prob_threshold) continue;
            if (!dist) throw std::invalid_argument("build_cluster: filtered kind needs a distance matrix");
            if (dist->at(draft, y) > strategy.embed_threshold) continue;
        }
        window.member_ids.push_back(y);
    }
    // the window always contains its anchor; re-insert if the slice lost it
    if (std::find(window.member_ids.begin(), window.member_ids.end(), draft) ==
        window.member_ids.end()) {
        window.member_ids.push_back(draft);
    }
    return window;
}

/// Acceptance probability of standard speculative decoding, min(1, p(x)/q(x)).
inline double sd_accept_prob(const Pmf& p, const Pmf& q, TokenId draft) {
    return ratio_accept_prob(p[draft], q[draft]);
}

/// Grouped acceptance probability min(1, p'(C(x))/q'(C(x))).
///
/// For a fixed disjoint partition the expected acceptance over x ~ q is
/// bounded below by the standard-SD acceptance (data-processing inequality
/// on the grouped TV). Dynamic windows depend on the draft token, so windows
/// of different tokens may overlap and that per-instance bound does not
/// literally apply; the uplift is a measured quantity there.
inline double gsd_accept_prob(const Pmf& p, const Pmf& q, TokenId draft,
                              const ClusterStrategy& strategy, const DistanceMatrix* dist) {
    const ClusterWindow window = build_cluster(p, q, draft, strategy, dist);
    double pg = 0.0;
    double qg = 0.0;
    for (TokenId y : window.member_ids) {
        pg += p[y];
        qg += q[y];
    }
    return ratio_accept_prob(pg, qg);
}

struct LossyCriterion {
    enum class Kind { Amplify, Addition };
    Kind kind = Kind::Amplify;
    double value = 1.0;  // k for Amplify (>= 1), epsilon for Addition (>= 0)

    static LossyCriterion amplify(double k) {
        if (k < 1.0) throw std::invalid_argument("LossyCriterion: amplify needs k >= 1");
        return {Kind::Amplify, k};
    }
    static LossyCriterion addition(double eps) {
        if (eps < 0.0) throw std::invalid_argument("LossyCriterion: addition needs eps >= 0");
        return {Kind::Addition, eps};
    }
};

inline double lossy_accept_prob(const Pmf& p, const Pmf& q, TokenId draft,
                                const LossyCriterion& criterion) {
    if (criterion.kind == LossyCriterion::Kind::Amplify) {
        return ratio_accept_prob(criterion.value * p[draft], q[draft]);
    }
    return ratio_accept_prob(p[draft] + criterion.value, q[draft]);
}

namespace detail {

/// One loop-body step of the verification scan. The correction token is
/// always sampled from the token-level residual [p - q]_+.
template <class AcceptFn>
AcceptDecision decide_position(const Pmf& p, const Pmf& q, TokenId draft, AcceptFn&& accept_prob,
                               RngStream& rng) {
    AcceptDecision decision;
    decision.accept_prob = accept_prob(p, q, draft);
    const double r = rng.uniform();
    if (r < decision.accept_prob) {
        decision.accepted = true;
        return decision;
    }
    decision.resampled = sample(residual(p, q), rng);
    return decision;
}

/// Shared scan: walk the draft block left to right, stop at the first
/// rejection (emitting the correction), otherwise append the bonus token
/// sampled from the extra target pmf when present. Every acceptance
/// criterion routes through here so that equal acceptance probabilities
/// imply pathwise-identical RNG consumption.
template <class AcceptFn>
VerifyOutcome verify_scan(std::span<const TokenId> drafts, std::span<const Pmf> p_list,
                          std::span<const Pmf> q_list, AcceptFn&& accept_prob, RngStream& rng) {
    const size_t len = drafts.size();
    if (q_list.size() != len) throw std::invalid_argument("verify: drafts/q_list length mismatch");
    if (p_list.size() < len) throw std::invalid_argument("verify: p_list shorter than drafts");

    VerifyOutcome out;
    out.accept_probs.reserve(len);
    for (size_t k = 0; k < len; ++k) {
        const AcceptDecision d = decide_position(p_list[k], q_list[k], drafts[k], accept_prob, rng);
        out.accept_probs.push_back(d.accept_prob);
        if (d.accepted) {
            out.committed.push_back(drafts[k]);
            ++out.accepted_count;
            continue;
        }
        out.committed.push_back(*d.resampled);
        out.correction_emitted = true;
        return out;
    }
    if (p_list.size() > len) {
        out.committed.push_back(sample(p_list[len], rng));
        out.bonus_emitted = true;
    }
    return out;
}

}  // namespace detail

/// Exact speculative-decoding verification: accept draft k with probability
/// min(1, p_k(x)/q_k(x)); first rejection resamples from [p_k - q_k]_+.
inline VerifyOutcome verify_sd(std::span<const TokenId> drafts, std::span<const Pmf> p_list,
                               std::span<const Pmf> q_list, RngStream& rng) {
    return detail::verify_scan(drafts, p_list, q_list,
                               [](const Pmf& p, const Pmf& q, TokenId x) {
                                   return sd_accept_prob(p, q, x);
                               },
                               rng);
}

/// Grouped verification: the acceptance ratio uses cluster-summed masses;
/// rejection corrections still use the token-level residual.
inline VerifyOutcome verify_gsd(std::span<const TokenId> drafts, std::span<const Pmf> p_list,
                                std::span<const Pmf> q_list, const ClusterStrategy& strategy,
                                const DistanceMatrix* dist, RngStream& rng) {
    return detail::verify_scan(drafts, p_list, q_list,
                               [&](const Pmf& p, const Pmf& q, TokenId x) {
                                   return gsd_accept_prob(p, q, x, strategy, dist);
                               },
                               rng);
}

/// Naive lossy verification: min(1, k*p/q) or min(1, (p+eps)/q).
inline VerifyOutcome verify_lossy(std::span<const TokenId> drafts, std::span<const Pmf> p_list,
                                  std::span<const Pmf> q_list, const LossyCriterion& criterion,
                                  RngStream& rng) {
    return detail::verify_scan(drafts, p_list, q_list,
                               [&](const Pmf& p, const Pmf& q, TokenId x) {
                                   return lossy_accept_prob(p, q, x, criterion);
                               },
                               rng);
}

}  // namespace gsd

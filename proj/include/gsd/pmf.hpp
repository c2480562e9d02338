#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gsd/rng.hpp"

namespace gsd {

using TokenId = std::int32_t;

/// Pre-softmax model scores for one position. Entries must be finite.
struct Logits {
    std::vector<double> scores;
};

/// Normalized categorical distribution over the token vocabulary.
///
/// Construction rejects negative or non-finite entries. A total mass within
/// kSumTolerance of 1 is renormalized exactly; anything further off is
/// rejected rather than silently fixed.
class Pmf {
public:
    static constexpr double kSumTolerance = 1e-9;

    explicit Pmf(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.empty()) {
            throw std::invalid_argument("Pmf: empty probability vector");
        }
        double sum = 0.0;
        for (double v : probs_) {
            if (!std::isfinite(v) || v < 0.0) {
                throw std::invalid_argument("Pmf: entries must be finite and non-negative");
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > kSumTolerance) {
            throw std::invalid_argument("Pmf: total mass " + std::to_string(sum) +
                                        " outside normalization tolerance");
        }
        if (sum != 1.0) {
            for (double& v : probs_) v /= sum;
        }
    }

    static Pmf uniform(int vocab) {
        if (vocab < 1) throw std::invalid_argument("Pmf::uniform: vocab must be >= 1");
        return Pmf(std::vector<double>(static_cast<size_t>(vocab), 1.0 / vocab));
    }

    static Pmf point_mass(int vocab, TokenId id) {
        if (vocab < 1 || id < 0 || id >= vocab) {
            throw std::invalid_argument("Pmf::point_mass: token out of range");
        }
        std::vector<double> p(static_cast<size_t>(vocab), 0.0);
        p[static_cast<size_t>(id)] = 1.0;
        return Pmf(std::move(p));
    }

    int size() const { return static_cast<int>(probs_.size()); }
    double operator[](TokenId t) const { return probs_[static_cast<size_t>(t)]; }
    std::span<const double> probs() const { return probs_; }

    /// Argmax token; ties resolved to the lowest TokenId.
    TokenId top1() const {
        int best = 0;
        for (int i = 1; i < size(); ++i) {
            if (probs_[static_cast<size_t>(i)] > probs_[static_cast<size_t>(best)]) best = i;
        }
        return best;
    }

    double top1_prob() const { return probs_[static_cast<size_t>(top1())]; }

private:
    std::vector<double> probs_;
};

/// Disjoint cover of [0, V) by K non-empty clusters.
struct Partition {
    std::vector<std::int32_t> assignment;  // token -> cluster index
    std::int32_t num_clusters = 0;

    Partition(std::vector<std::int32_t> assign, std::int32_t k)
        : assignment(std::move(assign)), num_clusters(k) {
        if (num_clusters < 1) throw std::invalid_argument("Partition: need at least one cluster");
        if (assignment.empty()) throw std::invalid_argument("Partition: empty assignment");
        std::vector<int> counts(static_cast<size_t>(num_clusters), 0);
        for (std::int32_t c : assignment) {
            if (c < 0 || c >= num_clusters) {
                throw std::invalid_argument("Partition: cluster index out of range");
            }
            ++counts[static_cast<size_t>(c)];
        }
        for (int c : counts) {
            if (c == 0) throw std::invalid_argument("Partition: empty cluster");
        }
    }

    static Partition singletons(int vocab) {
        std::vector<std::int32_t> a(static_cast<size_t>(vocab));
        std::iota(a.begin(), a.end(), 0);
        return Partition(std::move(a), vocab);
    }

    static Partition single_cluster(int vocab) {
        return Partition(std::vector<std::int32_t>(static_cast<size_t>(vocab), 0), 1);
    }

    std::int32_t cluster_of(TokenId t) const { return assignment[static_cast<size_t>(t)]; }
    int size() const { return static_cast<int>(assignment.size()); }
};

/// Softmax of scores/temperature restricted to the top_k largest scores;
/// everything outside the top-K is exactly zero. Ties at the K-th score are
/// broken toward the lower TokenId so traces are reproducible.
inline Pmf pmf_from_logits(const Logits& logits, int top_k, double temperature) {
    const int vocab = static_cast<int>(logits.scores.size());
    if (vocab == 0) throw std::invalid_argument("pmf_from_logits: empty logits");
    if (top_k < 1) throw std::invalid_argument("pmf_from_logits: top_k must be >= 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("pmf_from_logits: temperature must be > 0");
    for (double s : logits.scores) {
        if (!std::isfinite(s)) throw std::invalid_argument("pmf_from_logits: non-finite logit");
    }

    const int k = std::min(top_k, vocab);
    std::vector<int> order(static_cast<size_t>(vocab));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        const double sa = logits.scores[static_cast<size_t>(a)];
        const double sb = logits.scores[static_cast<size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });

    const double max_score = logits.scores[static_cast<size_t>(order[0])];
    std::vector<double> probs(static_cast<size_t>(vocab), 0.0);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        const int id = order[static_cast<size_t>(i)];
        const double w =
            std::exp((logits.scores[static_cast<size_t>(id)] - max_score) / temperature);
        probs[static_cast<size_t>(id)] = w;
        sum += w;
    }
    for (int i = 0; i < k; ++i) {
        probs[static_cast<size_t>(order[static_cast<size_t>(i)])] /= sum;
    }
    return Pmf(std::move(probs));
}

/// Inverse CDF of the pmf at u in [0, 1).
inline TokenId quantile(const Pmf& pmf, double u) {
    double cum = 0.0;
    TokenId last_support = 0;
    for (int i = 0; i < pmf.size(); ++i) {
        const double p = pmf[i];
        if (p <= 0.0) continue;
        cum += p;
        last_support = i;
        if (u < cum) return i;
    }
    // u fell into the rounding sliver past the accumulated mass
    return last_support;
}

inline TokenId sample(const Pmf& pmf, RngStream& rng) { return quantile(pmf, rng.uniform()); }

inline double tv_distance(const Pmf& p, const Pmf& q) {
    if (p.size() != q.size()) throw std::invalid_argument("tv_distance: length mismatch");
    double acc = 0.0;
    for (int i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

/// Expected speculative-decoding acceptance rate E_{x~q}[min(1, p/q)],
/// computed as sum_x min(p, q). Equals 1 - tv_distance(p, q).
inline double expected_accept_sd(const Pmf& p, const Pmf& q) {
    if (p.size() != q.size()) throw std::invalid_argument("expected_accept_sd: length mismatch");
    double acc = 0.0;
    for (int i = 0; i < p.size(); ++i) acc += std::min(p[i], q[i]);
    return acc;
}

/// Rejection-correction law norm(max(0, p - q)). Throws when the positive
/// part is empty (p == q): acceptance is certain there, so a caller asking
/// for a resample has a bug.
inline Pmf residual(const Pmf& p, const Pmf& q) {
    if (p.size() != q.size()) throw std::invalid_argument("residual: length mismatch");
    std::vector<double> r(static_cast<size_t>(p.size()), 0.0);
    double sum = 0.0;
    for (int i = 0; i < p.size(); ++i) {
        const double d = p[i] - q[i];
        if (d > 0.0) {
            r[static_cast<size_t>(i)] = d;
            sum += d;
        }
    }
    if (sum <= 0.0) throw std::invalid_argument("residual: empty residual (p == q)");
    for (double& v : r) v /= sum;
    return Pmf(std::move(r));
}

/// Cluster-summed masses p'(C_i) = sum_{x in C_i} p(x), as a pmf over clusters.
inline Pmf grouped_mass(const Pmf& pmf, const Partition& partition) {
    if (partition.size() != pmf.size()) throw std::invalid_argument("grouped_mass: length mismatch");
    std::vector<double> g(static_cast<size_t>(partition.num_clusters), 0.0);
    for (int i = 0; i < pmf.size(); ++i) {
        g[static_cast<size_t>(partition.cluster_of(i))] += pmf[i];
    }
    return Pmf(std::move(g));
}

}  // namespace gsd

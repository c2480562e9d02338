#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsd/engines.hpp"
#include "gsd/pmf.hpp"
#include "gsd/rng.hpp"
#include "gsd/verify.hpp"

namespace gsd {

enum class EntropyClass { Low, High };

/// Order-1 Markov model over V states, stored as a V x V matrix of logits.
/// Rows labelled High are spread ("image-like" next-token regimes), rows
/// labelled Low are near point masses. Conditionals are analytic, which the
/// exactness oracles rely on.
class MarkovTableModel final : public ModelInterface {
public:
    MarkovTableModel(std::vector<std::vector<double>> rows, std::vector<EntropyClass> profile,
                     std::uint64_t seed, double entropy_mix)
        : rows_(std::move(rows)),
          profile_(std::move(profile)),
          seed_(seed),
          entropy_mix_(entropy_mix) {
        if (rows_.empty()) throw std::invalid_argument("MarkovTableModel: empty table");
        for (const auto& row : rows_) {
            if (row.size() != rows_.size()) {
                throw std::invalid_argument("MarkovTableModel: table must be square");
            }
        }
        if (profile_.size() != rows_.size()) {
            throw std::invalid_argument("MarkovTableModel: profile size mismatch");
        }
    }

    int vocab_size() const override { return static_cast<int>(rows_.size()); }

    std::vector<Logits> forward(std::span<const TokenId> context,
                                std::span<const TokenId> candidates) const override {
        if (context.empty()) throw std::invalid_argument("MarkovTableModel: empty context");
        std::vector<Logits> out;
        out.reserve(candidates.size() + 1);
        TokenId state = context.back();
        check_state(state);
        out.push_back(Logits{rows_[static_cast<size_t>(state)]});
        for (TokenId t : candidates) {
            check_state(t);
            out.push_back(Logits{rows_[static_cast<size_t>(t)]});
        }
        return out;
    }

    const std::vector<std::vector<double>>& logit_rows() const { return rows_; }
    const std::vector<EntropyClass>& entropy_profile() const { return profile_; }
    std::uint64_t seed() const { return seed_; }
    double entropy_mix() const { return entropy_mix_; }

    /// Analytic conditional after the experiment's top-K/temperature.
    Pmf conditional(TokenId state, int top_k, double temperature) const {
        check_state(state);
        return pmf_from_logits(Logits{rows_[static_cast<size_t>(state)]}, top_k, temperature);
    }

private:
    void check_state(TokenId t) const {
        if (t < 0 || t >= vocab_size()) {
            throw std::invalid_argument("MarkovTableModel: token out of range");
        }
    }

    std::vector<std::vector<double>> rows_;
    std::vector<EntropyClass> profile_;
    std::uint64_t seed_ = 0;
    double entropy_mix_ = 0.0;
};

namespace detail {

// Smallest number of top tokens needed to cover half the mass.
inline int support_for_half_mass(const Pmf& pmf) {
    std::vector<double> sorted(pmf.probs().begin(), pmf.probs().end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double acc = 0.0;
    for (int i = 0; i < static_cast<int>(sorted.size()); ++i) {
        acc += sorted[static_cast<size_t>(i)];
        if (acc >= 0.5) return i + 1;
    }
    return static_cast<int>(sorted.size());
}

inline std::vector<double> draw_high_entropy_row(int vocab, RngStream& rng) {
    // spread logits, regenerated until the row is verifiably diffuse:
    // top-1 below the rescaled cap and at least V/4 tokens needed for
    // half the mass
    const double top1_cap = std::max(0.1, 3.0 / vocab);
    for (;;) {
        std::vector<double> row(static_cast<size_t>(vocab));
        for (double& v : row) v = 0.35 * rng.normal();
        const Pmf pmf = pmf_from_logits(Logits{row}, vocab, 1.0);
        if (pmf.top1_prob() <= top1_cap && support_for_half_mass(pmf) * 4 >= vocab) {
            return row;
        }
    }
}

inline std::vector<double> draw_low_entropy_row(int vocab, RngStream& rng) {
    for (double boost = 6.0;; boost += 1.0) {
        std::vector<double> row(static_cast<size_t>(vocab));
        for (double& v : row) v = 0.5 * rng.normal();
        row[rng.uniform_int(static_cast<std::uint32_t>(vocab))] += boost;
        const Pmf pmf = pmf_from_logits(Logits{row}, vocab, 1.0);
        if (pmf.top1_prob() >= 0.9) return row;
    }
}

}  // namespace detail

/// Synthesizes a Markov table with the requested fraction of high-entropy
/// states, deterministically per seed.
inline MarkovTableModel make_markov_model(int vocab, double entropy_mix, std::uint64_t seed) {
    if (vocab < 2) throw std::invalid_argument("make_markov_model: vocab must be >= 2");
    if (entropy_mix < 0.0 || entropy_mix > 1.0) {
        throw std::invalid_argument("make_markov_model: entropy_mix must be in [0, 1]");
    }
    RngStream rng(derive_seed(seed, 0x6d61726b6f76ULL));

    const int n_high = static_cast<int>(std::llround(entropy_mix * vocab));
    std::vector<int> ids(static_cast<size_t>(vocab));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = vocab - 1; i > 0; --i) {
        std::swap(ids[static_cast<size_t>(i)],
                  ids[rng.uniform_int(static_cast<std::uint32_t>(i + 1))]);
    }

    std::vector<EntropyClass> profile(static_cast<size_t>(vocab), EntropyClass::Low);
    for (int i = 0; i < n_high; ++i) profile[static_cast<size_t>(ids[static_cast<size_t>(i)])] = EntropyClass::High;

    std::vector<std::vector<double>> rows(static_cast<size_t>(vocab));
    for (int s = 0; s < vocab; ++s) {
        rows[static_cast<size_t>(s)] = profile[static_cast<size_t>(s)] == EntropyClass::High
                                           ? detail::draw_high_entropy_row(vocab, rng)
                                           : detail::draw_low_entropy_row(vocab, rng);
    }
    return MarkovTableModel(std::move(rows), std::move(profile), seed, entropy_mix);
}

/// Draft model: the base table with fixed seeded Gaussian noise on the
/// logits, scaled by sigma. sigma = 0 reproduces the base pmfs exactly.
class PerturbedDraftModel final : public ModelInterface {
public:
    PerturbedDraftModel(const MarkovTableModel& base, double sigma, std::uint64_t seed)
        : base_(&base), sigma_(sigma), seed_(seed) {
        if (sigma < 0.0) throw std::invalid_argument("PerturbedDraftModel: sigma must be >= 0");
        const int vocab = base.vocab_size();
        RngStream rng(derive_seed(seed, 0x647261667471ULL));
        noise_.resize(static_cast<size_t>(vocab) * static_cast<size_t>(vocab));
        for (double& v : noise_) v = rng.normal();
    }

    int vocab_size() const override { return base_->vocab_size(); }

    std::vector<Logits> forward(std::span<const TokenId> context,
                                std::span<const TokenId> candidates) const override {
        std::vector<Logits> rows = base_->forward(context, candidates);
        if (sigma_ == 0.0) return rows;
        std::vector<TokenId> states;
        states.reserve(rows.size());
        states.push_back(context.back());
        for (TokenId t : candidates) states.push_back(t);
        for (size_t j = 0; j < rows.size(); ++j) {
            const size_t offset =
                static_cast<size_t>(states[j]) * static_cast<size_t>(vocab_size());
            for (size_t i = 0; i < rows[j].scores.size(); ++i) {
                rows[j].scores[i] += sigma_ * noise_[offset + i];
            }
        }
        return rows;
    }

    const MarkovTableModel& base() const { return *base_; }
    double sigma() const { return sigma_; }
    std::uint64_t seed() const { return seed_; }

    Pmf conditional(TokenId state, int top_k, double temperature) const {
        std::vector<double> row = base_->logit_rows()[static_cast<size_t>(state)];
        if (sigma_ != 0.0) {
            const size_t offset = static_cast<size_t>(state) * static_cast<size_t>(vocab_size());
            for (size_t i = 0; i < row.size(); ++i) row[i] += sigma_ * noise_[offset + i];
        }
        return pmf_from_logits(Logits{std::move(row)}, top_k, temperature);
    }

private:
    const MarkovTableModel* base_;  // not owned; must outlive this model
    double sigma_ = 0.0;
    std::uint64_t seed_ = 0;
    std::vector<double> noise_;  // V x V, row-major by state
};

inline PerturbedDraftModel make_perturbed_draft(const MarkovTableModel& base, double sigma,
                                                std::uint64_t seed) {
    return PerturbedDraftModel(base, sigma, seed);
}

/// Simulated codebook: V unit-norm embedding rows, uniform on the sphere.
struct EmbeddingTable {
    int vocab = 0;
    int dim = 0;
    std::vector<double> vectors;  // row-major V x D
    std::uint64_t seed = 0;

    std::span<const double> row(TokenId t) const {
        return {vectors.data() + static_cast<size_t>(t) * static_cast<size_t>(dim),
                static_cast<size_t>(dim)};
    }
};

inline EmbeddingTable make_embeddings(int vocab, int dim, std::uint64_t seed) {
    if (vocab < 1 || dim < 1) throw std::invalid_argument("make_embeddings: vocab and dim must be >= 1");
    EmbeddingTable table;
    table.vocab = vocab;
    table.dim = dim;
    table.seed = seed;
    table.vectors.resize(static_cast<size_t>(vocab) * static_cast<size_t>(dim));
    RngStream rng(derive_seed(seed, 0x656d626564ULL));
    for (int i = 0; i < vocab; ++i) {
        double norm_sq = 0.0;
        const size_t offset = static_cast<size_t>(i) * static_cast<size_t>(dim);
        do {
            norm_sq = 0.0;
            for (int j = 0; j < dim; ++j) {
                const double v = rng.normal();
                table.vectors[offset + static_cast<size_t>(j)] = v;
                norm_sq += v * v;
            }
        } while (norm_sq == 0.0);
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (int j = 0; j < dim; ++j) table.vectors[offset + static_cast<size_t>(j)] *= inv;
    }
    return table;
}

/// Cosine distance 1 - <e_i, e_j> on the unit-norm rows; entries in [0, 2].
inline DistanceMatrix distance_matrix(const EmbeddingTable& table) {
    DistanceMatrix m;
    m.vocab = table.vocab;
    m.values.assign(static_cast<size_t>(table.vocab) * static_cast<size_t>(table.vocab), 0.0);
    for (int i = 0; i < table.vocab; ++i) {
        for (int j = i + 1; j < table.vocab; ++j) {
            const auto a = table.row(i);
            const auto b = table.row(j);
            double dot = 0.0;
            for (int k = 0; k < table.dim; ++k) dot += a[static_cast<size_t>(k)] * b[static_cast<size_t>(k)];
            const double d = std::clamp(1.0 - dot, 0.0, 2.0);
            m.values[static_cast<size_t>(i) * static_cast<size_t>(table.vocab) + static_cast<size_t>(j)] = d;
            m.values[static_cast<size_t>(j) * static_cast<size_t>(table.vocab) + static_cast<size_t>(i)] = d;
        }
    }
    return m;
}

/// k-means partition of the embedding rows into ceil(V/G) clusters. Empty
/// clusters are repaired by stealing the farthest point of the largest
/// cluster.
inline Partition static_partition(const EmbeddingTable& table, int group_size, std::uint64_t seed) {
    if (group_size < 1) throw std::invalid_argument("static_partition: group_size must be >= 1");
    const int vocab = table.vocab;
    const int dim = table.dim;
    const int k = static_cast<int>((vocab + group_size - 1) / group_size);

    RngStream rng(derive_seed(seed, 0x6b6d65616e73ULL));
    std::vector<int> ids(static_cast<size_t>(vocab));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = vocab - 1; i > 0; --i) {
        std::swap(ids[static_cast<size_t>(i)],
                  ids[rng.uniform_int(static_cast<std::uint32_t>(i + 1))]);
    }

    std::vector<double> centroids(static_cast<size_t>(k) * static_cast<size_t>(dim));
    for (int c = 0; c < k; ++c) {
        const auto src = table.row(ids[static_cast<size_t>(c)]);
        std::copy(src.begin(), src.end(),
                  centroids.begin() + static_cast<size_t>(c) * static_cast<size_t>(dim));
    }

    auto sq_dist = [&](TokenId point, int c) {
        const auto row = table.row(point);
        const double* cent = centroids.data() + static_cast<size_t>(c) * static_cast<size_t>(dim);
        double acc = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double d = row[static_cast<size_t>(j)] - cent[static_cast<size_t>(j)];
            acc += d * d;
        }
        return acc;
    };

    std::vector<std::int32_t> assign(static_cast<size_t>(vocab), 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int i = 0; i < vocab; ++i) {
            int best = 0;
            double best_d = sq_dist(i, 0);
            for (int c = 1; c < k; ++c) {
                const double d = sq_dist(i, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[static_cast<size_t>(i)] != best) {
                assign[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }

        std::vector<int> counts(static_cast<size_t>(k), 0);
        for (std::int32_t c : assign) ++counts[static_cast<size_t>(c)];
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) continue;
            int largest = static_cast<int>(
                std::max_element(counts.begin(), counts.end()) - counts.begin());
            TokenId farthest = -1;
            double far_d = -1.0;
            for (int i = 0; i < vocab; ++i) {
                if (assign[static_cast<size_t>(i)] != largest) continue;
                const double d = sq_dist(i, largest);
                if (d > far_d) {
                    far_d = d;
                    farthest = i;
                }
            }
            assign[static_cast<size_t>(farthest)] = c;
            --counts[static_cast<size_t>(largest)];
            ++counts[static_cast<size_t>(c)];
            changed = true;
        }

        std::fill(centroids.begin(), centroids.end(), 0.0);
        for (int i = 0; i < vocab; ++i) {
            const auto row = table.row(i);
            double* cent = centroids.data() +
                           static_cast<size_t>(assign[static_cast<size_t>(i)]) * static_cast<size_t>(dim);
            for (int j = 0; j < dim; ++j) cent[static_cast<size_t>(j)] += row[static_cast<size_t>(j)];
        }
        for (int c = 0; c < k; ++c) {
            double* cent = centroids.data() + static_cast<size_t>(c) * static_cast<size_t>(dim);
            for (int j = 0; j < dim; ++j) cent[static_cast<size_t>(j)] /= counts[static_cast<size_t>(c)];
        }
        if (!changed) break;
    }
    return Partition(std::move(assign), k);
}

}  // namespace gsd

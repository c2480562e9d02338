#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "gsd/io.hpp"
#include "gsd/models.hpp"

using namespace gsd;

TEST_CASE("make_markov_model") {
    SECTION("entropy_mix=0 makes every row near a point mass") {
        const MarkovTableModel m = make_markov_model(32, 0.0, 4);
        for (int s = 0; s < 32; ++s) {
            REQUIRE(m.conditional(s, 32, 1.0).top1_prob() >= 0.9);
            REQUIRE(m.entropy_profile()[static_cast<size_t>(s)] == EntropyClass::Low);
        }
    }
    SECTION("entropy_mix=1 at V=64 keeps every row diffuse") {
        const MarkovTableModel m = make_markov_model(64, 1.0, 4);
        for (int s = 0; s < 64; ++s) {
            const Pmf row = m.conditional(s, 64, 1.0);
            REQUIRE(row.top1_prob() <= 0.1);
            // at least half of the mass needs at least V/4 tokens
            std::vector<double> sorted(row.probs().begin(), row.probs().end());
            std::sort(sorted.begin(), sorted.end(), std::greater<>());
            double acc = 0.0;
            int needed = 0;
            for (double v : sorted) {
                acc += v;
                ++needed;
                if (acc >= 0.5) break;
            }
            REQUIRE(needed * 4 >= 64);
        }
    }
    SECTION("fixed seed reproduces the table bit for bit") {
        const MarkovTableModel a = make_markov_model(48, 0.5, 99);
        const MarkovTableModel b = make_markov_model(48, 0.5, 99);
        REQUIRE(a.logit_rows() == b.logit_rows());
        REQUIRE(a.entropy_profile() == b.entropy_profile());
    }
    SECTION("mixed profile matches the requested fraction") {
        const MarkovTableModel m = make_markov_model(40, 0.25, 7);
        int high = 0;
        for (EntropyClass c : m.entropy_profile()) high += c == EntropyClass::High;
        REQUIRE(high == 10);
    }
    SECTION("rejects bad parameters") {
        REQUIRE_THROWS_AS(make_markov_model(1, 0.5, 1), std::invalid_argument);
        REQUIRE_THROWS_AS(make_markov_model(8, 1.5, 1), std::invalid_argument);
    }
    SECTION("forward returns candidates+1 rows conditioned on the last token") {
        const MarkovTableModel m = make_markov_model(8, 0.5, 3);
        const std::vector<TokenId> ctx{0, 3};
        const std::vector<TokenId> cands{5, 1};
        const auto rows = m.forward(ctx, cands);
        REQUIRE(rows.size() == 3);
        REQUIRE(rows[0].scores == m.logit_rows()[3]);
        REQUIRE(rows[1].scores == m.logit_rows()[5]);
        REQUIRE(rows[2].scores == m.logit_rows()[1]);
    }
}

TEST_CASE("make_perturbed_draft") {
    const MarkovTableModel base = make_markov_model(64, 1.0, 11);

    SECTION("sigma=0 reproduces the base rows exactly") {
        const PerturbedDraftModel d = make_perturbed_draft(base, 0.0, 2);
        for (int s = 0; s < 64; ++s) {
            REQUIRE(tv_distance(d.conditional(s, 64, 1.0), base.conditional(s, 64, 1.0)) == 0.0);
        }
    }

    SECTION("mean row TV grows with sigma at a fixed seed") {
        double prev = -1.0;
        for (double sigma : {0.1, 0.3, 0.5}) {
            const PerturbedDraftModel d = make_perturbed_draft(base, sigma, 2);
            double mean_tv = 0.0;
            for (int s = 0; s < 64; ++s) {
                mean_tv += tv_distance(d.conditional(s, 64, 1.0), base.conditional(s, 64, 1.0));
            }
            mean_tv /= 64;
            REQUIRE(mean_tv > prev);
            prev = mean_tv;
        }
    }

    SECTION("high-entropy rows drift further than low-entropy rows at equal sigma") {
        const MarkovTableModel mixed = make_markov_model(64, 0.5, 12);
        const PerturbedDraftModel d = make_perturbed_draft(mixed, 0.5, 2);
        double tv_high = 0.0, tv_low = 0.0;
        int n_high = 0, n_low = 0;
        for (int s = 0; s < 64; ++s) {
            const double tv = tv_distance(d.conditional(s, 64, 1.0), mixed.conditional(s, 64, 1.0));
            if (mixed.entropy_profile()[static_cast<size_t>(s)] == EntropyClass::High) {
                tv_high += tv;
                ++n_high;
            } else {
                tv_low += tv;
                ++n_low;
            }
        }
        REQUIRE(tv_high / n_high > tv_low / n_low);
    }
}

TEST_CASE("embeddings and distance matrix") {
    SECTION("unit norms, zero diagonal, symmetry, range") {
        const EmbeddingTable emb = make_embeddings(64, 16, 5);
        for (int i = 0; i < 64; ++i) {
            double norm = 0.0;
            for (double v : emb.row(i)) norm += v * v;
            REQUIRE(norm == Catch::Approx(1.0).margin(1e-12));
        }
        const DistanceMatrix dist = distance_matrix(emb);
        for (int i = 0; i < 64; ++i) {
            REQUIRE(dist.at(i, i) == 0.0);
            for (int j = 0; j < 64; ++j) {
                REQUIRE(dist.at(i, j) == dist.at(j, i));
                REQUIRE(dist.at(i, j) >= 0.0);
                REQUIRE(dist.at(i, j) <= 2.0);
            }
        }
    }
    SECTION("sphere concentration: mean pairwise distance near 1 at D=256") {
        const EmbeddingTable emb = make_embeddings(512, 256, 6);
        const DistanceMatrix dist = distance_matrix(emb);
        double sum = 0.0;
        long pairs = 0;
        for (int i = 0; i < 512; ++i) {
            for (int j = i + 1; j < 512; ++j) {
                sum += dist.at(i, j);
                ++pairs;
            }
        }
        REQUIRE(sum / static_cast<double>(pairs) == Catch::Approx(1.0).margin(0.05));
    }
}

TEST_CASE("static_partition") {
    const EmbeddingTable emb = make_embeddings(60, 8, 9);

    SECTION("G=1 yields singleton clusters") {
        const Partition p = static_partition(emb, 1, 1);
        REQUIRE(p.num_clusters == 60);
        std::set<std::int32_t> seen(p.assignment.begin(), p.assignment.end());
        REQUIRE(seen.size() == 60);
    }
    SECTION("G=V yields a single cluster") {
        const Partition p = static_partition(emb, 60, 1);
        REQUIRE(p.num_clusters == 1);
    }
    SECTION("no empty clusters and full cover across random instances") {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const int vocab = 16 + static_cast<int>(seed % 32);
            const EmbeddingTable e = make_embeddings(vocab, 6, seed);
            const int g = 1 + static_cast<int>(seed % 9);
            const Partition p = static_partition(e, g, seed);
            // Partition's constructor enforces non-empty disjoint cover
            REQUIRE(p.size() == vocab);
            REQUIRE(p.num_clusters == (vocab + g - 1) / g);
        }
    }
}

TEST_CASE("model bundle JSON round-trip") {
    const ToyModelBundle bundle = make_toy_bundle(24, 0.5, 8, 42);
    const json j = to_json(bundle);
    const ToyModelBundle loaded = toy_bundle_from_json(j);

    REQUIRE(loaded.markov.vocab_size() == 24);
    REQUIRE(loaded.markov.logit_rows() == bundle.markov.logit_rows());
    REQUIRE(loaded.markov.entropy_profile() == bundle.markov.entropy_profile());
    REQUIRE(loaded.embeddings.vectors == bundle.embeddings.vectors);

    // identical forward outputs after the round trip
    const std::vector<TokenId> ctx{3};
    const std::vector<TokenId> cands{1, 7};
    const auto a = bundle.markov.forward(ctx, cands);
    const auto b = loaded.markov.forward(ctx, cands);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].scores == b[i].scores);
}

TEST_CASE("every model row is a valid pmf after top-K truncation") {
    const MarkovTableModel m = make_markov_model(128, 0.6, 21);
    for (int s = 0; s < 128; ++s) {
        const Pmf row = m.conditional(s, 13, 0.9);  // arbitrary K and tau
        double sum = 0.0;
        for (double v : row.probs()) {
            REQUIRE(v >= 0.0);
            sum += v;
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

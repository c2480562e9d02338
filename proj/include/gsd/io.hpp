#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gsd/engines.hpp"
#include "gsd/harness.hpp"
#include "gsd/models.hpp"

namespace gsd {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// JSON representations
// ---------------------------------------------------------------------------

inline json to_json(const DecodeConfig& cfg) {
    return json{{"method", to_string(cfg.method)},
                {"L", cfg.draft_len},
                {"N", cfg.max_len},
                {"K", cfg.top_k},
                {"tau", cfg.temperature},
                {"G", cfg.group_size},
                {"delta", cfg.prob_threshold},
                {"d", cfg.embed_threshold},
                {"k_amp", cfg.amplify_k},
                {"eps", cfg.addition_eps},
                {"seed", cfg.seed}};
}

inline DecodeConfig decode_config_from_json(const json& j) {
    DecodeConfig cfg;
    cfg.method = method_from_string(j.at("method").get<std::string>());
    cfg.draft_len = j.value("L", cfg.draft_len);
    cfg.max_len = j.value("N", cfg.max_len);
    cfg.top_k = j.value("K", cfg.top_k);
    cfg.temperature = j.value("tau", cfg.temperature);
    cfg.group_size = j.value("G", cfg.group_size);
    cfg.prob_threshold = j.value("delta", cfg.prob_threshold);
    cfg.embed_threshold = j.value("d", cfg.embed_threshold);
    cfg.amplify_k = j.value("k_amp", cfg.amplify_k);
    cfg.addition_eps = j.value("eps", cfg.addition_eps);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

inline json to_json(const DecodeTrace& trace) {
    json positions = json::array();
    for (const PositionDiag& d : trace.per_position) {
        positions.push_back(json{{"top1_p", d.top1_p},
                                 {"top1_q", d.top1_q},
                                 {"tv", d.tv},
                                 {"sd_accept_prob", d.sd_accept_prob},
                                 {"gsd_accept_prob", d.gsd_accept_prob}});
    }
    return json{{"sequence", trace.sequence},
                {"nfe_target", trace.nfe_target},
                {"nfe_draft", trace.nfe_draft},
                {"outer_iterations", trace.outer_iterations},
                {"per_iteration_accept_counts", trace.per_iteration_accept_counts},
                {"per_position", std::move(positions)},
                {"drafts_scanned", trace.drafts_scanned},
                {"drafts_accepted", trace.drafts_accepted}};
}

inline json to_json(const ExactnessReport& r) {
    return json{{"method", r.method},   {"vocab", r.vocab},   {"length", r.length},
                {"trials", r.trials},   {"tv_empirical", r.tv_empirical},
                {"threshold", r.threshold}, {"passed", r.passed}, {"seed", r.seed},
                {"mode", r.mode}};
}

inline json to_json(const Proposition1Report& r) {
    return json{{"trials", r.trials}, {"vocab", r.vocab}, {"seed", r.seed},
                {"max_abs_error", r.max_abs_error}};
}

inline json to_json(const Theorem1Report& r) {
    return json{{"trials", r.trials}, {"vocab", r.vocab}, {"seed", r.seed},
                {"max_violation", r.max_violation}};
}

inline json to_json(const UpliftReport& r) {
    return json{{"per_position", r.per_position}, {"overall_mean", r.overall_mean},
                {"seed", r.seed}};
}

// ---------------------------------------------------------------------------
// Toy-model bundle (Markov table + simulated codebook), JSON on disk
// ---------------------------------------------------------------------------

struct ToyModelBundle {
    MarkovTableModel markov;
    EmbeddingTable embeddings;
};

inline ToyModelBundle make_toy_bundle(int vocab, double entropy_mix, int embed_dim,
                                      std::uint64_t seed) {
    return ToyModelBundle{make_markov_model(vocab, entropy_mix, seed),
                          make_embeddings(vocab, embed_dim, derive_seed(seed, 0x454dULL))};
}

inline json to_json(const ToyModelBundle& bundle) {
    json profile = json::array();
    for (EntropyClass c : bundle.markov.entropy_profile()) {
        profile.push_back(c == EntropyClass::High ? "high" : "low");
    }
    json logits = json::array();
    for (const auto& row : bundle.markov.logit_rows()) logits.push_back(row);
    json embeddings = json::array();
    for (int i = 0; i < bundle.embeddings.vocab; ++i) {
        const auto row = bundle.embeddings.row(i);
        embeddings.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return json{{"format", "gsd-model"},
                {"V", bundle.markov.vocab_size()},
                {"D", bundle.embeddings.dim},
                {"seed", bundle.markov.seed()},
                {"entropy_mix", bundle.markov.entropy_mix()},
                {"entropy_profile", std::move(profile)},
                {"logits", std::move(logits)},
                {"embeddings", std::move(embeddings)}};
}

inline ToyModelBundle toy_bundle_from_json(const json& j) {
    if (j.value("format", "") != "gsd-model") {
        throw std::invalid_argument("model file: unrecognized format");
    }
    const int vocab = j.at("V").get<int>();
    const int dim = j.at("D").get<int>();
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<size_t>(vocab));
    for (const auto& row : j.at("logits")) rows.push_back(row.get<std::vector<double>>());
    if (static_cast<int>(rows.size()) != vocab) {
        throw std::invalid_argument("model file: logits row count does not match V");
    }
    std::vector<EntropyClass> profile;
    for (const auto& label : j.at("entropy_profile")) {
        profile.push_back(label.get<std::string>() == "high" ? EntropyClass::High
                                                             : EntropyClass::Low);
    }
    MarkovTableModel markov(std::move(rows), std::move(profile), j.value("seed", 0ULL),
                            j.value("entropy_mix", 0.0));

    EmbeddingTable table;
    table.vocab = vocab;
    table.dim = dim;
    table.seed = j.value("seed", 0ULL);
    table.vectors.reserve(static_cast<size_t>(vocab) * static_cast<size_t>(dim));
    for (const auto& row : j.at("embeddings")) {
        const auto vals = row.get<std::vector<double>>();
        table.vectors.insert(table.vectors.end(), vals.begin(), vals.end());
    }
    if (table.vectors.size() != static_cast<size_t>(vocab) * static_cast<size_t>(dim)) {
        throw std::invalid_argument("model file: embedding shape mismatch");
    }
    return ToyModelBundle{std::move(markov), std::move(table)};
}

// ---------------------------------------------------------------------------
// File helpers (atomic writes, fixed text formats)
// ---------------------------------------------------------------------------

/// Writes via a temp file plus rename so readers never observe partial files.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    write_file_atomic(path, j.dump(2) + "\n");
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    json j;
    in >> j;
    return j;
}

inline std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline constexpr const char* kDiagnosticsCsvHeader =
    "position,top1_p,top1_q,tv,sd_accept_prob,gsd_accept_prob";

inline std::string diagnostics_csv(const std::vector<DiagnosticRow>& rows) {
    std::string out = std::string(kDiagnosticsCsvHeader) + "\n";
    for (const DiagnosticRow& r : rows) {
        out += std::to_string(r.position) + "," + csv_double(r.top1_p) + "," +
               csv_double(r.top1_q) + "," + csv_double(r.tv) + "," + csv_double(r.sd_accept) +
               "," + csv_double(r.gsd_accept) + "\n";
    }
    return out;
}

inline std::string trace_positions_csv(const DecodeTrace& trace) {
    std::string out = std::string(kDiagnosticsCsvHeader) + "\n";
    int pos = 0;
    for (const PositionDiag& d : trace.per_position) {
        out += std::to_string(pos++) + "," + csv_double(d.top1_p) + "," + csv_double(d.top1_q) +
               "," + csv_double(d.tv) + "," + csv_double(d.sd_accept_prob) + "," +
               csv_double(d.gsd_accept_prob) + "\n";
    }
    return out;
}

inline constexpr const char* kSweepCsvHeader =
    "method,G,delta,d,sigma,V,mean_nfe,mean_accept_rate,mean_tv,seeds_used";

inline std::string sweep_row_csv(const SweepRow& r) {
    return r.method + "," + std::to_string(r.group_size) + "," + csv_double(r.delta) + "," +
           csv_double(r.dist_cap) + "," + csv_double(r.sigma) + "," + std::to_string(r.vocab) +
           "," + csv_double(r.mean_nfe) + "," + csv_double(r.mean_accept_rate) + "," +
           csv_double(r.mean_tv) + "," + std::to_string(r.seeds_used);
}

inline std::string sweep_summary_csv(const std::vector<SweepRow>& rows) {
    std::string out = std::string(kSweepCsvHeader) + "\n";
    for (const SweepRow& r : rows) out += sweep_row_csv(r) + "\n";
    return out;
}

inline std::string sweep_raw_csv(const std::vector<SweepSeedRow>& rows) {
    std::string out = std::string("seed,") + kSweepCsvHeader + "\n";
    for (const SweepSeedRow& r : rows) out += std::to_string(r.seed) + "," + sweep_row_csv(r.row) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Run manifest: everything needed to reproduce an invocation byte-for-byte
// ---------------------------------------------------------------------------

struct RunManifest {
    std::vector<std::string> command;  // subcommand plus flags, no program name
    json config;
    std::vector<std::uint64_t> seeds;
    std::string toolchain;
    std::vector<std::string> outputs;  // file names relative to the manifest
    std::int64_t duration_ms = 0;
};

inline std::string toolchain_string() {
#if defined(__VERSION__)
    return std::string("gcc-compatible ") + __VERSION__;
#else
    return "unknown";
#endif
}

inline json to_json(const RunManifest& m) {
    return json{{"command", m.command},   {"config", m.config},
                {"seeds", m.seeds},       {"toolchain", m.toolchain},
                {"outputs", m.outputs},   {"duration_ms", m.duration_ms}};
}

inline RunManifest manifest_from_json(const json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::vector<std::string>>();
    m.config = j.value("config", json::object());
    m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    m.toolchain = j.value("toolchain", "");
    m.outputs = j.value("outputs", std::vector<std::string>{});
    m.duration_ms = j.value("duration_ms", 0);
    return m;
}

inline void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
    write_json_file(dir / "manifest.json", to_json(m));
}

}  // namespace gsd

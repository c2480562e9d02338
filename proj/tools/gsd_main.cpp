// Operator surface: subcommand-driven runner over the gsd library.
//
//   gsd gen-model        synthesize a toy model bundle and write it as JSON
//   gsd decode           run one decode, write the trace and diagnostics
//   gsd verify-exactness Monte Carlo sequence-distribution check vs vanilla
//   gsd theorem-check    acceptance/TV identity and grouped-TV inequality
//   gsd sweep            method/parameter grid -> raw + summary CSV
//   gsd diagnose         per-position top-1 / TV / acceptance table
//   gsd replay           re-run a recorded manifest into a new directory
//
// Every subcommand writes a manifest.json next to its outputs; re-running the
// manifest reproduces the outputs byte for byte. Flags override --config file
// values, which override built-in defaults. GSD_OUT_DIR overrides the default
// output directory.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gsd/harness.hpp"
#include "gsd/io.hpp"

namespace fs = std::filesystem;
using namespace gsd;

namespace {

std::string default_out_dir() {
    if (const char* env = std::getenv("GSD_OUT_DIR")) return env;
    return "out";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    const auto range_pos = text.find("..");
    if (range_pos != std::string::npos) {
        const std::uint64_t lo = std::stoull(text.substr(0, range_pos));
        const std::uint64_t hi = std::stoull(text.substr(range_pos + 2));
        if (hi < lo) throw CLI::ValidationError("--seeds", "range end below start");
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::string item;
    std::istringstream stream(text);
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) throw CLI::ValidationError("--seeds", "empty seed list");
    return seeds;
}

std::vector<TokenId> parse_prompt(const std::string& text) {
    std::vector<TokenId> prompt;
    std::string item;
    std::istringstream stream(text);
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) prompt.push_back(static_cast<TokenId>(std::stol(item)));
    }
    if (prompt.empty()) throw CLI::ValidationError("--prompt", "empty prompt");
    return prompt;
}

template <class T>
std::vector<T> parse_number_list(const std::string& text) {
    std::vector<T> values;
    std::string item;
    std::istringstream stream(text);
    while (std::getline(stream, item, ',')) {
        if (item.empty()) continue;
        if constexpr (std::is_integral_v<T>) {
            values.push_back(static_cast<T>(std::stol(item)));
        } else {
            values.push_back(static_cast<T>(std::stod(item)));
        }
    }
    return values;
}

// flags > config-file values > defaults
struct ConfigLayer {
    json values = json::object();

    void load(const std::string& path) {
        if (!path.empty()) values = read_json_file(path);
    }

    template <class T>
    void apply(const CLI::App& app, const std::string& flag, T& var) const {
        const std::string key = flag.substr(2);
        if (app.count(flag) == 0 && values.contains(key)) {
            var = values.at(key).get<T>();
        }
    }
};

// shared model-source flags: either --model FILE or generator parameters
struct ModelArgs {
    std::string model_path;
    int vocab = 256;
    int embed_dim = 32;
    double entropy_mix = 1.0;
    std::uint64_t model_seed = 1;
    double sigma = 0.5;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--model", model_path, "model bundle JSON (overrides generator flags)");
        cmd->add_option("--V", vocab, "vocabulary size for the generated toy model");
        cmd->add_option("--D", embed_dim, "embedding dimension");
        cmd->add_option("--entropy-mix", entropy_mix, "fraction of high-entropy states");
        cmd->add_option("--model-seed", model_seed, "toy-model generator seed");
        cmd->add_option("--sigma", sigma, "draft-model logit noise scale");
    }

    void apply_config(const CLI::App& app, const ConfigLayer& cfg) {
        cfg.apply(app, "--model", model_path);
        cfg.apply(app, "--V", vocab);
        cfg.apply(app, "--D", embed_dim);
        cfg.apply(app, "--entropy-mix", entropy_mix);
        cfg.apply(app, "--model-seed", model_seed);
        cfg.apply(app, "--sigma", sigma);
    }

    ToyModelBundle load_or_generate() const {
        if (!model_path.empty()) {
            if (!fs::exists(model_path)) {
                throw std::runtime_error("model file not found: " + model_path);
            }
            return toy_bundle_from_json(read_json_file(model_path));
        }
        return make_toy_bundle(vocab, entropy_mix, embed_dim, model_seed);
    }

    json snapshot() const {
        return json{{"model", model_path},         {"V", vocab},
                    {"D", embed_dim},              {"entropy-mix", entropy_mix},
                    {"model-seed", model_seed},    {"sigma", sigma}};
    }
};

struct DecodeArgs {
    std::string method = "gsd";
    int draft_len = 16;
    int max_len = 256;
    int top_k = -1;  // -1: scale to the toy vocabulary (V/10, at least 1)
    double temperature = 1.0;
    int group_size = 8;
    double prob_threshold = 0.15;
    double embed_threshold = 2.0;
    double amplify_k = 2.0;
    double addition_eps = 0.1;
    std::uint64_t seed = 0;
    std::string strategy = "expert-filtered";
    std::string prompt_text = "0";

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--method", method, "vanilla|sd|jacobi|sjd|gsd|amplify|addition");
        cmd->add_option("--L", draft_len, "draft length");
        cmd->add_option("--N", max_len, "max sequence length including the prompt");
        cmd->add_option("--K", top_k, "top-K truncation; -1 scales to V/10, 0 disables");
        cmd->add_option("--tau", temperature, "sampling temperature");
        cmd->add_option("--G", group_size, "cluster group size");
        cmd->add_option("--delta", prob_threshold, "probability-gap filter threshold");
        cmd->add_option("--d", embed_threshold, "embedding-distance filter threshold");
        cmd->add_option("--k-amp", amplify_k, "Amplify acceptance factor");
        cmd->add_option("--eps", addition_eps, "Addition acceptance offset");
        cmd->add_option("--seed", seed, "decode RNG seed");
        cmd->add_option("--strategy", strategy, "expert|expert-filtered|draft|static");
        cmd->add_option("--prompt", prompt_text, "comma-separated prompt tokens");
    }

    void apply_config(const CLI::App& app, const ConfigLayer& cfg) {
        cfg.apply(app, "--method", method);
        cfg.apply(app, "--L", draft_len);
        cfg.apply(app, "--N", max_len);
        cfg.apply(app, "--K", top_k);
        cfg.apply(app, "--tau", temperature);
        cfg.apply(app, "--G", group_size);
        cfg.apply(app, "--delta", prob_threshold);
        cfg.apply(app, "--d", embed_threshold);
        cfg.apply(app, "--k-amp", amplify_k);
        cfg.apply(app, "--eps", addition_eps);
        cfg.apply(app, "--seed", seed);
        cfg.apply(app, "--strategy", strategy);
        cfg.apply(app, "--prompt", prompt_text);
    }

    DecodeConfig resolve(int vocab) const {
        DecodeConfig cfg;
        cfg.method = method_from_string(method);
        cfg.draft_len = draft_len;
        cfg.max_len = max_len;
        cfg.top_k = top_k < 0 ? std::max(1, vocab / 10) : top_k;
        cfg.temperature = temperature;
        cfg.group_size = group_size;
        cfg.prob_threshold = prob_threshold;
        cfg.embed_threshold = embed_threshold;
        cfg.amplify_k = amplify_k;
        cfg.addition_eps = addition_eps;
        cfg.seed = seed;
        return cfg;
    }

    json snapshot() const {
        return json{{"method", method},      {"L", draft_len},
                    {"N", max_len},          {"K", top_k},
                    {"tau", temperature},    {"G", group_size},
                    {"delta", prob_threshold}, {"d", embed_threshold},
                    {"k-amp", amplify_k},    {"eps", addition_eps},
                    {"seed", seed},          {"strategy", strategy},
                    {"prompt", prompt_text}};
    }
};

ClusterStrategy resolve_strategy(const std::string& name, const DecodeConfig& cfg,
                                 const ToyModelBundle& bundle) {
    if (name == "expert") return ClusterStrategy::expert_window(cfg.group_size);
    if (name == "expert-filtered") {
        return ClusterStrategy::expert_window_filtered(cfg.group_size, cfg.prob_threshold,
                                                       cfg.embed_threshold);
    }
    if (name == "draft") return ClusterStrategy::draft_window(cfg.group_size);
    if (name == "static") {
        return ClusterStrategy::static_embedding(
            static_partition(bundle.embeddings, cfg.group_size, bundle.markov.seed()));
    }
    throw std::runtime_error("unknown clustering strategy: " + name);
}

struct OutputDir {
    fs::path dir;
    std::vector<std::string> files;

    explicit OutputDir(const std::string& path) : dir(path) { fs::create_directories(dir); }

    void write_json(const std::string& name, const json& j) {
        write_json_file(dir / name, j);
        files.push_back(name);
    }
    void write_text(const std::string& name, const std::string& content) {
        write_file_atomic(dir / name, content);
        files.push_back(name);
    }
};

void finish_manifest(OutputDir& out, const std::vector<std::string>& command, json config,
                     std::vector<std::uint64_t> seeds,
                     std::chrono::steady_clock::time_point started) {
    RunManifest manifest;
    manifest.command = command;
    manifest.config = std::move(config);
    manifest.seeds = std::move(seeds);
    manifest.toolchain = toolchain_string();
    manifest.outputs = out.files;
    manifest.duration_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - started)
                               .count();
    write_manifest(out.dir, manifest);
}

int run_command(const std::vector<std::string>& args);

// replay re-executes the recorded command with --out redirected; recorded
// flags win over the embedded config snapshot exactly as in the original run
int run_replay(const std::string& manifest_path, const std::string& out_dir) {
    const RunManifest manifest = manifest_from_json(read_json_file(manifest_path));
    std::vector<std::string> args;
    for (size_t i = 0; i < manifest.command.size(); ++i) {
        if (manifest.command[i] == "--out" || manifest.command[i] == "--config") {
            ++i;  // drop the flag and its value
            continue;
        }
        args.push_back(manifest.command[i]);
    }
    fs::create_directories(out_dir);
    const fs::path snapshot_path = fs::path(out_dir) / "replay_config.json";
    write_json_file(snapshot_path, manifest.config);
    args.push_back("--config");
    args.push_back(snapshot_path.string());
    args.push_back("--out");
    args.push_back(out_dir);
    return run_command(args);
}

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"grouped speculative decoding laboratory"};
    app.require_subcommand(1);

    const auto started = std::chrono::steady_clock::now();
    int exit_code = 0;

    // ---- gen-model ----
    auto* gen = app.add_subcommand("gen-model", "synthesize and save a toy model bundle");
    ModelArgs gen_model;
    std::string gen_out = default_out_dir();
    std::string gen_config;
    gen_model.add_flags(gen);
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--config", gen_config, "JSON config file");
    gen->callback([&] {
        ConfigLayer cfg;
        cfg.load(gen_config);
        gen_model.apply_config(*gen, cfg);
        const ToyModelBundle bundle = gen_model.load_or_generate();
        OutputDir out(gen_out);
        out.write_json("model.json", to_json(bundle));
        finish_manifest(out, args, gen_model.snapshot(), {gen_model.model_seed}, started);
    });

    // ---- decode ----
    auto* dec = app.add_subcommand("decode", "run one decode and write the trace");
    ModelArgs dec_model;
    DecodeArgs dec_args;
    std::string dec_out = default_out_dir();
    std::string dec_config;
    dec_model.add_flags(dec);
    dec_args.add_flags(dec);
    dec->add_option("--out", dec_out, "output directory");
    dec->add_option("--config", dec_config, "JSON config file");
    dec->callback([&] {
        ConfigLayer cfg;
        cfg.load(dec_config);
        dec_model.apply_config(*dec, cfg);
        dec_args.apply_config(*dec, cfg);

        const ToyModelBundle bundle = dec_model.load_or_generate();
        const DecodeConfig run_cfg = dec_args.resolve(bundle.markov.vocab_size());
        const std::vector<TokenId> prompt = parse_prompt(dec_args.prompt_text);

        std::optional<PerturbedDraftModel> draft;
        if (run_cfg.method == Method::SD) {
            draft.emplace(bundle.markov, dec_model.sigma,
                          derive_seed(bundle.markov.seed(), 0x5344ULL));
        }
        std::optional<ClusterStrategy> strategy;
        std::optional<DistanceMatrix> dist;
        if (run_cfg.method == Method::GSD) {
            strategy = resolve_strategy(dec_args.strategy, run_cfg, bundle);
            dist = distance_matrix(bundle.embeddings);
        }

        const DecodeTrace trace =
            run_decode(bundle.markov, draft ? &*draft : nullptr, run_cfg,
                       strategy ? &*strategy : nullptr, dist ? &*dist : nullptr, prompt);

        OutputDir out(dec_out);
        json trace_json = to_json(trace);
        trace_json["config"] = to_json(run_cfg);
        out.write_json("trace.json", trace_json);
        out.write_text("diagnostics.csv", trace_positions_csv(trace));
        json snapshot = dec_args.snapshot();
        snapshot.update(dec_model.snapshot());
        finish_manifest(out, args, snapshot, {run_cfg.seed}, started);
    });

    // ---- verify-exactness ----
    auto* vex = app.add_subcommand("verify-exactness",
                                   "Monte Carlo sequence-distribution check against vanilla");
    ModelArgs vex_model;
    DecodeArgs vex_args;
    int vex_len = 3;
    long vex_trials = 100000;
    double vex_threshold = -1.0;
    std::string vex_mode = "joint";
    int vex_jobs = 1;
    std::string vex_out = default_out_dir();
    std::string vex_config;
    vex_model.add_flags(vex);
    vex_args.add_flags(vex);
    vex->add_option("--len", vex_len, "generated sequence length");
    vex->add_option("--trials", vex_trials, "Monte Carlo trials per side");
    vex->add_option("--threshold", vex_threshold, "pass threshold; -1 derives from trials");
    vex->add_option("--mode", vex_mode, "joint|marginal");
    vex->add_option("--jobs", vex_jobs, "worker threads");
    vex->add_option("--out", vex_out, "output directory");
    vex->add_option("--config", vex_config, "JSON config file");
    vex->callback([&] {
        ConfigLayer cfg;
        cfg.load(vex_config);
        vex_model.apply_config(*vex, cfg);
        vex_args.apply_config(*vex, cfg);
        cfg.apply(*vex, "--len", vex_len);
        cfg.apply(*vex, "--trials", vex_trials);
        cfg.apply(*vex, "--threshold", vex_threshold);
        cfg.apply(*vex, "--mode", vex_mode);

        const ToyModelBundle bundle = vex_model.load_or_generate();
        const std::vector<TokenId> prompt = parse_prompt(vex_args.prompt_text);
        DecodeConfig run_cfg = vex_args.resolve(bundle.markov.vocab_size());
        run_cfg.max_len = static_cast<int>(prompt.size()) + vex_len;

        std::optional<PerturbedDraftModel> draft;
        if (run_cfg.method == Method::SD) {
            draft.emplace(bundle.markov, vex_model.sigma,
                          derive_seed(bundle.markov.seed(), 0x5344ULL));
        }
        std::optional<ClusterStrategy> strategy;
        std::optional<DistanceMatrix> dist;
        if (run_cfg.method == Method::GSD) {
            strategy = resolve_strategy(vex_args.strategy, run_cfg, bundle);
            dist = distance_matrix(bundle.embeddings);
        }

        const ExactnessReport report = test_sequence_exactness(
            bundle.markov, draft ? &*draft : nullptr, run_cfg, strategy ? &*strategy : nullptr,
            dist ? &*dist : nullptr, prompt, vex_trials, run_cfg.seed,
            vex_mode == "marginal" ? ExactnessMode::Marginal : ExactnessMode::Joint,
            vex_threshold, vex_jobs);

        OutputDir out(vex_out);
        out.write_json("report.json", to_json(report));
        json snapshot = vex_args.snapshot();
        snapshot.update(vex_model.snapshot());
        snapshot["len"] = vex_len;
        snapshot["trials"] = vex_trials;
        snapshot["mode"] = vex_mode;
        finish_manifest(out, args, snapshot, {run_cfg.seed}, started);
        if (!report.passed) exit_code = 1;
    });

    // ---- theorem-check ----
    auto* thm = app.add_subcommand("theorem-check",
                                   "acceptance/TV identity and grouped-TV inequality");
    long thm_trials = 10000;
    int thm_vocab = 128;
    std::uint64_t thm_seed = 1;
    std::string thm_out = default_out_dir();
    std::string thm_config;
    thm->add_option("--trials", thm_trials, "random (p, q, partition) triples");
    thm->add_option("--V", thm_vocab, "vocabulary size");
    thm->add_option("--seed", thm_seed, "RNG seed");
    thm->add_option("--out", thm_out, "output directory");
    thm->add_option("--config", thm_config, "JSON config file");
    thm->callback([&] {
        ConfigLayer cfg;
        cfg.load(thm_config);
        cfg.apply(*thm, "--trials", thm_trials);
        cfg.apply(*thm, "--V", thm_vocab);
        cfg.apply(*thm, "--seed", thm_seed);

        const Proposition1Report prop = check_proposition1(thm_trials, thm_vocab, thm_seed);
        const Theorem1Report theorem = check_theorem1(thm_trials, thm_vocab, thm_seed);
        const bool passed = prop.max_abs_error <= 1e-12 && theorem.max_violation <= 1e-12;

        OutputDir out(thm_out);
        out.write_json("report.json", json{{"proposition1", to_json(prop)},
                                           {"theorem1", to_json(theorem)},
                                           {"passed", passed}});
        finish_manifest(out, args,
                        json{{"trials", thm_trials}, {"V", thm_vocab}, {"seed", thm_seed}},
                        {thm_seed}, started);
        if (!passed) exit_code = 1;
    });

    // ---- sweep ----
    auto* swp = app.add_subcommand("sweep", "method grid -> raw and summary CSV");
    ModelArgs swp_model;
    DecodeArgs swp_args;
    std::string swp_methods = "sjd,gsd";
    std::string swp_g_list = "1,4,16,64";
    std::string swp_k_list = "2,3,4";
    std::string swp_eps_list = "0.1,0.2,0.3";
    std::string swp_seeds = "0..99";
    int swp_fid_len = 0;
    long swp_fid_trials = 100000;
    std::uint64_t swp_fid_seed = 0x66696465;
    int swp_jobs = 1;
    std::string swp_out = default_out_dir();
    std::string swp_config;
    swp_model.add_flags(swp);
    swp_args.add_flags(swp);
    swp->add_option("--methods", swp_methods, "comma list of methods to sweep");
    swp->add_option("--G-list", swp_g_list, "group sizes for gsd rows");
    swp->add_option("--k-list", swp_k_list, "amplify factors for amplify rows");
    swp->add_option("--eps-list", swp_eps_list, "addition offsets for addition rows");
    swp->add_option("--seeds", swp_seeds, "seed list: a..b or comma list");
    swp->add_option("--fid-len", swp_fid_len, "fidelity prefix length (0 disables)");
    swp->add_option("--fid-trials", swp_fid_trials, "fidelity Monte Carlo trials");
    swp->add_option("--fid-seed", swp_fid_seed, "fidelity trial seed");
    swp->add_option("--jobs", swp_jobs, "worker threads");
    swp->add_option("--out", swp_out, "output directory");
    swp->add_option("--config", swp_config, "JSON config file");
    swp->callback([&] {
        ConfigLayer cfg;
        cfg.load(swp_config);
        swp_model.apply_config(*swp, cfg);
        swp_args.apply_config(*swp, cfg);
        cfg.apply(*swp, "--methods", swp_methods);
        cfg.apply(*swp, "--G-list", swp_g_list);
        cfg.apply(*swp, "--k-list", swp_k_list);
        cfg.apply(*swp, "--eps-list", swp_eps_list);
        cfg.apply(*swp, "--seeds", swp_seeds);
        cfg.apply(*swp, "--fid-len", swp_fid_len);
        cfg.apply(*swp, "--fid-trials", swp_fid_trials);
        cfg.apply(*swp, "--fid-seed", swp_fid_seed);

        SweepPlan plan;
        plan.vocab = swp_model.vocab;
        plan.entropy_mix = swp_model.entropy_mix;
        plan.model_seed = swp_model.model_seed;
        plan.embed_dim = swp_model.embed_dim;
        plan.sigma = swp_model.sigma;
        plan.draft_len = swp_args.draft_len;
        plan.top_k = swp_args.top_k < 0 ? std::max(1, swp_model.vocab / 10) : swp_args.top_k;
        plan.temperature = swp_args.temperature;
        plan.max_len = swp_args.max_len;
        plan.prompt = parse_prompt(swp_args.prompt_text);
        plan.prob_threshold = swp_args.prob_threshold;
        plan.embed_threshold = swp_args.embed_threshold;
        plan.fidelity_len = swp_fid_len;
        plan.fidelity_trials = swp_fid_trials;
        plan.fidelity_seed = swp_fid_seed;

        for (const std::string& name : [&] {
                 std::vector<std::string> names;
                 std::string item;
                 std::istringstream stream(swp_methods);
                 while (std::getline(stream, item, ',')) {
                     if (!item.empty()) names.push_back(item);
                 }
                 return names;
             }()) {
            const Method method = method_from_string(name);
            if (method == Method::GSD) {
                for (int g : parse_number_list<int>(swp_g_list)) {
                    plan.methods.push_back(SweepMethodSpec{method, g});
                }
            } else if (method == Method::LossyAmplify) {
                for (double k : parse_number_list<double>(swp_k_list)) {
                    plan.methods.push_back(SweepMethodSpec{method, 1, k});
                }
            } else if (method == Method::LossyAddition) {
                for (double eps : parse_number_list<double>(swp_eps_list)) {
                    plan.methods.push_back(SweepMethodSpec{method, 1, 2.0, eps});
                }
            } else {
                plan.methods.push_back(SweepMethodSpec{method});
            }
        }

        const std::vector<std::uint64_t> seeds = parse_seed_list(swp_seeds);
        std::vector<SweepSeedRow> raw;
        std::vector<std::string> errors;
        const std::vector<SweepRow> rows = run_sweep(plan, seeds, swp_jobs, &raw, &errors);
        for (const std::string& e : errors) std::cerr << "sweep row failed: " << e << "\n";

        OutputDir out(swp_out);
        out.write_text("sweep_raw.csv", sweep_raw_csv(raw));
        out.write_text("sweep_summary.csv", sweep_summary_csv(rows));
        json snapshot = swp_args.snapshot();
        snapshot.update(swp_model.snapshot());
        snapshot["methods"] = swp_methods;
        snapshot["G-list"] = swp_g_list;
        snapshot["k-list"] = swp_k_list;
        snapshot["eps-list"] = swp_eps_list;
        snapshot["seeds"] = swp_seeds;
        snapshot["fid-len"] = swp_fid_len;
        snapshot["fid-trials"] = swp_fid_trials;
        finish_manifest(out, args, snapshot, seeds, started);
        if (rows.empty()) exit_code = 2;
    });

    // ---- diagnose ----
    auto* dia = app.add_subcommand("diagnose", "per-position diagnostics CSV");
    ModelArgs dia_model;
    DecodeArgs dia_args;
    int dia_positions = 128;
    std::string dia_out = default_out_dir();
    std::string dia_config;
    dia_model.add_flags(dia);
    dia_args.add_flags(dia);
    dia->add_option("--positions", dia_positions, "positions to walk");
    dia->add_option("--out", dia_out, "output directory");
    dia->add_option("--config", dia_config, "JSON config file");
    dia->callback([&] {
        ConfigLayer cfg;
        cfg.load(dia_config);
        dia_model.apply_config(*dia, cfg);
        dia_args.apply_config(*dia, cfg);
        cfg.apply(*dia, "--positions", dia_positions);

        const ToyModelBundle bundle = dia_model.load_or_generate();
        const DecodeConfig run_cfg = dia_args.resolve(bundle.markov.vocab_size());
        const PerturbedDraftModel draft(bundle.markov, dia_model.sigma,
                                        derive_seed(bundle.markov.seed(), 0x5344ULL));
        const ClusterStrategy strategy = resolve_strategy(dia_args.strategy, run_cfg, bundle);
        const DistanceMatrix dist = distance_matrix(bundle.embeddings);
        const std::vector<TokenId> prompt = parse_prompt(dia_args.prompt_text);

        const auto rows = diagnose_positions(bundle.markov, draft, strategy, &dist,
                                             dia_positions, run_cfg, prompt);
        OutputDir out(dia_out);
        out.write_text("diagnose.csv", diagnostics_csv(rows));
        json snapshot = dia_args.snapshot();
        snapshot.update(dia_model.snapshot());
        snapshot["positions"] = dia_positions;
        finish_manifest(out, args, snapshot, {run_cfg.seed}, started);
    });

    // ---- replay ----
    auto* rep = app.add_subcommand("replay", "re-run a recorded manifest");
    std::string rep_manifest;
    std::string rep_out = default_out_dir();
    rep->add_option("--manifest", rep_manifest, "manifest.json to replay")->required();
    rep->add_option("--out", rep_out, "output directory for the replayed run");
    rep->callback([&] { exit_code = run_replay(rep_manifest, rep_out); });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    return run_command(std::vector<std::string>(argv + 1, argv + argc));
}

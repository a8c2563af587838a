// Command-line front end for the probing decoder. Every run is fully
// determined by its flags plus seeds; metric outputs are byte-stable across
// reruns except for the wall_nanos field.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 internal
// invariant violation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "esp/esp.hpp"

namespace {

using namespace esp;

std::string default_model_path() {
    const char* env = std::getenv("ESP_MODEL");
    return env ? env : "";
}

// Branch grammar: "static:[K1,K2,...]" or "dynamic" (budget taken from
// --bc/--masks) or "dynamic:<bc>x<k>" pinning both.
void apply_branch_spec(const std::string& spec, EngineConfig& cfg) {
    if (spec.rfind("static:[", 0) == 0 && spec.back() == ']') {
        std::vector<int> widths;
        const std::string body = spec.substr(8, spec.size() - 9);
        size_t pos = 0;
        while (pos <= body.size()) {
            const size_t comma = std::min(body.find(',', pos), body.size());
            const std::string item = body.substr(pos, comma - pos);
            if (item.empty()) throw ConfigError("branch spec: empty width in " + spec);
            try {
                widths.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw ConfigError("branch spec: bad width '" + item + "'");
            }
            pos = comma + 1;
        }
        cfg.branch.mode = BranchMode::Static;
        cfg.branch.static_widths = widths;
        cfg.branch.k = static_cast<int>(widths.size());
        return;
    }
    if (spec == "dynamic") {
        cfg.branch.mode = BranchMode::Dynamic;
        cfg.branch.static_widths.clear();
        return;
    }
    if (spec.rfind("dynamic:", 0) == 0) {
        const std::string body = spec.substr(8);
        const size_t x = body.find('x');
        if (x == std::string::npos) throw ConfigError("branch spec: expected dynamic:<bc>x<k>");
        try {
            cfg.block_complexity = std::stoi(body.substr(0, x));
            cfg.mask_count = std::stoi(body.substr(x + 1));
        } catch (const std::exception&) {
            throw ConfigError("branch spec: bad dynamic form '" + spec + "'");
        }
        cfg.branch.mode = BranchMode::Dynamic;
        cfg.branch.static_widths.clear();
        return;
    }
    throw ConfigError("branch spec: expected static:[...] or dynamic, got '" + spec + "'");
}

struct DecodeFlags {
    std::string model_path = default_model_path();
    std::string prompt_text;
    std::string prompts_path;
    std::string out_path;
    std::string branch_spec;
    std::string init = "mean";
    int bc = 30;
    int masks = 1;
    float sample_scale = 0.0f;
    float lambda = 0.1f;
    float temperature = 0.0f;
    uint64_t seed = 0;
    int max_tokens = 64;
    int stop_token = -1;
    bool no_prune = false;
    bool naive_layout = false;
    bool efficient_layout = false;
};

EngineConfig resolve_engine_config(const DecodeFlags& flags) {
    EngineConfig cfg;
    cfg.block_complexity = flags.bc;
    cfg.mask_count = flags.masks;
    cfg.lambda = flags.lambda;
    cfg.sample_scale = flags.sample_scale;
    cfg.temperature = flags.temperature;
    cfg.seed = flags.seed;
    cfg.max_new_tokens = flags.max_tokens;
    cfg.pruning_enabled = !flags.no_prune;
    if (flags.stop_token >= 0) cfg.stop_token = flags.stop_token;

    if (flags.init == "mean") cfg.init = MaskInit::PromptMean;
    else if (flags.init == "lastk") cfg.init = MaskInit::LastK;
    else if (flags.init == "sample") cfg.init = MaskInit::GaussianSample;
    else throw ConfigError("unknown --init '" + flags.init + "' (mean|lastk|sample)");

    if (!flags.branch_spec.empty()) {
        apply_branch_spec(flags.branch_spec, cfg);
        if (cfg.branch.mode == BranchMode::Static) {
            cfg.mask_count = cfg.branch.k;
        } else {
            cfg.branch.k = cfg.mask_count;
        }
    } else if (flags.masks == 1 && flags.bc % 2 == 0 && flags.bc >= 4) {
        // One probe leaves a single maximal width: bc = 2*(1+K).
        cfg.branch.mode = BranchMode::Static;
        cfg.branch.k = 1;
        cfg.branch.static_widths = {flags.bc / 2 - 1};
    } else {
        cfg.branch.mode = BranchMode::Dynamic;
        cfg.branch.k = cfg.mask_count;
    }

    if (flags.naive_layout && flags.efficient_layout) {
        throw ConfigError("--naive-layout conflicts with --efficient-layout");
    }
    if (cfg.branch.mode == BranchMode::Dynamic) {
        if (flags.efficient_layout) {
            throw ConfigError("efficient layout requires static branching");
        }
        if (!flags.naive_layout) {
            std::cerr << "warning: dynamic branching forces the naive layout path\n";
        }
        cfg.efficient_layout = false;
    } else {
        cfg.efficient_layout = !flags.naive_layout;
    }
    cfg.validate();
    return cfg;
}

std::vector<PromptRecord> resolve_prompts(const DecodeFlags& flags) {
    if (!flags.prompts_path.empty()) return load_prompts(flags.prompts_path);
    if (flags.prompt_text.empty()) {
        throw ConfigError("need --prompt or --prompts");
    }
    PromptRecord rec;
    rec.id = "cli";
    rec.text = flags.prompt_text;
    rec.tokens = encode(flags.prompt_text);
    return {rec};
}

FrozenModel load_model_checked(const std::string& path) {
    if (path.empty()) {
        throw ConfigError("no model given: pass --model or set ESP_MODEL");
    }
    return load_model(path);
}

void add_model_flag(CLI::App* cmd, DecodeFlags& flags) {
    cmd->add_option("--model", flags.model_path, "weights file (default: $ESP_MODEL)");
}

void print_summary(const BenchSummary& summary) {
    std::cout << std::left << std::setw(12) << "method" << std::right << std::setw(10)
              << "mean_tau" << std::setw(12) << "mean_calls" << std::setw(16) << "call_reduction"
              << "\n";
    for (const BenchRow& row : summary.rows) {
        std::cout << std::left << std::setw(12) << row.method << std::right << std::setw(10)
                  << std::fixed << std::setprecision(4) << row.mean_tau << std::setw(12)
                  << std::setprecision(2) << row.mean_calls << std::setw(16)
                  << std::setprecision(4) << row.call_reduction << "\n";
    }
}

int run(int argc, char** argv) {
    CLI::App app{"speculative decoding engine driven by embedding-space probes"};
    app.require_subcommand(1);

    // ---- gen-model ----
    auto* gen = app.add_subcommand("gen-model", "write a weights file");
    std::string preset = "toy";
    std::string gen_out;
    ModelConfig toy;
    int succ_vocab = 16, succ_stride = 1;
    gen->add_option("--preset", preset, "toy|successor")->check(CLI::IsMember({"toy",
                                                                               "successor"}));
    gen->add_option("--out", gen_out, "output path")->required();
    gen->add_option("--vocab", toy.vocab_size, "vocab size (toy) or chain vocab (successor)");
    gen->add_option("--dim", toy.model_dim, "model dim (toy)");
    gen->add_option("--layers", toy.num_layers, "layers (toy)");
    gen->add_option("--heads", toy.num_heads, "heads (toy)");
    gen->add_option("--ffn", toy.ffn_dim, "ffn dim (toy)");
    gen->add_option("--rope-base", toy.rope_base, "rotary base (toy)");
    gen->add_option("--seed", toy.seed, "weights seed (toy)");
    gen->add_option("--stride", succ_stride, "chain stride (successor)");
    gen->callback([&] {
        FrozenModel model;
        if (preset == "toy") {
            model = build_random_model(toy);
        } else {
            if (gen->count("--vocab")) succ_vocab = toy.vocab_size;
            model = build_successor_model(succ_vocab, succ_stride);
        }
        save_model(model, gen_out);
        std::cout << "wrote " << gen_out << "\n";
    });

    // ---- decode ----
    auto* dec = app.add_subcommand("decode", "probing speculative decode");
    DecodeFlags flags;
    add_model_flag(dec, flags);
    dec->add_option("--prompt", flags.prompt_text, "inline prompt text");
    dec->add_option("--prompts", flags.prompts_path, "prompt corpus (jsonl or plain)");
    dec->add_option("--bc", flags.bc, "block complexity");
    dec->add_option("--masks", flags.masks, "probe count k");
    dec->add_option("--branch", flags.branch_spec, "static:[K1,K2,...] | dynamic");
    dec->add_option("--init", flags.init, "mean|lastk|sample");
    dec->add_option("--sample-scale", flags.sample_scale, "sigma offset for sample init");
    dec->add_option("--lambda", flags.lambda, "probe EMA rate");
    dec->add_option("--temp", flags.temperature, "temperature (0 = greedy)");
    dec->add_option("--seed", flags.seed, "sampling seed");
    dec->add_option("--max-tokens", flags.max_tokens, "tokens to generate");
    dec->add_option("--stop-token", flags.stop_token, "stop token id (default none)");
    dec->add_flag("--no-prune", flags.no_prune, "disable duplicate pruning");
    dec->add_flag("--naive-layout", flags.naive_layout, "rebuild the layout every step");
    dec->add_flag("--efficient-layout", flags.efficient_layout,
                  "insist on the incremental layout path");
    dec->add_option("--out", flags.out_path, "append RunRecords to this jsonl");
    dec->callback([&] {
        const EngineConfig cfg = resolve_engine_config(flags);  // fail before model i/o
        const std::vector<PromptRecord> prompts = resolve_prompts(flags);
        const FrozenModel model = load_model_checked(flags.model_path);
        std::vector<RunRecord> records;
        for (const PromptRecord& prompt : prompts) {
            const DecodeResult result = decode(model, prompt.tokens, cfg, prompt.id);
            std::cout << decode_lossy_utf8(result.tokens) << "\n";
            std::cerr << "[" << prompt.id << "] tau=" << std::fixed << std::setprecision(4)
                      << result.record.tau << " calls=" << result.record.model_calls << "\n";
            records.push_back(result.record);
        }
        if (!flags.out_path.empty()) write_metrics(records, flags.out_path);
    });

    // ---- baseline ----
    auto* base = app.add_subcommand("baseline", "plain or prompt-lookup decoding");
    DecodeFlags bflags;
    std::string method = "ar";
    int pld_ngram = 3, pld_depth = 10;
    add_model_flag(base, bflags);
    base->add_option("--method", method, "ar|pld")->check(CLI::IsMember({"ar", "pld"}));
    base->add_option("--prompt", bflags.prompt_text, "inline prompt text");
    base->add_option("--prompts", bflags.prompts_path, "prompt corpus");
    base->add_option("--temp", bflags.temperature, "temperature");
    base->add_option("--seed", bflags.seed, "sampling seed");
    base->add_option("--max-tokens", bflags.max_tokens, "tokens to generate");
    base->add_option("--stop-token", bflags.stop_token, "stop token id");
    base->add_option("--ngram", pld_ngram, "pld n-gram size");
    base->add_option("--depth", pld_depth, "pld draft depth");
    base->add_option("--out", bflags.out_path, "append RunRecords to this jsonl");
    base->callback([&] {
        const std::vector<PromptRecord> prompts = resolve_prompts(bflags);
        const FrozenModel model = load_model_checked(bflags.model_path);
        std::optional<TokenId> stop;
        if (bflags.stop_token >= 0) stop = bflags.stop_token;
        std::vector<RunRecord> records;
        for (const PromptRecord& prompt : prompts) {
            DecodeResult result;
            if (method == "ar") {
                result = decode_autoregressive(model, prompt.tokens, bflags.temperature,
                                               bflags.seed, bflags.max_tokens, stop, prompt.id);
            } else {
                PldConfig cfg;
                cfg.ngram = pld_ngram;
                cfg.draft_depth = pld_depth;
                cfg.temperature = bflags.temperature;
                cfg.seed = bflags.seed;
                cfg.max_new_tokens = bflags.max_tokens;
                cfg.stop_token = stop;
                result = decode_pld(model, prompt.tokens, cfg, prompt.id);
            }
            std::cout << decode_lossy_utf8(result.tokens) << "\n";
            std::cerr << "[" << prompt.id << "] tau=" << std::fixed << std::setprecision(4)
                      << result.record.tau << " calls=" << result.record.model_calls << "\n";
            records.push_back(result.record);
        }
        if (!bflags.out_path.empty()) write_metrics(records, bflags.out_path);
    });

    // ---- bench ----
    auto* bench = app.add_subcommand("bench", "ar/pld/probing sweep over a corpus");
    std::string bench_model = default_model_path(), bench_prompts, bench_out, suite = "default";
    float bench_temp = 0.0f;
    uint64_t bench_seed = 0;
    int bench_max = 64;
    bench->add_option("--model", bench_model, "weights file (default: $ESP_MODEL)");
    bench->add_option("--prompts", bench_prompts, "prompt corpus")->required();
    bench->add_option("--suite", suite, "config suite (default)");
    bench->add_option("--out", bench_out, "output directory")->required();
    bench->add_option("--temp", bench_temp, "temperature");
    bench->add_option("--seed", bench_seed, "sampling seed");
    bench->add_option("--max-tokens", bench_max, "tokens per run");
    bench->callback([&] {
        if (suite != "default") throw ConfigError("unknown suite '" + suite + "'");
        const std::vector<PromptRecord> prompts = load_prompts(bench_prompts);
        const FrozenModel model = load_model_checked(bench_model);
        std::filesystem::create_directories(bench_out);

        // One probe carries bc 10 and 30; two probes carry bc 60.
        std::vector<EngineConfig> configs(3);
        configs[0].block_complexity = 10;
        configs[0].branch.static_widths = {4};
        configs[1].block_complexity = 30;
        configs[1].branch.static_widths = {14};
        configs[2].block_complexity = 60;
        configs[2].mask_count = 2;
        configs[2].branch.static_widths = {15, 4};
        configs[2].branch.k = 2;
        for (EngineConfig& cfg : configs) cfg.validate();

        const std::string metrics_path =
            (std::filesystem::path(bench_out) / "metrics.jsonl").string();
        const BenchSummary summary =
            run_bench(model, prompts, configs, metrics_path, bench_temp, bench_seed, bench_max);
        print_summary(summary);
        std::ofstream sf(std::filesystem::path(bench_out) / "summary.txt");
        for (const BenchRow& row : summary.rows) {
            sf << row.method << " mean_tau=" << std::setprecision(10) << row.mean_tau
               << " mean_calls=" << row.mean_calls << " call_reduction=" << row.call_reduction
               << "\n";
        }
    });

    // ---- diagnose ----
    auto* diag = app.add_subcommand("diagnose", "per-layer probe/true cosine traces");
    std::string diag_model = default_model_path(), diag_prompts, diag_prompt, diag_out;
    int horizon = 16;
    float diag_lambda = 0.1f;
    diag->add_option("--model", diag_model, "weights file (default: $ESP_MODEL)");
    diag->add_option("--prompt", diag_prompt, "inline prompt text");
    diag->add_option("--prompts", diag_prompts, "prompt corpus");
    diag->add_option("--horizon", horizon, "generation positions to trace");
    diag->add_option("--lambda", diag_lambda, "probe EMA rate");
    diag->add_option("--out", diag_out, "trace jsonl")->required();
    diag->callback([&] {
        DecodeFlags pf;
        pf.prompt_text = diag_prompt;
        pf.prompts_path = diag_prompts;
        const std::vector<PromptRecord> prompts = resolve_prompts(pf);
        const FrozenModel model = load_model_checked(diag_model);
        std::ofstream os(diag_out);
        if (!os) throw IoError("cannot open " + diag_out);
        for (const PromptRecord& prompt : prompts) {
            for (const CosTraceRecord& rec :
                 cosine_trace(model, prompt.tokens, horizon, diag_lambda, prompt.id)) {
                os << to_json(rec).dump() << "\n";
            }
        }
    });

    // ---- lemma ----
    auto* lemma = app.add_subcommand("lemma", "top-K containment monte carlo");
    int64_t trials = 10000;
    int lemma_d = 16, lemma_v = 64;
    std::vector<int> topk = {1, 4, 8};
    uint64_t lemma_seed = 0;
    std::string lemma_out;
    lemma->add_option("--trials", trials, "instances per K");
    lemma->add_option("--dim", lemma_d, "hidden dim");
    lemma->add_option("--vocab", lemma_v, "head width");
    lemma->add_option("--topk", topk, "K values");
    lemma->add_option("--seed", lemma_seed, "draw seed");
    lemma->add_option("--out", lemma_out, "report jsonl");
    lemma->callback([&] {
        std::ofstream os;
        if (!lemma_out.empty()) {
            os.open(lemma_out);
            if (!os) throw IoError("cannot open " + lemma_out);
        }
        bool clean = true;
        for (int K : topk) {
            const MonteCarloResult r = lemma_monte_carlo(trials, lemma_d, lemma_v, K, lemma_seed);
            std::cout << "K=" << K << " trials=" << r.trials
                      << " hypothesis_satisfied=" << r.hypothesis_satisfied
                      << " counterexamples=" << r.counterexamples << "\n";
            clean = clean && r.counterexamples == 0;
            if (os.is_open()) {
                os << nlohmann::json{{"K", K},
                                     {"trials", r.trials},
                                     {"hypothesis_satisfied", r.hypothesis_satisfied},
                                     {"counterexamples", r.counterexamples}}
                          .dump()
                   << "\n";
            }
        }
        if (!clean) throw InternalError("containment counterexample found");
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}

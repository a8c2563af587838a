#pragma once

// Weights persistence, prompt corpus ingestion, and metrics output.
//
// Weights file (little-endian):
//   magic "ESPW" | u32 version | u32 vocab_size | u32 model_dim
//   | u32 num_layers | u32 num_heads | u32 ffn_dim | f32 rope_base | u64 seed
//   | tensors as raw f32 arrays in this order:
//       embedding,
//       per layer: attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down,
//       final_norm, lm_head.
// The file stores exactly the bytes compute uses; save/load round-trips
// bit-identically.

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "esp/model.hpp"
#include "esp/tokenizer.hpp"

static_assert(std::endian::native == std::endian::little,
              "weights format assumes a little-endian host");

namespace esp {

inline constexpr uint32_t kWeightsVersion = 1;

struct PromptRecord {
    std::string id;
    std::string text;
    std::vector<TokenId> tokens;
};

struct RunRecord {
    std::string prompt_id;
    std::string method;
    std::string config;
    std::vector<TokenId> output_tokens;
    double tau = 0.0;
    int64_t model_calls = 0;
    std::map<int, int64_t> accepted_histogram;  // accepted-per-call -> count
    int64_t wall_nanos = 0;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw IoError(std::string("weights file truncated while reading ") + what);
    }
    return value;
}

inline void write_tensor(std::ostream& os, const std::vector<float>& t) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
}

inline void read_tensor(std::istream& is, std::vector<float>& t, size_t n, const char* name) {
    t.resize(n);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(n * sizeof(float)))) {
        std::ostringstream msg;
        msg << "weights file truncated in tensor " << name << ": expected " << n * sizeof(float)
            << " bytes, got " << is.gcount();
        throw IoError(msg.str());
    }
}

}  // namespace detail

inline void save_model(const FrozenModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("ESPW", 4);
    detail::write_pod<uint32_t>(os, kWeightsVersion);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(model.config.vocab_size));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(model.config.model_dim));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(model.config.num_layers));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(model.config.num_heads));
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(model.config.ffn_dim));
    detail::write_pod<float>(os, model.config.rope_base);
    detail::write_pod<uint64_t>(os, model.config.seed);
    detail::write_tensor(os, model.embedding);
    for (const LayerWeights& lw : model.layers) {
        detail::write_tensor(os, lw.attn_norm);
        detail::write_tensor(os, lw.wq);
        detail::write_tensor(os, lw.wk);
        detail::write_tensor(os, lw.wv);
        detail::write_tensor(os, lw.wo);
        detail::write_tensor(os, lw.ffn_norm);
        detail::write_tensor(os, lw.w_gate);
        detail::write_tensor(os, lw.w_up);
        detail::write_tensor(os, lw.w_down);
    }
    detail::write_tensor(os, model.final_norm);
    detail::write_tensor(os, model.lm_head);
    if (!os) throw IoError("write failed: " + path);
}

inline FrozenModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "ESPW", 4) != 0) {
        throw IoError("bad magic in weights file: " + path);
    }
    const uint32_t version = detail::read_pod<uint32_t>(is, "version");
    if (version != kWeightsVersion) {
        throw IoError("weights version mismatch: file has " + std::to_string(version) +
                      ", expected " + std::to_string(kWeightsVersion));
    }
    FrozenModel m;
    m.config.vocab_size = static_cast<int>(detail::read_pod<uint32_t>(is, "vocab_size"));
    m.config.model_dim = static_cast<int>(detail::read_pod<uint32_t>(is, "model_dim"));
    m.config.num_layers = static_cast<int>(detail::read_pod<uint32_t>(is, "num_layers"));
    m.config.num_heads = static_cast<int>(detail::read_pod<uint32_t>(is, "num_heads"));
    m.config.ffn_dim = static_cast<int>(detail::read_pod<uint32_t>(is, "ffn_dim"));
    m.config.rope_base = detail::read_pod<float>(is, "rope_base");
    m.config.seed = detail::read_pod<uint64_t>(is, "seed");
    try {
        m.config.validate();
    } catch (const ConfigError& e) {
        throw IoError(std::string("weights file carries invalid dimensions: ") + e.what());
    }
    const size_t d = static_cast<size_t>(m.config.model_dim);
    const size_t V = static_cast<size_t>(m.config.vocab_size);
    const size_t ffn = static_cast<size_t>(m.config.ffn_dim);
    detail::read_tensor(is, m.embedding, V * d, "embedding");
    m.layers.resize(m.config.num_layers);
    for (LayerWeights& lw : m.layers) {
        detail::read_tensor(is, lw.attn_norm, d, "attn_norm");
        detail::read_tensor(is, lw.wq, d * d, "wq");
        detail::read_tensor(is, lw.wk, d * d, "wk");
        detail::read_tensor(is, lw.wv, d * d, "wv");
        detail::read_tensor(is, lw.wo, d * d, "wo");
        detail::read_tensor(is, lw.ffn_norm, d, "ffn_norm");
        detail::read_tensor(is, lw.w_gate, d * ffn, "w_gate");
        detail::read_tensor(is, lw.w_up, d * ffn, "w_up");
        detail::read_tensor(is, lw.w_down, ffn * d, "w_down");
    }
    detail::read_tensor(is, m.final_norm, d, "final_norm");
    detail::read_tensor(is, m.lm_head, d * V, "lm_head");
    char extra;
    if (is.read(&extra, 1)) throw IoError("weights file has trailing bytes: " + path);
    return m;
}

// JSONL with {id, text} objects, or plain text with one prompt per line
// (id = 1-based line number). Empty lines are skipped either way.
inline std::vector<PromptRecord> load_prompts(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open prompts file: " + path);
    std::vector<PromptRecord> prompts;
    std::string line;
    int line_no = 0;
    bool jsonl = false, mode_known = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (!mode_known) {
            jsonl = line.front() == '{';
            mode_known = true;
        }
        PromptRecord rec;
        if (jsonl) {
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("text")) {
                throw IoError("malformed JSON prompt at line " + std::to_string(line_no) + " of " +
                              path);
            }
            rec.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
            rec.text = j["text"].get<std::string>();
        } else {
            rec.id = std::to_string(line_no);
            rec.text = line;
        }
        rec.tokens = encode(rec.text);
        prompts.push_back(std::move(rec));
    }
    return prompts;
}

inline nlohmann::json to_json(const RunRecord& r) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [depth, count] : r.accepted_histogram) {
        hist[std::to_string(depth)] = count;
    }
    return nlohmann::json{{"prompt_id", r.prompt_id},
                          {"method", r.method},
                          {"config", r.config},
                          {"output_tokens", r.output_tokens},
                          {"tau", r.tau},
                          {"model_calls", r.model_calls},
                          {"accepted_histogram", hist},
                          {"wall_nanos", r.wall_nanos}};
}

inline void write_metrics(const std::vector<RunRecord>& records, const std::string& path) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw IoError("cannot open metrics file: " + path);
    for (const RunRecord& r : records) os << to_json(r).dump() << "\n";
    if (!os) throw IoError("metrics write failed: " + path);
}

}  // namespace esp

#pragma once

// Byte-level tokenizer: one token per byte, id == byte value. Pairs with the
// default vocab of 256 and keeps acceptance-length measurements independent
// of any trained vocabulary.

#include <string>
#include <vector>

#include "esp/common.hpp"

namespace esp {

inline std::vector<TokenId> encode(const std::string& text) {
    std::vector<TokenId> tokens;
    tokens.reserve(text.size());
    for (unsigned char b : text) tokens.push_back(static_cast<TokenId>(b));
    return tokens;
}

inline std::string decode(const std::vector<TokenId>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
        if (t < 0 || t > 255) throw ConfigError("decode: token id out of byte range");
        out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
}

// Display form only: raw bytes stay authoritative in records.
inline std::string decode_lossy_utf8(const std::vector<TokenId>& tokens) {
    const std::string raw = decode(tokens);
    std::string out;
    size_t i = 0;
    auto is_cont = [&](size_t j) { return j < raw.size() && (raw[j] & 0xc0) == 0x80; };
    while (i < raw.size()) {
        const unsigned char b = raw[i];
        size_t len = 0;
        if (b < 0x80) len = 1;
        else if ((b & 0xe0) == 0xc0) len = 2;
        else if ((b & 0xf0) == 0xe0) len = 3;
        else if ((b & 0xf8) == 0xf0) len = 4;
        bool ok = len > 0;
        for (size_t j = 1; ok && j < len; ++j) ok = is_cont(i + j);
        if (ok) {
            out.append(raw, i, len);
            i += len;
        } else {
            out.append("\xef\xbf\xbd");  // U+FFFD
            ++i;
        }
    }
    return out;
}

}  // namespace esp

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace ctxsent {

// Word-level vocabulary. Indices 0-3 are fixed special tokens.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;

    // Builds the vocabulary from a corpus of text: specials plus the most
    // frequent lowercase word types, frequency ties broken lexicographically.
    static Vocab train(const std::vector<std::string>& corpus, int target_size);

    static Vocab load(const std::string& path);
    void save(const std::string& path) const;

    int size() const { return static_cast<int>(tokens_.size()); }
    int id_of(const std::string& token) const; // kUnk when absent
    const std::string& token_of(int id) const;

    // Lowercases and splits on anything that is not alphanumeric.
    static std::vector<std::string> word_split(const std::string& text);

    // FNV-1a over the token list; stored in checkpoints to detect vocab drift.
    uint64_t content_hash() const;

private:
    Vocab();
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    void push(const std::string& tok);
};

// One encoded (context, text) pair: fixed-length id/segment/mask rows laid
// out as CLS, context, SEP, text, SEP, padding.
struct Encoding {
    std::vector<int> token_ids;
    std::vector<int> segment_ids;   // 0 = context span incl. CLS and first SEP
    std::vector<int> attention_mask; // 1 = real token
};

// Over-length input is truncated from the end of the text span first, then
// from the end of the context; both SEP tokens and at least one text token
// are always kept.
Encoding encode_pair(const Vocab& vocab, const std::string& context,
                     const std::string& text, int max_len);

} // namespace ctxsent

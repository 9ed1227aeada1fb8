#include "ctxsent/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "ctxsent/error.hpp"

namespace ctxsent {

namespace {
const char* kSpecials[4] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
}

Vocab::Vocab() {
    for (const char* s : kSpecials) push(s);
}

void Vocab::push(const std::string& tok) {
    index_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(tok);
}

std::vector<std::string> Vocab::word_split(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab Vocab::train(const std::vector<std::string>& corpus, int target_size) {
    if (corpus.empty()) throw ValidationError("train_vocab: empty corpus");
    if (target_size < 8) throw ValidationError("train_vocab: target_size must be >= 8");
    std::map<std::string, int64_t> freq; // ordered map gives the lexicographic tie order
    for (const auto& line : corpus)
        for (const auto& tok : word_split(line)) freq[tok] += 1;

    std::vector<std::pair<std::string, int64_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab v;
    for (const auto& [tok, count] : items) {
        (void)count;
        if (v.size() >= target_size) break;
        v.push(tok);
    }
    return v;
}

int Vocab::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size()) throw ValidationError("token id out of range");
    return tokens_[static_cast<size_t>(id)];
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write vocab file: " + path);
    for (const auto& tok : tokens_) out << tok << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot read vocab file: " + path);
    Vocab v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno <= 4) {
            if (line != kSpecials[lineno - 1])
                throw ValidationError("vocab file line " + std::to_string(lineno) +
                                      ": expected special token " + kSpecials[lineno - 1]);
            continue;
        }
        if (line.empty())
            throw ValidationError("vocab file line " + std::to_string(lineno) + ": empty token");
        if (v.index_.count(line))
            throw ValidationError("vocab file line " + std::to_string(lineno) + ": duplicate token");
        v.push(line);
    }
    if (lineno < 4) throw ValidationError("vocab file is missing the special-token header");
    return v;
}

uint64_t Vocab::content_hash() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& tok : tokens_) {
        for (unsigned char c : tok) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0x0a;
        h *= 1099511628211ULL;
    }
    return h;
}

Encoding encode_pair(const Vocab& vocab, const std::string& context,
                     const std::string& text, int max_len) {
    if (max_len < 8) throw ValidationError("encode_pair: max_len must be >= 8");
    auto ctx_words = Vocab::word_split(context);
    auto txt_words = Vocab::word_split(text);
    if (ctx_words.empty()) throw ValidationError("encode_pair: empty context");
    if (txt_words.empty()) throw ValidationError("encode_pair: empty text");

    // Budget: CLS + ctx + SEP + txt + SEP <= max_len. Truncate text tail
    // first, keeping at least one text token; then the context tail.
    int budget = max_len - 3;
    int n_ctx = static_cast<int>(ctx_words.size());
    int n_txt = static_cast<int>(txt_words.size());
    if (n_ctx + n_txt > budget) {
        n_txt = std::max(1, budget - n_ctx);
        if (n_ctx + n_txt > budget) n_ctx = budget - n_txt;
    }

    Encoding e;
    e.token_ids.assign(static_cast<size_t>(max_len), Vocab::kPad);
    e.segment_ids.assign(static_cast<size_t>(max_len), 0);
    e.attention_mask.assign(static_cast<size_t>(max_len), 0);

    int pos = 0;
    auto put = [&](int id, int seg) {
        e.token_ids[static_cast<size_t>(pos)] = id;
        e.segment_ids[static_cast<size_t>(pos)] = seg;
        e.attention_mask[static_cast<size_t>(pos)] = 1;
        ++pos;
    };
    put(Vocab::kCls, 0);
    for (int i = 0; i < n_ctx; ++i) put(vocab.id_of(ctx_words[static_cast<size_t>(i)]), 0);
    put(Vocab::kSep, 0);
    for (int i = 0; i < n_txt; ++i) put(vocab.id_of(txt_words[static_cast<size_t>(i)]), 1);
    put(Vocab::kSep, 1);
    return e;
}

} // namespace ctxsent

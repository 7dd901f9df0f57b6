#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "veridian/data_ingest.hpp"

namespace veridian {

// Lowercases ASCII letters, drops emoji code points (U+1F000..U+1FAFF,
// U+2600..U+27BF, U+FE0F), drops whitespace-delimited tokens starting with
// http://, https:// or www., collapses whitespace and trims. Idempotent.
std::string clean_text(std::string_view raw);

// Whitespace split; each of . , ! ? ; : ( ) " ' becomes its own token.
std::vector<std::string> tokenize(std::string_view cleaned);

bool is_punctuation_token(std::string_view token) noexcept;

using TokenId = std::int32_t;

class Vocabulary {
public:
    static constexpr TokenId pad_id = 0;
    static constexpr TokenId unk_id = 1;
    static constexpr TokenId cls_id = 2;
    static constexpr std::size_t reserved_count = 3;
    static constexpr std::string_view pad_token = "[PAD]";
    static constexpr std::string_view unk_token = "[UNK]";
    static constexpr std::string_view cls_token = "[CLS]";

    // Reserved tokens only.
    Vocabulary();

    // Appends a token with the next id; returns the existing id if present.
    TokenId add(const std::string& token);

    TokenId id_of(std::string_view token) const;
    bool contains(std::string_view token) const;
    const std::string& token_of(TokenId id) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    // `token<TAB>id` per line, ordered by id.
    std::string serialize() const;
    static Vocabulary parse(std::string_view content);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    // FNV-1a over serialize(); used to tie checkpoints to a vocabulary.
    std::uint64_t fingerprint() const;

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.tokens_ == b.tokens_;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

// Counts tokens over cleaned+tokenized record texts; keeps tokens seen at
// least `min_freq` times, ordered by (frequency desc, token asc), capped at
// `max_size` entries including the reserved ones.
Vocabulary build_vocab(const Dataset& corpus, std::size_t min_freq,
                       std::size_t max_size);

struct TokenSequence {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> mask; // 1 = real token
    std::size_t original_length = 0;

    std::size_t length() const noexcept { return ids.size(); }
    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// [CLS] + token ids (UNK for out-of-vocabulary), truncated or PAD-extended
// to max_length.
TokenSequence encode(const std::vector<std::string>& tokens,
                     const Vocabulary& vocab, std::size_t max_length);

TokenSequence encode_text(std::string_view raw, const Vocabulary& vocab,
                          std::size_t max_length);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

} // namespace veridian

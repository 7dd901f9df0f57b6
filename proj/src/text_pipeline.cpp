#include "veridian/text_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "veridian/error.hpp"

namespace veridian {

namespace {

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
}

bool is_emoji(char32_t cp) {
    return (cp >= 0x1F000 && cp <= 0x1FAFF) || (cp >= 0x2600 && cp <= 0x27BF) ||
           cp == 0xFE0F;
}

// Length of the UTF-8 sequence starting at s[i] and its code point. Invalid
// lead bytes are reported as a single byte with a sentinel code point so
// they pass through untouched.
std::size_t decode_utf8(std::string_view s, std::size_t i, char32_t& cp) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (b0 < 0x80) {
        cp = b0;
        return 1;
    }
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        cp = 0xFFFFFFFF;
        return 1;
    }
    if (i + len > s.size()) {
        cp = 0xFFFFFFFF;
        return 1;
    }
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) {
            cp = 0xFFFFFFFF;
            return 1;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    return len;
}

bool is_url(std::string_view token) {
    return token.starts_with("http://") || token.starts_with("https://") ||
           token.starts_with("www.");
}

constexpr std::string_view kPunctuation = ".,!?;:()\"'";

} // namespace

std::string clean_text(std::string_view raw) {
    // Lowercase and strip emoji first so that the URL rule sees the final
    // form of every token; otherwise a second pass could remove more.
    std::string stripped;
    stripped.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size();) {
        char32_t cp = 0;
        const std::size_t len = decode_utf8(raw, i, cp);
        if (!is_emoji(cp)) {
            for (std::size_t k = 0; k < len; ++k) {
                char c = raw[i + k];
                if (c >= 'A' && c <= 'Z') {
                    c = static_cast<char>(c - 'A' + 'a');
                }
                stripped.push_back(c);
            }
        }
        i += len;
    }

    std::string out;
    out.reserve(stripped.size());
    std::size_t i = 0;
    while (i < stripped.size()) {
        while (i < stripped.size() &&
               is_space(static_cast<unsigned char>(stripped[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < stripped.size() &&
               !is_space(static_cast<unsigned char>(stripped[i]))) {
            ++i;
        }
        if (start == i) {
            break;
        }
        const std::string_view token(stripped.data() + start, i - start);
        if (is_url(token)) {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out.append(token);
    }
    return out;
}

bool is_punctuation_token(std::string_view token) noexcept {
    return token.size() == 1 && kPunctuation.find(token[0]) != std::string_view::npos;
}

std::vector<std::string> tokenize(std::string_view cleaned) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    };
    for (char c : cleaned) {
        if (is_space(static_cast<unsigned char>(c))) {
            flush();
        } else if (kPunctuation.find(c) != std::string_view::npos) {
            flush();
            tokens.emplace_back(1, c);
        } else {
            current.push_back(c);
        }
    }
    flush();
    return tokens;
}

Vocabulary::Vocabulary() {
    add(std::string(pad_token));
    add(std::string(unk_token));
    add(std::string(cls_token));
}

TokenId Vocabulary::add(const std::string& token) {
    const auto it = index_.find(token);
    if (it != index_.end()) {
        return it->second;
    }
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

TokenId Vocabulary::id_of(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? unk_id : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
    return index_.find(std::string(token)) != index_.end();
}

const std::string& Vocabulary::token_of(TokenId id) const {
    return tokens_.at(static_cast<std::size_t>(id));
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        out += tokens_[i];
        out.push_back('\t');
        out += std::to_string(i);
        out.push_back('\n');
    }
    return out;
}

Vocabulary Vocabulary::parse(std::string_view content) {
    Vocabulary vocab;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        std::size_t end = content.find('\n', pos);
        if (end == std::string_view::npos) {
            end = content.size();
        }
        std::string_view line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.empty()) {
            continue;
        }
        const auto tab = line.rfind('\t');
        if (tab == std::string_view::npos) {
            throw Error(ErrorCode::MalformedRow, "vocabulary line without tab",
                        line_no);
        }
        const std::string token(line.substr(0, tab));
        const std::string id_text(line.substr(tab + 1));
        std::size_t id = 0;
        try {
            std::size_t used = 0;
            id = std::stoul(id_text, &used);
            if (used != id_text.size()) {
                throw std::invalid_argument(id_text);
            }
        } catch (const std::exception&) {
            throw Error(ErrorCode::MalformedRow, "bad vocabulary id", line_no);
        }
        const std::size_t expected = line_no - 1;
        if (id != expected) {
            throw Error(ErrorCode::MalformedRow, "vocabulary ids must be 0..n-1 in order",
                        line_no);
        }
        if (id < reserved_count) {
            if (token != vocab.tokens_[id]) {
                throw Error(ErrorCode::MalformedRow,
                            "reserved token mismatch", line_no);
            }
            continue;
        }
        if (vocab.contains(token)) {
            throw Error(ErrorCode::MalformedRow, "duplicate vocabulary token",
                        line_no);
        }
        vocab.add(token);
    }
    return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingFile, path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::uint64_t Vocabulary::fingerprint() const { return fnv1a64(serialize()); }

Vocabulary build_vocab(const Dataset& corpus, std::size_t min_freq,
                       std::size_t max_size) {
    std::map<std::string, std::size_t> counts;
    for (const auto& rec : corpus.records) {
        for (auto& tok : tokenize(clean_text(rec.text))) {
            ++counts[std::move(tok)];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [tok, n] : counts) {
        if (n >= std::max<std::size_t>(min_freq, 1)) {
            ranked.emplace_back(tok, n);
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) {
                         if (a.second != b.second) {
                             return a.second > b.second;
                         }
                         return a.first < b.first;
                     });
    const std::size_t room =
        max_size > Vocabulary::reserved_count ? max_size - Vocabulary::reserved_count : 0;
    if (ranked.size() > room) {
        ranked.resize(room);
    }
    Vocabulary vocab;
    for (const auto& [tok, n] : ranked) {
        vocab.add(tok);
    }
    return vocab;
}

TokenSequence encode(const std::vector<std::string>& tokens,
                     const Vocabulary& vocab, std::size_t max_length) {
    if (max_length < 2) {
        throw Error(ErrorCode::BadMaxLength,
                    "max_length must be >= 2, got " + std::to_string(max_length));
    }
    TokenSequence seq;
    seq.ids.assign(max_length, Vocabulary::pad_id);
    seq.mask.assign(max_length, 0);
    seq.ids[0] = Vocabulary::cls_id;
    seq.mask[0] = 1;
    const std::size_t n = std::min(tokens.size(), max_length - 1);
    for (std::size_t i = 0; i < n; ++i) {
        seq.ids[i + 1] = vocab.id_of(tokens[i]);
        seq.mask[i + 1] = 1;
    }
    seq.original_length = n + 1;
    return seq;
}

TokenSequence encode_text(std::string_view raw, const Vocabulary& vocab,
                          std::size_t max_length) {
    return encode(tokenize(clean_text(raw)), vocab, max_length);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace veridian

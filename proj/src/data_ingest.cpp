#include "veridian/data_ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "veridian/error.hpp"
#include "veridian/random.hpp"
#include "veridian/text_pipeline.hpp"

namespace veridian {

std::string_view to_string(Domain domain) noexcept {
    switch (domain) {
    case Domain::hotel: return "hotel";
    case Domain::restaurant: return "restaurant";
    case Domain::doctor: return "doctor";
    case Domain::other: return "other";
    }
    return "other";
}

bool parse_domain(std::string_view text, Domain& out) {
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    for (Domain d : {Domain::hotel, Domain::restaurant, Domain::doctor,
                     Domain::other}) {
        if (lowered == to_string(d)) {
            out = d;
            return true;
        }
    }
    return false;
}

DatasetFormat parse_format(std::string_view text) {
    if (text == "csv") {
        return DatasetFormat::csv;
    }
    if (text == "tsv") {
        return DatasetFormat::tsv;
    }
    throw Error(ErrorCode::BadConfig,
                "unknown dataset format '" + std::string(text) + "'");
}

char delimiter_for(DatasetFormat format) noexcept {
    return format == DatasetFormat::tsv ? '\t' : ',';
}

std::size_t Dataset::count_label(int label) const noexcept {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(),
                      [label](const ReviewRecord& r) { return r.label == label; }));
}

namespace {

struct RawRow {
    std::size_t line_no = 0;
    std::vector<std::string> fields;
};

// RFC 4180 style reader; returns rows with the physical line they start on.
std::vector<RawRow> read_rows(std::string_view content, char delim) {
    std::vector<RawRow> rows;
    std::size_t pos = 0;
    std::size_t line = 1;
    if (content.substr(0, 3) == "\xEF\xBB\xBF") {
        pos = 3;
    }
    const std::size_t n = content.size();
    while (pos < n) {
        RawRow row;
        row.line_no = line;
        std::string field;
        bool row_done = false;
        bool any_content = false;
        while (!row_done) {
            if (pos < n && content[pos] == '"') {
                any_content = true;
                ++pos;
                bool closed = false;
                while (pos < n) {
                    const char c = content[pos];
                    if (c == '"') {
                        if (pos + 1 < n && content[pos + 1] == '"') {
                            field.push_back('"');
                            pos += 2;
                            continue;
                        }
                        ++pos;
                        closed = true;
                        break;
                    }
                    if (c == '\n') {
                        ++line;
                    }
                    field.push_back(c);
                    ++pos;
                }
                if (!closed) {
                    throw Error(ErrorCode::MalformedRow, "unterminated quote",
                                row.line_no);
                }
                // Text between the closing quote and the delimiter is kept
                // verbatim rather than rejected.
            }
            while (pos < n && content[pos] != delim && content[pos] != '\n') {
                if (content[pos] != '\r') {
                    field.push_back(content[pos]);
                }
                any_content = true;
                ++pos;
            }
            row.fields.push_back(std::move(field));
            field.clear();
            if (pos >= n) {
                row_done = true;
            } else if (content[pos] == delim) {
                any_content = true;
                ++pos;
            } else {
                ++pos; // newline
                ++line;
                row_done = true;
            }
        }
        if (any_content) {
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isspace(c); });
}

bool needs_quotes(std::string_view s, char delim) {
    return s.find_first_of(std::string{delim, '"', '\n', '\r'}) !=
           std::string_view::npos;
}

void write_field(std::string& out, std::string_view s, char delim) {
    if (!needs_quotes(s, delim)) {
        out.append(s);
        return;
    }
    out.push_back('"');
    for (char c : s) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
}

} // namespace

Dataset parse_dataset(std::string_view content, DatasetFormat format,
                      std::string name) {
    const char delim = delimiter_for(format);
    Dataset ds;
    ds.name = std::move(name);
    auto rows = read_rows(content, delim);
    if (rows.empty()) {
        return ds;
    }
    const std::vector<std::string> header{"id", "domain", "label", "text"};
    if (rows.front().fields != header) {
        throw Error(ErrorCode::MalformedRow, "expected header id,domain,label,text",
                    rows.front().line_no);
    }
    std::unordered_set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        auto& row = rows[r];
        if (row.fields.size() != 4) {
            throw Error(ErrorCode::MalformedRow,
                        "expected 4 columns, found " +
                            std::to_string(row.fields.size()),
                        row.line_no);
        }
        ReviewRecord rec;
        rec.id = std::move(row.fields[0]);
        if (!parse_domain(row.fields[1], rec.domain)) {
            throw Error(ErrorCode::MalformedRow,
                        "unknown domain '" + row.fields[1] + "'", row.line_no);
        }
        if (row.fields[2] == "0") {
            rec.label = 0;
        } else if (row.fields[2] == "1") {
            rec.label = 1;
        } else {
            throw Error(ErrorCode::BadLabel, "label '" + row.fields[2] + "'",
                        row.line_no);
        }
        rec.text = std::move(row.fields[3]);
        if (is_blank(rec.text)) {
            throw Error(ErrorCode::MalformedRow, "empty review text",
                        row.line_no);
        }
        if (!seen.insert(rec.id).second) {
            throw Error(ErrorCode::DuplicateId, "id '" + rec.id + "'");
        }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::MissingFile, path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str(), format, path.stem().string());
}

std::string serialize_dataset(const Dataset& ds, DatasetFormat format) {
    const char delim = delimiter_for(format);
    std::string out = "id";
    out.push_back(delim);
    out += "domain";
    out.push_back(delim);
    out += "label";
    out.push_back(delim);
    out += "text\n";
    for (const auto& r : ds.records) {
        write_field(out, r.id, delim);
        out.push_back(delim);
        out.append(to_string(r.domain));
        out.push_back(delim);
        out.append(std::to_string(r.label));
        out.push_back(delim);
        write_field(out, r.text, delim);
        out.push_back('\n');
    }
    return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path,
                  DatasetFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out << serialize_dataset(ds, format);
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds,
                                          double train_fraction,
                                          std::uint64_t seed) {
    if (ds.empty()) {
        throw Error(ErrorCode::EmptyDataset, "cannot split an empty dataset");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw Error(ErrorCode::BadConfig, "train_fraction must lie in (0,1)");
    }
    const std::size_t n = ds.size();
    const auto n_train =
        static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    const std::size_t n_fake = ds.count_label(1);
    const std::size_t n_real = n - n_fake;

    // Per-label quota: the rounded proportional share, clamped so the other
    // label can fill the remainder.
    const auto share = static_cast<std::size_t>(std::llround(
        static_cast<double>(n_train) * static_cast<double>(n_fake) /
        static_cast<double>(n)));
    const std::size_t lo = n_train > n_real ? n_train - n_real : 0;
    const std::size_t hi = std::min(n_fake, n_train);
    std::size_t fake_quota = std::clamp(share, lo, hi);
    std::size_t real_quota = n_train - fake_quota;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    Rng rng(seed);
    rng.shuffle(order);

    Dataset train;
    Dataset test;
    train.name = ds.name + ".train";
    test.name = ds.name + ".test";
    for (std::size_t idx : order) {
        const auto& rec = ds.records[idx];
        std::size_t& quota = rec.label == 1 ? fake_quota : real_quota;
        if (quota > 0) {
            --quota;
            train.records.push_back(rec);
        } else {
            test.records.push_back(rec);
        }
    }
    return {std::move(train), std::move(test)};
}

std::size_t DatasetStats::total_reviews() const noexcept {
    std::size_t total = 0;
    for (const auto& [key, g] : groups) {
        total += g.review_count;
    }
    return total;
}

std::size_t count_sentences(std::string_view text) {
    std::size_t count = 0;
    bool segment_has_content = false;
    for (char c : text) {
        if (c == '.' || c == '!' || c == '?') {
            if (segment_has_content) {
                ++count;
            }
            segment_has_content = false;
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            segment_has_content = true;
        }
    }
    if (segment_has_content) {
        ++count;
    }
    return count;
}

DatasetStats dataset_stats(const Dataset& ds) {
    DatasetStats stats;
    std::map<std::pair<Domain, int>, std::set<std::string>> words;
    for (const auto& rec : ds.records) {
        const auto key = std::make_pair(rec.domain, rec.label);
        auto& group = stats.groups[key];
        auto& vocab = words[key];
        const std::string cleaned = clean_text(rec.text);
        ++group.review_count;
        group.sentence_count += count_sentences(cleaned);
        for (auto& tok : tokenize(cleaned)) {
            if (!is_punctuation_token(tok)) {
                vocab.insert(std::move(tok));
            }
        }
    }
    for (auto& [key, group] : stats.groups) {
        group.unique_word_count = words[key].size();
    }
    return stats;
}

} // namespace veridian

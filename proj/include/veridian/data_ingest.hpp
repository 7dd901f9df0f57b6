#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace veridian {

enum class Domain { hotel, restaurant, doctor, other };

std::string_view to_string(Domain domain) noexcept;
// Case-insensitive; returns false on an unknown name.
bool parse_domain(std::string_view text, Domain& out);

enum class DatasetFormat { csv, tsv };

DatasetFormat parse_format(std::string_view text);
char delimiter_for(DatasetFormat format) noexcept;

struct ReviewRecord {
    std::string id;
    Domain domain = Domain::other;
    int label = 0; // 1 = fake, 0 = genuine
    std::string text;

    friend bool operator==(const ReviewRecord&, const ReviewRecord&) = default;
};

struct Dataset {
    std::string name;
    std::vector<ReviewRecord> records;

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
    std::size_t count_label(int label) const noexcept;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Reads a delimited file with the header `id,domain,label,text`. Quoted
// fields may contain the delimiter, newlines and doubled quotes.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);

// Same parser over in-memory content; `name` becomes Dataset::name.
Dataset parse_dataset(std::string_view content, DatasetFormat format,
                      std::string name = {});

std::string serialize_dataset(const Dataset& ds, DatasetFormat format);
void save_dataset(const Dataset& ds, const std::filesystem::path& path,
                  DatasetFormat format);

// Stratified by label. The first return value is the training part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds,
                                          double train_fraction,
                                          std::uint64_t seed);

struct GroupStats {
    std::size_t review_count = 0;
    std::size_t unique_word_count = 0;
    std::size_t sentence_count = 0;

    friend bool operator==(const GroupStats&, const GroupStats&) = default;
};

struct DatasetStats {
    // Only (domain, label) pairs present in the dataset have an entry.
    std::map<std::pair<Domain, int>, GroupStats> groups;

    std::size_t total_reviews() const noexcept;
};

DatasetStats dataset_stats(const Dataset& ds);

// Number of '.', '!' or '?' terminated segments, plus one for a non-empty
// trailing segment. Empty segments ("!!") are not counted.
std::size_t count_sentences(std::string_view text);

} // namespace veridian

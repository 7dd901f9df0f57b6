#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "synthetic.hpp"
#include "veridian/data_ingest.hpp"
#include "veridian/error.hpp"
#include "veridian/random.hpp"

using namespace veridian;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return ErrorCode::Io;
}

std::size_t location_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.location().value_or(0);
    }
    return 0;
}

std::set<std::string> ids_of(const Dataset& ds) {
    std::set<std::string> out;
    for (const auto& r : ds.records) {
        out.insert(r.id);
    }
    return out;
}

fs::path temp_file(const std::string& name, const std::string& content) {
    const fs::path dir = fs::temp_directory_path() / "veridian_ingest_test";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
}

} // namespace

TEST_CASE("parse csv with quoting") {
    const std::string content =
        "id,domain,label,text\n"
        "a1,hotel,1,\"Great, really \"\"great\"\" hotel\"\n"
        "a2,doctor,0,\"two\nlines\"\n"
        "a3,Restaurant,0,plain text\n";
    const Dataset ds = parse_dataset(content, DatasetFormat::csv, "demo");
    REQUIRE(ds.size() == 3);
    CHECK(ds.name == "demo");
    CHECK(ds.records[0].text == "Great, really \"great\" hotel");
    CHECK(ds.records[0].label == 1);
    CHECK(ds.records[1].text == "two\nlines");
    CHECK(ds.records[1].domain == Domain::doctor);
    CHECK(ds.records[2].domain == Domain::restaurant);
    CHECK(ds.count_label(0) == 2);
}

TEST_CASE("tsv format") {
    const Dataset ds = parse_dataset("id\tdomain\tlabel\ttext\nx\thotel\t0\ta, b, c\n",
                                     DatasetFormat::tsv);
    REQUIRE(ds.size() == 1);
    CHECK(ds.records[0].text == "a, b, c");
}

TEST_CASE("load errors") {
    CHECK(code_of([] { load_dataset("/nonexistent/reviews.csv", DatasetFormat::csv); }) ==
          ErrorCode::MissingFile);

    std::string rows = "id,domain,label,text\n";
    for (int i = 0; i < 5; ++i) {
        rows += "r" + std::to_string(i) + ",hotel,0,fine\n";
    }
    const std::string bad_label = rows + "r9,hotel,2,bad\n";
    CHECK(code_of([&] { parse_dataset(bad_label, DatasetFormat::csv); }) == ErrorCode::BadLabel);
    CHECK(location_of([&] { parse_dataset(bad_label, DatasetFormat::csv); }) == 7);

    CHECK(code_of([] {
              parse_dataset("id,domain,label,text\nr1,hotel,0\n", DatasetFormat::csv);
          }) == ErrorCode::MalformedRow);
    CHECK(location_of([] {
              parse_dataset("id,domain,label,text\nr1,hotel,0,a\nr2,hotel,0,b,c\n",
                            DatasetFormat::csv);
          }) == 3);
    CHECK(code_of([] {
              parse_dataset("id,domain,label,text\nr1,hotel,0,a\nr1,hotel,1,b\n",
                            DatasetFormat::csv);
          }) == ErrorCode::DuplicateId);
    CHECK(code_of([] {
              parse_dataset("id,domain,label,text\nr1,hotel,0,\"   \"\n", DatasetFormat::csv);
          }) == ErrorCode::MalformedRow);
    CHECK(code_of([] { parse_dataset("id,text\n", DatasetFormat::csv); }) ==
          ErrorCode::MalformedRow);
}

TEST_CASE("header-only file is empty") {
    const fs::path p = temp_file("header.csv", "id,domain,label,text\n");
    CHECK(load_dataset(p, DatasetFormat::csv).empty());
}

TEST_CASE("balanced corpus of 1600 rows") {
    Dataset ds = testing::make_synthetic_reviews(1600, 3, 0.5);
    const fs::path p = temp_file("big.csv", serialize_dataset(ds, DatasetFormat::csv));
    const Dataset loaded = load_dataset(p, DatasetFormat::csv);
    CHECK(loaded.size() == 1600);
    CHECK(loaded.count_label(1) == 800);
    CHECK(loaded.count_label(0) == 800);
}

TEST_CASE("save and load round-trip") {
    Dataset ds;
    ds.records = {{"q1", Domain::hotel, 1, "comma, \"quote\" and\nnewline"},
                  {"q2", Domain::other, 0, "tab\tinside"},
                  {"q3", Domain::doctor, 0, "plain"}};
    for (auto format : {DatasetFormat::csv, DatasetFormat::tsv}) {
        const fs::path p = temp_file(format == DatasetFormat::csv ? "rt.csv" : "rt.tsv", "");
        save_dataset(ds, p, format);
        Dataset back = load_dataset(p, format);
        back.name = ds.name;
        CHECK(back == ds);
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Dataset random = testing::make_synthetic_reviews(30, seed);
        CHECK(parse_dataset(serialize_dataset(random, DatasetFormat::tsv), DatasetFormat::tsv)
                  .records == random.records);
    }
}

TEST_CASE("split sizes") {
    const Dataset big = testing::make_synthetic_reviews(1600, 1);
    auto [train, test] = split_dataset(big, 0.8, 9);
    CHECK(train.size() == 1280);
    CHECK(test.size() == 320);

    const Dataset five = testing::make_synthetic_reviews(5, 2);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto [a, b] = split_dataset(five, 0.8, seed);
        CHECK(a.size() == 4);
        CHECK(b.size() == 1);
        CHECK_FALSE(ids_of(a).contains(b.records[0].id));
    }

    auto first = split_dataset(big, 0.8, 5);
    auto second = split_dataset(big, 0.8, 5);
    CHECK(first.first == second.first);
    CHECK(first.second == second.second);

    CHECK(code_of([] { split_dataset(Dataset{}, 0.8, 1); }) == ErrorCode::EmptyDataset);
}

TEST_CASE("split partition and stratification (property)") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(120);
        const double fake = rng.uniform();
        const double fraction = 0.05 + 0.9 * rng.uniform();
        const Dataset ds = testing::make_synthetic_reviews(n, 1000 + trial, fake);
        auto [train, test] = split_dataset(ds, fraction, rng.next_u64());

        CHECK(train.size() == static_cast<std::size_t>(std::floor(fraction * n)));
        CHECK(train.size() + test.size() == n);
        auto all = ids_of(train);
        for (const auto& r : test.records) {
            CHECK(all.insert(r.id).second);
        }
        CHECK(all == ids_of(ds));

        if (!train.empty()) {
            const double ds_frac = static_cast<double>(ds.count_label(1)) / n;
            const double tr_frac = static_cast<double>(train.count_label(1)) / train.size();
            CHECK(std::abs(tr_frac - ds_frac) <= 1.0 / train.size() + 1e-12);
        }
    }
}

TEST_CASE("dataset_stats") {
    Dataset one;
    one.records = {{"s1", Domain::hotel, 1, "Great. Great!"}};
    const DatasetStats st = dataset_stats(one);
    const GroupStats& g = st.groups.at({Domain::hotel, 1});
    CHECK(g.review_count == 1);
    CHECK(g.unique_word_count == 1);
    CHECK(g.sentence_count == 2);

    CHECK(dataset_stats(Dataset{}).groups.empty());
    CHECK(dataset_stats(Dataset{}).total_reviews() == 0);

    CHECK(count_sentences("hello") == 1);
    CHECK(count_sentences("") == 0);
    CHECK(count_sentences("wow!! really?") == 2);

    const Dataset many = testing::make_synthetic_reviews(97, 4, 0.3);
    CHECK(dataset_stats(many).total_reviews() == 97);
}

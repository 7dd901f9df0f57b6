#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "synthetic.hpp"
#include "veridian/error.hpp"
#include "veridian/pipeline.hpp"

using namespace veridian;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "veridian_pipeline_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

RunConfig quick_config(const fs::path& dir, std::size_t records, std::uint64_t seed) {
    save_dataset(testing::make_synthetic_reviews(records, seed), dir / "data.csv",
                 DatasetFormat::csv);
    const std::string text = "data = data.csv\n"
                             "output_dir = out\n"
                             "seed = 3\n"
                             "max_length = 24\n"
                             "hidden = 16\n"
                             "ffn_dim = 32\n"
                             "embed_dim = 8\n"
                             "max_epochs = 2\n"
                             "learning_rate = 0.003\n";
    std::ofstream(dir / "run.cfg") << text;
    return load_run_config(dir / "run.cfg");
}

} // namespace

TEST_CASE("config parsing") {
    const RunConfig cfg = parse_run_config("# comment\n"
                                           "data = reviews.tsv\n"
                                           "format = tsv\n"
                                           "batch_size = 8\n"
                                           "member.albert.batch_size = 4\n"
                                           "member.xlnet.num_layers = 3\n",
                                           "/base");
    CHECK(cfg.data == fs::path("/base/reviews.tsv"));
    CHECK(cfg.format == DatasetFormat::tsv);
    REQUIRE(cfg.members.size() == 2);
    CHECK(cfg.members[0].name == "albert");
    CHECK(cfg.members[0].training.batch_size == 4);
    CHECK(cfg.members[0].encoder.variant == EncoderVariant::shared_layers);
    CHECK(cfg.members[1].training.batch_size == 8);
    CHECK(cfg.members[1].encoder.num_layers == 3);

    const RunConfig commented =
        parse_run_config("data = x#1.csv   # input\ntrain_fraction = 0.7 # rest is test\n");
    CHECK(commented.data == fs::path("x#1.csv"));
    CHECK(commented.train_fraction == 0.7);

    const RunConfig defaults = parse_run_config("data = x.csv\n");
    REQUIRE(defaults.members.size() == 3);
    CHECK(defaults.members[0].training.batch_size == 64);
    CHECK(defaults.members[0].training.max_epochs == 15);
    CHECK(defaults.members[1].training.max_epochs == 20);
    CHECK(defaults.members[2].encoder.variant == EncoderVariant::shared_layers);
    CHECK(defaults.train_fraction == 0.8);
    CHECK(defaults.validation_fraction == 0.1);

    const RunConfig reseeded = parse_run_config("data = x.csv\nseed = 9\n");
    CHECK(reseeded.members[0].encoder.seed != defaults.members[0].encoder.seed);
    CHECK(reseeded.members[0].encoder.seed != reseeded.members[1].encoder.seed);
}

TEST_CASE("config errors name the key") {
    CHECK(message_of([] { parse_run_config("data = x.csv\ntrain_fraction = 1.0\n"); })
              .find("train_fraction") != std::string::npos);
    CHECK(message_of([] { parse_run_config("data = x.csv\nbogus = 1\n"); }).find("bogus") !=
          std::string::npos);
    CHECK(message_of([] { parse_run_config("data = x.csv\nmember.albert.heads = 5\n"); })
              .find("member.albert") != std::string::npos);
    CHECK(message_of([] { parse_run_config("data = x.csv\nmembers = a\nmember.b.heads = 2\n"); })
              .find("member.b.heads") != std::string::npos);
    CHECK(message_of([] { parse_run_config("train_fraction = 0.5\n"); }).find("data") !=
          std::string::npos);
    CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), Error);
}

TEST_CASE("splits are disjoint and non-empty") {
    const Dataset ds = testing::make_synthetic_reviews(100, 1);
    const Splits s = make_splits(ds, 0.8, 0.1, 7);
    CHECK(s.test.size() == 20);
    CHECK(s.fit.size() + s.validation.size() == 80);
    CHECK(s.validation.size() == 8);
    CHECK_THROWS_AS(make_splits(testing::make_synthetic_reviews(1, 1), 0.8, 0.1, 1), Error);
}

TEST_CASE("train, eval and predict round trip") {
    const fs::path dir = scratch("roundtrip");
    RunConfig cfg = quick_config(dir, 60, 5);
    const TrainOutcome out = run_train(cfg);
    REQUIRE(out.members.size() == 3);
    for (const auto& m : cfg.members) {
        CHECK(fs::exists(cfg.output_dir / artifacts::checkpoint(m.name)));
        CHECK(fs::exists(cfg.output_dir / artifacts::history(m.name)));
    }
    CHECK(fs::exists(cfg.output_dir / artifacts::weights));
    CHECK(fs::exists(cfg.output_dir / artifacts::vocab));
    CHECK(out.test_size == 12);

    const EvalOutcome all = run_eval(cfg.output_dir, cfg.data, DatasetFormat::csv);
    REQUIRE(all.rows.size() == 4);
    CHECK(all.rows.back().name == "Ensemble");
    CHECK(all.rows[0].report.n == 60);
    const EvalOutcome test = run_eval(cfg.output_dir, cfg.data, DatasetFormat::csv, EvalSplit::test);
    CHECK(test.rows[0].report.n == 12);

    const PredictOutcome a = run_predict(cfg.output_dir, "http://spam.example.com");
    const PredictOutcome b = run_predict(cfg.output_dir, "http://spam.example.com");
    CHECK(format_prediction(a) == format_prediction(b));
    CHECK(a.p_fake >= 0.0);
    CHECK(a.p_fake <= 1.0);
    CHECK(a.label == (a.p_fake > 0.5 ? 1 : 0));

    // same config again: byte-identical artifacts
    const fs::path first = dir / "first";
    fs::rename(cfg.output_dir, first);
    run_train(cfg);
    for (const auto& m : cfg.members) {
        CHECK(slurp(first / artifacts::history(m.name)) ==
              slurp(cfg.output_dir / artifacts::history(m.name)));
        CHECK(slurp(first / artifacts::checkpoint(m.name)) ==
              slurp(cfg.output_dir / artifacts::checkpoint(m.name)));
    }
    CHECK(slurp(first / artifacts::weights) == slurp(cfg.output_dir / artifacts::weights));
}

TEST_CASE("single member with one-hot weight matches the ensemble row") {
    const fs::path dir = scratch("single");
    save_dataset(testing::make_synthetic_reviews(40, 8), dir / "data.csv", DatasetFormat::csv);
    RunConfig cfg = parse_run_config("data = data.csv\noutput_dir = out\nmembers = xlnet\n"
                                     "max_length = 24\nhidden = 16\nffn_dim = 32\nmax_epochs = 1\n",
                                     dir);
    run_train(cfg);
    const EvalOutcome e = run_eval(cfg.output_dir, cfg.data, DatasetFormat::csv);
    REQUIRE(e.rows.size() == 2);
    CHECK(render_report_line(e.rows[0].report) == render_report_line(e.rows[1].report));
}

TEST_CASE("eval rejects a mismatched vocabulary") {
    const fs::path dir = scratch("mismatch");
    RunConfig cfg = quick_config(dir, 40, 6);
    cfg.members.resize(1);
    run_train(cfg);
    Vocabulary other;
    other.add("zzz");
    other.save(cfg.output_dir / artifacts::vocab);
    try {
        run_eval(cfg.output_dir, cfg.data, DatasetFormat::csv);
        FAIL("expected VocabMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::VocabMismatch);
    }
}

TEST_CASE("stats table") {
    Dataset ds;
    ds.records = {{"1", Domain::hotel, 1, "Great. Great!"},
                  {"2", Domain::hotel, 0, "fine stay"},
                  {"3", Domain::doctor, 1, "best doctor ever"}};
    const std::string table = render_stats_table(dataset_stats(ds));
    CHECK(table.find("hotel") != std::string::npos);
    CHECK(table.find("doctor") != std::string::npos);
    CHECK(table.find("restaurant") == std::string::npos);
    std::size_t lines = 0;
    for (char c : table) {
        lines += c == '\n';
    }
    CHECK(lines == 5); // header, three groups, total
}

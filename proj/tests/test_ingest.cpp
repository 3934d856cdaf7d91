#include <catch_amalgamated.hpp>

#include <random>

#include "pkgscope/error.hpp"
#include "pkgscope/ingest.hpp"
#include "support.hpp"

using namespace pkgscope;
using testsupport::TempDir;
using testsupport::write_text;

TEST_CASE("bucket_of thresholds", "[ingest]") {
    CHECK(bucket_of(0) == Bucket::Small);
    CHECK(bucket_of(4096) == Bucket::Small);
    CHECK(bucket_of(5119) == Bucket::Small);
    CHECK(bucket_of(5120) == Bucket::Medium);
    CHECK(bucket_of(10240) == Bucket::Medium);
    CHECK(bucket_of(10241) == Bucket::Large);
    CHECK(bucket_of(12288) == Bucket::Large);
    CHECK_THROWS_AS(bucket_of(-1), Error);
}

TEST_CASE("bucket_of is monotone", "[ingest][property]") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::int64_t> dist(0, 40000);
    for (int i = 0; i < 2000; ++i) {
        auto a = dist(rng);
        auto b = dist(rng);
        if (a > b) std::swap(a, b);
        CHECK(static_cast<int>(bucket_of(a)) <= static_cast<int>(bucket_of(b)));
    }
}

TEST_CASE("split_name_version", "[ingest]") {
    CHECK(split_name_version("15Cent-999.0.1") == std::pair<std::string, std::string>{"15Cent", "999.0.1"});
    CHECK(split_name_version("flask-bootstrap-3.3.7.1") ==
          std::pair<std::string, std::string>{"flask-bootstrap", "3.3.7.1"});
    CHECK(split_name_version("noversion") == std::pair<std::string, std::string>{"noversion", ""});
    CHECK(normalize_name("Flask_Bootstrap..X") == "flask-bootstrap-x");
}

TEST_CASE("scan_corpus records sizes, buckets and labels", "[ingest]") {
    TempDir dir;
    write_text(dir / "small-1.0/a.py", std::string(4096, 'x'));
    write_text(dir / "small-1.0/README.md", std::string(9000, 'x'));
    write_text(dir / "large-2.0/pkg/a.py", std::string(8192, 'x'));
    write_text(dir / "large-2.0/pkg/sub/b.py", std::string(4096, 'x'));
    std::filesystem::create_directories(dir / "empty-0.1");

    auto m = scan_corpus(dir.path(), {{"small", Label::Malicious}, {"large-2.0", Label::Benign}},
                         {{"small", "steals things"}, {"large", "ignored for benign"}});
    REQUIRE(m.records.size() == 3);
    CHECK(m.records[0].id == "empty-0.1");
    CHECK(m.records[0].source_bytes == 0);
    CHECK(m.records[0].bucket == Bucket::Small);
    CHECK(m.records[0].label == Label::Unlabeled);
    CHECK(m.records[1].id == "large-2.0");
    CHECK(m.records[1].source_bytes == 12288);
    CHECK(m.records[1].bucket == Bucket::Large);
    CHECK(m.records[1].label == Label::Benign);
    CHECK_FALSE(m.records[1].behavior_summary.has_value());
    CHECK(m.records[2].source_bytes == 4096);
    CHECK(m.records[2].bucket == Bucket::Small);
    CHECK(m.records[2].behavior_summary == std::optional<std::string>("steals things"));

    auto again = scan_corpus(dir.path(), {{"small", Label::Malicious}, {"large-2.0", Label::Benign}},
                             {{"small", "steals things"}});
    CHECK(to_json(again).dump() == to_json(m).dump());
}

TEST_CASE("scan_corpus rejects duplicate packages", "[ingest]") {
    TempDir dir;
    write_text(dir / "Foo_Bar-1.0/a.py", "x = 1\n");
    write_text(dir / "foo-bar-1.0/a.py", "x = 1\n");
    CHECK_THROWS_AS(scan_corpus(dir.path(), {}, {}), Error);
    CHECK_THROWS_AS(scan_corpus(dir / "missing", {}, {}), IoError);
}

namespace {

DatasetManifest synthetic(int n, int unlabeled = 0) {
    DatasetManifest m;
    for (int i = 0; i < n + unlabeled; ++i) {
        PackageRecord r;
        r.id = "pkg" + std::to_string(i);
        r.name = r.id;
        r.label = i >= n ? Label::Unlabeled : (i % 2 ? Label::Malicious : Label::Benign);
        m.records.push_back(r);
    }
    return m;
}

}  // namespace

TEST_CASE("split_dataset sizes and determinism", "[ingest]") {
    auto m = split_dataset(synthetic(10), 0.8, 42);
    CHECK(m.train_ids.size() == 8);
    CHECK(m.test_ids.size() == 2);
    auto again = split_dataset(synthetic(10), 0.8, 42);
    CHECK(again.train_ids == m.train_ids);
    CHECK(again.test_ids == m.test_ids);

    // floor(0.8 * 1659) by integer arithmetic: 1659 * 4 / 5 = 1327 remainder 1.
    auto big = split_dataset(synthetic(1659), 0.8, 3);
    CHECK(big.train_ids.size() == static_cast<std::size_t>(1659 * 4 / 5));
    CHECK(big.test_ids.size() == 1659 - 1659 * 4 / 5);

    CHECK_THROWS_AS(split_dataset(synthetic(1), 0.8, 1), Error);
    CHECK_THROWS_AS(split_dataset(synthetic(1, 5), 0.8, 1), Error);
    CHECK_THROWS_AS(split_dataset(synthetic(5), 1.0, 1), Error);
}

TEST_CASE("split_dataset partitions the labeled records", "[ingest][property]") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 2 + static_cast<int>(rng() % 200);
        int unlabeled = static_cast<int>(rng() % 5);
        double ratio = 0.05 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
        auto m = split_dataset(synthetic(n, unlabeled), ratio, rng());
        CHECK(m.train_ids.size() + m.test_ids.size() == static_cast<std::size_t>(n));
        CHECK_FALSE(m.train_ids.empty());
        CHECK_FALSE(m.test_ids.empty());
        for (const auto& id : m.train_ids) CHECK(m.test_ids.count(id) == 0);
        for (const auto& r : m.records) {
            bool in = m.train_ids.count(r.id) || m.test_ids.count(r.id);
            CHECK(in == (r.label != Label::Unlabeled));
        }
        double expected = ratio * n;
        CHECK(std::abs(static_cast<double>(m.train_ids.size()) - expected) <= 1.0);
    }
}

TEST_CASE("manifest persistence round-trips", "[ingest]") {
    TempDir dir;
    auto m = split_dataset(synthetic(6, 1), 0.5, 9);
    m.records[1].behavior_summary = "overview";
    save_manifest(m, dir / "m.json");
    auto back = load_manifest(dir / "m.json");
    CHECK(to_json(back).dump() == to_json(m).dump());

    write_text(dir / "bad.json", R"({"schema": "other/9"})");
    CHECK_THROWS_AS(load_manifest(dir / "bad.json"), FormatError);
}

TEST_CASE("label and report files", "[ingest]") {
    auto labels = read_labels_csv(testsupport::fixtures() / "labels.csv");
    CHECK(labels.size() == 6);
    CHECK(labels.at("15Cent") == Label::Malicious);
    CHECK(labels.at("tinyutil") == Label::Benign);
    auto reports = read_reports_json(testsupport::fixtures() / "reports.json");
    CHECK(reports.size() == 3);

    TempDir dir;
    write_text(dir / "l.csv", "a,benign\nb,maybe\n");
    CHECK_THROWS_AS(read_labels_csv(dir / "l.csv"), FormatError);
}

TEST_CASE("fixture corpus manifest", "[ingest]") {
    auto m = scan_corpus(testsupport::corpus(), read_labels_csv(testsupport::fixtures() / "labels.csv"),
                         read_reports_json(testsupport::fixtures() / "reports.json"));
    REQUIRE(m.records.size() == 6);
    int malicious = 0;
    for (const auto& r : m.records) {
        if (r.label == Label::Malicious) {
            ++malicious;
            CHECK(r.behavior_summary.has_value());
        }
    }
    CHECK(malicious == 3);
}

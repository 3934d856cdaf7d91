#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pkgscope {

enum class Bucket { Small, Medium, Large };
enum class Label { Benign, Malicious, Unlabeled };

std::string_view to_string(Bucket b) noexcept;
std::string_view to_string(Label l) noexcept;
Bucket parse_bucket(std::string_view text);
/// Accepts malicious/benign/unlabeled (any case) and 1/0.
Label parse_label(std::string_view text);

/// Size thresholds in bytes: Small below 5 KiB, Medium up to and including 10 KiB.
inline constexpr std::int64_t kSmallLimit = 5 * 1024;
inline constexpr std::int64_t kMediumLimit = 10 * 1024;

Bucket bucket_of(std::int64_t source_bytes);

struct PackageRecord {
    std::string id;  ///< directory name, unique within a manifest
    std::string name;
    std::string version;
    std::filesystem::path root_path;
    std::int64_t source_bytes = 0;
    Bucket bucket = Bucket::Small;
    Label label = Label::Unlabeled;
    std::optional<std::string> behavior_summary;
};

struct DatasetManifest {
    static constexpr std::string_view kSchema = "pkgscope.manifest/1";

    std::vector<PackageRecord> records;
    std::uint64_t split_seed = 0;
    std::set<std::string> train_ids;
    std::set<std::string> test_ids;

    const PackageRecord* find(std::string_view id) const;
};

/// Splits a directory name such as "15Cent-999.0.1" at the last '-' that is
/// followed by a digit. Returns {name, ""} when no version suffix exists.
std::pair<std::string, std::string> split_name_version(std::string_view dirname);

/// PEP 503 normalization: lowercase, runs of '-', '_', '.' become '-'.
std::string normalize_name(std::string_view name);

/// Total size of every regular file ending in ".py" below `root`.
std::int64_t count_source_bytes(const std::filesystem::path& root);

/// Labels and reports may be keyed by directory id or by bare package name;
/// the id wins when both are present.
DatasetManifest scan_corpus(const std::filesystem::path& root, const std::map<std::string, Label>& labels,
                            const std::map<std::string, std::string>& reports);

DatasetManifest split_dataset(DatasetManifest manifest, double ratio, std::uint64_t seed);

/// Parses a "name,label" CSV. A first line whose label column does not parse
/// is treated as a header.
std::map<std::string, Label> read_labels_csv(const std::filesystem::path& path);
std::map<std::string, std::string> read_reports_json(const std::filesystem::path& path);

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& doc);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace pkgscope

#include "pkgscope/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pkgscope/error.hpp"
#include "pkgscope/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pkgscope {

std::string_view to_string(Bucket b) noexcept {
    switch (b) {
        case Bucket::Small: return "Small";
        case Bucket::Medium: return "Medium";
        case Bucket::Large: return "Large";
    }
    return "Small";
}

std::string_view to_string(Label l) noexcept {
    switch (l) {
        case Label::Benign: return "Benign";
        case Label::Malicious: return "Malicious";
        case Label::Unlabeled: return "Unlabeled";
    }
    return "Unlabeled";
}

Bucket parse_bucket(std::string_view text) {
    std::string t = to_lower(trim(text));
    if (t == "small") return Bucket::Small;
    if (t == "medium") return Bucket::Medium;
    if (t == "large") return Bucket::Large;
    throw FormatError(fmt::format("unknown bucket '{}'", text));
}

Label parse_label(std::string_view text) {
    std::string t = to_lower(trim(text));
    if (t == "malicious" || t == "1") return Label::Malicious;
    if (t == "benign" || t == "0") return Label::Benign;
    if (t == "unlabeled" || t.empty()) return Label::Unlabeled;
    throw FormatError(fmt::format("unknown label '{}'", text));
}

Bucket bucket_of(std::int64_t source_bytes) {
    if (source_bytes < 0) throw Error(fmt::format("negative source size {}", source_bytes));
    if (source_bytes < kSmallLimit) return Bucket::Small;
    if (source_bytes <= kMediumLimit) return Bucket::Medium;
    return Bucket::Large;
}

const PackageRecord* DatasetManifest::find(std::string_view id) const {
    for (const auto& r : records) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

std::pair<std::string, std::string> split_name_version(std::string_view dirname) {
    for (std::size_t i = dirname.size(); i-- > 0;) {
        if (dirname[i] == '-' && i + 1 < dirname.size() && std::isdigit(static_cast<unsigned char>(dirname[i + 1])) &&
            i > 0) {
            return {std::string(dirname.substr(0, i)), std::string(dirname.substr(i + 1))};
        }
    }
    return {std::string(dirname), ""};
}

std::string normalize_name(std::string_view name) {
    std::string out;
    bool sep = false;
    for (char c : name) {
        if (c == '-' || c == '_' || c == '.') {
            sep = true;
            continue;
        }
        if (sep && !out.empty()) out.push_back('-');
        sep = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::int64_t count_source_bytes(const fs::path& root) {
    std::int64_t total = 0;
    fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied);
    for (const auto& entry : it) {
        std::error_code ec;
        if (!entry.is_regular_file(ec) || entry.path().extension() != ".py") continue;
        auto size = entry.file_size(ec);
        if (!ec) total += static_cast<std::int64_t>(size);
    }
    return total;
}

namespace {

template <typename V>
const V* lookup(const std::map<std::string, V>& m, const std::string& id, const std::string& name) {
    if (auto it = m.find(id); it != m.end()) return &it->second;
    if (auto it = m.find(name); it != m.end()) return &it->second;
    return nullptr;
}

}  // namespace

DatasetManifest scan_corpus(const fs::path& root, const std::map<std::string, Label>& labels,
                            const std::map<std::string, std::string>& reports) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw IoError(fmt::format("corpus root {} is not a directory", root.string()));

    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory(ec)) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());

    DatasetManifest manifest;
    std::map<std::string, std::string> seen;  // normalized id -> original id
    for (const auto& dir : dirs) {
        PackageRecord rec;
        rec.id = dir.filename().string();
        std::tie(rec.name, rec.version) = split_name_version(rec.id);
        rec.root_path = dir;
        try {
            rec.source_bytes = count_source_bytes(dir);
        } catch (const fs::filesystem_error& e) {
            spdlog::warn("skipping {}: {}", dir.string(), e.what());
            continue;
        }
        std::string key = normalize_name(rec.name) + "==" + rec.version;
        if (auto [it, fresh] = seen.emplace(key, rec.id); !fresh) {
            throw Error(fmt::format("duplicate package {} and {}", it->second, rec.id));
        }
        rec.bucket = bucket_of(rec.source_bytes);
        if (const Label* l = lookup(labels, rec.id, rec.name)) rec.label = *l;
        if (rec.label == Label::Malicious) {
            if (const std::string* r = lookup(reports, rec.id, rec.name)) rec.behavior_summary = *r;
        }
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

DatasetManifest split_dataset(DatasetManifest manifest, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw Error(fmt::format("split ratio {} outside (0, 1)", ratio));
    std::vector<std::string> ids;
    for (const auto& r : manifest.records) {
        if (r.label != Label::Unlabeled) ids.push_back(r.id);
    }
    if (ids.size() < 2) throw Error(fmt::format("need at least 2 labeled records to split, have {}", ids.size()));
    std::sort(ids.begin(), ids.end());

    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);

    const auto n = static_cast<std::ptrdiff_t>(ids.size());
    auto n_train = static_cast<std::ptrdiff_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
    n_train = std::clamp<std::ptrdiff_t>(n_train, 1, n - 1);

    manifest.split_seed = seed;
    manifest.train_ids = std::set<std::string>(ids.begin(), ids.begin() + n_train);
    manifest.test_ids = std::set<std::string>(ids.begin() + n_train, ids.end());
    return manifest;
}

std::map<std::string, Label> read_labels_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::map<std::string, Label> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v = trim(line);
        if (v.empty() || v.front() == '#') continue;
        auto comma = v.find(',');
        if (comma == std::string_view::npos) {
            throw FormatError(fmt::format("{}:{}: expected name,label", path.string(), lineno));
        }
        std::string name(trim(v.substr(0, comma)));
        try {
            out[name] = parse_label(v.substr(comma + 1));
        } catch (const FormatError&) {
            if (lineno == 1) continue;
            throw FormatError(fmt::format("{}:{}: bad label '{}'", path.string(), lineno, v.substr(comma + 1)));
        }
    }
    return out;
}

std::map<std::string, std::string> read_reports_json(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
    if (!doc.is_object()) throw FormatError(fmt::format("{}: expected an object of name -> overview", path.string()));
    std::map<std::string, std::string> out;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!it.value().is_string()) throw FormatError(fmt::format("{}: report for {} is not a string", path.string(), it.key()));
        out[it.key()] = it.value().get<std::string>();
    }
    return out;
}

json to_json(const DatasetManifest& manifest) {
    json records = json::array();
    for (const auto& r : manifest.records) {
        json j = {{"id", r.id},
                  {"name", r.name},
                  {"version", r.version},
                  {"root_path", r.root_path.generic_string()},
                  {"source_bytes", r.source_bytes},
                  {"bucket", to_string(r.bucket)},
                  {"label", to_string(r.label)}};
        if (r.behavior_summary) j["behavior_summary"] = *r.behavior_summary;
        records.push_back(std::move(j));
    }
    return {{"schema", DatasetManifest::kSchema},
            {"split_seed", manifest.split_seed},
            {"records", std::move(records)},
            {"train_ids", manifest.train_ids},
            {"test_ids", manifest.test_ids}};
}

DatasetManifest manifest_from_json(const json& doc) {
    try {
        if (doc.at("schema").get<std::string>() != DatasetManifest::kSchema) {
            throw FormatError(fmt::format("unsupported manifest schema {}", doc.at("schema").dump()));
        }
        DatasetManifest m;
        m.split_seed = doc.at("split_seed").get<std::uint64_t>();
        for (const auto& j : doc.at("records")) {
            PackageRecord r;
            r.id = j.at("id").get<std::string>();
            r.name = j.at("name").get<std::string>();
            r.version = j.at("version").get<std::string>();
            r.root_path = j.at("root_path").get<std::string>();
            r.source_bytes = j.at("source_bytes").get<std::int64_t>();
            r.bucket = parse_bucket(j.at("bucket").get<std::string>());
            r.label = parse_label(j.at("label").get<std::string>());
            if (j.contains("behavior_summary")) r.behavior_summary = j["behavior_summary"].get<std::string>();
            m.records.push_back(std::move(r));
        }
        m.train_ids = doc.at("train_ids").get<std::set<std::string>>();
        m.test_ids = doc.at("test_ids").get<std::set<std::string>>();
        return m;
    } catch (const json::exception& e) {
        throw FormatError(fmt::format("malformed manifest: {}", e.what()));
    }
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    write_file(path, to_json(manifest).dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& path) {
    try {
        return manifest_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace pkgscope

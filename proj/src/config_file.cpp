#include <sstream>

#include <fmt/format.h>
#include <tomlplusplus/toml.hpp>

#include "pkgscope/error.hpp"
#include "pkgscope/pipeline.hpp"
#include "pkgscope/util.hpp"

namespace pkgscope::pipeline {

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    std::string text = read_file(path);
    nlohmann::json doc;
    if (to_lower(path.extension().string()) == ".toml") {
        try {
            toml::table table = toml::parse(text, path.string());
            std::ostringstream json_text;
            json_text << toml::json_formatter{table};
            doc = nlohmann::json::parse(json_text.str());
        } catch (const toml::parse_error& e) {
            throw ConfigError(fmt::format("{}:{}:{}: {}", path.string(), e.source().begin.line,
                                          e.source().begin.column, e.description()));
        }
    } else {
        doc = nlohmann::json::parse(text, nullptr, false);
        if (doc.is_discarded()) throw ConfigError(fmt::format("{} is not valid JSON", path.string()));
    }
    return run_config_from_json(doc, std::move(base));
}

}  // namespace pkgscope::pipeline

#include "pkgscope/prompts.hpp"

#include "pkgscope/prompts_data.hpp"

namespace pkgscope::prompts {

std::string_view version() noexcept { return data::kVersion; }
std::string_view common_rules() noexcept { return data::kComm; }
std::string_view data_rules() noexcept { return data::kData; }
std::string_view analysis() noexcept { return data::kAna; }
std::string_view judge_system() noexcept { return data::kJudge; }
std::string_view judge_user() noexcept { return data::kJudgeUser; }

std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& slots) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                auto it = slots.find(std::string(tmpl.substr(i + 1, close - i - 1)));
                if (it != slots.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

}  // namespace pkgscope::prompts

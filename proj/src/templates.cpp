#include "imm/templates.hpp"

#include "imm/embedded_templates.hpp"

namespace imm::templates {

std::string_view thinking_prompt() { return embedded::thinking_prompt; }
std::string_view explain_prompt() { return embedded::explain_prompt; }
std::string_view summarize_prompt() { return embedded::summarize_prompt; }
std::string_view zero_shot_prompt() { return embedded::zero_shot_prompt; }
std::string_view few_shot_prompt() { return embedded::few_shot_prompt; }
std::string_view few_shot_example() { return embedded::few_shot_example; }

std::string render(std::string_view tmpl, std::initializer_list<std::pair<std::string_view, std::string_view>> vars) {
    std::string out;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        bool replaced = false;
        if (tmpl[i] == '{') {
            for (const auto& [name, value] : vars) {
                if (tmpl.substr(i + 1, name.size()) == name && i + 1 + name.size() < tmpl.size() &&
                    tmpl[i + 1 + name.size()] == '}') {
                    out += value;
                    i += name.size() + 2;
                    replaced = true;
                    break;
                }
            }
        }
        if (!replaced) out += tmpl[i++];
    }
    return out;
}

}  // namespace imm::templates

#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>

namespace imm::templates {

// Byte-exact copies of the files under data/prompts/.
std::string_view thinking_prompt();    // line-identification instruction for the reasoning model
std::string_view explain_prompt();     // {dialogue}
std::string_view summarize_prompt();   // {count}, {answers}
std::string_view zero_shot_prompt();   // {dialogue}
std::string_view few_shot_prompt();    // {examples}, {dialogue}
std::string_view few_shot_example();   // {dialogue}, {answer}

// Replaces each "{name}" placeholder. Substituted text is never rescanned.
std::string render(std::string_view tmpl, std::initializer_list<std::pair<std::string_view, std::string_view>> vars);

}  // namespace imm::templates

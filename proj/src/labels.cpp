#include "imm/labels.hpp"

#include "imm/error.hpp"

namespace imm {

const std::array<LabelName, kTechniqueCount> kTechniqueNames{{
    {"Denial", "Denial"},
    {"Evasion", "Evasion"},
    {"FeigningInnocence", "Feigning Innocence"},
    {"Rationalization", "Rationalization"},
    {"PlayingTheVictimRole", "Playing the Victim Role"},
    {"PlayingTheServantRole", "Playing the Servant Role"},
    {"ShamingOrBelittlement", "Shaming or Belittlement"},
    {"Intimidation", "Intimidation"},
    {"BrandishingAnger", "Brandishing Anger"},
    {"Accusation", "Accusation"},
    {"PersuasionOrSeduction", "Persuasion or Seduction"},
}};

const std::array<LabelName, kVulnerabilityCount> kVulnerabilityNames{{
    {"OverResponsibility", "Over-responsibility"},
    {"OverIntellectualization", "Over-intellectualization"},
    {"Naivete", "Naivete"},
    {"LowSelfEsteem", "Low self-esteem"},
    {"Dependency", "Dependency"},
}};

std::string_view display_name(TechniqueLabel l) { return kTechniqueNames[static_cast<std::size_t>(l)].display; }
std::string_view display_name(VulnerabilityLabel l) { return kVulnerabilityNames[static_cast<std::size_t>(l)].display; }

namespace {
template <class Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<LabelName, N>& table, std::string_view name) {
    for (std::size_t i = 0; i < N; ++i)
        if (table[i].display == name || table[i].code == name) return static_cast<Enum>(i);
    return std::nullopt;
}
}  // namespace

std::optional<TechniqueLabel> technique_from_name(std::string_view name) {
    return lookup<TechniqueLabel>(kTechniqueNames, name);
}

std::optional<VulnerabilityLabel> vulnerability_from_name(std::string_view name) {
    return lookup<VulnerabilityLabel>(kVulnerabilityNames, name);
}

std::size_t label_dimension(TaskKind task) noexcept {
    switch (task) {
        case TaskKind::Binary: return 1;
        case TaskKind::TechniqueMultilabel: return kTechniqueCount;
        case TaskKind::VulnerabilityMultilabel: return kVulnerabilityCount;
    }
    return 0;
}

std::string_view task_name(TaskKind task) noexcept {
    switch (task) {
        case TaskKind::Binary: return "binary";
        case TaskKind::TechniqueMultilabel: return "technique_multilabel";
        case TaskKind::VulnerabilityMultilabel: return "vulnerability_multilabel";
    }
    return "";
}

TaskKind task_from_name(std::string_view name) {
    if (name == "binary") return TaskKind::Binary;
    if (name == "technique_multilabel" || name == "technique") return TaskKind::TechniqueMultilabel;
    if (name == "vulnerability_multilabel" || name == "vulnerability") return TaskKind::VulnerabilityMultilabel;
    throw Error(Errc::InvalidArgument, "unknown task '" + std::string(name) + "'");
}

std::string_view task_label_name(TaskKind task, std::size_t index) {
    if (index >= label_dimension(task))
        throw Error(Errc::InvalidArgument, "label index out of range for task");
    switch (task) {
        case TaskKind::Binary: return "manipulative";
        case TaskKind::TechniqueMultilabel: return kTechniqueNames[index].display;
        case TaskKind::VulnerabilityMultilabel: return kVulnerabilityNames[index].display;
    }
    return "";
}

std::optional<std::size_t> task_label_index(TaskKind task, std::string_view name) {
    switch (task) {
        case TaskKind::Binary:
            return name == "manipulative" ? std::optional<std::size_t>(0) : std::nullopt;
        case TaskKind::TechniqueMultilabel:
            if (auto t = technique_from_name(name)) return static_cast<std::size_t>(*t);
            return std::nullopt;
        case TaskKind::VulnerabilityMultilabel:
            if (auto v = vulnerability_from_name(name)) return static_cast<std::size_t>(*v);
            return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace imm

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace imm {

enum class TechniqueLabel {
    Denial,
    Evasion,
    FeigningInnocence,
    Rationalization,
    PlayingTheVictimRole,
    PlayingTheServantRole,
    ShamingOrBelittlement,
    Intimidation,
    BrandishingAnger,
    Accusation,
    PersuasionOrSeduction,
};

enum class VulnerabilityLabel {
    OverResponsibility,
    OverIntellectualization,
    Naivete,
    LowSelfEsteem,
    Dependency,
};

inline constexpr std::size_t kTechniqueCount = 11;
inline constexpr std::size_t kVulnerabilityCount = 5;

// Mapping between enum values, their code identifiers, and the display strings
// used in dataset files.
struct LabelName {
    std::string_view code;
    std::string_view display;
};

extern const std::array<LabelName, kTechniqueCount> kTechniqueNames;
extern const std::array<LabelName, kVulnerabilityCount> kVulnerabilityNames;

std::string_view display_name(TechniqueLabel l);
std::string_view display_name(VulnerabilityLabel l);

// Accepts either the display string ("Feigning Innocence") or the code name
// ("FeigningInnocence"). Returns nullopt for anything else.
std::optional<TechniqueLabel> technique_from_name(std::string_view name);
std::optional<VulnerabilityLabel> vulnerability_from_name(std::string_view name);

using TechniqueSet = std::set<TechniqueLabel>;
using VulnerabilitySet = std::set<VulnerabilityLabel>;

enum class TaskKind { Binary, TechniqueMultilabel, VulnerabilityMultilabel };

std::size_t label_dimension(TaskKind task) noexcept;
std::string_view task_name(TaskKind task) noexcept;
TaskKind task_from_name(std::string_view name);
// Display name of label `index` for a multi-label task ("manipulative" for binary).
std::string_view task_label_name(TaskKind task, std::size_t index);
std::optional<std::size_t> task_label_index(TaskKind task, std::string_view name);

}  // namespace imm

#pragma once

#include <array>
#include <initializer_list>
#include <string>
#include <utility>
#include <string_view>

#include "cosmos/story_tree.hpp"

namespace cosmos {

/**
 * Text templates used to drive the policy and simulation backends.
 *
 * Placeholders: {prompt} premise, {bullets} plot so far as "- " lines,
 * {cot} previous plot decisions as numbered lines, {action} the chosen plot
 * decision, {count} number of bullets to write.
 */
struct PromptTemplates {
  std::string policy;
  std::string simulator;

  static PromptTemplates defaults();
};

/// Replaces every "{name}" occurrence for the given placeholders.
std::string fill_template(std::string_view tmpl,
                          std::initializer_list<std::pair<std::string_view, std::string_view>> values);

std::string render_policy_prompt(const StoryState& state, const PromptTemplates& templates);
std::string render_simulator_prompt(const StoryState& state, const PlotAction& action,
                                    int bullet_count, const PromptTemplates& templates);

/// JSON keys the judge must return, in rubric order.
inline constexpr std::array<std::string_view, 9> kRubricKeys = {
    "Plot Structure", "Tension",  "Originality", "Character Development", "Overall Impact",
    "Theme",          "Conflict", "Pacing",      "Style and Voice"};

/// Nine-dimension absolute rating instruction with the story substituted in.
std::string rubric_prompt(std::string_view story);

}  // namespace cosmos

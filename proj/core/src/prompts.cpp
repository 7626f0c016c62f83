#include "cosmos/prompts.hpp"

#include <string>

namespace cosmos {

namespace {

// Shipped default; written for this project, not a reproduction of any
// particular published template.
constexpr std::string_view kPolicyTemplate =
    R"(You are planning the plot of a short story as a numbered outline.

Premise: {prompt}

Plot so far:
{bullets}
Plot decisions made so far:
{cot}
Think step by step about where the story should go next: which tension to raise,
which character to develop, which surprise to set up. Then describe the single
next plot development in a short paragraph.)";

constexpr std::string_view kSimulatorTemplate =
    R"(You are writing the plot outline of a short story.

Premise: {prompt}

Plot so far:
{bullets}
Plot decisions made so far:
{cot}
Next plot decision: {action}

Apply the next plot decision and write exactly {count} new bullet points that
continue the plot. Write one bullet per line, each starting with "- ". Do not
repeat earlier bullets.)";

constexpr std::string_view kRubricTemplate = R"(Please evaluate the following story:

{Story Text}

Evaluation Criteria:

1. Plot Structure (1-10):
- Does the story have a clear beginning, middle, and end?
- Is the plot coherent and logically structured?

2. Tension (1-10):
- Does the story build suspense or keep the reader engaged?
- Are there conflicts or obstacles that the characters must overcome?

3. Originality (1-10):
- Is the story unique or does it offer a fresh perspective?
- Does it avoid clichés and predictable plot lines?

4. Character Development (1-10):
- Are the characters well-developed and believable?
- Do they undergo significant growth or change?

5. Overall Impact (1-10):
- Does the story leave a lasting impression?
- How effective is it in conveying emotions or themes?

6. Theme (1-10):
- Is there a clear central theme or message?
- How well is this theme integrated into the story?

7. Conflict (1-10):
- Is the central conflict compelling and well-executed?
- Does it drive the story forward?

8. Pacing (1-10):
- Does the story flow smoothly?
- Are there any slow or rushed sections?

9. Style and Voice (1-10):
- Is the writing style appropriate for the story?
- Does the author have a distinctive voice?

Please provide a brief justification for each rating and then assign a score from 1-10 for each category.

Finally, after you have gone through all 9 points and gave your text-based justification, please generate a JSON:

**JSON Output**: Please provide a structured output in JSON format with the following keys, where each value must be an integer between 1 and 10:

json
{
"Plot Structure": { (1-10) },
"Tension": { (1-10) },
"Originality": { (1-10) },
"Character Development": { (1-10) },
"Overall Impact": { (1-10) },
"Theme": { (1-10) },
"Conflict": { (1-10) },
"Pacing": { (1-10) },
"Style and Voice": { (1-10) }
})";

std::string bullet_block(const StoryState& s) {
  if (s.bullets.empty()) return "(nothing yet)\n";
  return render_story(s);
}

std::string cot_block(const std::vector<std::string>& history) {
  if (history.empty()) return "(none yet)\n";
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i)
    out += std::to_string(i + 1) + ". " + history[i] + "\n";
  return out;
}

}  // namespace

PromptTemplates PromptTemplates::defaults() {
  return {std::string(kPolicyTemplate), std::string(kSimulatorTemplate)};
}

std::string fill_template(
    std::string_view tmpl,
    std::initializer_list<std::pair<std::string_view, std::string_view>> values) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : values) {
        if (tmpl.compare(i + 1, name.size(), name) == 0 && i + 1 + name.size() < tmpl.size() &&
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

std::string render_policy_prompt(const StoryState& state, const PromptTemplates& templates) {
  const std::string bullets = bullet_block(state);
  const std::string cot = cot_block(state.cot_history);
  return fill_template(templates.policy,
                       {{"prompt", state.prompt}, {"bullets", bullets}, {"cot", cot}});
}

std::string render_simulator_prompt(const StoryState& state, const PlotAction& action,
                                    int bullet_count, const PromptTemplates& templates) {
  const std::string bullets = bullet_block(state);
  const std::string cot = cot_block(state.cot_history);
  const std::string count = std::to_string(bullet_count);
  return fill_template(templates.simulator, {{"prompt", state.prompt},
                                             {"bullets", bullets},
                                             {"cot", cot},
                                             {"action", action.text},
                                             {"count", count}});
}

std::string rubric_prompt(std::string_view story) {
  return fill_template(kRubricTemplate, {{"Story Text", story}});
}

}  // namespace cosmos

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

namespace selfcheck {

/// Captioning prompt sent with every image sample. Line breaks and the
/// trailing space on the first line are part of the prompt.
inline constexpr std::string_view kCaptionPrompt =
    "Describe the different objects visible in the image. Please write \n"
    "very simple and clear sentences. Use the format: \"There are\n"
    "[object].\" For example, \"There are cars. There are people. There\n"
    "are cyclists.\"\n"
    "Look carefully and make sure to mention all types of objects you\n"
    "see, especially people. There are multiple types of objects in\n"
    "the image, provide a separate sentence for each type.";

/// Consistency-check template; {{CONTEXT}} and {{SENTENCE}} are substituted.
inline constexpr std::string_view kCheckerPrompt =
    "Context: {{CONTEXT}}  Sentence: {{SENTENCE}}\n"
    "Is the sentence supported by the context above? Answer Yes or No:";

inline std::string render_checker_prompt(std::string_view context, std::string_view sentence) {
  static constexpr std::string_view kContextSlot = "{{CONTEXT}}";
  static constexpr std::string_view kSentenceSlot = "{{SENTENCE}}";
  const std::string_view tmpl = kCheckerPrompt;
  const auto c = tmpl.find(kContextSlot);
  const auto s = tmpl.find(kSentenceSlot);
  std::string out;
  out.reserve(tmpl.size() + context.size() + sentence.size());
  out.append(tmpl.substr(0, c));
  out.append(context);
  out.append(tmpl.substr(c + kContextSlot.size(), s - c - kContextSlot.size()));
  out.append(sentence);
  out.append(tmpl.substr(s + kSentenceSlot.size()));
  return out;
}

}  // namespace selfcheck

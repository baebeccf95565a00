#pragma once

#include <string>
#include <vector>

namespace latentlens::judge {

/// Structured judge output for one visual token and its candidate words.
struct JudgeVerdict {
  std::string reasoning;
  bool interpretable = false;
  std::vector<std::string> concrete_words;
  std::vector<std::string> abstract_words;
  std::vector<std::string> global_words;

  bool operator==(const JudgeVerdict&) const = default;
};

}  // namespace latentlens::judge

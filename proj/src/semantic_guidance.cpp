#include "zerolight/semantic_guidance.hpp"

#include <cctype>

namespace zerolight {

std::string normalize_label(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  if (out.empty()) throw std::invalid_argument("class label is empty");
  return out;
}

AntonymPromptPair build_antonym_pair(const ClassLabel& label) {
  return {"a photo of a " + label.name(), "not a photo of a " + label.name(), label.name()};
}

}  // namespace zerolight

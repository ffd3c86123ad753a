#include "zerolight/clip_tokenizer.hpp"

#include "zerolight/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <climits>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace zerolight {

namespace {

std::string utf8(int cp) {
  std::string s;
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    s.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
  return s;
}

// Reversible byte -> printable code point table used by CLIP's BPE, as
// (byte, code point) pairs in vocabulary order.
std::vector<std::pair<int, int>> byte_code_points() {
  std::vector<std::pair<int, int>> table;
  std::vector<bool> printable(256, false);
  for (int b = '!'; b <= '~'; ++b) printable[b] = true;
  for (int b = 0xa1; b <= 0xac; ++b) printable[b] = true;
  for (int b = 0xae; b <= 0xff; ++b) printable[b] = true;
  for (int b = 0; b < 256; ++b) {
    if (printable[b]) table.emplace_back(b, b);
  }
  int n = 0;
  for (int b = 0; b < 256; ++b) {
    if (!printable[b]) table.emplace_back(b, 256 + n++);
  }
  return table;
}

std::string read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open vocabulary " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
  gzclose(f);
  if (n < 0) throw ParseError("cannot decompress vocabulary " + path.string());
  return out;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

enum class CharClass { Space, Letter, Digit, Other };

CharClass classify(std::string_view s, std::size_t i) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  if (c >= 0x80) return CharClass::Letter;
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') return CharClass::Space;
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return CharClass::Letter;
  if (c >= '0' && c <= '9') return CharClass::Digit;
  return CharClass::Other;
}

std::string clean(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return out;
}

// Mirrors the CLIP pattern:
// <start_of_text>|<end_of_text>|'s|'t|'re|'ve|'m|'ll|'d|\p{L}+|\p{N}|[^\s\p{L}\p{N}]+
std::vector<std::string> pre_tokenize(const std::string& text) {
  static const char* specials[] = {"<start_of_text>", "<end_of_text>"};
  static const char* contractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const char* sp : specials) {
      const std::string_view v(sp);
      if (text.compare(i, v.size(), v) == 0) {
        out.emplace_back(v);
        i += v.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    for (const char* ct : contractions) {
      const std::string_view v(ct);
      if (text.compare(i, v.size(), v) == 0) {
        out.emplace_back(v);
        i += v.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    const CharClass cls = classify(text, i);
    if (cls == CharClass::Space) {
      ++i;
    } else if (cls == CharClass::Digit) {
      out.push_back(text.substr(i, 1));
      ++i;
    } else {
      const std::size_t start = i;
      while (i < text.size() && classify(text, i) == cls) {
        i += utf8_length(static_cast<unsigned char>(text[i]));
      }
      out.push_back(text.substr(start, std::min(i, text.size()) - start));
      i = std::min(i, text.size());
    }
  }
  return out;
}

}  // namespace

ClipTokenizer::ClipTokenizer(const std::filesystem::path& vocab_path) {
  std::istringstream in(read_maybe_gzip(vocab_path));
  std::string line;
  std::vector<std::string> merges;
  std::getline(in, line);  // version header
  constexpr std::size_t kMerges = 49152 - 256 - 2;
  while (merges.size() < kMerges && std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    merges.push_back(line);
  }
  build(merges);
}

ClipTokenizer::ClipTokenizer(const std::vector<std::string>& merges) { build(merges); }

void ClipTokenizer::build(const std::vector<std::string>& merges) {
  std::vector<std::string> vocab;
  byte_symbols_.assign(256, {});
  for (const auto& [b, cp] : byte_code_points()) {
    byte_symbols_[b] = utf8(cp);
    vocab.push_back(byte_symbols_[b]);
  }
  const std::size_t base = vocab.size();
  for (std::size_t i = 0; i < base; ++i) vocab.push_back(vocab[i] + "</w>");
  for (std::size_t r = 0; r < merges.size(); ++r) {
    const auto sp = merges[r].find(' ');
    if (sp == std::string::npos) throw ParseError("vocabulary: malformed merge line '" + merges[r] + "'");
    vocab.push_back(merges[r].substr(0, sp) + merges[r].substr(sp + 1));
    ranks_.emplace(merges[r], static_cast<int>(r));
  }
  vocab.emplace_back("<start_of_text>");
  vocab.emplace_back("<end_of_text>");
  for (std::size_t i = 0; i < vocab.size(); ++i) encoder_[vocab[i]] = static_cast<int>(i);
  start_token_ = encoder_.at("<start_of_text>");
  end_token_ = encoder_.at("<end_of_text>");
}

std::vector<std::string> ClipTokenizer::bpe(const std::string& token) const {
  // Split the mapped token into code points; the last carries "</w>".
  std::vector<std::string> word;
  for (std::size_t i = 0; i < token.size();) {
    const std::size_t n = utf8_length(static_cast<unsigned char>(token[i]));
    word.push_back(token.substr(i, n));
    i += n;
  }
  if (word.empty()) return word;
  word.back() += "</w>";
  while (word.size() > 1) {
    int best_rank = INT_MAX;
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
      auto it = ranks_.find(word[i] + " " + word[i + 1]);
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == INT_MAX) break;
    const std::string first = word[best];
    const std::string second = word[best + 1];
    std::vector<std::string> merged;
    for (std::size_t i = 0; i < word.size();) {
      if (i + 1 < word.size() && word[i] == first && word[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(word[i]);
        ++i;
      }
    }
    word = std::move(merged);
  }
  return word;
}

std::vector<int> ClipTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : pre_tokenize(clean(text))) {
    if (piece == "<start_of_text>" || piece == "<end_of_text>") {
      ids.push_back(encoder_.at(piece));
      continue;
    }
    std::string mapped;
    for (unsigned char b : piece) mapped += byte_symbols_[b];
    for (const auto& sym : bpe(mapped)) {
      auto it = encoder_.find(sym);
      if (it == encoder_.end()) throw std::logic_error("tokenizer: symbol missing from vocabulary");
      ids.push_back(it->second);
    }
  }
  return ids;
}

std::vector<int> ClipTokenizer::encode_with_sentinels(std::string_view text) const {
  std::vector<int> ids = encode(text);
  if (ids.empty()) throw std::invalid_argument("encode_text: empty text");
  if (ids.size() + 2 > static_cast<std::size_t>(kContextLength)) {
    throw std::invalid_argument("encode_text: text exceeds the " + std::to_string(kContextLength) +
                                "-token context");
  }
  ids.insert(ids.begin(), start_token_);
  ids.push_back(end_token_);
  return ids;
}

}  // namespace zerolight

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace zerolight {

/// Byte-level BPE tokenizer compatible with the CLIP vocabulary file
/// (bpe_simple_vocab_16e6.txt[.gz]).
///
/// Text cleaning is limited to whitespace collapsing and ASCII lowercasing;
/// non-ASCII code points are treated as letters during pre-tokenization.
class ClipTokenizer {
 public:
  static constexpr int kContextLength = 77;

  /// Loads merges from a plain or gzip-compressed vocabulary file.
  explicit ClipTokenizer(const std::filesystem::path& vocab_path);

  /// Builds a tokenizer from merge lines ("a b"), in rank order. Vocabulary
  /// ids follow the same construction as the file-based constructor.
  explicit ClipTokenizer(const std::vector<std::string>& merges);

  /// BPE ids without start/end sentinels.
  std::vector<int> encode(std::string_view text) const;

  /// [start, ids..., end]; throws std::invalid_argument when empty or when
  /// the result exceeds the context length.
  std::vector<int> encode_with_sentinels(std::string_view text) const;

  int start_token() const { return start_token_; }
  int end_token() const { return end_token_; }
  std::size_t vocab_size() const { return encoder_.size(); }

 private:
  void build(const std::vector<std::string>& merges);
  std::vector<std::string> bpe(const std::string& token) const;

  std::unordered_map<std::string, int> encoder_;
  std::unordered_map<std::string, int> ranks_;
  std::vector<std::string> byte_symbols_;
  int start_token_ = 0;
  int end_token_ = 0;
};

}  // namespace zerolight

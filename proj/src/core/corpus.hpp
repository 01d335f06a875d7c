#pragma once

// Corpus ingestion: placeholder substitution, whitespace tokenization,
// frequency-ranked vocabulary and sentence encoding.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace protoedit {

using TokenId = std::int32_t;

namespace corpus {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr std::size_t kNumReserved = 4;
inline constexpr std::array<std::string_view, kNumReserved> kReservedSurfaces = {
    "<pad>", "<bos>", "<eos>", "<unk>"};

inline constexpr std::size_t kDefaultMaxVocab = 10000;
inline constexpr std::size_t kDefaultMaxLength = 50;

// Rule-based stand-in for named-entity preprocessing. Text is lowercased
// (ASCII only) and then each rule is applied in order.
class Placeholders {
 public:
  struct Rule {
    std::string pattern;  // ECMAScript regex, matched against lowercased text
    std::string replacement;
  };

  // Digit runs -> <cardinal>; month and weekday names -> <date> when
  // `dates` is set. "may" is left alone since it is usually the verb.
  explicit Placeholders(bool dates = true, std::vector<Rule> extra = {});

  std::string apply(std::string_view line) const;

 private:
  bool dates_;
  std::regex date_regex_;
  std::vector<std::pair<std::regex, std::string>> extra_;
};

std::string apply_placeholders(std::string_view line);

std::vector<std::string_view> tokenize(std::string_view line);

class Vocabulary {
 public:
  Vocabulary();  // reserved tokens only

  // `surfaces` must start with the four reserved markers.
  static Vocabulary from_tokens(std::vector<std::string> surfaces);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;
  void write(std::ostream& out) const;

  std::size_t size() const { return tokens_.size(); }
  // Unknown surfaces map to kUnk.
  TokenId id(std::string_view surface) const;
  bool contains(std::string_view surface) const;
  const std::string& surface(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Streaming frequency counter. Reserved surfaces appearing in text are not
// counted.
class VocabBuilder {
 public:
  void add_line(std::string_view line);
  // Keeps the top (max_size - 4) tokens by frequency, ties broken by byte
  // order. Throws if nothing was added or max_size < 5.
  Vocabulary finish(std::size_t max_size) const;
  std::size_t lines() const { return lines_; }

 private:
  std::unordered_map<std::string, std::size_t> counts_;
  std::size_t lines_ = 0;
};

Vocabulary build_vocab(std::span<const std::string> lines, std::size_t max_size);

struct Sentence {
  std::vector<TokenId> ids;  // no BOS/EOS
  std::size_t source_line = 0;

  std::size_t size() const { return ids.size(); }
  friend bool operator==(const Sentence& a, const Sentence& b) { return a.ids == b.ids; }
};

// Whitespace tokenization; unknown tokens (and reserved surfaces) become
// kUnk. Throws on a line with no tokens.
Sentence encode(std::string_view line, const Vocabulary& vocab, std::size_t source_line = 0);
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

struct IngestOptions {
  std::size_t max_length = kDefaultMaxLength;
  bool dates = true;
};

struct IngestStats {
  std::size_t lines_read = 0;
  std::size_t empty_dropped = 0;
  std::size_t too_long_dropped = 0;
  std::size_t tokens = 0;
  std::size_t oov_tokens = 0;

  double oov_rate() const { return tokens == 0 ? 0.0 : double(oov_tokens) / double(tokens); }
};

// Reads raw lines, applies placeholders and drops empty or over-length
// lines. The surviving preprocessed lines are returned in input order.
std::vector<std::string> preprocess_lines(std::istream& in, const IngestOptions& options,
                                          IngestStats* stats = nullptr);

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Sentence> sentences) : sentences_(std::move(sentences)) {}

  // Preprocesses and encodes every line of `path`.
  static Corpus load(const std::string& path, const Vocabulary& vocab,
                     const IngestOptions& options = {}, IngestStats* stats = nullptr);
  static Corpus from_lines(std::span<const std::string> lines, const Vocabulary& vocab,
                           const IngestOptions& options = {}, IngestStats* stats = nullptr);

  std::size_t size() const { return sentences_.size(); }
  bool empty() const { return sentences_.empty(); }
  const Sentence& operator[](std::size_t i) const { return sentences_[i]; }
  const std::vector<Sentence>& sentences() const { return sentences_; }
  auto begin() const { return sentences_.begin(); }
  auto end() const { return sentences_.end(); }

 private:
  std::vector<Sentence> sentences_;
};

// Fraction of tokens equal to kUnk.
double oov_rate(const Corpus& corpus);

}  // namespace corpus
}  // namespace protoedit

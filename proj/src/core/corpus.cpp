#include "corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace protoedit::corpus {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_reserved(std::string_view s) {
  return std::find(kReservedSurfaces.begin(), kReservedSurfaces.end(), s) !=
         kReservedSurfaces.end();
}

// Digit runs, including internal separators as in "3.50" or "10:30", become
// one <cardinal>.
std::string replace_cardinals(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i])) {
      out.push_back(text[i++]);
      continue;
    }
    while (i < text.size()) {
      if (is_digit(text[i])) {
        ++i;
      } else if ((text[i] == '.' || text[i] == ',' || text[i] == ':') && i + 1 < text.size() &&
                 is_digit(text[i + 1])) {
        ++i;
      } else {
        break;
      }
    }
    out += "<cardinal>";
  }
  return out;
}

}  // namespace

Placeholders::Placeholders(bool dates, std::vector<Rule> extra)
    : dates_(dates),
      date_regex_(
          "\\b(january|february|march|april|june|july|august|september|october|november|"
          "december|monday|tuesday|wednesday|thursday|friday|saturday|sunday)\\b",
          std::regex::ECMAScript | std::regex::optimize) {
  for (auto& rule : extra) {
    try {
      extra_.emplace_back(std::regex(rule.pattern, std::regex::ECMAScript), rule.replacement);
    } catch (const std::regex_error& e) {
      fail(ErrorCode::kInvalidArgument, "bad placeholder rule '" + rule.pattern + "': " + e.what());
    }
  }
}

std::string Placeholders::apply(std::string_view line) const {
  std::string text(line);
  for (char& c : text) {
    if (static_cast<unsigned char>(c) < 128) c = static_cast<char>(std::tolower(c));
  }
  text = replace_cardinals(text);
  if (dates_) text = std::regex_replace(text, date_regex_, "<date>");
  for (const auto& [pattern, replacement] : extra_) text = std::regex_replace(text, pattern, replacement);
  return text;
}

std::string apply_placeholders(std::string_view line) {
  static const Placeholders rules;
  return rules.apply(line);
}

std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

Vocabulary::Vocabulary() {
  for (auto s : kReservedSurfaces) {
    index_.emplace(std::string(s), static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(s);
  }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> surfaces) {
  require(surfaces.size() >= kNumReserved, "vocabulary must contain the reserved tokens");
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    if (surfaces[i] != kReservedSurfaces[i]) {
      fail(ErrorCode::kFormat, "vocabulary line " + std::to_string(i + 1) + " must be '" +
                                   std::string(kReservedSurfaces[i]) + "'");
    }
  }
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.index_.clear();
  for (auto& s : surfaces) {
    if (s.empty() || std::any_of(s.begin(), s.end(), is_space)) {
      fail(ErrorCode::kFormat, "vocabulary token may not be empty or contain whitespace");
    }
    auto [it, inserted] = vocab.index_.emplace(s, static_cast<TokenId>(vocab.tokens_.size()));
    if (!inserted) fail(ErrorCode::kFormat, "duplicate vocabulary token '" + s + "'");
    vocab.tokens_.push_back(std::move(s));
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open vocabulary file '" + path + "'");
  std::vector<std::string> surfaces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    surfaces.push_back(line);
  }
  return from_tokens(std::move(surfaces));
}

void Vocabulary::write(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write vocabulary file '" + path + "'");
  write(out);
  if (!out) fail(ErrorCode::kIo, "failed writing vocabulary file '" + path + "'");
}

TokenId Vocabulary::id(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end() || it->second < static_cast<TokenId>(kNumReserved)) return kUnk;
  return it->second;
}

bool Vocabulary::contains(std::string_view surface) const {
  return index_.find(std::string(surface)) != index_.end();
}

const std::string& Vocabulary::surface(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    fail(ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[id];
}

void VocabBuilder::add_line(std::string_view line) {
  ++lines_;
  for (auto tok : tokenize(line)) {
    if (!is_reserved(tok)) ++counts_[std::string(tok)];
  }
}

Vocabulary VocabBuilder::finish(std::size_t max_size) const {
  require(max_size > kNumReserved, "max vocabulary size must be at least 5");
  if (lines_ == 0) fail(ErrorCode::kInvalidArgument, "cannot build a vocabulary from an empty stream");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts_.begin(), counts_.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const std::size_t keep = std::min(ranked.size(), max_size - kNumReserved);
  std::vector<std::string> surfaces(kReservedSurfaces.begin(), kReservedSurfaces.end());
  for (std::size_t i = 0; i < keep; ++i) surfaces.push_back(ranked[i].first);
  return Vocabulary::from_tokens(std::move(surfaces));
}

Vocabulary build_vocab(std::span<const std::string> lines, std::size_t max_size) {
  VocabBuilder builder;
  for (const auto& line : lines) builder.add_line(line);
  return builder.finish(max_size);
}

Sentence encode(std::string_view line, const Vocabulary& vocab, std::size_t source_line) {
  Sentence s;
  s.source_line = source_line;
  for (auto tok : tokenize(line)) s.ids.push_back(vocab.id(tok));
  if (s.ids.empty()) fail(ErrorCode::kInvalidArgument, "cannot encode a line with no tokens");
  return s;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.surface(ids[i]);
  }
  return out;
}

std::vector<std::string> preprocess_lines(std::istream& in, const IngestOptions& options,
                                          IngestStats* stats) {
  const Placeholders rules(options.dates);
  IngestStats local;
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    ++local.lines_read;
    std::string text = rules.apply(line);
    const auto tokens = tokenize(text);
    if (tokens.empty()) {
      ++local.empty_dropped;
      continue;
    }
    if (tokens.size() > options.max_length) {
      ++local.too_long_dropped;
      continue;
    }
    std::string joined;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) joined.push_back(' ');
      joined.append(tokens[i]);
    }
    local.tokens += tokens.size();
    out.push_back(std::move(joined));
  }
  if (stats) *stats = local;
  return out;
}

Corpus Corpus::from_lines(std::span<const std::string> lines, const Vocabulary& vocab,
                          const IngestOptions& options, IngestStats* stats) {
  const Placeholders rules(options.dates);
  IngestStats local;
  std::vector<Sentence> sentences;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    ++local.lines_read;
    const std::string text = rules.apply(lines[i]);
    const auto tokens = tokenize(text);
    if (tokens.empty()) {
      ++local.empty_dropped;
      continue;
    }
    if (tokens.size() > options.max_length) {
      ++local.too_long_dropped;
      continue;
    }
    Sentence s = encode(text, vocab, i);
    local.tokens += s.ids.size();
    local.oov_tokens += static_cast<std::size_t>(std::count(s.ids.begin(), s.ids.end(), kUnk));
    sentences.push_back(std::move(s));
  }
  if (stats) *stats = local;
  return Corpus(std::move(sentences));
}

Corpus Corpus::load(const std::string& path, const Vocabulary& vocab, const IngestOptions& options,
                    IngestStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open corpus file '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  return from_lines(lines, vocab, options, stats);
}

double oov_rate(const Corpus& corpus) {
  std::size_t total = 0;
  std::size_t unk = 0;
  for (const auto& s : corpus) {
    total += s.ids.size();
    unk += static_cast<std::size_t>(std::count(s.ids.begin(), s.ids.end(), kUnk));
  }
  return total == 0 ? 0.0 : double(unk) / double(total);
}

}  // namespace protoedit::corpus

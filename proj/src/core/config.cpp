#include "config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace protoedit {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_uint(std::string_view s, std::uint64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && !s.empty();
}

bool parse_real(std::string_view s, double& out) {
  const std::string str(s);
  if (str.empty()) return false;
  char* end = nullptr;
  out = std::strtod(str.c_str(), &end);
  return end == str.c_str() + str.size() && std::isfinite(out);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

void check_value(const RunConfig::Key& k, std::string_view v) {
  auto bad = [&](const char* what) {
    fail(ErrorCode::kInvalidArgument, "config key '" + k.name + "' expects " + what + ", got '" + std::string(v) + "'");
  };
  switch (k.type) {
    case RunConfig::Type::kUInt: {
      std::uint64_t u;
      if (!parse_uint(v, u)) bad("a non-negative integer");
      break;
    }
    case RunConfig::Type::kReal: {
      double d;
      if (!parse_real(v, d)) bad("a finite number");
      break;
    }
    case RunConfig::Type::kBool:
      if (v != "true" && v != "false") bad("true or false");
      break;
    case RunConfig::Type::kText:
      if (v.find('\n') != std::string_view::npos) bad("a single line");
      break;
    case RunConfig::Type::kRealList: {
      for (const auto& part : split_list(v)) {
        double d;
        if (!parse_real(part, d)) bad("a comma-separated list of numbers");
      }
      break;
    }
  }
}

}  // namespace

const std::vector<RunConfig::Key>& RunConfig::schema() {
  using T = Type;
  static const std::vector<Key> keys = {
      {"seed", T::kUInt, "0", "global random seed"},
      {"threads", T::kUInt, "0", "worker threads for mining and evaluation (0 = all cores)"},
      {"vocab_size", T::kUInt, "10000", "maximum vocabulary size including 4 reserved tokens"},
      {"max_length", T::kUInt, "50", "drop corpus sentences longer than this"},
      {"dates", T::kBool, "true", "map month and weekday names to <date>"},
      {"n_hash", T::kUInt, "128", "minhash signature length (bands * rows)"},
      {"bands", T::kUInt, "32", "LSH bands"},
      {"rows", T::kUInt, "4", "signature rows per band"},
      {"lsh_seed", T::kUInt, "24301", "minhash key seed"},
      {"n_seeds", T::kUInt, "1000", "BFS start nodes for pair mining"},
      {"budget", T::kUInt, "100000", "number of undirected edges sampled after BFS"},
      {"include_identity", T::kBool, "true", "keep exact-duplicate pairs (distance 0)"},
      {"layers", T::kUInt, "1", "LSTM layers in encoder and decoder"},
      {"hidden", T::kUInt, "128", "LSTM hidden size"},
      {"word_dim", T::kUInt, "64", "word embedding size; edit vectors have twice this"},
      {"decode_length", T::kUInt, "50", "maximum generated tokens"},
      {"kappa", T::kReal, "25", "vMF posterior concentration"},
      {"epsilon", T::kReal, "1", "width of the posterior norm window"},
      {"norm_max", T::kReal, "10", "upper end of the prior norm range"},
      {"optimizer", T::kText, "adam", "adam or sgd"},
      {"learning_rate", T::kReal, "0.001", "optimizer step size"},
      {"batch_size", T::kUInt, "32", "pairs (or sentences) per update"},
      {"epochs", T::kUInt, "10", "passes over the training pairs"},
      {"clip_norm", T::kReal, "5", "global gradient-norm clip (0 disables)"},
      {"init_scale", T::kReal, "0.1", "uniform initialization half-width"},
      {"record_timing", T::kBool, "false", "write wall-clock tokens/sec to metrics (breaks byte reproducibility)"},
      {"samples", T::kUInt, "1", "posterior samples per ELBO estimate in evaluation"},
      {"lambda_grid", T::kRealList, "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "interpolation weights searched on validation"},
      {"temperature", T::kReal, "1", "sampling temperature (0 = greedy)"},
      {"beam", T::kUInt, "20", "beam width for analogy decoding"},
      {"topk", T::kUInt, "10", "analogy hits counted within the top k"},
      {"n_gen", T::kUInt, "10", "sentences produced by generate"},
      {"steps", T::kUInt, "5", "edits per random walk"},
      {"n_seq", T::kUInt, "100", "random walks tried by control"},
      {"max_tokens", T::kUInt, "0", "control predicate: endpoint shorter than this many tokens (0 = off)"},
      {"keyword", T::kText, "", "control predicate: endpoint contains this word"},
      {"max_quads", T::kUInt, "0", "analogy quads kept per word pair (0 = all)"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : schema()) values_[k.name] = k.default_value;
}

const RunConfig::Key& RunConfig::key_info(std::string_view key) const {
  for (const auto& k : schema())
    if (k.name == key) return k;
  fail(ErrorCode::kInvalidArgument, "unknown config key '" + std::string(key) + "'");
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const Key& k = key_info(key);
  const std::string v = trim(value);
  check_value(k, v);
  values_[k.name] = v;
}

bool RunConfig::is_default(std::string_view key) const {
  return values_.find(key)->second == key_info(key).default_value;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kInvalidArgument, "config line " + std::to_string(line_no) + ": expected key=value");
    }
    cfg.set(trim(t.substr(0, eq)), t.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t RunConfig::get_uint(std::string_view key) const {
  require(key_info(key).type == Type::kUInt, "config key '" + std::string(key) + "' is not an integer");
  std::uint64_t u = 0;
  parse_uint(values_.find(key)->second, u);
  return u;
}

double RunConfig::get_real(std::string_view key) const {
  require(key_info(key).type == Type::kReal, "config key '" + std::string(key) + "' is not a number");
  double d = 0;
  parse_real(values_.find(key)->second, d);
  return d;
}

bool RunConfig::get_bool(std::string_view key) const {
  require(key_info(key).type == Type::kBool, "config key '" + std::string(key) + "' is not a boolean");
  return values_.find(key)->second == "true";
}

const std::string& RunConfig::get_text(std::string_view key) const {
  require(key_info(key).type == Type::kText, "config key '" + std::string(key) + "' is not text");
  return values_.find(key)->second;
}

std::vector<double> RunConfig::get_real_list(std::string_view key) const {
  require(key_info(key).type == Type::kRealList, "config key '" + std::string(key) + "' is not a list");
  std::vector<double> out;
  for (const auto& part : split_list(values_.find(key)->second)) {
    double d = 0;
    parse_real(part, d);
    out.push_back(d);
  }
  return out;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& k : schema()) out += k.name + "=" + values_.find(k.name)->second + "\n";
  return out;
}

}  // namespace protoedit

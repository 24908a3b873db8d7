#include "tfnas/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "tfnas/errors.hpp"

namespace tfnas {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string read_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(std::string("cannot open ") + what + " " + path.string(), 0, path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

template <typename T>
T parse_number(std::string_view token, std::size_t line, const std::string& key) {
  T value{};
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (token.empty() || ec != std::errc() || ptr != end) {
    throw ParseError("expected a number, got '" + std::string(token) + "'", line, key);
  }
  return value;
}

// Comma-separated integers; `a..b` expands to the inclusive range.
std::vector<std::uint64_t> parse_id_list(std::string_view value, std::size_t line, const std::string& key) {
  std::vector<std::uint64_t> out;
  for (auto item : split(value, ',')) {
    const auto dots = item.find("..");
    if (dots == std::string_view::npos) {
      out.push_back(parse_number<std::uint64_t>(item, line, key));
      continue;
    }
    const auto lo = parse_number<std::uint64_t>(trim(item.substr(0, dots)), line, key);
    const auto hi = parse_number<std::uint64_t>(trim(item.substr(dots + 2)), line, key);
    if (hi < lo) throw ParseError("empty range '" + std::string(item) + "'", line, key);
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
  }
  return out;
}

std::string sanitize(std::string s) {
  std::replace_if(s.begin(), s.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
  return s;
}

std::uint64_t noise_seed(std::uint64_t seed, std::uint64_t minibatch_id) {
  return seed ^ (minibatch_id * 0x9E3779B97F4A7C15ULL);
}

struct Expected {
  MetricId id;
  std::optional<std::size_t> layer;
};

// Outcomes one cell yields, in report order.
std::vector<Expected> expected_outcomes(const RunConfig& config) {
  std::vector<Expected> out;
  for (auto id : config.metrics) {
    if (id == MetricId::kHiddenCovariance && applies_to(id, config.search_space)) {
      for (auto layer : config.hidden_layers) out.push_back({id, layer});
    } else {
      out.push_back({id, std::nullopt});
    }
  }
  return out;
}

std::string fingerprint(const RunConfig& config) {
  std::ostringstream out;
  out << "space=" << to_string(config.search_space) << " N=" << config.batch_size << " T=" << config.seq_len
      << " vocab=" << config.vocab_size;
  if (config.search_space == SearchSpace::kRnn) out << " embed=" << config.embed_dim << " hidden=" << config.hidden_dim;
  if (config.corpus) {
    out << " corpus=" << config.corpus->filename().string();
  } else {
    out << " corpus=synthetic:" << config.synthetic_tokens;
  }
  return out.str();
}

constexpr std::string_view kJournalMagic = "# tfnas journal v1 ";

using CellKey = std::tuple<std::string, std::uint64_t, std::uint64_t>;
using CellOutcomes = std::map<std::string, MetricOutcome>;

std::string journal_line(const CellKey& key, const MetricOutcome& o) {
  std::ostringstream out;
  out << std::get<0>(key) << '\t' << std::get<1>(key) << '\t' << std::get<2>(key) << '\t' << to_string(o.metric)
      << '\t' << (o.layer_index ? std::to_string(*o.layer_index) : "-") << '\t' << format_real(o.normalized) << '\t'
      << format_real(o.raw) << '\t' << format_real(o.feature_count) << '\t' << to_string(o.degeneracy) << '\t'
      << sanitize(o.detail) << '\n';
  return out.str();
}

double parse_real(std::string_view token) {
  if (token == "nan") return kNaN;
  if (token == "inf") return std::numeric_limits<double>::infinity();
  if (token == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) throw std::invalid_argument("bad real");
  return v;
}

// Reads completed lines; a torn trailing line from an interrupted run is
// ignored, as is anything unparsable.
std::map<CellKey, CellOutcomes> read_journal(const fs::path& path, const std::string& expected_header) {
  std::map<CellKey, CellOutcomes> cells;
  std::ifstream in(path, std::ios::binary);
  if (!in) return cells;
  std::stringstream buffer;
  buffer << in.rdbuf();
  const auto text = buffer.str();
  std::size_t start = 0;
  bool first = true;
  while (true) {
    const auto end = text.find('\n', start);
    if (end == std::string::npos) break;
    const std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (first) {
      first = false;
      if (line != expected_header) {
        throw ContractError("journal " + path.string() + " was written for a different configuration");
      }
      continue;
    }
    const auto f = split(line, '\t');
    if (f.size() != 10) continue;
    try {
      MetricOutcome o;
      const auto id = parse_metric_id(f[3]);
      const auto d = parse_degeneracy(f[8]);
      if (!id || !d) continue;
      o.metric = *id;
      if (f[4] != "-") o.layer_index = parse_number<std::size_t>(f[4], 0, "layer");
      o.normalized = parse_real(f[5]);
      o.raw = parse_real(f[6]);
      o.feature_count = parse_real(f[7]);
      o.degeneracy = *d;
      o.detail = std::string(f[9]);
      CellKey key{std::string(f[0]), parse_number<std::uint64_t>(f[1], 0, "seed"),
                  parse_number<std::uint64_t>(f[2], 0, "minibatch")};
      cells[key][metric_label(o.metric, o.layer_index)] = std::move(o);
    } catch (const std::exception&) {
      continue;
    }
  }
  return cells;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("cannot write " + path.string());
  out << text;
}

std::string score_table(const std::vector<ScoreRow>& rows) {
  std::ostringstream out;
  out << "genome_key\tmetric\tnormalized\tseed\tminibatch\tvalue\tstatus\tdetail\n";
  for (const auto& r : rows) {
    out << r.genome_key << '\t' << r.label << '\t' << (r.score.normalized ? "true" : "false") << '\t' << r.score.seed
        << '\t' << r.score.minibatch_id << '\t' << format_real(r.score.value) << '\t' << to_string(r.score.degeneracy)
        << '\t' << sanitize(r.score.detail) << '\n';
  }
  return out.str();
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> cartesian(const RunConfig& config) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  for (auto s : config.seeds) {
    for (auto m : config.minibatches) out.emplace_back(s, m);
  }
  return out;
}

std::string variant_name(bool normalized) { return normalized ? "normalized" : "raw"; }

}  // namespace

// --- configuration -----------------------------------------------------------------------

ModelDims RunConfig::dims() const {
  ModelDims d;
  d.rnn = RnnDims{vocab_size, embed_dim, hidden_dim};
  d.transformer = TransformerDims{vocab_size, seq_len};
  return d;
}

std::vector<bool> RunConfig::normalization_variants() const {
  switch (normalization) {
    case Normalization::kNormalized: return {true};
    case Normalization::kRaw: return {false};
    case Normalization::kBoth: return {true, false};
  }
  return {true};
}

RunConfig parse_config(std::string_view text, const fs::path& base_dir) {
  RunConfig config;
  std::set<std::string> seen;
  std::vector<std::string> metric_tokens;
  std::size_t metrics_line = 0;
  std::optional<int> sign;
  std::size_t line_no = 0;
  bool have_version = false;

  auto path_of = [&](std::string_view v) {
    fs::path p{std::string(v)};
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };

  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    auto raw = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no, "");
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ParseError("duplicate key", line_no, key);
    if (!have_version && key != "version") throw ParseError("the first setting must be 'version'", line_no, key);

    if (key == "version") {
      config.version = parse_number<int>(value, line_no, key);
      if (config.version != kConfigVersion) throw ParseError("unsupported config version", line_no, key);
      have_version = true;
    } else if (key == "search_space") {
      const auto space = parse_search_space(value);
      if (!space) throw ParseError("unknown search space '" + std::string(value) + "'", line_no, key);
      config.search_space = *space;
    } else if (key == "metrics") {
      for (auto t : split(value, ',')) metric_tokens.emplace_back(t);
      metrics_line = line_no;
    } else if (key == "seeds") {
      config.seeds = parse_id_list(value, line_no, key);
    } else if (key == "minibatches") {
      config.minibatches = parse_id_list(value, line_no, key);
    } else if (key == "batch_size") {
      config.batch_size = parse_number<std::size_t>(value, line_no, key);
    } else if (key == "seq_len") {
      config.seq_len = parse_number<std::size_t>(value, line_no, key);
    } else if (key == "vocab_size") {
      config.vocab_size = parse_number<std::size_t>(value, line_no, key);
    } else if (key == "embed_dim") {
      config.embed_dim = parse_number<std::size_t>(value, line_no, key);
    } else if (key == "hidden_dim") {
      config.hidden_dim = parse_number<std::size_t>(value, line_no, key);
    } else if (key == "hidden_layers") {
      config.hidden_layers.clear();
      for (auto v : parse_id_list(value, line_no, key)) {
        if (v >= kRnnStackDepth) throw ParseError("hidden layer must be 0, 1 or 2", line_no, key);
        config.hidden_layers.push_back(static_cast<std::size_t>(v));
      }
    } else if (key == "normalization") {
      if (value == "normalized" || value == "true") {
        config.normalization = Normalization::kNormalized;
      } else if (value == "raw" || value == "false") {
        config.normalization = Normalization::kRaw;
      } else if (value == "both") {
        config.normalization = Normalization::kBoth;
      } else {
        throw ParseError("expected normalized, raw or both", line_no, key);
      }
    } else if (key == "corpus") {
      config.corpus = path_of(value);
    } else if (key == "vocab") {
      config.vocab = path_of(value);
    } else if (key == "benchmark") {
      config.benchmark = path_of(value);
    } else if (key == "genomes") {
      config.genomes = path_of(value);
    } else if (key == "synthetic_tokens") {
      config.synthetic_tokens = parse_number<std::size_t>(value, line_no, key);
    } else if (key == "output") {
      config.output = path_of(value);
    } else if (key == "format") {
      if (value == "json") {
        config.format = ReportFormat::kJson;
      } else if (value == "tsv") {
        config.format = ReportFormat::kTsv;
      } else {
        throw ParseError("expected json or tsv", line_no, key);
      }
    } else if (key == "workers") {
      config.workers = parse_number<std::size_t>(value, line_no, key);
    } else if (key == "performance_sign") {
      const auto v = value.starts_with('+') ? value.substr(1) : value;
      sign = parse_number<int>(v, line_no, key);
      if (*sign != 1 && *sign != -1) throw ParseError("performance sign must be +1 or -1", line_no, key);
    } else {
      throw ParseError("unknown key", line_no, key);
    }
  }
  if (!have_version) throw ParseError("missing 'version'", line_no, "version");

  for (const auto& t : metric_tokens) {
    if (t == "all") {
      for (const auto& d : metric_registry()) {
        if (applies_to(d.id, config.search_space)) config.metrics.push_back(d.id);
      }
      continue;
    }
    const auto id = parse_metric_id(t);
    if (!id) throw ParseError("unknown metric '" + t + "'", metrics_line, "metrics");
    config.metrics.push_back(*id);
  }
  config.performance_sign = sign.value_or(config.search_space == SearchSpace::kRnn ? -1 : 1);

  if (config.metrics.empty()) throw ValidationError("config names no metrics");
  if (config.seeds.empty()) throw ValidationError("config names no seeds");
  if (config.minibatches.empty()) throw ValidationError("config names no minibatches");
  if (config.batch_size < 2) throw ValidationError("batch_size must be at least 2");
  if (config.seq_len < 1 || config.vocab_size < 3 || config.embed_dim < 1 || config.hidden_dim < 1) {
    throw ValidationError("seq_len, vocab_size and model dimensions must be positive");
  }
  if (config.workers < 1) throw ValidationError("workers must be at least 1");
  if (config.corpus.has_value() != config.vocab.has_value()) {
    throw ValidationError("corpus and vocab must be given together");
  }
  return config;
}

RunConfig load_config(const fs::path& path) {
  return parse_config(read_file(path, "config"), path.parent_path());
}

// --- corpus ---------------------------------------------------------------------------------

double Corpus::oov_rate() const {
  return stream.empty() ? 0.0 : static_cast<double>(oov_count) / static_cast<double>(stream.size());
}

Corpus tokenize(std::string_view text, std::string_view vocab_text) {
  std::unordered_map<std::string, std::int64_t> vocab;
  Corpus corpus;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < vocab_text.size()) {
    const auto end = vocab_text.find('\n', start);
    const auto line =
        trim(vocab_text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    start = end == std::string_view::npos ? vocab_text.size() : end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto sep = line.find_first_of(" \t");
    if (sep == std::string_view::npos) throw ParseError("expected 'token id'", line_no, "id");
    const std::string token(line.substr(0, sep));
    const auto id = parse_number<std::int64_t>(trim(line.substr(sep)), line_no, "id");
    if (id < 2) throw ParseError("ids 0 and 1 are reserved", line_no, "id");
    if (!vocab.emplace(token, id).second) throw ParseError("duplicate token '" + token + "'", line_no, "token");
    corpus.id_limit = std::max(corpus.id_limit, static_cast<std::size_t>(id) + 1);
  }
  if (vocab.empty()) throw ParseError("vocabulary is empty", 0, "vocab");

  std::istringstream lines{std::string(text)};
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream words(line);
    std::vector<std::int64_t> ids;
    std::string word;
    while (words >> word) {
      const auto it = vocab.find(word);
      if (it == vocab.end()) {
        ids.push_back(kUnknownToken);
        ++corpus.oov_count;
      } else {
        ids.push_back(it->second);
      }
    }
    if (ids.empty()) continue;
    corpus.stream.insert(corpus.stream.end(), ids.begin(), ids.end());
    corpus.lines.push_back(std::move(ids));
  }
  if (corpus.stream.empty()) throw ParseError("corpus is empty", 0, "corpus");
  return corpus;
}

Corpus load_corpus(const fs::path& path, const fs::path& vocab_path) {
  return tokenize(read_file(path, "corpus"), read_file(vocab_path, "vocabulary"));
}

Corpus synthetic_corpus(std::size_t vocab, std::size_t length, std::uint64_t seed) {
  if (vocab < 3) throw ContractError("synthetic corpus needs a vocabulary above the reserved ids");
  if (length == 0) throw ContractError("synthetic corpus length must be positive");
  std::seed_seq seq{seed, std::uint64_t{0x636f72707573}};
  Rng rng(seq);
  std::uniform_int_distribution<std::int64_t> token(2, static_cast<std::int64_t>(vocab) - 1);
  Corpus corpus;
  corpus.stream.resize(length);
  for (auto& t : corpus.stream) t = token(rng);
  corpus.lines.push_back(corpus.stream);
  corpus.id_limit = vocab;
  return corpus;
}

Minibatch sample_minibatch(const Corpus& corpus, Rng& rng, std::size_t batch_size, std::size_t seq_len,
                           BatchMode mode) {
  if (seq_len == 0 || batch_size == 0) throw ContractError("minibatch extents must be positive");
  if (corpus.size() < seq_len + 1) throw ContractError("corpus shorter than one window plus its target");
  Minibatch batch;
  batch.batch_size = batch_size;
  batch.seq_len = seq_len;
  batch.tokens.resize(batch_size * seq_len);
  batch.targets.assign(batch_size * seq_len, kIgnoreTarget);
  // Distinct window starts when the corpus allows it; a repeated window
  // would make two rows of every batch-correlation kernel identical.
  const auto starts = corpus.size() - seq_len;
  std::vector<std::size_t> chosen;
  if (starts >= batch_size) {
    std::set<std::size_t> used;
    std::uniform_int_distribution<std::size_t> start(0, starts - 1);
    while (chosen.size() < batch_size) {
      const auto s = start(rng);
      if (used.insert(s).second) chosen.push_back(s);
    }
  } else {
    std::uniform_int_distribution<std::size_t> start(0, starts - 1);
    for (std::size_t n = 0; n < batch_size; ++n) chosen.push_back(start(rng));
  }
  const auto masked = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(kMaskRate * seq_len)));
  std::vector<std::size_t> positions(seq_len);
  for (std::size_t n = 0; n < batch_size; ++n) {
    const auto s = chosen[n];
    auto* tokens = batch.tokens.data() + n * seq_len;
    auto* targets = batch.targets.data() + n * seq_len;
    std::copy_n(corpus.stream.begin() + static_cast<std::ptrdiff_t>(s), seq_len, tokens);
    if (mode == BatchMode::kNextToken) {
      std::copy_n(corpus.stream.begin() + static_cast<std::ptrdiff_t>(s + 1), seq_len, targets);
      continue;
    }
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::shuffle(positions.begin(), positions.end(), rng);
    for (std::size_t k = 0; k < masked; ++k) {
      targets[positions[k]] = tokens[positions[k]];
      tokens[positions[k]] = kMaskToken;
    }
  }
  return batch;
}

Minibatch minibatch_for(const Corpus& corpus, const RunConfig& config, std::uint64_t minibatch_id) {
  std::seed_seq seq{minibatch_id, std::uint64_t{0x6d696e69}};
  Rng rng(seq);
  const auto mode = config.search_space == SearchSpace::kRnn ? BatchMode::kNextToken : BatchMode::kMasked;
  return sample_minibatch(corpus, rng, config.batch_size, config.seq_len, mode);
}

// --- scoring --------------------------------------------------------------------------------

std::string metric_label(MetricId id, std::optional<std::size_t> layer) {
  std::string label(to_string(id));
  if (layer) label += "@layer" + std::to_string(*layer);
  return label;
}

Workload load_workload(const RunConfig& config) {
  Workload w;
  if (config.benchmark) w.records = load_benchmark(*config.benchmark);
  if (config.genomes) {
    const auto text = read_file(*config.genomes, "genome list");
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      w.genomes.push_back(deserialize(t, line_no));
    }
  } else if (config.benchmark) {
    for (const auto& r : w.records) w.genomes.push_back(r.genome);
  } else {
    throw ValidationError("config needs a benchmark table or a genome list");
  }
  if (w.genomes.empty()) throw ValidationError("no genomes to score");
  for (const auto& g : w.genomes) {
    if (space_of(g) != config.search_space) {
      throw ValidationError("genome " + genome_key(g) + " is not in the configured search space");
    }
  }
  return w;
}

Corpus load_or_synthesize_corpus(const RunConfig& config) {
  Corpus corpus = config.corpus ? load_corpus(*config.corpus, *config.vocab)
                                : synthetic_corpus(config.vocab_size, config.synthetic_tokens, 0);
  if (corpus.id_limit > config.vocab_size) {
    throw ValidationError("vocabulary ids exceed vocab_size " + std::to_string(config.vocab_size));
  }
  return corpus;
}

ScoreSummary score_cells(const RunConfig& config, const std::vector<Genome>& genomes, const Corpus& corpus,
                         const std::vector<std::pair<std::uint64_t, std::uint64_t>>& seed_minibatch,
                         const fs::path& journal, const Progress& progress) {
  const auto expected = expected_outcomes(config);
  const auto header = std::string(kJournalMagic) + fingerprint(config);
  auto done = read_journal(journal, header);
  const bool fresh = !fs::exists(journal) || fs::file_size(journal) == 0;

  std::map<std::uint64_t, Minibatch> batches;
  for (const auto& [seed, mb] : seed_minibatch) {
    if (!batches.count(mb)) batches.emplace(mb, minibatch_for(corpus, config, mb));
  }

  std::vector<std::string> keys;
  for (const auto& g : genomes) keys.push_back(genome_key(g));

  struct Unit {
    std::size_t genome;
    std::uint64_t seed;
    std::uint64_t minibatch;
  };
  std::vector<Unit> pending;
  std::set<CellKey> queued;
  ScoreSummary summary;
  for (std::size_t g = 0; g < genomes.size(); ++g) {
    for (const auto& [seed, mb] : seed_minibatch) {
      CellKey key{keys[g], seed, mb};
      const auto it = done.find(key);
      const bool complete = it != done.end() && std::all_of(expected.begin(), expected.end(), [&](const Expected& e) {
                              return it->second.count(metric_label(e.id, e.layer)) > 0;
                            });
      if (complete) {
        ++summary.reused_cells;
      } else if (queued.insert(key).second) {
        pending.push_back({g, seed, mb});
      }
    }
  }

  if (journal.has_parent_path()) fs::create_directories(journal.parent_path());
  std::ofstream out(journal, std::ios::binary | std::ios::app);
  if (!out) throw ContractError("cannot open journal " + journal.string());
  if (fresh) out << header << '\n' << std::flush;
  // An interrupted writer may have left a torn line; start on a fresh one.
  if (!fresh) {
    std::ifstream tail(journal, std::ios::binary);
    tail.seekg(-1, std::ios::end);
    char last = '\n';
    if (tail.get(last) && last != '\n') out << '\n' << std::flush;
  }

  std::vector<MetricId> ids = config.metrics;
  MetricOptions base_options;
  base_options.hidden_layers = config.hidden_layers;
  const auto dims = config.dims();

  std::mutex mutex;
  std::atomic<std::size_t> next{0};
  std::size_t finished = 0;
  auto worker = [&] {
    while (true) {
      const auto i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const auto& unit = pending[i];
      const CellKey key{keys[unit.genome], unit.seed, unit.minibatch};
      std::vector<MetricOutcome> outcomes;
      try {
        std::seed_seq seq{unit.seed, std::uint64_t{0x696e6974}};
        Rng rng(seq);
        auto net = build_network(genomes[unit.genome], dims, rng);
        auto options = base_options;
        options.seed = noise_seed(unit.seed, unit.minibatch);
        outcomes = evaluate_metrics(*net, batches.at(unit.minibatch), ids, options);
      } catch (const std::exception& e) {
        outcomes.clear();
        for (const auto& ex : expected) {
          auto o = degenerate(ex.id, Degeneracy::kFailed, e.what());
          o.layer_index = ex.layer;
          outcomes.push_back(std::move(o));
        }
      }
      std::string lines;
      for (const auto& o : outcomes) lines += journal_line(key, o);
      std::lock_guard lock(mutex);
      out << lines << std::flush;
      auto& cell = done[key];
      for (auto& o : outcomes) cell[metric_label(o.metric, o.layer_index)] = std::move(o);
      ++finished;
      if (progress) progress(finished, pending.size());
    }
  };
  const auto threads = std::min(config.workers, pending.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  summary.computed_cells = pending.size();

  const auto variants = config.normalization_variants();
  for (std::size_t g = 0; g < genomes.size(); ++g) {
    for (const auto& [seed, mb] : seed_minibatch) {
      const auto& cell = done.at(CellKey{keys[g], seed, mb});
      for (const auto& e : expected) {
        const auto label = metric_label(e.id, e.layer);
        const auto& o = cell.at(label);
        for (bool v : variants) {
          ScoreRow row{keys[g], label, v, o.score(v, seed, mb)};
          if (!row.score.ok()) ++summary.flagged_rows;
          summary.rows.push_back(std::move(row));
        }
      }
    }
  }
  return summary;
}

ScoreSummary score_architectures(const RunConfig& config, const Progress& progress) {
  const auto workload = load_workload(config);
  const auto corpus = load_or_synthesize_corpus(config);
  auto summary = score_cells(config, workload.genomes, corpus, cartesian(config), config.output / "journal.tsv",
                             progress);
  write_text(config.output / "scores.tsv", score_table(summary.rows));
  return summary;
}

std::vector<GenomeScore> aggregate(const std::vector<ScoreRow>& rows, const std::string& label, bool normalized) {
  std::vector<GenomeScore> out;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    if (r.label != label || r.normalized_variant != normalized) continue;
    auto [it, inserted] = index.emplace(r.genome_key, out.size());
    if (inserted) {
      out.push_back({r.genome_key, 0.0, true, ""});
      counts.push_back(0);
    }
    auto& s = out[it->second];
    if (r.score.ok() && std::isfinite(r.score.value)) {
      s.value += r.score.value;
      ++counts[it->second];
    } else if (s.reason.empty()) {
      s.reason = std::string(to_string(r.score.degeneracy));
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (counts[i] == 0) {
      out[i].value = kNaN;
      continue;
    }
    out[i].value /= static_cast<double>(counts[i]);
    out[i].flagged = false;
    out[i].reason.clear();
  }
  return out;
}

EvaluationResult evaluate(const RunConfig& config, const Progress& progress) {
  if (!config.benchmark) throw ValidationError("evaluate needs a benchmark table");
  const auto workload = load_workload(config);
  EvaluationResult result;
  result.summary = score_architectures(config, progress);

  nlohmann::ordered_json reports = nlohmann::ordered_json::array();
  std::ostringstream tsv;
  tsv << "metric\tnormalized\tn_evaluated\tn_discarded\tkendall_tau\tspearman_rho\tflag\n";
  for (const auto& e : expected_outcomes(config)) {
    const auto label = metric_label(e.id, e.layer);
    for (bool v : config.normalization_variants()) {
      const auto scores = aggregate(result.summary.rows, label, v);
      auto report = build_report(label, scores, workload.records, config.performance_sign);
      report.normalized = v;

      const auto pairs_name = "pairs/" + label + "." + variant_name(v) + ".tsv";
      std::ostringstream pairs;
      pairs << "genome_key\tmetric\tperformance\n";
      for (const auto& p : report.pairs) {
        pairs << p.genome_key << '\t' << format_real(p.metric) << '\t' << format_real(p.performance) << '\n';
      }
      write_text(config.output / pairs_name, pairs.str());

      nlohmann::ordered_json j;
      j["metric"] = report.metric_id;
      j["normalized"] = v;
      j["n_evaluated"] = report.n_evaluated;
      j["n_discarded"] = report.n_discarded;
      j["kendall_tau"] = report.kendall_tau ? nlohmann::ordered_json(*report.kendall_tau) : nlohmann::ordered_json();
      j["spearman_rho"] = report.spearman_rho ? nlohmann::ordered_json(*report.spearman_rho) : nlohmann::ordered_json();
      j["flag"] = report.flag;
      j["pairs"] = pairs_name;
      reports.push_back(std::move(j));

      tsv << report.metric_id << '\t' << (v ? "true" : "false") << '\t' << report.n_evaluated << '\t'
          << report.n_discarded << '\t' << (report.kendall_tau ? format_real(*report.kendall_tau) : "nan") << '\t'
          << (report.spearman_rho ? format_real(*report.spearman_rho) : "nan") << '\t' << report.flag << '\n';
      result.reports.push_back(std::move(report));
    }
  }
  if (config.format == ReportFormat::kJson) {
    nlohmann::ordered_json doc;
    doc["version"] = kConfigVersion;
    doc["search_space"] = std::string(to_string(config.search_space));
    doc["performance_sign"] = config.performance_sign;
    doc["genomes_scored"] = workload.genomes.size();
    doc["reports"] = std::move(reports);
    write_text(config.output / "report.json", doc.dump(2) + "\n");
  } else {
    write_text(config.output / "report.tsv", tsv.str());
  }
  return result;
}

// --- ablation ---------------------------------------------------------------------------------

SpreadStats spread(std::span<const double> values, std::size_t flagged) {
  SpreadStats s;
  s.count = values.size();
  s.flagged = flagged;
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(values.size()));
  s.mean = mean;
  s.cv = sd == 0.0 ? 0.0 : sd / std::abs(mean);
  return s;
}

std::vector<std::size_t> decile_sample(const std::vector<BenchmarkRecord>& records) {
  const auto n = records.size();
  if (n < 10) throw ContractError("ablation needs at least 10 benchmark records");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::string> keys;
  for (const auto& r : records) keys.push_back(genome_key(r.genome));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].trained_score != records[b].trained_score) {
      return records[a].trained_score < records[b].trained_score;
    }
    return keys[a] < keys[b];
  });
  std::vector<std::size_t> picked;
  for (std::size_t d = 0; d < 10; ++d) picked.push_back(order[(2 * d + 1) * n / 20]);
  return picked;
}

AblationResult ablate(const RunConfig& config, const Progress& progress) {
  if (!config.benchmark) throw ValidationError("ablate needs a benchmark table");
  const auto workload = load_workload(config);
  AblationResult result;
  result.selected = decile_sample(workload.records);

  std::vector<Genome> genomes;
  for (auto i : result.selected) genomes.push_back(workload.records[i].genome);
  const auto seed0 = config.seeds.front();
  const auto mb0 = config.minibatches.front();
  std::vector<std::pair<std::uint64_t, std::uint64_t>> cells;
  for (auto s : config.seeds) cells.emplace_back(s, mb0);
  for (auto m : config.minibatches) {
    if (m != mb0) cells.emplace_back(seed0, m);
  }
  const auto corpus = load_or_synthesize_corpus(config);
  auto summary = score_cells(config, genomes, corpus, cells, config.output / "ablation_journal.tsv", progress);
  result.raw = std::move(summary.rows);
  result.flagged_rows = summary.flagged_rows;

  const std::set<std::uint64_t> seed_set(config.seeds.begin(), config.seeds.end());
  const std::set<std::uint64_t> mb_set(config.minibatches.begin(), config.minibatches.end());
  for (auto sweep : {Sweep::kSeed, Sweep::kMinibatch}) {
    for (const auto& e : expected_outcomes(config)) {
      const auto label = metric_label(e.id, e.layer);
      for (bool v : config.normalization_variants()) {
        AblationSummary sum{sweep, label, v};
        std::vector<double> means;
        bool all_finite = true;
        double max_cv = 0.0;
        for (std::size_t d = 0; d < result.selected.size(); ++d) {
          const auto& record = workload.records[result.selected[d]];
          const auto key = genome_key(record.genome);
          std::vector<double> values;
          std::size_t flagged = 0;
          std::set<std::uint64_t> seen;
          for (const auto& r : result.raw) {
            if (r.genome_key != key || r.label != label || r.normalized_variant != v) continue;
            const bool in_sweep = sweep == Sweep::kSeed ? (r.score.minibatch_id == mb0 && seed_set.count(r.score.seed))
                                                        : (r.score.seed == seed0 && mb_set.count(r.score.minibatch_id));
            const auto axis = sweep == Sweep::kSeed ? r.score.seed : r.score.minibatch_id;
            if (!in_sweep || !seen.insert(axis).second) continue;
            if (r.score.ok()) {
              values.push_back(r.score.value);
            } else {
              ++flagged;
            }
          }
          AblationRow row{sweep, label, v, d, key, record.trained_score, spread(values, flagged)};
          // Architectures the metric never scores are discarded, not compared.
          if (row.stats.count > 0) {
            if (!std::isfinite(row.stats.cv)) all_finite = false;
            max_cv = std::max(max_cv, row.stats.cv);
            means.push_back(row.stats.mean);
          }
          result.rows.push_back(std::move(row));
        }
        const auto between = spread(means);
        sum.max_cv = all_finite ? max_cv : kNaN;
        sum.between_spread = between.cv;
        sum.architectures = means.size();
        sum.stable = all_finite && means.size() >= 2 && std::isfinite(between.cv) && max_cv < between.cv;
        result.summaries.push_back(std::move(sum));
      }
    }
  }

  auto sweep_name = [](Sweep s) { return s == Sweep::kSeed ? "seed" : "minibatch"; };
  std::ostringstream rows;
  rows << "sweep\tmetric\tnormalized\tdecile\tgenome_key\ttrained_score\tcount\tflagged\tmin\tmax\tmean\tcv\n";
  for (const auto& r : result.rows) {
    rows << sweep_name(r.sweep) << '\t' << r.label << '\t' << (r.normalized ? "true" : "false") << '\t' << r.decile
         << '\t' << r.genome_key << '\t' << format_real(r.trained_score) << '\t' << r.stats.count << '\t'
         << r.stats.flagged << '\t' << format_real(r.stats.min) << '\t' << format_real(r.stats.max) << '\t'
         << format_real(r.stats.mean) << '\t' << format_real(r.stats.cv) << '\n';
  }
  std::ostringstream sums;
  sums << "sweep\tmetric\tnormalized\tarchitectures\tmax_cv\tbetween_spread\tstable\n";
  for (const auto& s : result.summaries) {
    sums << sweep_name(s.sweep) << '\t' << s.label << '\t' << (s.normalized ? "true" : "false") << '\t'
         << s.architectures << '\t' << format_real(s.max_cv) << '\t' << format_real(s.between_spread) << '\t' << (s.stable ? "true" : "false")
         << '\n';
  }
  write_text(config.output / "ablation.tsv", rows.str());
  write_text(config.output / "ablation_summary.tsv", sums.str());
  write_text(config.output / "ablation_raw.tsv", score_table(result.raw));
  return result;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace tfnas

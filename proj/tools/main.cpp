// tfnas: score untrained architectures and rank-correlate against trained tables.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tfnas/errors.hpp"
#include "tfnas/genome.hpp"
#include "tfnas/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kInputError = 2;
constexpr int kPartialFailure = 3;

void progress_line(std::size_t done, std::size_t total) {
  std::fprintf(stderr, "\rscored %zu/%zu cells", done, total);
  if (done == total) std::fputc('\n', stderr);
}

std::string coefficient(const std::optional<double>& v) { return v ? tfnas::format_real(*v) : "undefined"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free architecture scoring and rank-correlation harness"};
  app.require_subcommand(1);

  auto* count = app.add_subcommand("count-space", "Print the size of the transformer search space");

  auto* sample = app.add_subcommand("sample", "Print random genomes, one per line");
  std::string space_name;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  std::size_t max_nodes = 8;
  sample->add_option("--space", space_name, "rnn or transformer")->required();
  sample->add_option("--n", n, "number of genomes")->check(CLI::PositiveNumber);
  sample->add_option("--seed", seed, "random seed");
  sample->add_option("--max-nodes", max_nodes, "RNN cell size limit")->check(CLI::Range(3, 64));

  std::string config_path;
  auto* score = app.add_subcommand("score", "Score every (genome, metric, seed, minibatch) cell");
  score->add_option("--config", config_path, "run configuration")->required();
  auto* evaluate = app.add_subcommand("evaluate", "Score and correlate against a benchmark table");
  evaluate->add_option("--config", config_path, "run configuration")->required();
  auto* ablate = app.add_subcommand("ablate", "Seed and minibatch stability sweeps over decile samples");
  ablate->add_option("--config", config_path, "run configuration")->required();
  bool quiet = false;
  for (auto* sub : {score, evaluate, ablate}) sub->add_flag("--quiet", quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const tfnas::Progress progress = quiet ? tfnas::Progress{} : tfnas::Progress{progress_line};
  try {
    if (count->parsed()) {
      std::cout << tfnas::count_search_space() << '\n';
      return kOk;
    }
    if (sample->parsed()) {
      const auto space = tfnas::parse_search_space(space_name);
      if (!space) {
        std::cerr << "error: unknown search space '" << space_name << "'\n";
        return kUsage;
      }
      tfnas::Rng rng(seed);
      for (std::size_t i = 0; i < n; ++i) {
        const tfnas::Genome g = *space == tfnas::SearchSpace::kRnn ? tfnas::Genome{tfnas::sample_rnn(rng, max_nodes)}
                                                                  : tfnas::Genome{tfnas::sample_transformer(rng)};
        std::cout << tfnas::serialize(g) << '\n';
      }
      return kOk;
    }

    const auto config = tfnas::load_config(config_path);
    if (score->parsed()) {
      const auto summary = tfnas::score_architectures(config, progress);
      std::cout << "rows " << summary.rows.size() << " computed_cells " << summary.computed_cells << " reused_cells "
                << summary.reused_cells << " flagged_rows " << summary.flagged_rows << '\n';
      std::cout << "wrote " << (config.output / "scores.tsv").string() << '\n';
      return summary.flagged_rows > 0 ? kPartialFailure : kOk;
    }
    if (evaluate->parsed()) {
      const auto result = tfnas::evaluate(config, progress);
      std::size_t discarded = 0;
      std::cout << "metric\tnormalized\tn_evaluated\tn_discarded\tkendall_tau\tspearman_rho\n";
      for (const auto& r : result.reports) {
        discarded += r.n_discarded;
        std::cout << r.metric_id << '\t' << (r.normalized ? "true" : "false") << '\t' << r.n_evaluated << '\t'
                  << r.n_discarded << '\t' << coefficient(r.kendall_tau) << '\t' << coefficient(r.spearman_rho)
                  << '\n';
      }
      return result.summary.flagged_rows > 0 || discarded > 0 ? kPartialFailure : kOk;
    }
    if (ablate->parsed()) {
      const auto result = tfnas::ablate(config, progress);
      std::cout << "sweep\tmetric\tnormalized\tmax_cv\tbetween_spread\tstable\n";
      for (const auto& s : result.summaries) {
        std::cout << (s.sweep == tfnas::Sweep::kSeed ? "seed" : "minibatch") << '\t' << s.label << '\t'
                  << (s.normalized ? "true" : "false") << '\t' << tfnas::format_real(s.max_cv) << '\t'
                  << tfnas::format_real(s.between_spread) << '\t' << (s.stable ? "true" : "false") << '\n';
      }
      return result.flagged_rows > 0 ? kPartialFailure : kOk;
    }
  } catch (const tfnas::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kUsage;
}

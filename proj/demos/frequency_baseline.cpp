// Frequency baseline on one dataset's test split.
//
//   frequency_baseline <dataset-dir> [history-limit]

#include <cstdio>
#include <cstdlib>
#include <map>

#include "tkgforge/tkgforge.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <dataset-dir> [history-limit]\n", argv[0]);
    return 1;
  }
  const auto kg = tkg::load_dataset(argv[1], tkg::lowercase(std::filesystem::path(argv[1]).filename().string()));

  tkg::RunOptions opts;
  opts.split = tkg::Split::test;
  if (argc > 2) opts.history_limit = std::strtoul(argv[2], nullptr, 10);
  const auto results = tkg::run_frequency(kg, opts);

  const tkg::GoldIndex gold(kg);
  const auto report = tkg::build_report(results, {{kg.name(), &gold}});
  std::printf("%s", report.markdown().c_str());
  return 0;
}

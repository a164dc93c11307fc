// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance                 all criteria
//   acceptance --criterion 4   a single criterion

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <vector>

#include "sgdtail/acceptance.hpp"

int main(int argc, char** argv) {
  using namespace sgdtail::acceptance;
  CLI::App app{"acceptance criteria"};
  std::vector<int> ids;
  SuiteOptions opt;
  std::string json_path;
  app.add_option("--criterion", ids, "criterion id(s), default all")
      ->check(CLI::Range(1, kCriterionCount));
  app.add_option("--seed", opt.seed, "master seed");
  app.add_option("--threads", opt.threads, "worker threads");
  app.add_option("--json", json_path, "write the verdict JSON here");
  CLI11_PARSE(app, argc, argv);
  if (ids.empty()) ids = criteria_for(Level::full);
  const auto results = run_suite(ids, opt, std::cout);
  print_summary(std::cout, results);
  if (!json_path.empty()) std::ofstream(json_path) << verdict_json(results, "custom").dump(2) << '\n';
  return all_passed(results) ? 0 : 1;
}

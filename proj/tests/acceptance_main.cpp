// Runs every acceptance suite and prints one PASS/FAIL line per criterion.
// Exit status is non-zero when any criterion fails. The detailed lines are
// also written to acceptance_report.txt in the working directory, since
// ctest only shows output of failing tests.

#include <fstream>
#include <iostream>
#include <sstream>

#include "dop/harness/acceptance.hpp"

int main(int argc, char** argv) {
  using namespace dop::harness;
  AcceptanceOptions opt;
  std::vector<std::string> suites = suite_names();
  if (argc > 1) suites.assign(argv + 1, argv + argc);
  std::vector<CriterionResult> all;
  std::ostringstream detail;
  for (const auto& s : suites) {
    std::cout << "== suite " << s << std::endl;
    for (auto& r : run_suite(s, opt, &std::cout)) {
      detail << format_result(r) << '\n';
      all.push_back(std::move(r));
    }
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::cout << "\n== summary\n";
  int failed = 0;
  for (const auto& r : all) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  criterion " << r.id << ": " << r.title << '\n';
    failed += !r.pass;
  }
  std::cout << (all.size() - failed) << "/" << all.size() << " criteria passed\n";
  std::ofstream("acceptance_report.txt") << detail.str() << (all.size() - failed) << "/" << all.size()
                                         << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}

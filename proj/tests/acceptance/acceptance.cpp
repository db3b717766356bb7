#include "acceptance/acceptance.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <set>
#include <thread>

namespace acceptance {

int workers() {
  if (const char* env = std::getenv("SFMM_WORKERS")) return std::max(1, std::atoi(env));
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace acceptance

using namespace acceptance;

int main(int argc, char** argv) {
  const std::vector<Check> all = {
      {1, "wavelet round trip", 10, wavelet_round_trip},
      {2, "compression contract", 60, compression_contract},
      {3, "spline equivalence", 5, spline_equivalence},
      {4, "model selection simulation", 1200, model_selection},
      {5, "two-step identifiability", 900, two_step_identifiability},
      {6, "varying smoothness selection", 900, varying_smoothness},
      {7, "sampler correctness", 600, sampler_correctness},
      {8, "calibration", 1800, calibration},
      {9, "operational statistics", 43200, operational_statistics},
      {10, "AUC closed form and band nesting", 60, auc_and_bands},
  };
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!chosen.empty() && !chosen.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = sec < c.budget_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("criterion %2d %s: %s | %s | %.1f s (budget %.0f s)\n", c.id, pass ? "PASS" : "FAIL", c.title.c_str(),
                o.detail.c_str(), sec, c.budget_seconds);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

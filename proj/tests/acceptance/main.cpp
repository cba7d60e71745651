// Acceptance runner: prints one PASS/FAIL line per criterion.
//
//   acceptance [--criterion N]... [--work DIR]
//
// Exit status is nonzero when any selected criterion fails.

#include <CLI11.hpp>
#include <torch/torch.h>

#include <algorithm>
#include <chrono>
#include <exception>
#include <iostream>

#include "harness.hpp"

namespace acceptance {

std::vector<Criterion>& registry() {
  static std::vector<Criterion> r;
  return r;
}

}  // namespace acceptance

int main(int argc, char** argv) {
  using namespace acceptance;
  CLI::App app{"UniWeTok acceptance criteria"};
  std::vector<int> selected;
  std::string work = (std::filesystem::temp_directory_path() / "uniwetok_acceptance").string();
  app.add_option("--criterion", selected, "Criterion numbers to run (default: all)");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  auto& all = registry();
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.number < b.number; });
  bool ok = true;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.number) == selected.end()) {
      continue;
    }
    Context ctx{std::filesystem::path(work) / ("criterion" + std::to_string(c.number)), UNIWETOK_CLI_PATH,
                UNIWETOK_CONFIG_DIR};
    std::filesystem::remove_all(ctx.work);
    std::filesystem::create_directories(ctx.work);
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(ctx, v);
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    v.check(seconds < c.budget_seconds,
            "runtime " + fmt(seconds, 3) + " s over budget " + fmt(c.budget_seconds, 3) + " s");
    std::cout << "criterion " << c.number << " " << (v.ok() ? "PASS" : "FAIL") << " [" << c.title << "] "
              << fmt(seconds, 3) << " s: " << v.summary() << std::endl;
    ok = ok && v.ok();
  }
  return ok ? 0 : 1;
}

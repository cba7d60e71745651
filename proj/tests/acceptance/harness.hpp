#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace acceptance {

struct Context {
  std::filesystem::path work;  // scratch space for this criterion
  std::filesystem::path cli;   // uniwetok binary
  std::filesystem::path configs;
};

// Accumulates named checks; a criterion passes when every check passes.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) {
      ok_ = false;
      failures_.push_back(what);
    }
  }
  void note(const std::string& what) { notes_.push_back(what); }
  bool ok() const { return ok_; }
  std::string summary() const {
    std::ostringstream out;
    const auto& items = ok_ ? notes_ : failures_;
    for (size_t i = 0; i < items.size(); ++i) out << (i ? "; " : "") << items[i];
    return out.str();
  }

 private:
  bool ok_ = true;
  std::vector<std::string> failures_, notes_;
};

struct Criterion {
  int number;
  std::string title;
  double budget_seconds;
  std::function<void(const Context&, Verdict&)> run;
};

std::vector<Criterion>& registry();

struct Register {
  Register(int number, std::string title, double budget, std::function<void(const Context&, Verdict&)> run) {
    registry().push_back({number, std::move(title), budget, std::move(run)});
  }
};

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

}  // namespace acceptance

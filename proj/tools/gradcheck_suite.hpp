#pragma once

#include <string>
#include <vector>

namespace tafe::tools {

enum class GradScope { Ops, Blocks, Model };

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t probes = 0;
    bool pass = false;
};

struct SuiteReport {
    std::vector<CheckResult> checks;
    bool pass = true;
};

inline constexpr double kGradTolerance = 1e-5;
inline constexpr double kGradStep = 1e-6;

// Op-level, block-level or full-model finite-difference checks. With
// inject_fault a deliberately wrong backward rule is appended, so the suite
// must fail.
SuiteReport run_gradcheck(GradScope scope, bool inject_fault = false);

GradScope parse_scope(const std::string& s);
const char* scope_name(GradScope s);

// {"scope":..,"tolerance":..,"h":..,"checks":[{"name","max_rel_err","probes","pass"}],"pass":bool}
std::string report_json(const SuiteReport& report, GradScope scope);

}  // namespace tafe::tools

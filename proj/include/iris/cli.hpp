#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace iris {

// Subcommands: gen-data, train-detector, extract, train-classifier, crossval, report, gradcheck.
// Returns 0 on success, 1 when a module rejects its inputs or fails, 2 on usage errors.
// `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Environment variable consulted for the output root when --output-root is absent.
inline constexpr const char* kOutputRootEnv = "IRIS_OUTPUT_ROOT";

}  // namespace iris

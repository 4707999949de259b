// Serialization helpers shared by dataset, checkpoint, and report writers.
//
// Writers emit the text themselves (readers use nlohmann::json): fixed
// 17-significant-digit decimals round-trip IEEE-754 doubles exactly and the
// byte stream is deterministic, which the reproducibility contract needs.

#pragma once

#include <string>

#include "vkdlab/matrix.hpp"

namespace vkdlab {

// %.17g; throws NumericError on NaN/Inf (JSON cannot carry them).
std::string fmt17(double x);

// Appends "[a,b,...]" with fmt17 elements.
void append_array(std::string& out, const Vec& v);

// Write-temp-then-rename so partially written files are never observed.
void atomic_write(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace vkdlab

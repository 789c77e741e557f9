#pragma once

#include <string>
#include <vector>

namespace blockpool {

// Whole-file helpers. Failures throw DataError naming the path.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

// Lines without their terminators; a trailing newline does not add an empty
// last line. CR before LF is dropped.
std::vector<std::string> read_lines(const std::string& path);
std::vector<std::string> split_lines(const std::string& text);

std::vector<std::string> split(const std::string& text, char sep);
std::string trim(const std::string& text);

}  // namespace blockpool

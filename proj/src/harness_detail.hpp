#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hsdiff/harness.hpp"

namespace hsdiff {

void write_table(const Table& t, const std::filesystem::path& dir, const std::string& format,
                 std::vector<std::string>& inventory);
void write_timings(const std::vector<std::pair<std::string, double>>& timings,
                   const std::filesystem::path& dir);

}  // namespace hsdiff

#pragma once

#include <string>
#include <vector>

#include "kmine/trainer.hpp"

namespace kmine::harness {

// Union of all step grids, ascending; one column per trace with blanks
// where a trace has no value at that step. Header: step,<label>,...
std::string merged_csv(const std::vector<LocTrace>& traces,
                       const std::vector<std::string>& labels);

// Writes the merged CSV next to out_path (extension swapped to .csv) and a
// line plot at out_path (.png or .svg by extension; .csv writes the CSV
// only). The CSV is the contract; the plot is best-effort.
void plot_loc(const std::vector<LocTrace>& traces, const std::vector<std::string>& labels,
              const std::string& out_path);

}  // namespace kmine::harness

#pragma once

#include <string>
#include <vector>

namespace coworld {

// metrics.csv parsed column-wise. Cells are printf %g doubles; "nan" marks
// fields a run left empty (no eval that iteration, no source agent).
struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // rows[i][c], same width as columns

  int column(const std::string& name) const;           // index, or -1
  std::vector<double> series(const std::string& name) const;  // throws UsageError
};

MetricsTable load_metrics_csv(const std::string& path);

// The standard figures for one training run, written into out_dir:
//   returns.svg    eval mean return vs step, with a +-1 sigma band
//   value_gap.svg  (estimated - true) value bars per eval step, zero line
//   alignment.svg  cross-domain encoder KL vs step
// Rows whose cells are NaN for a given figure are skipped there; a figure
// with no finite points is still written as a valid (empty) plot so the
// command stays total for baseline runs. Output is byte-deterministic.
// Returns the paths written.
std::vector<std::string> render_run_plots(const std::string& metrics_csv,
                                          const std::string& out_dir);

}  // namespace coworld

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ranpool/ccl.hpp"
#include "ranpool/clustering.hpp"
#include "ranpool/data.hpp"
#include "ranpool/dups/coma.hpp"

namespace ranpool::cli {

/// Everything a run depends on besides the seed. Every section has defaults,
/// so an empty JSON object is a valid configuration.
struct RunConfig {
  data::SynthConfig synth;
  std::string input;  // station CSV for `ingest`; when set, `pipeline` ingests instead of synthesizing
  bool scale_to_5g = false;
  double capacity_gbps = 4.0;
  clustering::ClusteringConfig clustering;
  ccl::RegimeConfig regime;
  std::vector<std::string> regimes{"ccl", "idel"};  // the first one drives the forecast
  int forecast_hours = 48;
  dups::ComaConfig coma;
  bool edge_class_defaults = true;  // alpha and d follow each edge's traffic class
};

RunConfig default_run_config();

/// Parses a run configuration; the seed comes from `seed_out` when the
/// document carries one.
RunConfig run_config_from_json(const std::string& text, std::uint64_t* seed_out = nullptr);

/// Canonical form with every default filled in; its hash identifies the run.
std::string to_json(const RunConfig& config);

/// Parses `4..10` as an inclusive integer range, anything else as a comma list.
std::vector<std::string> expand_values(const std::string& spec);

/// Entry point of the `ranpool` tool. Returns 0 on success, 2 on a usage or
/// configuration error, 3 on a runtime failure.
int cli_main(int argc, const char* const* argv);

}  // namespace ranpool::cli

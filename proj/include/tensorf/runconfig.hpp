#pragma once

#include <iosfwd>
#include <string>

#include "tensorf/trainer.hpp"

namespace tensorf {

/// One experiment description: dataset location, output directory, optional
/// preset, and the full training configuration. Parsed from strict key=value
/// text where unknown keys are errors.
struct RunConfig {
    std::string dataset;
    std::string preset_name;
    std::string out = "out";
    TrainConfig train;

    bool operator==(const RunConfig&) const = default;
};

/// Parses key=value lines ('#' starts a comment). A preset key is applied
/// when encountered; later keys override individual fields. Unknown keys,
/// malformed values, and repeated '=' -less lines raise errors naming the
/// offending line.
RunConfig parse_run_config(std::istream& in, const std::string& source_name);
RunConfig load_run_config(const std::string& path);

/// Writes every field explicitly; parsing the output reproduces the identical
/// RunConfig.
void write_run_config(std::ostream& out, const RunConfig& cfg);
void save_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace tensorf

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "ulm/core.hpp"
#include "ulm/synth.hpp"

namespace ulm {

// Flat `key = value` text with `#` comments. Unknown keys, malformed values
// and duplicate keys raise ConfigError prefixed with "<source>:<line>".
// gather_radius defaults to 3 * sr_factor and avg_sigma to gather_radius / 2
// when not given explicitly.
PipelineConfig parse_pipeline_config(std::string_view text, const std::string &source = "<config>");
PipelineConfig load_pipeline_config(const std::filesystem::path &path);

// Every tunable as key -> canonical text value (round-trips through
// parse_pipeline_config).
std::map<std::string, std::string> config_entries(const PipelineConfig &config);
std::string format_pipeline_config(const PipelineConfig &config);

// Scenario keys: height, width, pixel_size_mm, frame_rate_hz, n_frames,
// n_bubbles, psf_sigma, amplitude, noise_std, seed, plus repeatable
//   vessel = r0 c0 r1 c1 radius_px peak_speed_mps
//   stationary = r c
synth::Scenario parse_scenario(std::string_view text, const std::string &source = "<scenario>");
synth::Scenario load_scenario(const std::filesystem::path &path);
std::string format_scenario(const synth::Scenario &scenario);

std::string read_text_file(const std::filesystem::path &path);

} // namespace ulm

#include "ulm/text_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

namespace ulm {

namespace {

struct Entry {
  int line;
  std::string key;
  std::string value;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<Entry> tokenize(std::string_view text, const std::string &source) {
  std::vector<Entry> out;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty())
      continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    Entry e{line_no, trim(std::string_view(body).substr(0, eq)),
            trim(std::string_view(body).substr(eq + 1))};
    if (e.key.empty())
      throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

[[noreturn]] void bad_value(const std::string &source, const Entry &e, const std::string &expected) {
  throw ConfigError(source + ":" + std::to_string(e.line) + ": key '" + e.key + "': cannot parse '" +
                    e.value + "' as " + expected);
}

template <typename T> T parse_number(const std::string &source, const Entry &e) {
  T v{};
  const char *first = e.value.data();
  const char *last = first + e.value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    bad_value(source, e, std::is_integral_v<T> ? "an integer" : "a number");
  return v;
}

std::vector<double> parse_list(const std::string &source, const Entry &e, std::size_t expected) {
  std::istringstream in(e.value);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    Entry sub = e;
    sub.value = tok;
    out.push_back(parse_number<double>(source, sub));
  }
  if (out.size() != expected)
    bad_value(source, e, std::to_string(expected) + " numbers");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

PipelineConfig parse_pipeline_config(std::string_view text, const std::string &source) {
  PipelineConfig c;
  bool gather_set = false, avg_set = false;
  using Setter = std::function<void(const Entry &)>;
  auto num = [&](double &field) {
    return Setter([&field, &source](const Entry &e) { field = parse_number<double>(source, e); });
  };
  auto integer = [&](int &field) {
    return Setter([&field, &source](const Entry &e) { field = parse_number<int>(source, e); });
  };
  const std::map<std::string, Setter> setters{
      {"psf_patch_size", integer(c.psf_patch_size)},
      {"corr_threshold", num(c.corr_threshold)},
      {"min_peak_separation", integer(c.min_peak_separation)},
      {"com_window", integer(c.com_window)},
      {"psf_sigma", num(c.psf_sigma)},
      {"alpha", num(c.alpha)},
      {"beta", num(c.beta)},
      {"gamma", num(c.gamma)},
      {"w1", num(c.w1)},
      {"w2", num(c.w2)},
      {"max_outer_iters", integer(c.max_outer_iters)},
      {"sinkhorn_iters", integer(c.sinkhorn_iters)},
      {"sinkhorn_tol", num(c.sinkhorn_tol)},
      {"transform_mode",
       [&](const Entry &e) {
         try {
           c.transform_mode = transform_mode_from_string(e.value);
         } catch (const ConfigError &) {
           bad_value(source, e, "translation|affine");
         }
       }},
      {"pair_gate_distance", num(c.pair_gate_distance)},
      {"pair_min_prob", num(c.pair_min_prob)},
      {"min_track_length", integer(c.min_track_length)},
      {"sr_factor", integer(c.sr_factor)},
      {"density_sigma", num(c.density_sigma)},
      {"gather_radius",
       [&](const Entry &e) {
         c.gather_radius = parse_number<double>(source, e);
         gather_set = true;
       }},
      {"avg_sigma",
       [&](const Entry &e) {
         c.avg_sigma = parse_number<double>(source, e);
         avg_set = true;
       }},
  };

  std::set<std::string> seen;
  for (const auto &e : tokenize(text, source)) {
    const auto it = setters.find(e.key);
    if (it == setters.end())
      throw ConfigError(source + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    if (!seen.insert(e.key).second)
      throw ConfigError(source + ":" + std::to_string(e.line) + ": duplicate key '" + e.key + "'");
    it->second(e);
  }
  if (!gather_set)
    c.gather_radius = 3.0 * c.sr_factor;
  if (!avg_set)
    c.avg_sigma = c.gather_radius / 2.0;
  try {
    c.validate();
  } catch (const ConfigError &err) {
    throw ConfigError(source + ": " + err.what());
  }
  return c;
}

std::string read_text_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PipelineConfig load_pipeline_config(const std::filesystem::path &path) {
  return parse_pipeline_config(read_text_file(path), path.string());
}

std::map<std::string, std::string> config_entries(const PipelineConfig &c) {
  return {
      {"psf_patch_size", std::to_string(c.psf_patch_size)},
      {"corr_threshold", format_double(c.corr_threshold)},
      {"min_peak_separation", std::to_string(c.min_peak_separation)},
      {"com_window", std::to_string(c.com_window)},
      {"psf_sigma", format_double(c.psf_sigma)},
      {"alpha", format_double(c.alpha)},
      {"beta", format_double(c.beta)},
      {"gamma", format_double(c.gamma)},
      {"w1", format_double(c.w1)},
      {"w2", format_double(c.w2)},
      {"max_outer_iters", std::to_string(c.max_outer_iters)},
      {"sinkhorn_iters", std::to_string(c.sinkhorn_iters)},
      {"sinkhorn_tol", format_double(c.sinkhorn_tol)},
      {"transform_mode", to_string(c.transform_mode)},
      {"pair_gate_distance", format_double(c.pair_gate_distance)},
      {"pair_min_prob", format_double(c.pair_min_prob)},
      {"min_track_length", std::to_string(c.min_track_length)},
      {"sr_factor", std::to_string(c.sr_factor)},
      {"density_sigma", format_double(c.density_sigma)},
      {"gather_radius", format_double(c.gather_radius)},
      {"avg_sigma", format_double(c.avg_sigma)},
  };
}

std::string format_pipeline_config(const PipelineConfig &config) {
  std::string out;
  for (const auto &[k, v] : config_entries(config))
    out += k + " = " + v + "\n";
  return out;
}

synth::Scenario parse_scenario(std::string_view text, const std::string &source) {
  synth::Scenario s;
  std::set<std::string> seen;
  for (const auto &e : tokenize(text, source)) {
    const bool repeatable = e.key == "vessel" || e.key == "stationary";
    if (!repeatable && !seen.insert(e.key).second)
      throw ConfigError(source + ":" + std::to_string(e.line) + ": duplicate key '" + e.key + "'");
    if (e.key == "height")
      s.height = parse_number<int>(source, e);
    else if (e.key == "width")
      s.width = parse_number<int>(source, e);
    else if (e.key == "pixel_size_mm")
      s.pixel_size_mm = parse_number<float>(source, e);
    else if (e.key == "frame_rate_hz")
      s.frame_rate_hz = parse_number<float>(source, e);
    else if (e.key == "n_frames")
      s.n_frames = parse_number<std::size_t>(source, e);
    else if (e.key == "n_bubbles")
      s.n_bubbles = parse_number<std::size_t>(source, e);
    else if (e.key == "psf_sigma")
      s.psf_sigma = parse_number<double>(source, e);
    else if (e.key == "amplitude")
      s.amplitude = parse_number<double>(source, e);
    else if (e.key == "noise_std")
      s.noise_std = parse_number<double>(source, e);
    else if (e.key == "seed")
      s.seed = parse_number<std::uint64_t>(source, e);
    else if (e.key == "vessel") {
      const auto v = parse_list(source, e, 6);
      s.vessels.push_back({{v[0], v[1]}, {v[2], v[3]}, v[4], v[5]});
    } else if (e.key == "stationary") {
      const auto v = parse_list(source, e, 2);
      s.stationary.push_back({v[0], v[1]});
    } else
      throw ConfigError(source + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "'");
  }
  try {
    s.validate();
  } catch (const ConfigError &err) {
    throw ConfigError(source + ": " + err.what());
  }
  return s;
}

synth::Scenario load_scenario(const std::filesystem::path &path) {
  return parse_scenario(read_text_file(path), path.string());
}

std::string format_scenario(const synth::Scenario &s) {
  std::ostringstream out;
  out << "height = " << s.height << "\nwidth = " << s.width
      << "\npixel_size_mm = " << format_double(s.pixel_size_mm)
      << "\nframe_rate_hz = " << format_double(s.frame_rate_hz) << "\nn_frames = " << s.n_frames
      << "\nn_bubbles = " << s.n_bubbles << "\npsf_sigma = " << format_double(s.psf_sigma)
      << "\namplitude = " << format_double(s.amplitude)
      << "\nnoise_std = " << format_double(s.noise_std) << "\nseed = " << s.seed << "\n";
  for (const auto &v : s.vessels)
    out << "vessel = " << format_double(v.start.row) << " " << format_double(v.start.col) << " "
        << format_double(v.end.row) << " " << format_double(v.end.col) << " "
        << format_double(v.radius_px) << " " << format_double(v.peak_speed_mps) << "\n";
  for (const auto &p : s.stationary)
    out << "stationary = " << format_double(p.row) << " " << format_double(p.col) << "\n";
  return out.str();
}

} // namespace ulm

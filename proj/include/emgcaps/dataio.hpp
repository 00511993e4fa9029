#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "emgcaps/session.hpp"

namespace emg::dataio {

inline constexpr int kFormatVersion = 1;

struct DatasetManifest {
  std::vector<int> subjects;
  int n_gestures = 65;
  int repetitions = 5;
  double sample_rate_hz = 2048.0;
  std::vector<int> excluded_subjects;
};

// Canonical recording layout: <base>.json sidecar + <base>.raw with
// little-endian float32 samples, channel-major (grid 0 row-major, then
// grid 1), T per channel.
void export_recording(const RecordingSession& session, const std::string& base_path);
RecordingSession import_recording(const std::string& base_path);

// Window dataset: single binary file, versioned, config hash embedded.
void export_windows(const std::vector<WindowSample>& samples,
                    const std::string& path, std::uint64_t config_hash);
struct WindowFile {
  std::uint64_t config_hash = 0;
  std::vector<WindowSample> samples;
};
WindowFile import_windows(const std::string& path);

// Flat JSON configuration with full schema validation; unknown keys are
// rejected. Values are either numbers or strings.
struct Config {
  std::uint64_t seed = 1;
  double sample_rate_hz = 2048.0;
  std::size_t n_classes = 65;
  double transient_s = 1.2;
  double window_s = 0.200;
  double step_s = 0.010;
  double bandpass_low_hz = 10.0;
  double bandpass_high_hz = 500.0;
  int bandpass_order = 4;
  std::vector<double> augment_rates{0.10, 0.25, 0.50, 0.75};
  std::size_t masks_per_rate = 6;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  int routing_iterations = 3;
  std::vector<double> eval_rates{0.0, 0.10, 0.25, 0.50, 0.75};
  std::size_t eval_masks = 30;
  std::string model = "capsnet";  // "capsnet" | "cnn3d"

  std::string canonical_json() const;
  std::uint64_t hash() const;
};

Config parse_config(const std::string& json_text);
Config load_config(const std::string& path);
void save_config(const Config& config, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace emg::dataio

#include "emgcaps/dataio.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace emg::dataio {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write file: " + path);
  out.write(content.data(), std::streamsize(content.size()));
}

namespace {

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& off, const std::string& what) {
  if (off + sizeof(T) > buf.size())
    throw InputError("truncated file while reading " + what + ": expected " +
                     std::to_string(off + sizeof(T)) + " bytes, have " +
                     std::to_string(buf.size()));
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void export_recording(const RecordingSession& session, const std::string& base_path) {
  session.validate();
  json sidecar;
  sidecar["format_version"] = kFormatVersion;
  sidecar["subject"] = session.subject_id;
  sidecar["gesture"] = session.gesture_label;
  sidecar["repetition"] = session.repetition;
  sidecar["sample_rate_hz"] = session.sample_rate_hz;
  sidecar["samples"] = session.samples;
  sidecar["grid_layout"] = "2x8x8,channel-major,grid0-rows-then-grid1";
  write_file(base_path + ".json", sidecar.dump(2));

  std::string raw;
  raw.reserve(session.data.size() * sizeof(float));
  for (double v : session.data) put(raw, float(v));
  write_file(base_path + ".raw", raw);
}

RecordingSession import_recording(const std::string& base_path) {
  json sidecar = json::parse(read_file(base_path + ".json"));
  const int version = sidecar.at("format_version").get<int>();
  if (version != kFormatVersion)
    throw InputError("unknown recording format version " + std::to_string(version));
  RecordingSession s;
  s.subject_id = sidecar.at("subject").get<int>();
  s.gesture_label = sidecar.at("gesture").get<int>();
  s.repetition = sidecar.at("repetition").get<int>();
  s.sample_rate_hz = sidecar.at("sample_rate_hz").get<double>();
  s.samples = sidecar.at("samples").get<std::size_t>();

  const std::string raw = read_file(base_path + ".raw");
  const std::size_t expected = kChannels * s.samples * sizeof(float);
  if (raw.size() != expected)
    throw InputError("recording size mismatch for " + base_path + ".raw: expected " +
                     std::to_string(expected) + " bytes, got " +
                     std::to_string(raw.size()));
  s.data.resize(kChannels * s.samples);
  std::size_t off = 0;
  for (auto& v : s.data) v = double(get<float>(raw, off, "samples"));
  s.validate();
  return s;
}

void export_windows(const std::vector<WindowSample>& samples,
                    const std::string& path, std::uint64_t config_hash) {
  std::string buf;
  buf.append("EMGWIN1\0", 8);
  put<std::uint32_t>(buf, kFormatVersion);
  put<std::uint64_t>(buf, config_hash);
  put<std::uint64_t>(buf, samples.size());
  for (const auto& s : samples) {
    put<std::uint64_t>(buf, s.window_len);
    put<std::int32_t>(buf, s.gesture_label);
    put<std::int32_t>(buf, s.provenance.subject_id);
    put<std::int32_t>(buf, s.provenance.repetition);
    put<std::int32_t>(buf, s.provenance.shift_row);
    put<std::int32_t>(buf, s.provenance.shift_col);
    put<std::int32_t>(buf, s.provenance.mask_id);
    for (float v : s.data) put(buf, v);
  }
  write_file(path, buf);
}

WindowFile import_windows(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 8 || buf.compare(0, 8, "EMGWIN1\0", 8) != 0)
    throw InputError("not a window dataset file: " + path);
  std::size_t off = 8;
  const auto version = get<std::uint32_t>(buf, off, "version");
  if (version != std::uint32_t(kFormatVersion))
    throw InputError("unknown window file version " + std::to_string(version));
  WindowFile out;
  out.config_hash = get<std::uint64_t>(buf, off, "config hash");
  const auto count = get<std::uint64_t>(buf, off, "sample count");
  out.samples.resize(count);
  for (auto& s : out.samples) {
    s.window_len = get<std::uint64_t>(buf, off, "window length");
    s.gesture_label = get<std::int32_t>(buf, off, "label");
    s.provenance.subject_id = get<std::int32_t>(buf, off, "subject");
    s.provenance.repetition = get<std::int32_t>(buf, off, "repetition");
    s.provenance.shift_row = get<std::int32_t>(buf, off, "shift row");
    s.provenance.shift_col = get<std::int32_t>(buf, off, "shift col");
    s.provenance.mask_id = get<std::int32_t>(buf, off, "mask id");
    s.data.resize(s.size());
    for (auto& v : s.data) v = get<float>(buf, off, "window data");
  }
  if (off != buf.size())
    throw InputError("trailing bytes in window dataset file: " + path);
  return out;
}

namespace {

struct Field {
  enum Kind { kNumber, kString, kNumberArray } kind;
  bool required;
};

const std::map<std::string, Field>& schema() {
  static const std::map<std::string, Field> s{
      {"seed", {Field::kNumber, false}},
      {"sample_rate_hz", {Field::kNumber, false}},
      {"n_classes", {Field::kNumber, false}},
      {"transient_s", {Field::kNumber, false}},
      {"window_s", {Field::kNumber, false}},
      {"step_s", {Field::kNumber, false}},
      {"bandpass_low_hz", {Field::kNumber, false}},
      {"bandpass_high_hz", {Field::kNumber, false}},
      {"bandpass_order", {Field::kNumber, false}},
      {"augment_rates", {Field::kNumberArray, false}},
      {"masks_per_rate", {Field::kNumber, false}},
      {"epochs", {Field::kNumber, false}},
      {"batch_size", {Field::kNumber, false}},
      {"learning_rate", {Field::kNumber, false}},
      {"routing_iterations", {Field::kNumber, false}},
      {"eval_rates", {Field::kNumberArray, false}},
      {"eval_masks", {Field::kNumber, false}},
      {"model", {Field::kString, false}},
  };
  return s;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::string Config::canonical_json() const {
  json j;
  j["seed"] = seed;
  j["sample_rate_hz"] = sample_rate_hz;
  j["n_classes"] = n_classes;
  j["transient_s"] = transient_s;
  j["window_s"] = window_s;
  j["step_s"] = step_s;
  j["bandpass_low_hz"] = bandpass_low_hz;
  j["bandpass_high_hz"] = bandpass_high_hz;
  j["bandpass_order"] = bandpass_order;
  j["augment_rates"] = augment_rates;
  j["masks_per_rate"] = masks_per_rate;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["routing_iterations"] = routing_iterations;
  j["eval_rates"] = eval_rates;
  j["eval_masks"] = eval_masks;
  j["model"] = model;
  return j.dump(2);  // nlohmann sorts keys, so this is canonical
}

std::uint64_t Config::hash() const { return fnv1a(canonical_json()); }

Config parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = schema().find(key);
    if (it == schema().end())
      throw InputError("config: unknown key \"" + key + "\"");
    switch (it->second.kind) {
      case Field::kNumber:
        if (!value.is_number())
          throw InputError("config: key \"" + key + "\" must be a number");
        break;
      case Field::kString:
        if (!value.is_string())
          throw InputError("config: key \"" + key + "\" must be a string");
        break;
      case Field::kNumberArray:
        if (!value.is_array())
          throw InputError("config: key \"" + key + "\" must be an array");
        for (const auto& e : value)
          if (!e.is_number())
            throw InputError("config: key \"" + key + "\" must hold numbers only");
        break;
    }
  }

  Config c;
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("sample_rate_hz")) c.sample_rate_hz = j["sample_rate_hz"].get<double>();
  if (j.contains("n_classes")) c.n_classes = j["n_classes"].get<std::size_t>();
  if (j.contains("transient_s")) c.transient_s = j["transient_s"].get<double>();
  if (j.contains("window_s")) c.window_s = j["window_s"].get<double>();
  if (j.contains("step_s")) c.step_s = j["step_s"].get<double>();
  if (j.contains("bandpass_low_hz")) c.bandpass_low_hz = j["bandpass_low_hz"].get<double>();
  if (j.contains("bandpass_high_hz")) c.bandpass_high_hz = j["bandpass_high_hz"].get<double>();
  if (j.contains("bandpass_order")) c.bandpass_order = j["bandpass_order"].get<int>();
  if (j.contains("augment_rates")) c.augment_rates = j["augment_rates"].get<std::vector<double>>();
  if (j.contains("masks_per_rate")) c.masks_per_rate = j["masks_per_rate"].get<std::size_t>();
  if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("routing_iterations")) c.routing_iterations = j["routing_iterations"].get<int>();
  if (j.contains("eval_rates")) c.eval_rates = j["eval_rates"].get<std::vector<double>>();
  if (j.contains("eval_masks")) c.eval_masks = j["eval_masks"].get<std::size_t>();
  if (j.contains("model")) c.model = j["model"].get<std::string>();

  if (c.model != "capsnet" && c.model != "cnn3d")
    throw InputError("config: model must be \"capsnet\" or \"cnn3d\"");
  if (c.batch_size == 0) throw InputError("config: batch_size must be positive");
  for (double r : c.augment_rates)
    if (r < 0.0 || r >= 1.0)
      throw InputError("config: augment rates must lie in [0,1)");
  for (double r : c.eval_rates)
    if (r < 0.0 || r >= 1.0)
      throw InputError("config: eval rates must lie in [0,1)");
  return c;
}

Config load_config(const std::string& path) {
  return parse_config(read_file(path));
}

void save_config(const Config& config, const std::string& path) {
  write_file(path, config.canonical_json());
}

}  // namespace emg::dataio

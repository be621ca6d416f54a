#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tailflow/datagen.hpp"
#include "tailflow/flow.hpp"
#include "tailflow/matrix.hpp"

namespace tailflow::io {

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

// Round-trip-exact numeric CSV ("%.17g").
void write_csv(const std::string& path, const Matrix& m,
               const std::vector<std::string>& header = {});

// Sample persistence: data CSV plus a JSON sidecar (<path>.meta.json) with
// margin labels, spec fingerprint and seed.
void write_sample(const std::string& csv_path, const datagen::SampleMatrix& sample,
                  std::uint64_t seed = 0);
datagen::SampleMatrix read_sample(const std::string& csv_path, bool has_header = false);

// ---------------------------------------------------------------------------
// Key-value config files: `key = value` lines, '#' comments. Unknown keys are
// an error surfaced with their names once parsing finishes.
// ---------------------------------------------------------------------------

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback);
  std::string require_string(const std::string& key);
  double get_double(const std::string& key, double fallback);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback);
  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback);

  // Throws listing every key that was never read.
  void assert_all_consumed() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned little-endian container of named f64 tensors plus a
// text metadata block (schedule, seed, architecture, serialized transform).
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const flow::TrainedModel& model);
flow::TrainedModel load_checkpoint(const std::string& path);

}  // namespace tailflow::io

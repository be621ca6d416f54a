#include "tailflow/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tailflow::io {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void write_csv(const std::string& path, const Matrix& m,
               const std::vector<std::string>& header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  if (!header.empty()) {
    if (header.size() != m.cols()) {
      throw std::invalid_argument("write_csv: header width mismatch");
    }
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j) out << ',';
      out << header[j];
    }
    out << '\n';
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << fmt(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path);
}

void write_sample(const std::string& csv_path, const datagen::SampleMatrix& sample,
                  std::uint64_t seed) {
  write_csv(csv_path, sample.data);
  nlohmann::json meta;
  meta["rows"] = sample.data.rows();
  meta["cols"] = sample.data.cols();
  meta["fingerprint"] = sample.fingerprint;
  meta["seed"] = seed;
  std::vector<std::string> labels;
  labels.reserve(sample.labels.size());
  for (auto l : sample.labels) labels.push_back(datagen::to_string(l));
  meta["labels"] = labels;
  std::ofstream out(csv_path + ".meta.json");
  if (!out) throw std::runtime_error("write_sample: cannot open sidecar for " + csv_path);
  out << meta.dump(2) << '\n';
}

datagen::SampleMatrix read_sample(const std::string& csv_path, bool has_header) {
  datagen::SampleMatrix sample = datagen::load_csv(csv_path, has_header);
  std::ifstream meta_in(csv_path + ".meta.json");
  if (meta_in) {
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    if (meta.contains("labels")) {
      const auto& labels = meta["labels"];
      if (labels.size() != sample.data.cols()) {
        throw std::runtime_error("read_sample: sidecar label count mismatch for " +
                                 csv_path);
      }
      sample.labels.clear();
      for (const auto& l : labels) {
        sample.labels.push_back(datagen::label_from_string(l.get<std::string>()));
      }
    }
    if (meta.contains("fingerprint")) {
      sample.fingerprint = meta["fingerprint"].get<std::uint64_t>();
    }
  }
  return sample;
}

// ---------------------------------------------------------------------------
// Key-value config
// ---------------------------------------------------------------------------

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": empty key");
    }
    if (cfg.values_.count(key)) {
      throw std::invalid_argument("config: duplicate key '" + key + "'");
    }
    cfg.values_[key] = val;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string KeyValueConfig::require_string(const std::string& key) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) {
    throw std::invalid_argument("config: missing required key '" + key + "'");
  }
  return it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "inf" || it->second == "infinity") {
    return std::numeric_limits<double>::infinity();
  }
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' is not a number: " +
                                it->second);
  }
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' is not an integer: " +
                                it->second);
  }
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' is not an integer: " +
                                it->second);
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' is not a boolean: " + v);
}

std::vector<double> KeyValueConfig::get_double_list(
    const std::string& key, const std::vector<double>& fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::istringstream is(it->second);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const std::string v = trim(tok);
    if (v.empty()) continue;
    try {
      out.push_back(std::stod(v));
    } catch (const std::exception&) {
      throw std::invalid_argument("config: key '" + key + "' has non-numeric item: " + v);
    }
  }
  return out;
}

std::vector<std::string> KeyValueConfig::get_string_list(
    const std::string& key, const std::vector<std::string>& fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::string> out;
  std::istringstream is(it->second);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const std::string v = trim(tok);
    if (!v.empty()) out.push_back(v);
  }
  return out;
}

void KeyValueConfig::assert_all_consumed() const {
  std::string unknown;
  for (const auto& [key, value] : values_) {
    if (!consumed_.count(key)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += key;
    }
  }
  if (!unknown.empty()) {
    throw std::invalid_argument("config: unknown keys: " + unknown);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_tensor(std::ostream& out, const std::string& name,
                  const std::vector<std::uint64_t>& dims, const double* data) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(dims.size()));
  std::uint64_t count = 1;
  for (auto d : dims) {
    write_u64(out, d);
    count *= d;
  }
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

std::map<std::string, Tensor> read_tensors(std::istream& in, std::uint32_t count) {
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndim = read_u32(in);
    Tensor t;
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      t.dims.push_back(read_u64(in));
      n *= t.dims.back();
    }
    t.data.resize(n);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
    tensors.emplace(std::move(name), std::move(t));
  }
  return tensors;
}

}  // namespace

void save_checkpoint(const std::string& path, const flow::TrainedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));

  std::ostringstream meta;
  const auto& cfg = model.net.config();
  meta << "schedule=" << to_string(model.schedule.kind) << "\n";
  meta << "seed=" << model.seed << "\n";
  meta << "standardize=" << (model.standardizer.enabled ? 1 : 0) << "\n";
  meta << "epochs=" << model.log.epochs << "\n";
  meta << "best_epoch=" << model.log.best_epoch << "\n";
  meta << "data_dim=" << cfg.data_dim << "\n";
  meta << "hidden_width=" << cfg.hidden_width << "\n";
  meta << "hidden_layers=" << cfg.hidden_layers << "\n";
  meta << "embed_dim=" << cfg.embed_dim << "\n";
  meta << "freq_min=" << fmt(cfg.freq_min) << "\n";
  meta << "freq_max=" << fmt(cfg.freq_max) << "\n";
  {
    std::istringstream ts(model.transform.serialize());
    std::string line;
    while (std::getline(ts, line)) {
      if (!line.empty()) meta << "transform." << line << "\n";
    }
  }
  const std::string meta_str = meta.str();
  write_u32(out, static_cast<std::uint32_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  std::uint32_t n_tensors = 3;  // params, frequencies, log
  if (model.standardizer.enabled) n_tensors += 2;
  const bool has_val = !model.log.val_loss.empty();
  if (has_val) ++n_tensors;
  write_u32(out, n_tensors);

  const auto params = model.net.params();
  write_tensor(out, "params", {params.size()}, params.data());
  write_tensor(out, "frequencies", {model.net.frequencies().size()},
               model.net.frequencies().data());
  write_tensor(out, "log_train_loss", {model.log.train_loss.size()},
               model.log.train_loss.data());
  if (has_val) {
    write_tensor(out, "log_val_loss", {model.log.val_loss.size()},
                 model.log.val_loss.data());
  }
  if (model.standardizer.enabled) {
    write_tensor(out, "standardize_mean", {model.standardizer.mean.size()},
                 model.standardizer.mean.data());
    write_tensor(out, "standardize_sd", {model.standardizer.sd.size()},
                 model.standardizer.sd.data());
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

flow::TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  const std::uint32_t meta_len = read_u32(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  if (!in) throw std::runtime_error("load_checkpoint: truncated metadata");

  std::map<std::string, std::string> kv;
  std::string transform_text;
  {
    std::istringstream is(meta);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::runtime_error("load_checkpoint: malformed metadata line: " + line);
      }
      const std::string key = line.substr(0, eq);
      if (key.rfind("transform.", 0) == 0) {
        transform_text += key.substr(10) + "=" + line.substr(eq + 1) + "\n";
      } else {
        kv[key] = line.substr(eq + 1);
      }
    }
  }
  const auto need = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw std::runtime_error("load_checkpoint: missing metadata key " + key);
    }
    return it->second;
  };

  nn::NetConfig net_cfg;
  net_cfg.data_dim = std::stoull(need("data_dim"));
  net_cfg.hidden_width = std::stoull(need("hidden_width"));
  net_cfg.hidden_layers = std::stoull(need("hidden_layers"));
  net_cfg.embed_dim = std::stoull(need("embed_dim"));
  net_cfg.freq_min = std::stod(need("freq_min"));
  net_cfg.freq_max = std::stod(need("freq_max"));

  const std::uint32_t n_tensors = read_u32(in);
  auto tensors = read_tensors(in, n_tensors);

  nn::VelocityNet net(net_cfg);
  {
    const auto it = tensors.find("params");
    if (it == tensors.end() || it->second.data.size() != net.n_params()) {
      throw std::runtime_error("load_checkpoint: params tensor missing or wrong size");
    }
    std::copy(it->second.data.begin(), it->second.data.end(), net.params().begin());
  }

  flow::Standardizer stdz;
  stdz.enabled = need("standardize") == "1";
  if (stdz.enabled) {
    stdz.mean = tensors.at("standardize_mean").data;
    stdz.sd = tensors.at("standardize_sd").data;
  }

  flow::TrainingLog log;
  log.epochs = std::stoull(need("epochs"));
  log.best_epoch = std::stoull(need("best_epoch"));
  if (const auto it = tensors.find("log_train_loss"); it != tensors.end()) {
    log.train_loss = it->second.data;
  }
  if (const auto it = tensors.find("log_val_loss"); it != tensors.end()) {
    log.val_loss = it->second.data;
  }

  return flow::TrainedModel{std::move(net),
                            transforms::TransformSpec::deserialize(transform_text),
                            flow::Schedule{flow::schedule_from_string(need("schedule"))},
                            std::move(stdz), std::move(log),
                            std::stoull(need("seed"))};
}

}  // namespace tailflow::io

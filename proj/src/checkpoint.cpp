#include "nexus/checkpoint.hpp"

#include "nexus/kv_config.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nexus {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace fs = std::filesystem;

namespace {

struct ArrayEntry {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw CheckpointError("short write to " + p.string());
}

struct ParsedManifest {
  CheckpointManifest manifest;
  std::vector<ArrayEntry> arrays;
};

ParsedManifest parse_manifest(const std::string& text) {
  ParsedManifest out;
  std::istringstream in(text);
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "nexus-checkpoint") {
    throw CheckpointError("not a nexus checkpoint manifest");
  }
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  out.manifest.version = version;
  std::string key;
  while (in >> key) {
    if (key == "config_hash" || key == "vocab_hash") {
      std::string h;
      in >> h;
      (key == "config_hash" ? out.manifest.config_hash : out.manifest.vocab_hash) =
          std::stoull(h, nullptr, 16);
    } else if (key == "step") {
      in >> out.manifest.step;
    } else if (key == "metric") {
      std::string name, value;
      in >> name >> value;
      out.manifest.metrics[name] = std::stod(value);
    } else if (key == "array") {
      ArrayEntry e;
      in >> e.name >> e.rows >> e.cols;
      out.arrays.push_back(e);
    } else {
      throw CheckpointError("unknown manifest key '" + key + "'");
    }
    if (!in) throw CheckpointError("malformed manifest near '" + key + "'");
  }
  return out;
}

void fill_parameters(NexusModel& model, const std::vector<ArrayEntry>& arrays, const std::string& blob) {
  const auto params = model.params().all();
  if (arrays.size() != params.size()) {
    throw CheckpointError("parameter count mismatch: checkpoint has " + std::to_string(arrays.size()) +
                          ", model has " + std::to_string(params.size()));
  }
  std::size_t expected = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (arrays[i].name != p.name() || arrays[i].rows != p.value.rows() || arrays[i].cols != p.value.cols()) {
      throw CheckpointError("parameter layout mismatch at '" + arrays[i].name + "'");
    }
    expected += static_cast<std::size_t>(p.value.size()) * sizeof(double);
  }
  if (blob.size() != expected) {
    throw CheckpointError("params.bin has " + std::to_string(blob.size()) + " bytes, expected " +
                          std::to_string(expected));
  }
  std::size_t offset = 0;
  for (Parameter* p : params) {
    const std::size_t bytes = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    std::memcpy(p->value.data(), blob.data() + offset, bytes);
    offset += bytes;
  }
}

}  // namespace

void save_checkpoint(const std::string& dir, const NexusModel& model, const Vocabulary& vocab,
                     long step, const std::map<std::string, double>& metrics) {
  fs::create_directories(dir);
  const std::string config_text = model.config().serialize();
  const std::string vocab_text = vocab.serialize();

  std::ostringstream manifest;
  manifest << "nexus-checkpoint " << kCheckpointVersion << '\n';
  manifest << "config_hash " << hex(fnv1a(config_text)) << '\n';
  manifest << "vocab_hash " << hex(fnv1a(vocab_text)) << '\n';
  manifest << "step " << step << '\n';
  for (const auto& [name, value] : metrics) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    manifest << "metric " << name << ' ' << buf << '\n';
  }
  std::string blob;
  for (const Parameter* p : model.params().all()) {
    manifest << "array " << p->name() << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    blob.append(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  const fs::path root(dir);
  write_file(root / "config.txt", config_text);
  write_file(root / "vocab.txt", vocab_text);
  write_file(root / "params.bin", blob);
  write_file(root / "manifest.txt", manifest.str());
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  const ParsedManifest pm = parse_manifest(read_file(root / "manifest.txt"));
  const std::string config_text = read_file(root / "config.txt");
  const std::string vocab_text = read_file(root / "vocab.txt");
  if (fnv1a(config_text) != pm.manifest.config_hash) throw CheckpointError("config hash mismatch");
  if (fnv1a(vocab_text) != pm.manifest.vocab_hash) throw CheckpointError("vocabulary hash mismatch");

  LoadedCheckpoint out;
  std::istringstream vs(vocab_text);
  out.vocab = Vocabulary::load(vs);
  const ModelConfig config = ModelConfig::from_map(parse_kv(config_text));
  if (static_cast<std::size_t>(config.encoder.vocab_size) != out.vocab.size()) {
    throw CheckpointError("vocabulary size does not match model config");
  }
  out.model = std::make_unique<NexusModel>(config, 0);
  fill_parameters(*out.model, pm.arrays, read_file(root / "params.bin"));
  out.manifest = pm.manifest;
  return out;
}

CheckpointManifest load_parameters_into(const std::string& dir, NexusModel& model) {
  const fs::path root(dir);
  const ParsedManifest pm = parse_manifest(read_file(root / "manifest.txt"));
  if (fnv1a(model.config().serialize()) != pm.manifest.config_hash) {
    throw CheckpointError("checkpoint was written for a different model config");
  }
  fill_parameters(model, pm.arrays, read_file(root / "params.bin"));
  return pm.manifest;
}

}  // namespace nexus

#include "eformer/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "eformer/config.hpp"

namespace eformer::train {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint truncated");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

std::string shape_field(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& f) {
  Shape s;
  if (f == "scalar") return s;
  std::stringstream ss(f);
  std::string item;
  while (std::getline(ss, item, ',')) s.push_back(config::parse_size("shape", item));
  return s;
}

struct Record {
  std::string kind;
  std::string name;
  Shape shape;
  const double* data;
  std::size_t count;
};

}  // namespace

std::string Checkpoint::serialize() const {
  std::vector<Record> records;
  for (const auto& [name, t] : params) records.push_back({"param", name, t.shape(), t.data().data(), t.numel()});
  for (const auto& [name, m] : state.opt.m) records.push_back({"adam_m", name, {m.size()}, m.data(), m.size()});
  for (const auto& [name, v] : state.opt.v) records.push_back({"adam_v", name, {v.size()}, v.data(), v.size()});

  std::ostringstream manifest;
  manifest << "eformer-checkpoint\n";
  for (const auto& [k, v] : model.to_kv()) manifest << "config " << k << "=" << v << "\n";
  for (const auto& [k, v] : train.to_kv()) manifest << "config " << k << "=" << v << "\n";
  manifest << "state epoch=" << state.epoch << "\n";
  manifest << "state adam_steps=" << state.opt.steps << "\n";
  // Batch order, pairing and flips are drawn from generators seeded by
  // (train.seed, epoch), so these two values are the full data RNG state.
  manifest << "state rng=loader:" << train.seed << ":" << state.epoch << "\n";
  std::size_t offset = 0;
  for (const Record& r : records) {
    manifest << "tensor " << r.kind << " " << r.name << " f64 " << shape_field(r.shape) << " " << offset << " "
             << r.count << "\n";
    offset += r.count * sizeof(double);
  }
  manifest << "end\n";

  const std::string text = manifest.str();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const Record& r : records) {
    for (std::size_t i = 0; i < r.count; ++i) put_le<double>(out, r.data[i]);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + 12 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError("not an eformer checkpoint");
  }
  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  pos += 4;
  const auto manifest_size = get_le<std::uint64_t>(bytes, pos);
  pos += 8;
  if (pos + manifest_size > bytes.size()) throw CheckpointError("checkpoint manifest truncated");
  const std::string text = bytes.substr(pos, manifest_size);
  const std::size_t payload = pos + manifest_size;

  Checkpoint ck;
  KeyValues cfg;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "eformer-checkpoint") throw CheckpointError("bad checkpoint manifest header");
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config") {
      std::string rest = line.substr(7);
      const auto eq = rest.find('=');
      if (eq == std::string::npos) throw CheckpointError("bad config line: " + line);
      cfg[rest.substr(0, eq)] = rest.substr(eq + 1);
    } else if (tag == "state") {
      std::string kv;
      ls >> kv;
      const auto eq = kv.find('=');
      const std::string key = kv.substr(0, eq);
      const std::string value = eq == std::string::npos ? "" : kv.substr(eq + 1);
      if (key == "epoch") ck.state.epoch = config::parse_size(key, value);
      else if (key == "adam_steps") ck.state.opt.steps = config::parse_size(key, value);
      else if (key != "rng") throw CheckpointError("unknown state field " + key);
    } else if (tag == "tensor") {
      std::string kind, name, dtype, shape;
      std::size_t offset = 0, count = 0;
      if (!(ls >> kind >> name >> dtype >> shape >> offset >> count)) throw CheckpointError("bad tensor line: " + line);
      if (dtype != "f64") throw CheckpointError("unsupported dtype " + dtype + " for " + name);
      const Shape s = parse_shape(shape);
      if (shape_numel(s) != count) throw CheckpointError("shape/count mismatch for " + name);
      if (payload + offset + count * sizeof(double) > bytes.size()) {
        throw CheckpointError("payload truncated at tensor " + name);
      }
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) values[i] = get_le<double>(bytes, payload + offset + i * sizeof(double));
      if (kind == "param") ck.params.add(name, Tensor::from(s, std::move(values)));
      else if (kind == "adam_m") ck.state.opt.m[name] = std::move(values);
      else if (kind == "adam_v") ck.state.opt.v[name] = std::move(values);
      else throw CheckpointError("unknown tensor kind " + kind);
    } else {
      throw CheckpointError("unknown manifest line: " + line);
    }
  }
  if (!ended) throw CheckpointError("checkpoint manifest lacks end marker");
  try {
    ck.model = ModelConfig::from_kv(cfg);
    ck.train.apply(cfg);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

Checkpoint make_checkpoint(const EFormer& model, const TrainConfig& train, const TrainState& state) {
  Checkpoint ck;
  ck.model = model.config();
  ck.train = train;
  for (const auto& [name, t] : model.params()) ck.params.add(name, t.detach().clone());
  ck.state = state;
  return ck;
}

EFormer restore_model(const Checkpoint& ckpt) {
  ParamStore store;
  for (const auto& [name, t] : ckpt.params) store.add(name, t.detach().clone());
  return EFormer(ckpt.model, std::move(store));
}

}  // namespace eformer::train

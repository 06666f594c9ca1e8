#include "moext/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace moext::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string to_string(Phase p) { return p == Phase::Pretrain ? "pretrain" : "finetune"; }

Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::Pretrain;
  if (s == "finetune") return Phase::Finetune;
  throw SchemaError("unknown phase '" + s + "'");
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size, std::uint64_t h) {
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'X', 'T', 'C', 'K', 'P'};

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

template <typename U>
U get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CorruptArchiveError("checkpoint truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

nlohmann::json history_json(const std::vector<EpochRecord>& h) {
  auto arr = nlohmann::json::array();
  for (const auto& r : h)
    arr.push_back({{"epoch", r.epoch}, {"l_re", r.l_re}, {"l_st", r.l_st}, {"l_ss", r.l_ss},
                   {"total", r.total}, {"ce", r.ce}, {"train_acc", r.train_acc}});
  return arr;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, arr] : ckpt.state)
    index.push_back({{"name", name}, {"shape", {arr.shape.n, arr.shape.c, arr.shape.h, arr.shape.w}}});
  const nlohmann::json header{{"phase", to_string(ckpt.phase)},
                              {"model", ckpt.model.to_json()},
                              {"train_config", ckpt.train_config},
                              {"seed", ckpt.seed},
                              {"epoch", ckpt.epoch},
                              {"history", history_json(ckpt.history)},
                              {"tensors", index}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, arr] : ckpt.state) {
    if (arr.values.size() != arr.shape.numel()) throw ShapeError("state entry '" + name + "' size mismatch");
    const auto* p = reinterpret_cast<const std::uint8_t*>(arr.values.data());
    out.insert(out.end(), p, p + arr.values.size() * sizeof(float));
  }
  put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& in) {
  if (in.size() < 8 || std::memcmp(in.data(), kMagic, 8) != 0)
    throw CorruptArchiveError("not a checkpoint archive (bad magic)");
  std::size_t pos = 8;
  const auto version = get<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + ", this build reads version " +
                       std::to_string(kCheckpointVersion));
  const auto header_len = get<std::uint64_t>(in, pos);
  if (header_len > in.size() - pos) throw CorruptArchiveError("checkpoint truncated in header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.begin() + static_cast<std::ptrdiff_t>(pos),
                                   in.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchiveError(std::string("checkpoint header: ") + e.what());
  }
  pos += header_len;

  Checkpoint ckpt;
  try {
    ckpt.phase = parse_phase(header.at("phase").get<std::string>());
    ckpt.model = nn::ModelConfig::from_json(header.at("model"));
    ckpt.train_config = header.at("train_config");
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.epoch = header.at("epoch").get<int>();
    for (const auto& r : header.at("history"))
      ckpt.history.push_back({r.at("epoch").get<int>(), r.at("l_re").get<double>(), r.at("l_st").get<double>(),
                              r.at("l_ss").get<double>(), r.at("total").get<double>(), r.at("ce").get<double>(),
                              r.at("train_acc").get<double>()});
    for (const auto& t : header.at("tensors")) {
      const auto dims = t.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw CorruptArchiveError("tensor shape must have 4 dims");
      nn::NamedArray arr{{dims[0], dims[1], dims[2], dims[3]}, {}};
      const std::size_t bytes = arr.shape.numel() * sizeof(float);
      if (bytes > in.size() - pos) throw CorruptArchiveError("checkpoint truncated in tensor data");
      arr.values.resize(arr.shape.numel());
      std::memcpy(arr.values.data(), in.data() + pos, bytes);
      pos += bytes;
      ckpt.state.emplace(t.at("name").get<std::string>(), std::move(arr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchiveError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptArchiveError(e.what());
  } catch (const SchemaError& e) {
    throw CorruptArchiveError(e.what());
  }
  const std::size_t body = pos;
  const auto stored = get<std::uint64_t>(in, pos);
  if (pos != in.size()) throw CorruptArchiveError("trailing bytes after checkpoint");
  if (stored != fnv1a(in.data(), body)) throw CorruptArchiveError("checkpoint checksum mismatch");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling file first so an interrupted save never clobbers a good checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace moext::train

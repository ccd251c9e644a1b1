#include "adpgcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace adpgcn {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'P', 'G', 'C', 'N', 'C', 'K'};
constexpr char kEndMagic[8] = {'A', 'D', 'P', 'G', 'C', 'N', 'E', 'D'};
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint64_t kMaxHeaderBytes = 1u << 26;

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw CorruptCheckpoint("checkpoint is truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw CorruptCheckpoint("checkpoint is truncated");
  return s;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

std::vector<double> split_doubles(const std::string& key, const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split(s, ',')) out.push_back(parse_double(key, item));
  return out;
}

std::string header_text(const Checkpoint& c) {
  KeyValues kv = to_key_values(c.model);
  kv.merge(to_key_values(c.train));
  kv["norm.mean"] = join(c.norm.mean);
  kv["norm.std"] = join(c.norm.std);
  std::string names;
  for (std::size_t i = 0; i < c.column_names.size(); ++i) names += (i ? "," : "") + c.column_names[i];
  kv["columns.names"] = names;
  for (const auto& e : c.history) {
    char key[32];
    std::snprintf(key, sizeof key, "history.e%04zu", e.epoch);
    kv[key] = format_double(e.lr) + "," + format_double(e.train_loss) + "," +
              format_double(e.val_loss) + "," + (e.improved ? "1" : "0");
  }
  kv["rng.shuffle"] = c.shuffle_rng_state;
  kv["rng.dropout"] = c.dropout_rng_state;
  std::ostringstream os;
  write_key_value_text(os, kv);
  return os.str();
}

void parse_header(const std::string& text, Checkpoint& c) {
  std::istringstream is(text);
  const KeyValues kv = parse_key_value_text(is);
  for (const auto& [full, value] : kv) {
    const auto dot = full.find('.');
    if (dot == std::string::npos) throw CorruptCheckpoint("header key '" + full + "' has no section");
    const std::string section = full.substr(0, dot);
    const std::string key = full.substr(dot + 1);
    bool known = true;
    if (section == "model")
      known = apply_key(c.model, key, value);
    else if (section == "train")
      known = apply_key(c.train, key, value);
    else if (full == "norm.mean")
      c.norm.mean = split_doubles(full, value);
    else if (full == "norm.std")
      c.norm.std = split_doubles(full, value);
    else if (full == "columns.names")
      c.column_names = split(value, ',');
    else if (section == "history") {
      auto parts = split(value, ',');
      if (parts.size() != 4 || key.size() < 2 || key[0] != 'e')
        throw CorruptCheckpoint("bad history entry '" + full + "'");
      c.history.push_back({parse_uint(full, key.substr(1)), parse_double(full, parts[0]),
                           parse_double(full, parts[1]), parse_double(full, parts[2]),
                           parts[3] == "1"});
    } else if (full == "rng.shuffle")
      c.shuffle_rng_state = value;
    else if (full == "rng.dropout")
      c.dropout_rng_state = value;
    else
      known = false;
    if (!known) throw CorruptCheckpoint("unknown header key '" + full + "'");
  }
}

}  // namespace

Checkpoint snapshot(model::Forecaster& model) {
  Checkpoint c;
  c.model = model.config();
  c.dropout_rng_state = model.dropout_rng().state();
  for (const auto& [name, t] : model.named_parameters()) c.tensors.emplace_back(name, t.clone());
  return c;
}

void restore(model::Forecaster& model, const Checkpoint& ckpt) {
  const auto& params = model.named_parameters();
  if (params.size() != ckpt.tensors.size())
    throw CorruptCheckpoint("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                            " tensors, model expects " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, target] = params[i];
    const auto& [src_name, src] = ckpt.tensors[i];
    if (name != src_name) throw CorruptCheckpoint("tensor '" + src_name + "' where '" + name + "' expected");
    if (target.shape() != src.shape())
      throw CorruptCheckpoint("tensor '" + name + "' has shape " + shape_str(src.shape()) +
                              ", model expects " + shape_str(target.shape()));
    Tensor dst = target;
    auto out = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
  }
  if (!ckpt.dropout_rng_state.empty()) model.dropout_rng().set_state(ckpt.dropout_rng_state);
}

model::Forecaster build_model(const Checkpoint& ckpt) {
  model::Forecaster model(ckpt.model);
  restore(model, ckpt);
  return model;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = header_text(ckpt);
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    for (double v : t.data()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  out.write(kEndMagic, sizeof kEndMagic);
  if (!out) throw DataError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  if (get_bytes(in, sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw CorruptCheckpoint("not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw FormatVersionMismatch("checkpoint format version " + std::to_string(version) +
                                ", expected " + std::to_string(kCheckpointVersion));
  const auto header_len = get<std::uint64_t>(in);
  if (header_len > kMaxHeaderBytes) throw CorruptCheckpoint("implausible header length");
  Checkpoint c;
  try {
    parse_header(get_bytes(in, header_len), c);
  } catch (const ConfigError& e) {
    throw CorruptCheckpoint(std::string("bad header value: ") + e.what());
  }
  const auto count = get<std::uint64_t>(in);
  if (count > 1'000'000) throw CorruptCheckpoint("implausible tensor count");
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto name_len = get<std::uint32_t>(in);
    if (name_len > 4096) throw CorruptCheckpoint("implausible tensor name length");
    std::string name = get_bytes(in, name_len);
    if (get<std::uint8_t>(in) != kDtypeF64) throw CorruptCheckpoint("tensor '" + name + "' has unknown dtype");
    const auto rank = get<std::uint32_t>(in);
    if (rank == 0 || rank > 8) throw CorruptCheckpoint("tensor '" + name + "' has bad rank");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& e : shape) {
      e = get<std::uint64_t>(in);
      if (e == 0 || e > (1ull << 32)) throw CorruptCheckpoint("tensor '" + name + "' has bad extent");
      numel *= e;
      if (numel > (1ull << 32)) throw CorruptCheckpoint("tensor '" + name + "' is implausibly large");
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = std::bit_cast<double>(get<std::uint64_t>(in));
    try {
      c.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    } catch (const Error& e) {
      throw CorruptCheckpoint(std::string("bad tensor values: ") + e.what());
    }
  }
  if (get_bytes(in, sizeof kEndMagic) != std::string(kEndMagic, sizeof kEndMagic))
    throw CorruptCheckpoint("checkpoint trailer missing");
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptCheckpoint("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace adpgcn

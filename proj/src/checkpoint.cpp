#include "medcap/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "medcap/errors.hpp"

namespace medcap {

namespace {

constexpr char kMagic[4] = {'Q', 'B', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

bool get_u32(std::istream& in, uint32_t& v) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) return false;
  v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

void write_record(std::ostream& out, const std::string& name, const std::vector<uint32_t>& dims,
                  const float* data, size_t count) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<uint32_t>(dims.size()));
  for (uint32_t d : dims) put_u32(out, d);
  for (size_t i = 0; i < count; ++i) put_f32(out, data[i]);
}

std::vector<float> bytes_to_floats(const std::string& s) {
  std::vector<float> out(s.size());
  for (size_t i = 0; i < s.size(); ++i)
    out[i] = static_cast<float>(static_cast<unsigned char>(s[i]));
  return out;
}

std::string floats_to_bytes(const std::vector<float>& v) {
  std::string out(v.size(), '\0');
  for (size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v[i])));
  return out;
}

std::vector<uint32_t> tensor_dims(const Tensor<float>& t) {
  std::vector<uint32_t> dims;
  for (int d : t.shape()) dims.push_back(static_cast<uint32_t>(d));
  return dims;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : records)
    if (n == name) return &t;
  return nullptr;
}

std::string Checkpoint::run_config() const {
  const CheckpointTensor* t = find("meta.run_config_utf8");
  return t ? floats_to_bytes(t->data) : "";
}

uint64_t Checkpoint::vocab_hash() const {
  const CheckpointTensor* t = find("meta.vocab_hash");
  if (!t || t->data.size() != 8) return 0;
  const std::string bytes = floats_to_bytes(t->data);
  uint64_t h = 0;
  for (int i = 0; i < 8; ++i)
    h |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[static_cast<size_t>(i)]))
         << (8 * i);
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const ParamList<float>& params,
                     const AdamW<float>* opt, const std::string& run_config_json,
                     uint64_t vocab_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  for (const auto& p : params)
    write_record(out, p.name, tensor_dims(p.tensor), p.tensor.value().data(),
                 p.tensor.numel());
  if (opt) {
    const auto& op = opt->params();
    const auto& m = opt->moment1();
    const auto& v = opt->moment2();
    for (size_t i = 0; i < op.size(); ++i) {
      write_record(out, "opt.m." + op[i].name, tensor_dims(op[i].tensor), m[i].data(),
                   m[i].size());
      write_record(out, "opt.v." + op[i].name, tensor_dims(op[i].tensor), v[i].data(),
                   v[i].size());
    }
    const float step_value = static_cast<float>(opt->step_count());
    write_record(out, "opt.step", {1}, &step_value, 1);
  }
  const std::vector<float> cfg = bytes_to_floats(run_config_json);
  write_record(out, "meta.run_config_utf8", {static_cast<uint32_t>(cfg.size())}, cfg.data(),
               cfg.size());
  std::string hash_bytes(8, '\0');
  for (int i = 0; i < 8; ++i)
    hash_bytes[static_cast<size_t>(i)] = static_cast<char>((vocab_hash >> (8 * i)) & 0xff);
  const std::vector<float> hv = bytes_to_floats(hash_bytes);
  write_record(out, "meta.vocab_hash", {8}, hv.data(), hv.size());
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path.string());
  uint32_t version = 0;
  if (!get_u32(in, version) || version != kVersion)
    throw DataError("unsupported checkpoint version in " + path.string());
  Checkpoint ckpt;
  uint32_t name_len = 0;
  while (get_u32(in, name_len)) {
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    uint32_t rank = 0;
    if (static_cast<uint32_t>(in.gcount()) != name_len || !get_u32(in, rank))
      throw DataError("truncated checkpoint record in " + path.string());
    CheckpointTensor t;
    size_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint32_t d = 0;
      if (!get_u32(in, d)) throw DataError("truncated checkpoint dims in " + path.string());
      t.dims.push_back(d);
      numel *= d;
    }
    t.data.resize(numel);
    for (size_t i = 0; i < numel; ++i) {
      uint32_t bits = 0;
      if (!get_u32(in, bits))
        throw DataError("truncated checkpoint payload in " + path.string());
      float f;
      std::memcpy(&f, &bits, 4);
      t.data[i] = f;
    }
    ckpt.records.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void restore_params(ParamList<float>& params, const Checkpoint& ckpt) {
  for (auto& p : params) {
    const CheckpointTensor* t = ckpt.find(p.name);
    if (!t) throw DataError("checkpoint is missing parameter: " + p.name);
    if (t->data.size() != p.tensor.numel())
      throw DataError("checkpoint shape mismatch for " + p.name + ": got " +
                      std::to_string(t->data.size()) + " values, expected " +
                      std::to_string(p.tensor.numel()));
    p.tensor.value() = t->data;
  }
}

}  // namespace medcap

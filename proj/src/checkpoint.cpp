#include "oadis/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "oadis/rng.hpp"

namespace oadis {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  append_u32(out, v);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  std::vector<float> f32_block(std::size_t count) {
    need(count * 4);
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b)
        v |= static_cast<std::uint32_t>(
                 static_cast<unsigned char>(bytes_[pos_ + i * 4 + b]))
             << (8 * b);
      std::memcpy(&out[i], &v, 4);
    }
    pos_ += count * 4;
    return out;
  }

  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(path_ + ": truncated checkpoint at byte offset " +
                        std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, ModelParams& params,
                     const RunConfig& config, const Vocab& vocab) {
  ordered_json meta;
  meta["format_version"] = 1;
  // invocation-location keys are not model state; dropping them keeps the
  // bytes identical no matter where a run writes its outputs
  auto kv = config.to_kv();
  kv.erase("out");
  kv.erase("checkpoint");
  meta["config"] = kv;
  meta["vocab"] = {{"attributes", vocab.attrs}, {"objects", vocab.objs}};
  const std::string meta_str = meta.dump();

  struct Entry {
    std::string name;
    Shape shape;
    const float* data;
    std::size_t count;
  };
  std::vector<Entry> entries;
  for (auto& [name, t] : params.named_tensors()) {
    entries.push_back({name, t.shape(), t.data(), t.numel()});
  }
  for (auto& [name, buf] : params.named_buffers()) {
    entries.push_back({name, {buf->size()}, buf->data(), buf->size()});
  }

  std::string out;
  out += "OADC";
  append_u32(out, 1);
  append_u32(out, static_cast<std::uint32_t>(meta_str.size()));
  out += meta_str;
  append_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    append_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    append_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) append_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < e.count; ++i) append_f32(out, e.data[i]);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  Reader r(bytes, path);
  if (r.str(4) != "OADC")
    throw FormatError(path + ": bad checkpoint magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  const std::uint32_t meta_len = r.u32();
  const std::string meta_str = r.str(meta_len);

  Checkpoint ckpt;
  try {
    const json meta = json::parse(meta_str);
    std::map<std::string, std::string> kv =
        meta.at("config").get<std::map<std::string, std::string>>();
    ckpt.config = RunConfig::from_kv(kv);
    Manifest m;
    m.attributes = meta.at("vocab").at("attributes").get<std::vector<std::string>>();
    m.objects = meta.at("vocab").at("objects").get<std::vector<std::string>>();
    ckpt.vocab = Vocab::from_manifest(m);
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad checkpoint metadata: " + e.what());
  }

  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      numel *= shape.back();
    }
    tensors[name] = {shape, r.f32_block(numel)};
  }
  if (!r.exhausted())
    throw FormatError(path + ": trailing bytes in checkpoint");

  ModelDims dims{ckpt.config.n0, ckpt.config.n, ckpt.config.d_emb,
                 ckpt.config.d_w};
  Rng init_rng(0);
  ckpt.params = make_model_params<float>(
      dims, ocn_variant_from_string(ckpt.config.ocn_variant),
      ckpt.vocab.size(), init_rng);
  ckpt.params.ie_dropout = static_cast<float>(ckpt.config.ie_dropout);
  ckpt.params.head_dropout = static_cast<float>(ckpt.config.head_dropout);
  ckpt.params.ocn_dropout = static_cast<float>(ckpt.config.ocn_dropout);

  for (auto& [name, t] : ckpt.params.named_tensors()) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw FormatError(path + ": checkpoint missing tensor " + name);
    if (it->second.first != t.shape()) {
      throw FormatError(path + ": tensor " + name + " has shape " +
                        shape_str(it->second.first) + ", expected " +
                        shape_str(t.shape()));
    }
    t.values() = it->second.second;
  }
  for (auto& [name, buf] : ckpt.params.named_buffers()) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw FormatError(path + ": checkpoint missing buffer " + name);
    if (it->second.second.size() != buf->size()) {
      throw FormatError(path + ": buffer " + name + " has wrong length");
    }
    *buf = it->second.second;
  }
  return ckpt;
}

}  // namespace oadis

#include "exdiff/nnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "exdiff/error.hpp"

namespace exdiff::nnet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

void put_record(std::ostream& out, const NamedTensor& t) {
  if (shape_numel(t.shape) != t.values.size()) throw ShapeError("checkpoint: record " + t.name + " inconsistent");
  put_u32(out, static_cast<std::uint32_t>(t.name.size()));
  out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
  put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * 4));
}

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

  void bytes(void* dst, std::size_t n, const std::string& section) {
    if (pos_ + n > buf_.size()) throw ParseError("checkpoint: truncated while reading " + section);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32(const std::string& section) {
    std::uint32_t v;
    bytes(&v, 4, section);
    return v;
  }

  NamedTensor record(const std::string& section) {
    NamedTensor t;
    const auto len = u32(section + " name length");
    t.name.resize(len);
    bytes(t.name.data(), len, section + " name");
    const auto rank = u32(section + " rank of " + t.name);
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(u32(section + " shape of " + t.name));
    t.values.resize(shape_numel(t.shape));
    bytes(t.values.data(), t.values.size() * 4, section + " values of " + t.name);
    return t;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(data.params.size()));
  put_u32(out, static_cast<std::uint32_t>(data.header_json.size()));
  out.write(data.header_json.data(), static_cast<std::streamsize>(data.header_json.size()));
  for (const auto& p : data.params) put_record(out, p);
  put_u32(out, static_cast<std::uint32_t>(data.ema.size()));
  for (const auto& p : data.ema) put_record(out, p);
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw ParseError("checkpoint: bad magic");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  CheckpointData data;
  const auto count = r.u32("parameter count");
  const auto header_len = r.u32("header length");
  data.header_json.resize(header_len);
  r.bytes(data.header_json.data(), header_len, "header");
  for (std::uint32_t i = 0; i < count; ++i) data.params.push_back(r.record("parameters"));
  const auto ema_count = r.u32("EMA section");
  for (std::uint32_t i = 0; i < ema_count; ++i) data.ema.push_back(r.record("EMA section"));
  if (!r.at_end()) throw ParseError("checkpoint: trailing bytes after EMA section");
  return data;
}

}  // namespace exdiff::nnet

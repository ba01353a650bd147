#include "hidepet/numcore/records.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace hidepet {

static_assert(std::endian::native == std::endian::little, "record I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void bytes(void* dst, std::size_t n, const char* what) {
    need(n, what);
    if (n) std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw FormatError(std::string("truncated file while reading ") + what + " (need " +
                            std::to_string(n) + " bytes, " + std::to_string(b_.size() - pos_) +
                            " left)",
                        pos_);
    }
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_records(const std::vector<TensorRecord>& records) {
  std::vector<std::uint8_t> out(std::begin(kRecordMagic), std::end(kRecordMagic));
  put<std::uint32_t>(out, kRecordVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw FormatError("tensor name too long: " + r.name, out.size());
    if (!r.tensor.all_finite()) throw NumericError("refusing to persist non-finite tensor " + r.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.tensor.rank()));
    for (std::size_t d : r.tensor.shape()) put<std::uint64_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(r.tensor.data().data());
    out.insert(out.end(), p, p + r.tensor.numel() * sizeof(float));
  }
  return out;
}

std::vector<TensorRecord> decode_records(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  char magic[8];
  in.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kRecordMagic, 8) != 0) {
    throw FormatError("bad magic: expected \"HIDEPET1\"", 0);
  }
  const std::size_t version_at = in.pos();
  const auto version = in.get<std::uint32_t>("version");
  if (version > kRecordVersion) {
    throw UnsupportedVersionError("unsupported container version " + std::to_string(version) +
                                      " (this build reads up to " + std::to_string(kRecordVersion) + ")",
                                  version_at);
  }
  if (version == 0) throw FormatError("invalid container version 0", version_at);
  const auto count = in.get<std::uint32_t>("tensor count");
  std::vector<TensorRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const auto len = in.get<std::uint16_t>("name length");
    r.name.resize(len);
    in.bytes(r.name.data(), len, "tensor name");
    const std::size_t rank_at = in.pos();
    const auto rank = in.get<std::uint8_t>("rank");
    if (rank == 0) throw FormatError("tensor " + r.name + " has rank 0", rank_at);
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      const std::size_t at = in.pos();
      d = in.get<std::uint64_t>("dimension");
      if (d > (std::size_t{1} << 32)) throw FormatError("implausible dimension in " + r.name, at);
      numel *= d;
    }
    std::vector<float> data(numel);
    in.bytes(data.data(), numel * sizeof(float), "tensor payload");
    try {
      r.tensor = Tensor<float>(std::move(shape), std::move(data));
    } catch (const DimensionError& e) {
      throw FormatError(std::string("bad tensor shape: ") + e.what(), rank_at);
    }
    out.push_back(std::move(r));
  }
  if (!in.done()) throw FormatError("trailing bytes after last tensor", in.pos());
  return out;
}

void write_records(const std::string& path, const std::vector<TensorRecord>& records) {
  const auto bytes = encode_records(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path);
}

std::vector<TensorRecord> read_records(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_records(bytes);
}

}  // namespace hidepet

#include "npgrid/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "npgrid/errors.hpp"

namespace npgrid {

static_assert(std::endian::native == std::endian::little,
              "container encoding assumes a little-endian host");

const NdArray& Container::array(const std::string& name) const {
  for (const auto& [key, value] : arrays) {
    if (key == name) return value;
  }
  throw FormatError("container has no array named '" + name + "'");
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void doubles(double* dst, std::size_t n) {
    if (n > (end_ - pos_) / sizeof(double)) truncated();
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  bool at_end() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) truncated();
  }
  [[noreturn]] static void truncated() { throw FormatError("container truncated: record extends past end"); }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_;
  std::size_t end_;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large payloads
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_container(const Container& container) {
  std::vector<std::uint8_t> out(kContainerMagic, kContainerMagic + 8);
  const std::string meta = container.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(container.arrays.size()));
  for (const auto& [name, array] : container.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, kDtypeFloat64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(array.rank()));
    for (std::size_t d : array.shape()) put<std::uint64_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(array.data().data());
    out.insert(out.end(), p, p + array.size() * sizeof(double));
  }
  put<std::uint32_t>(out, crc_of(out.data() + 8, out.size() - 8));
  return out;
}

Container decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "GBCN", 4) != 0) {
    throw FormatError("not a GBCN container (bad magic)");
  }
  if (std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
    throw FormatError("unsupported container version '" +
                      std::string(reinterpret_cast<const char*>(bytes.data()), 8) +
                      "' (this build reads " + kContainerMagic + ")");
  }
  if (bytes.size() < 8 + 8 + 4 + 4) throw FormatError("container truncated: shorter than header");
  const std::size_t body_end = bytes.size() - 4;
  Reader reader(bytes, 8, body_end);
  const auto meta_len = reader.get<std::uint64_t>();
  if (meta_len > body_end) throw FormatError("container truncated: metadata length exceeds file");
  const std::string meta = reader.string(static_cast<std::size_t>(meta_len));
  const auto n_arrays = reader.get<std::uint32_t>();
  Container c;
  std::vector<std::pair<std::string, Shape>> layout;
  std::vector<NdArray> payloads;
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    const auto name_len = reader.get<std::uint32_t>();
    std::string name = reader.string(name_len);
    const auto dtype = reader.get<std::uint8_t>();
    if (dtype != kDtypeFloat64) throw FormatError("array '" + name + "': unsupported dtype tag");
    const auto ndim = reader.get<std::uint32_t>();
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto extent = reader.get<std::uint64_t>();
      if (extent > body_end) throw FormatError("container truncated: array extent exceeds file");
      shape.push_back(static_cast<std::size_t>(extent));
      count *= shape.back();
    }
    if (count > body_end) throw FormatError("container truncated: array payload exceeds file");
    NdArray array(shape);
    reader.doubles(array.data().data(), count);
    c.arrays.emplace_back(std::move(name), std::move(array));
  }
  if (!reader.at_end()) throw FormatError("container has trailing bytes before checksum");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body_end, 4);
  if (stored != crc_of(bytes.data() + 8, body_end - 8)) {
    throw FormatError("container integrity check failed (CRC-32 mismatch)");
  }
  try {
    c.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container metadata is not valid JSON: ") + e.what());
  }
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_container(const std::filesystem::path& path, const Container& container) {
  write_file_bytes(path, encode_container(container));
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

}  // namespace npgrid

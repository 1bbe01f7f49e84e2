#include "ctta/npy.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

namespace ctta::npy {

namespace {

constexpr char kMagic[] = "\x93NUMPY";

template <typename U>
U read_le(const std::string& buf, std::size_t off) {
  if (off + sizeof(U) > buf.size()) throw DataError("zip archive truncated");
  U v{};
  std::memcpy(&v, buf.data() + off, sizeof(U));
  return v;
}

template <typename U>
void put_le(std::string& out, U v) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  out.append(bytes, sizeof(U));
}

std::uint32_t crc_of(const std::string& data) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

}  // namespace

std::size_t Header::item_size() const {
  if (dtype.size() < 3) throw DataError("malformed dtype '" + dtype + "'");
  return static_cast<std::size_t>(std::stoul(dtype.substr(2)));
}

Header parse_header(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 6, kMagic, 6) != 0) throw DataError("not an .npy document");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw DataError("truncated .npy header");
    header_len = read_le<std::uint32_t>(bytes, 8);
    offset = 12;
  } else {
    throw DataError("unsupported .npy version " + std::to_string(major));
  }
  if (bytes.size() < offset + header_len) throw DataError("truncated .npy header");
  const std::string dict = bytes.substr(offset, header_len);

  Header h;
  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(dict, m, descr_re)) throw DataError("npy header lacks descr");
  h.dtype = m[1];
  if (std::regex_search(dict, m, fortran_re)) h.fortran_order = m[1] == "True";
  if (!std::regex_search(dict, m, shape_re)) throw DataError("npy header lacks shape");
  std::stringstream dims(m[1].str());
  std::string tok;
  while (std::getline(dims, tok, ',')) {
    const auto first = tok.find_first_not_of(" ");
    if (first == std::string::npos) continue;
    h.shape.push_back(static_cast<std::size_t>(std::stoull(tok.substr(first))));
  }
  h.data_offset = offset + header_len;
  if (h.fortran_order) throw DataError("fortran-ordered npy arrays are not supported");
  return h;
}

Header read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string prefix(4096, '\0');
  in.read(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  prefix.resize(static_cast<std::size_t>(in.gcount()));
  return parse_header(prefix);
}

std::vector<std::uint8_t> read_rows(const std::filesystem::path& path, const Header& header, std::size_t begin,
                                    std::size_t end) {
  if (header.shape.empty() || begin > end || end > header.shape[0]) {
    throw DataError("row range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside array " +
                    to_string(header.shape) + " in " + path.string());
  }
  const std::size_t row_bytes = header.count() / header.shape[0] * header.item_size();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(static_cast<std::streamoff>(header.data_offset + begin * row_bytes));
  std::vector<std::uint8_t> out((end - begin) * row_bytes);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (static_cast<std::size_t>(in.gcount()) != out.size()) throw DataError("truncated array data in " + path.string());
  return out;
}

std::string encode(const std::string& dtype, const Shape& shape, const void* data, std::size_t bytes) {
  std::string shape_str = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) shape_str += ", ";
    shape_str += std::to_string(shape[i]);
  }
  shape_str += shape.size() == 1 ? ",)" : ")";
  std::string dict = "{'descr': '" + dtype + "', 'fortran_order': False, 'shape': " + shape_str + ", }";
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict.push_back('\n');
  std::string out(kMagic, 6);
  out.push_back('\x01');
  out.push_back('\x00');
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(dict.size()));
  out += dict;
  out.append(static_cast<const char*>(data), bytes);
  return out;
}

std::string encode(const Tensor<float>& t) { return encode("<f4", t.shape(), t.data(), t.size() * sizeof(float)); }

Tensor<float> decode_float(const std::string& document) {
  const Header h = parse_header(document);
  const std::size_t n = h.count();
  if (document.size() < h.data_offset + n * h.item_size()) throw DataError("truncated npy payload");
  const char* p = document.data() + h.data_offset;
  std::vector<float> values(n);
  if (h.dtype == "<f4") {
    std::memcpy(values.data(), p, n * sizeof(float));
  } else if (h.dtype == "<f8") {
    for (std::size_t i = 0; i < n; ++i) {
      double d;
      std::memcpy(&d, p + i * 8, 8);
      values[i] = static_cast<float>(d);
    }
  } else {
    throw DataError("expected a float array, got dtype " + h.dtype);
  }
  return Tensor<float>(h.shape, std::move(values));
}

std::vector<std::int64_t> decode_int(const std::string& document) {
  const Header h = parse_header(document);
  const std::size_t n = h.count(), size = h.item_size();
  if (document.size() < h.data_offset + n * size) throw DataError("truncated npy payload");
  const char* p = document.data() + h.data_offset;
  std::vector<std::int64_t> out(n);
  const char kind = h.dtype.size() > 1 ? h.dtype[1] : '?';
  for (std::size_t i = 0; i < n; ++i) {
    const char* q = p + i * size;
    if (kind == 'u' && size == 1) {
      out[i] = static_cast<std::uint8_t>(*q);
    } else if (kind == 'i' && size == 1) {
      out[i] = static_cast<std::int8_t>(*q);
    } else if (kind == 'i' && size == 2) {
      std::int16_t v;
      std::memcpy(&v, q, 2);
      out[i] = v;
    } else if (kind == 'i' && size == 4) {
      std::int32_t v;
      std::memcpy(&v, q, 4);
      out[i] = v;
    } else if (kind == 'i' && size == 8) {
      std::int64_t v;
      std::memcpy(&v, q, 8);
      out[i] = v;
    } else {
      throw DataError("expected an integer array, got dtype " + h.dtype);
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& document) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(document.data(), static_cast<std::streamsize>(document.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_npz(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& entries) {
  constexpr std::uint16_t kVersion = 20, kDosDate = 0x21;  // 1980-01-01, fixed for reproducible files
  std::string body, directory;
  for (const auto& [name, data] : entries) {
    if (data.size() > 0xFFFFFFFEu || body.size() > 0xFFFFFFFEu) throw IoError("npz entry too large: " + name);
    const std::uint32_t crc = crc_of(data);
    const auto offset = static_cast<std::uint32_t>(body.size());
    const auto size = static_cast<std::uint32_t>(data.size());
    put_le<std::uint32_t>(body, 0x04034b50);
    put_le<std::uint16_t>(body, kVersion);
    put_le<std::uint16_t>(body, 0);
    put_le<std::uint16_t>(body, 0);
    put_le<std::uint16_t>(body, 0);
    put_le<std::uint16_t>(body, kDosDate);
    put_le<std::uint32_t>(body, crc);
    put_le<std::uint32_t>(body, size);
    put_le<std::uint32_t>(body, size);
    put_le<std::uint16_t>(body, static_cast<std::uint16_t>(name.size()));
    put_le<std::uint16_t>(body, 0);
    body += name;
    body += data;

    put_le<std::uint32_t>(directory, 0x02014b50);
    put_le<std::uint16_t>(directory, kVersion);
    put_le<std::uint16_t>(directory, kVersion);
    put_le<std::uint16_t>(directory, 0);
    put_le<std::uint16_t>(directory, 0);
    put_le<std::uint16_t>(directory, 0);
    put_le<std::uint16_t>(directory, kDosDate);
    put_le<std::uint32_t>(directory, crc);
    put_le<std::uint32_t>(directory, size);
    put_le<std::uint32_t>(directory, size);
    put_le<std::uint16_t>(directory, static_cast<std::uint16_t>(name.size()));
    put_le<std::uint16_t>(directory, 0);
    put_le<std::uint16_t>(directory, 0);
    put_le<std::uint16_t>(directory, 0);
    put_le<std::uint16_t>(directory, 0);
    put_le<std::uint32_t>(directory, 0);
    put_le<std::uint32_t>(directory, offset);
    directory += name;
  }
  std::string out = body + directory;
  put_le<std::uint32_t>(out, 0x06054b50);
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint16_t>(out, 0);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(entries.size()));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(entries.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(directory.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(body.size()));
  put_le<std::uint16_t>(out, 0);
  write_file(path, out);
}

std::map<std::string, std::string> read_npz(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 22) throw DataError(path.string() + " is not a zip archive");
  std::size_t eocd = std::string::npos;
  for (std::size_t i = buf.size() - 22 + 1; i-- > 0;) {
    if (read_le<std::uint32_t>(buf, i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos) throw DataError(path.string() + ": end of central directory not found");
  std::uint64_t entries = read_le<std::uint16_t>(buf, eocd + 10);
  std::uint64_t cd_offset = read_le<std::uint32_t>(buf, eocd + 16);
  if (cd_offset == 0xFFFFFFFFu || entries == 0xFFFF) {
    // zip64 end-of-central-directory locator sits right before the classic record.
    if (eocd < 20 || read_le<std::uint32_t>(buf, eocd - 20) != 0x07064b50) throw DataError("bad zip64 locator");
    const auto z64 = read_le<std::uint64_t>(buf, eocd - 20 + 8);
    entries = read_le<std::uint64_t>(buf, z64 + 32);
    cd_offset = read_le<std::uint64_t>(buf, z64 + 48);
  }

  std::map<std::string, std::string> out;
  std::size_t pos = cd_offset;
  for (std::uint64_t e = 0; e < entries; ++e) {
    if (read_le<std::uint32_t>(buf, pos) != 0x02014b50) throw DataError("corrupt zip central directory");
    const auto method = read_le<std::uint16_t>(buf, pos + 10);
    const auto crc = read_le<std::uint32_t>(buf, pos + 16);
    std::uint64_t size = read_le<std::uint32_t>(buf, pos + 24);
    const auto name_len = read_le<std::uint16_t>(buf, pos + 28);
    const auto extra_len = read_le<std::uint16_t>(buf, pos + 30);
    const auto comment_len = read_le<std::uint16_t>(buf, pos + 32);
    std::uint64_t local = read_le<std::uint32_t>(buf, pos + 42);
    const std::string name = buf.substr(pos + 46, name_len);
    const bool size64 = size == 0xFFFFFFFFu;
    const bool local64 = local == 0xFFFFFFFFu;
    std::uint64_t csize = read_le<std::uint32_t>(buf, pos + 20);
    const bool csize64 = csize == 0xFFFFFFFFu;
    std::size_t x = pos + 46 + name_len;
    const std::size_t x_end = x + extra_len;
    while (x + 4 <= x_end) {
      const auto id = read_le<std::uint16_t>(buf, x);
      const auto len = read_le<std::uint16_t>(buf, x + 2);
      if (id == 0x0001) {
        std::size_t f = x + 4;
        if (size64) size = read_le<std::uint64_t>(buf, f), f += 8;
        if (csize64) csize = read_le<std::uint64_t>(buf, f), f += 8;
        if (local64) local = read_le<std::uint64_t>(buf, f);
      }
      x += 4 + len;
    }
    if (method != 0) throw DataError("zip entry '" + name + "' is compressed; only stored entries are supported");
    if (read_le<std::uint32_t>(buf, local) != 0x04034b50) throw DataError("corrupt zip local header for " + name);
    const auto lname = read_le<std::uint16_t>(buf, local + 26);
    const auto lextra = read_le<std::uint16_t>(buf, local + 28);
    const std::size_t data_at = local + 30 + lname + lextra;
    if (data_at + size > buf.size()) throw DataError("zip entry '" + name + "' truncated");
    std::string data = buf.substr(data_at, size);
    if (crc_of(data) != crc) throw DataError("crc mismatch in zip entry '" + name + "'");
    out.emplace(name, std::move(data));
    pos += 46 + name_len + extra_len + comment_len;
  }
  return out;
}

}  // namespace ctta::npy

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ctta/tensor.hpp"

// NumPy .npy arrays and stored (uncompressed) .npz containers.
namespace ctta::npy {

struct Header {
  std::string dtype;  // e.g. "<f4", "|u1", "<i8"
  Shape shape;
  bool fortran_order = false;
  std::size_t data_offset = 0;

  std::size_t item_size() const;
  std::size_t count() const { return numel(shape); }
};

Header parse_header(const std::string& bytes);

/// Reads only the header of a .npy file.
Header read_header(const std::filesystem::path& path);

/// Raw little-endian payload for rows [begin, end) of the leading dimension.
std::vector<std::uint8_t> read_rows(const std::filesystem::path& path, const Header& header, std::size_t begin,
                                    std::size_t end);

/// Serialized .npy document (header + payload).
std::string encode(const std::string& dtype, const Shape& shape, const void* data, std::size_t bytes);
std::string encode(const Tensor<float>& t);

/// Decodes a float32 array from a .npy document; other float dtypes are converted.
Tensor<float> decode_float(const std::string& document);

/// Decodes an integer vector from a .npy document (int8/16/32/64 or uint8).
std::vector<std::int64_t> decode_int(const std::string& document);

void write_file(const std::filesystem::path& path, const std::string& document);
std::string read_file(const std::filesystem::path& path);

/// Writes a stored zip archive; entry order is preserved.
void write_npz(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& entries);

/// Reads every entry of a zip archive written with the stored method (zip64 extents accepted).
std::map<std::string, std::string> read_npz(const std::filesystem::path& path);

}  // namespace ctta::npy

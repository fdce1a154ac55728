#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tafe/tensor.hpp"

namespace tafe {

// TAFE-T1 container: the 8-byte magic "TAFETNSR", a little-endian u32 header
// length, a UTF-8 JSON header {"shape":[n,c,h,w],"dtype":"f64"}, then the
// little-endian f64 payload in row-major order.
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Whole-file helpers shared by the other writers.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace tafe

#include "tafe/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "tafe/errors.hpp"

namespace tafe {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'F', 'E', 'T', 'N', 'S', 'R'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    const Shape& s = t.shape();
    nlohmann::ordered_json header;
    header["shape"] = {s.n, s.c, s.h, s.w};
    header["dtype"] = "f64";
    const std::string text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(12 + text.size() + 8 * t.size());
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (double v : t.data()) put_f64(out, v);
    return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw DataError("not a TAFE-T1 tensor (bad magic)");
    }
    const auto header_len = static_cast<std::size_t>(get_le(bytes.data() + 8, 4));
    if (bytes.size() < 12 + header_len) throw DataError("truncated TAFE-T1 header");
    const std::string text(bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(header_len));

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid TAFE-T1 header: ") + e.what());
    }
    if (!header.contains("dtype") || header["dtype"] != "f64") {
        throw DataError("unsupported TAFE-T1 dtype");
    }
    if (!header.contains("shape") || !header["shape"].is_array() || header["shape"].size() != 4) {
        throw DataError("TAFE-T1 shape must have four entries");
    }
    const auto dims = header["shape"].get<std::vector<std::size_t>>();
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    const std::size_t payload = bytes.size() - 12 - header_len;
    if (payload != 8 * shape.numel()) {
        throw DataError("TAFE-T1 payload has " + std::to_string(payload) + " bytes, expected " +
                        std::to_string(8 * shape.numel()));
    }
    std::vector<double> values(shape.numel());
    const std::uint8_t* p = bytes.data() + 12 + header_len;
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = std::bit_cast<double>(get_le(p + 8 * i, 8));
    }
    return Tensor(shape, std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    write_file_bytes(path, encode_tensor(t));
}

Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

}  // namespace tafe

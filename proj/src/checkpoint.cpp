#include "rotpretext/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>

namespace rotpretext {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
}

bool get_f32(std::istream& is, float& f) {
    std::uint32_t bits;
    if (!get_u32(is, bits)) return false;
    std::memcpy(&f, &bits, 4);
    return true;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 4);
    put_u32(os, kCheckpointVersion);
    for (const auto& rec : records) {
        put_u32(os, static_cast<std::uint32_t>(rec.name.size()));
        os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
        const auto& shape = rec.tensor.shape();
        put_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (int e : shape) put_u32(os, static_cast<std::uint32_t>(e));
        for (float v : rec.tensor.values()) put_f32(os, v);
    }
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4))
        throw FormatError(FormatError::Kind::Truncated, "checkpoint shorter than magic: " + path);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(FormatError::Kind::BadMagic, "not a checkpoint file: " + path);
    std::uint32_t version;
    if (!get_u32(is, version))
        throw FormatError(FormatError::Kind::Truncated, "checkpoint missing version: " + path);
    if (version != kCheckpointVersion)
        throw FormatError(FormatError::Kind::BadValue,
                          "unsupported checkpoint version " + std::to_string(version));

    std::vector<NamedTensor> records;
    while (true) {
        std::uint32_t name_len;
        if (!get_u32(is, name_len)) break;  // clean end of file
        if (name_len > (1u << 20))
            throw FormatError(FormatError::Kind::ExtentOverflow,
                              "unreasonable record name length in " + path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw FormatError(FormatError::Kind::Truncated, "truncated record name in " + path);
        std::uint32_t rank;
        if (!get_u32(is, rank))
            throw FormatError(FormatError::Kind::Truncated, "truncated record rank in " + path);
        if (rank == 0 || rank > 8)
            throw FormatError(FormatError::Kind::BadValue, "record rank out of range in " + path);
        std::vector<int> shape(rank);
        std::size_t count = 1;
        for (auto& e : shape) {
            std::uint32_t ext;
            if (!get_u32(is, ext))
                throw FormatError(FormatError::Kind::Truncated, "truncated extents in " + path);
            if (ext == 0 || ext > (1u << 28))
                throw FormatError(FormatError::Kind::ExtentOverflow,
                                  "record extent out of range in " + path);
            e = static_cast<int>(ext);
            count *= ext;
            if (count > (std::size_t{1} << 32))
                throw FormatError(FormatError::Kind::ExtentOverflow,
                                  "record element count overflow in " + path);
        }
        std::vector<float> values(count);
        for (auto& v : values) {
            if (!get_f32(is, v))
                throw FormatError(FormatError::Kind::Truncated, "truncated payload in " + path);
        }
        records.push_back({std::move(name), Tensor::from_values(std::move(shape), std::move(values))});
    }
    return records;
}

Tensor pack_text(const std::string& text) {
    std::vector<char> bytes(text.begin(), text.end());
    while (bytes.size() % 4 != 0) bytes.push_back('\0');
    if (bytes.empty()) bytes.assign(4, '\0');
    std::vector<float> payload(bytes.size() / 4);
    std::memcpy(payload.data(), bytes.data(), bytes.size());
    const int count = static_cast<int>(payload.size());
    return Tensor::from_values({count}, std::move(payload));
}

std::string unpack_text(const Tensor& t) {
    std::string text(t.size() * 4, '\0');
    std::memcpy(text.data(), t.values().data(), text.size());
    while (!text.empty() && text.back() == '\0') text.pop_back();
    return text;
}

}  // namespace rotpretext

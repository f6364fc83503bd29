#include "cultalign/soft_prompt.hpp"

#include "cultalign/error.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace cultalign {

namespace {

template <typename UInt>
void put_le(std::string& out, UInt value)
{
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
}

template <typename UInt>
UInt get_le(std::string_view bytes, std::size_t offset)
{
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
        value |= static_cast<UInt>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
    return value;
}

} // namespace

namespace io {

std::string encode(const SoftPromptf& prompt)
{
    std::string out;
    out.reserve(kHeaderSize + 16 + 4 * static_cast<std::size_t>(prompt.size()));
    out.append(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, 0);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(prompt.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(prompt.cols()));
    for (Eigen::Index i = 0; i < prompt.size(); ++i)
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(prompt.data()[i]));
    return out;
}

SoftPromptf decode(std::string_view bytes)
{
    if (bytes.size() < kHeaderSize + 16)
        throw Error(ErrorKind::FormatError, "truncated header (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
        throw Error(ErrorKind::FormatError, "bad magic");
    const auto version = get_le<std::uint32_t>(bytes, 8);
    if (version != kVersion)
        throw Error(ErrorKind::FormatError, "unsupported version " + std::to_string(version));

    const auto rows = get_le<std::uint64_t>(bytes, kHeaderSize);
    const auto cols = get_le<std::uint64_t>(bytes, kHeaderSize + 8);
    const std::size_t payload = bytes.size() - kHeaderSize - 16;
    if (cols != 0 && rows > payload / 4 / cols)
        throw Error(ErrorKind::FormatError, "truncated payload");
    if (payload != rows * cols * 4)
        throw Error(ErrorKind::FormatError, "payload size " + std::to_string(payload) + " does not match shape "
                                                + std::to_string(rows) + "x" + std::to_string(cols));

    SoftPromptf prompt(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t offset = kHeaderSize + 16;
    for (Eigen::Index i = 0; i < prompt.size(); ++i, offset += 4)
        prompt.data()[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset));
    return prompt;
}

void save(const std::filesystem::path& path, const SoftPromptf& prompt)
{
    const std::string bytes = encode(prompt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::FormatError, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error(ErrorKind::FormatError, "write failed for " + path.string());
}

SoftPromptf load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::FormatError, "cannot open " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode(bytes);
}

} // namespace io

std::string digest_of_encoding(std::string_view encoded)
{
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char hash[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1
        || EVP_DigestUpdate(ctx.get(), encoded.data(), encoded.size()) != 1
        || EVP_DigestFinal_ex(ctx.get(), hash, &length) != 1)
        throw std::runtime_error("sha256 failed");

    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(2 * length);
    for (unsigned int i = 0; i < length; ++i) {
        hex.push_back(kHex[hash[i] >> 4]);
        hex.push_back(kHex[hash[i] & 0x0F]);
    }
    return hex;
}

} // namespace cultalign

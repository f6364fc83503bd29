#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cultalign {

/// A block of virtual-token embeddings, one row per token. Row-major so the
/// flattened order matches the on-disk layout.
template <typename Scalar>
using SoftPrompt = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using SoftPromptf = SoftPrompt<float>;
using SoftPromptd = SoftPrompt<double>;

template <typename Derived>
auto flatten(const Eigen::MatrixBase<Derived>& m)
{
    using Scalar = typename Derived::Scalar;
    SoftPrompt<Scalar> rm = m;
    return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(rm.data(), rm.size()));
}

namespace io {

// 8-byte magic, u32 version, u32 reserved; then u64 T, u64 dim, T*dim f32, all little-endian.
inline constexpr std::array<char, 8> kMagic{'C', 'A', 'S', 'O', 'F', 'T', 'P', 'R'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 16;

std::string encode(const SoftPromptf& prompt);
SoftPromptf decode(std::string_view bytes);

void save(const std::filesystem::path& path, const SoftPromptf& prompt);
SoftPromptf load(const std::filesystem::path& path);

} // namespace io

/// SHA-256 (hex) of the binary encoding. Entries are rounded to f32 first, so
/// a prompt and its saved copy share a digest.
std::string digest_of_encoding(std::string_view encoded);

template <typename Derived>
std::string digest(const Eigen::MatrixBase<Derived>& prompt)
{
    return digest_of_encoding(io::encode(prompt.template cast<float>()));
}

} // namespace cultalign

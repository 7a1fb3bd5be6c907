#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace evc {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string read_text_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::string hex64(std::uint64_t value);

/// Stable per-purpose seed derivation (splitmix64 over the mixed inputs).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace evc

#pragma once

#include <span>
#include <string>
#include <string_view>

namespace mtnet {

// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::string& path);

// splitmix64 finalizer; used to derive independent child seeds.
constexpr unsigned long long mix_seed(unsigned long long x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr unsigned long long mix_seed(unsigned long long a, unsigned long long b) {
  return mix_seed(mix_seed(a) ^ (b + 0x632be59bd9b4e019ULL));
}

}  // namespace mtnet

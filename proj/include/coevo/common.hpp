#pragma once

#include <cstdint>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <string_view>
#include <vector>

namespace coevo {

inline constexpr const char* kVersion = "coevo 0.1.0";

// ---------------------------------------------------------------------------
// Errors

// Invalid generation parameters or config file contents.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed domain data (rewards out of range, missing experts, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A trajectory does not replay in its environment (action not available,
// observation or reward mismatch, premature termination).
struct ReplayError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during a training phase.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File I/O, parse and corruption errors.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API misuse (step after done, etc.).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Hashing
//
// FNV-1a, 64-bit. Used everywhere a stable hash is needed: feature indices,
// trajectory content hashes, RNG stream keys. Multi-part hashes separate the
// parts with a 0x1f byte so that ("ab","c") and ("a","bc") differ.

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t hash_bytes(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t hash_sep(std::uint64_t h) {
  h ^= 0x1f;
  h *= kFnvPrime;
  return h;
}

inline std::uint64_t hash_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}

namespace detail {
inline void hash_part(std::uint64_t& h, std::string_view s) { h = hash_bytes(s, h); }
inline void hash_part(std::uint64_t& h, const std::string& s) { h = hash_bytes(s, h); }
inline void hash_part(std::uint64_t& h, const char* s) { h = hash_bytes(s, h); }
template <typename T>
  requires std::is_integral_v<T>
void hash_part(std::uint64_t& h, T v) {
  h = hash_u64(static_cast<std::uint64_t>(v), h);
}
}  // namespace detail

// hash_parts("iu", token, verb, arg) -> one 64-bit value.
template <typename... Parts>
std::uint64_t hash_parts(const Parts&... parts) {
  std::uint64_t h = kFnvOffset;
  ((detail::hash_part(h, parts), h = hash_sep(h)), ...);
  return h;
}

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// Counter-based generator (splitmix64 over a Weyl sequence). A stream is
// identified by a 64-bit key derived from the run seed plus a tag and
// indices, so every (stage, instruction, iteration) gets an independent
// sequence and parallel rollouts stay reproducible.

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : state_(key) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n). Multiply-shift reduction; n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

template <typename... Parts>
CounterRng rng_stream(std::uint64_t seed, const Parts&... parts) {
  return CounterRng(hash_parts(std::uint64_t{seed}, parts...));
}

// In-place Fisher-Yates. std::shuffle is implementation-defined, so shuffles
// that must be reproducible across toolchains go through this.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// k distinct indices from [0, n), in selection order.
inline std::vector<int> sample_indices(int n, int k, CounterRng& rng) {
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  deterministic_shuffle(pool, rng);
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

// ---------------------------------------------------------------------------
// Tokenization: whitespace splitting, nothing more.

inline std::vector<std::string_view> tokenize(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace coevo

#include "tumorkit/digest.hpp"

#include <bit>
#include <stdexcept>
#include <vector>

#include <openssl/evp.h>

namespace tumorkit {
namespace {

class Hasher {
 public:
  Hasher() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      EVP_MD_CTX_free(ctx_);
      throw std::runtime_error("sha256 init failed");
    }
  }
  ~Hasher() { EVP_MD_CTX_free(ctx_); }
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  Sha256 finish() {
    Sha256 out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, out.data(), &len);
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

Sha256 sha256(std::span<const std::uint8_t> bytes) {
  Hasher h;
  h.update(bytes.data(), bytes.size());
  return h.finish();
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xF]);
  }
  return s;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) { return to_hex(sha256(bytes)); }

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string params_digest(const nn::ParameterSet& params) {
  Hasher h;
  for (const auto& p : params) {
    h.update(p.name.data(), p.name.size() + 1);
    for (int d : p.value.shape()) {
      const auto le = static_cast<std::uint32_t>(d);
      const std::uint8_t b[4] = {static_cast<std::uint8_t>(le), static_cast<std::uint8_t>(le >> 8),
                                 static_cast<std::uint8_t>(le >> 16), static_cast<std::uint8_t>(le >> 24)};
      h.update(b, 4);
    }
    std::vector<std::uint8_t> bytes(p.value.size() * 4);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(p.value[i]);
      for (int k = 0; k < 4; ++k) bytes[i * 4 + k] = static_cast<std::uint8_t>(bits >> (8 * k));
    }
    h.update(bytes.data(), bytes.size());
  }
  const Sha256 d = h.finish();
  return to_hex(d);
}

}  // namespace tumorkit

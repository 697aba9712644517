#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace facecorpus {

std::string base64_encode(const std::uint8_t* data, std::size_t size);
std::string base64_encode(const std::vector<std::uint8_t>& data);
std::string base64_encode(std::string_view data);

// FNV-1a 64-bit, rendered as 16 lowercase hex digits. Used for corpus
// checksums; stability matters, cryptographic strength does not.
std::uint64_t fnv1a64(std::string_view data);
std::string fnv1a64_hex(std::string_view data);

// UTC timestamp "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp_now();

}  // namespace facecorpus

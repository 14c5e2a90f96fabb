#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace wordprobe::utf8 {

// Throws Error(invalid_char) on malformed input.
std::u32string decode(std::string_view text);

std::string encode(char32_t cp);
std::string encode(std::u32string_view text);

bool is_whitespace(char32_t cp) noexcept;
bool is_control(char32_t cp) noexcept;

}  // namespace wordprobe::utf8

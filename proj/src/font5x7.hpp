#pragma once

// Built-in 5x7 bitmap font, A-Z and 0-9. Row-major, '1' marks an inked cell.

namespace ctx::font {

inline constexpr int kGlyphW = 5;
inline constexpr int kGlyphH = 7;
inline constexpr int kGlyphCount = 36;

inline constexpr const char* kGlyphChars = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

inline constexpr const char* kGlyphRows[kGlyphCount][kGlyphH] = {
    {"01110", "10001", "10001", "11111", "10001", "10001", "10001"},  // A
    {"11110", "10001", "10001", "11110", "10001", "10001", "11110"},  // B
    {"01110", "10001", "10000", "10000", "10000", "10001", "01110"},  // C
    {"11100", "10010", "10001", "10001", "10001", "10010", "11100"},  // D
    {"11111", "10000", "10000", "11110", "10000", "10000", "11111"},  // E
    {"11111", "10000", "10000", "11110", "10000", "10000", "10000"},  // F
    {"01110", "10001", "10000", "10111", "10001", "10001", "01111"},  // G
    {"10001", "10001", "10001", "11111", "10001", "10001", "10001"},  // H
    {"01110", "00100", "00100", "00100", "00100", "00100", "01110"},  // I
    {"00111", "00010", "00010", "00010", "00010", "10010", "01100"},  // J
    {"10001", "10010", "10100", "11000", "10100", "10010", "10001"},  // K
    {"10000", "10000", "10000", "10000", "10000", "10000", "11111"},  // L
    {"10001", "11011", "10101", "10101", "10001", "10001", "10001"},  // M
    {"10001", "10001", "11001", "10101", "10011", "10001", "10001"},  // N
    {"01110", "10001", "10001", "10001", "10001", "10001", "01110"},  // O
    {"11110", "10001", "10001", "11110", "10000", "10000", "10000"},  // P
    {"01110", "10001", "10001", "10001", "10101", "10010", "01101"},  // Q
    {"11110", "10001", "10001", "11110", "10100", "10010", "10001"},  // R
    {"01111", "10000", "10000", "01110", "00001", "00001", "11110"},  // S
    {"11111", "00100", "00100", "00100", "00100", "00100", "00100"},  // T
    {"10001", "10001", "10001", "10001", "10001", "10001", "01110"},  // U
    {"10001", "10001", "10001", "10001", "10001", "01010", "00100"},  // V
    {"10001", "10001", "10001", "10101", "10101", "11011", "10001"},  // W
    {"10001", "10001", "01010", "00100", "01010", "10001", "10001"},  // X
    {"10001", "10001", "01010", "00100", "00100", "00100", "00100"},  // Y
    {"11111", "00001", "00010", "00100", "01000", "10000", "11111"},  // Z
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},  // 0
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},  // 1
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},  // 2
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},  // 3
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},  // 4
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},  // 5
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},  // 6
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},  // 7
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},  // 8
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},  // 9
};

}  // namespace ctx::font

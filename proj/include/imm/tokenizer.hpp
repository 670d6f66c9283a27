#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace imm {

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by four specials.
class ByteTokenizer {
public:
    static constexpr int kPad = 256;
    static constexpr int kBos = 257;
    static constexpr int kEos = 258;
    static constexpr int kSep = 259;  // separates an instruction prompt from its response
    static constexpr int kVocabSize = 260;

    static std::vector<int> encode(std::string_view text);
    // Special tokens are dropped.
    static std::string decode(std::span<const int> ids);
};

}  // namespace imm

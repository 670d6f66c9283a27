#include "imm/tokenizer.hpp"

namespace imm {

std::vector<int> ByteTokenizer::encode(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(static_cast<unsigned char>(c));
    return ids;
}

std::string ByteTokenizer::decode(std::span<const int> ids) {
    std::string out;
    for (int id : ids)
        if (id >= 0 && id < 256) out += static_cast<char>(id);
    return out;
}

}  // namespace imm

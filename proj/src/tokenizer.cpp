#include "docrag/tokenizer.hpp"

namespace docrag {

namespace {

bool is_word_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c >= 0x80;
}

bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

template <typename Sink>
void scan(std::string_view text, Sink&& sink) {
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c)) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        if (is_word_byte(c)) {
            while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
        }
        sink(i, j);
        i = j;
    }
}

}  // namespace

std::vector<TokenSpan> WordPunctCounter::segment(std::string_view text) const {
    std::vector<TokenSpan> out;
    scan(text, [&](std::size_t b, std::size_t e) { out.push_back({b, e}); });
    return out;
}

std::size_t WordPunctCounter::count(std::string_view text) const {
    std::size_t n = 0;
    scan(text, [&](std::size_t, std::size_t) { ++n; });
    return n;
}

std::shared_ptr<const TokenCounter> default_token_counter() {
    static const auto counter = std::make_shared<const WordPunctCounter>();
    return counter;
}

}  // namespace docrag

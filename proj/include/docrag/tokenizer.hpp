#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace docrag {

// Byte range of one token inside the text it was segmented from.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

// Pluggable token counter. All chunk-window and context-budget arithmetic is
// expressed in the units of whichever counter is installed.
class TokenCounter {
public:
    virtual ~TokenCounter() = default;
    virtual std::vector<TokenSpan> segment(std::string_view text) const = 0;
    virtual std::size_t count(std::string_view text) const { return segment(text).size(); }
};

// Runs of letters/digits (any byte >= 0x80 counts as a letter) form one token;
// every other non-space byte is a token of its own.
class WordPunctCounter final : public TokenCounter {
public:
    std::vector<TokenSpan> segment(std::string_view text) const override;
    std::size_t count(std::string_view text) const override;
};

std::shared_ptr<const TokenCounter> default_token_counter();

}  // namespace docrag

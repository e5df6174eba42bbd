#include <array>
#include <cctype>
#include <charconv>

#include <fmt/core.h>

#include "gradc/frontend.hpp"

namespace gradc {

namespace {

constexpr std::array kKeywords = {"def", "return", "if", "elif", "else", "while", "lambda",
                                  "True", "False", "true", "false"};

// Longest operators first so that `**=` wins over `**` and `*`.
constexpr std::array kOperators = {"**=", "**", "+=", "-=", "*=", "/=", "<=", ">=", "==", "!=", "+", "-",
                                   "*",   "/",  "<",  ">",  "=",  "(",  ")",  "[",  "]",  ",",  ":", "."};

bool is_keyword(std::string_view word) {
    for (auto kw : kKeywords)
        if (word == kw) return true;
    return false;
}

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<Token> run() {
        indents_.push_back(0);
        while (pos_ < src_.size()) {
            if (at_line_start_) {
                if (!indentation()) continue;
            }
            char c = src_[pos_];
            if (c == '\n') {
                newline();
                continue;
            }
            if (c == ' ' || c == '\r') {
                advance();
                continue;
            }
            if (c == '\t') error("tab characters are not allowed; indent with spaces");
            if (c == '#') {
                while (pos_ < src_.size() && src_[pos_] != '\n') advance();
                continue;
            }
            if (c == '\\' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '\n') {
                advance();
                advance();
                continue;
            }
            if (std::isdigit(static_cast<unsigned char>(c)) ||
                (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
                number();
                continue;
            }
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                word();
                continue;
            }
            op();
        }
        if (!tokens_.empty() && tokens_.back().kind != TokenKind::Newline) push(TokenKind::Newline, "", loc());
        while (indents_.size() > 1) {
            indents_.pop_back();
            push(TokenKind::Dedent, "", loc());
        }
        push(TokenKind::End, "", loc());
        return std::move(tokens_);
    }

private:
    SourceLoc loc() const { return {line_, column_}; }

    [[noreturn]] void error(const std::string& msg) const { fail(Stage::Parse, msg, loc()); }

    void advance() {
        if (src_[pos_] == '\n') {
            ++line_;
            column_ = 1;
        } else {
            ++column_;
        }
        ++pos_;
    }

    void push(TokenKind kind, std::string text, SourceLoc at) {
        tokens_.push_back(Token{kind, std::move(text), at});
    }

    void newline() {
        if (depth_ == 0 && !tokens_.empty() && tokens_.back().kind != TokenKind::Newline &&
            tokens_.back().kind != TokenKind::Dedent && tokens_.back().kind != TokenKind::Indent)
            push(TokenKind::Newline, "", loc());
        advance();
        if (depth_ == 0) at_line_start_ = true;
    }

    // Measures the indentation of a logical line and emits Indent/Dedent.
    // Returns false when the line is blank or a comment (consumed).
    bool indentation() {
        int width = 0;
        std::size_t p = pos_;
        while (p < src_.size() && src_[p] == ' ') {
            ++width;
            ++p;
        }
        if (p < src_.size() && src_[p] == '\t') {
            column_ += width;
            pos_ = p;
            error("tab characters are not allowed; indent with spaces");
        }
        if (p >= src_.size() || src_[p] == '\n' || src_[p] == '#' || src_[p] == '\r') {
            while (pos_ < src_.size() && src_[pos_] != '\n') advance();
            if (pos_ < src_.size()) advance();
            return false;
        }
        while (pos_ < p) advance();
        at_line_start_ = false;
        if (width > indents_.back()) {
            indents_.push_back(width);
            push(TokenKind::Indent, "", loc());
        } else {
            while (width < indents_.back()) {
                indents_.pop_back();
                push(TokenKind::Dedent, "", loc());
            }
            if (width != indents_.back()) error("inconsistent dedent");
        }
        return true;
    }

    void number() {
        SourceLoc at = loc();
        std::size_t start = pos_;
        bool is_float = false;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            is_float = true;
            advance();
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t save_pos = pos_;
            int save_col = column_;
            advance();
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                is_float = true;
                while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
            } else {
                pos_ = save_pos;
                column_ = save_col;
            }
        }
        std::string text(src_.substr(start, pos_ - start));
        Token tok{is_float ? TokenKind::Float : TokenKind::Int, text, at};
        if (is_float) {
            tok.float_value = std::strtod(text.c_str(), nullptr);
        } else {
            auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), tok.int_value);
            if (ec != std::errc()) fail(Stage::Parse, fmt::format("integer literal '{}' out of range", text), at);
        }
        tokens_.push_back(std::move(tok));
    }

    void word() {
        SourceLoc at = loc();
        std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
            advance();
        std::string text(src_.substr(start, pos_ - start));
        TokenKind kind = is_keyword(text) ? TokenKind::Keyword : TokenKind::Name;
        push(kind, std::move(text), at);
    }

    void op() {
        SourceLoc at = loc();
        auto rest = src_.substr(pos_);
        for (std::string_view o : kOperators) {
            if (rest.starts_with(o)) {
                for (std::size_t i = 0; i < o.size(); ++i) advance();
                if (o == "(" || o == "[") ++depth_;
                if ((o == ")" || o == "]") && depth_ > 0) --depth_;
                push(TokenKind::Op, std::string(o), at);
                return;
            }
        }
        error(fmt::format("unexpected character '{}'", src_[pos_]));
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int column_ = 1;
    int depth_ = 0;
    bool at_line_start_ = true;
    std::vector<int> indents_;
    std::vector<Token> tokens_;
};

} // namespace

std::vector<Token> tokenize(std::string_view source) { return Lexer(source).run(); }

} // namespace gradc
